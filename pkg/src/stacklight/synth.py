"""Synthetic factory-scene generator with exact ground-truth annotations.

Renders parameterized signal-light towers on a procedurally textured gray
background, following scripted per-tower state timelines with linear fades,
moving occluders, and bright "other object" distractors. The generator and
the pixel-level label rule (`combination_from_pixels`) are two views of one
definition, so generated datasets double as an oracle for the detection and
classification stages.

All randomness flows from a single 64-bit seed through named substreams, so
every output is a pure function of (configuration, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .imaging import RGB, BoundingBox, Image, crop, iou
from .labels import (
    LightCombination,
    combination_from_colors,
    lit_colors,
    parse_label,
)


class PlacementError(RuntimeError):
    """Raised when a random placement cannot be satisfied after bounded retries."""


class TowerModel(Enum):
    TRICOLOR = "tricolor"
    BICOLOR = "bicolor"


# Lamp colors per model, top to bottom.
SEGMENT_COLORS: dict[TowerModel, tuple[str, ...]] = {
    TowerModel.TRICOLOR: ("green", "yellow", "red"),
    TowerModel.BICOLOR: ("green", "white"),
}

# Fully lit lamp RGB per color; unlit lamps are a dark remnant of the same hue.
LIT_RGB: dict[str, tuple[float, float, float]] = {
    "green": (0.10, 0.95, 0.10),
    "yellow": (0.93, 0.93, 0.08),
    "red": (0.95, 0.10, 0.10),
    "white": (0.96, 0.96, 0.94),
}

_UNLIT_SCALE = 0.18
_UNLIT_FLOOR = 0.02


def unlit_rgb(color: str) -> tuple[float, float, float]:
    r, g, b = LIT_RGB[color]
    return (
        r * _UNLIT_SCALE + _UNLIT_FLOOR,
        g * _UNLIT_SCALE + _UNLIT_FLOOR,
        b * _UNLIT_SCALE + _UNLIT_FLOOR,
    )


def valid_combinations(model: TowerModel) -> tuple[LightCombination, ...]:
    """Light combinations a model can physically display."""
    colors = set(SEGMENT_COLORS[model])
    out = []
    for combo in LightCombination:
        if combo is LightCombination.OTHER:
            continue
        if lit_colors(combo) <= colors:
            out.append(combo)
    return tuple(out)


@dataclass(frozen=True)
class TowerSpec:
    """One signal-light tower placed in frame coordinates."""

    id: str
    model: TowerModel
    box: BoundingBox

    def __post_init__(self):
        if self.box.w < 8 or self.box.h < 8 * len(SEGMENT_COLORS[self.model]):
            raise ValueError(f"tower {self.id}: box {self.box} too small to render")


@dataclass(frozen=True)
class StateSegment:
    start_frame: int
    combination: LightCombination
    fade_frames: int = 0

    def __post_init__(self):
        if self.start_frame < 0 or self.fade_frames < 0:
            raise ValueError("segment start and fade must be >= 0")
        if self.combination is LightCombination.OTHER:
            raise ValueError("Other is not a displayable tower state")


@dataclass(frozen=True)
class OccluderEvent:
    """A rectangle moving linearly from start_box to end_box over [start, end)."""

    start_frame: int
    end_frame: int
    start_box: tuple[int, int, int, int]  # x, y, w, h; may extend off-frame
    end_box: tuple[int, int, int, int]
    rgb: tuple[float, float, float] = (0.35, 0.40, 0.55)

    def __post_init__(self):
        if self.end_frame <= self.start_frame:
            raise ValueError("occluder event must span at least one frame")

    def box_at(self, frame_index: int) -> tuple[float, float, float, float]:
        span = max(1, self.end_frame - 1 - self.start_frame)
        u = (frame_index - self.start_frame) / span
        x0, y0, w0, h0 = self.start_box
        x1, y1, w1, h1 = self.end_box
        return (
            x0 + u * (x1 - x0),
            y0 + u * (y1 - y0),
            w0 + u * (w1 - w0),
            h0 + u * (h1 - h0),
        )


@dataclass(frozen=True)
class Timeline:
    """Scripted tower states and occluder passes for a fixed-length session."""

    n_frames: int
    segments: dict[str, tuple[StateSegment, ...]]
    occluders: tuple[OccluderEvent, ...] = ()

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("timeline must cover at least one frame")
        for tower_id, segs in self.segments.items():
            if not segs:
                raise ValueError(f"tower {tower_id}: empty timeline")
            if segs[0].start_frame != 0:
                raise ValueError(f"tower {tower_id}: timeline must start at frame 0")
            starts = [s.start_frame for s in segs]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ValueError(f"tower {tower_id}: segment starts must increase")
            bounds = starts[1:] + [self.n_frames]
            for seg, end in zip(segs, bounds):
                if seg.fade_frames >= end - seg.start_frame:
                    raise ValueError(
                        f"tower {tower_id}: fade longer than segment at {seg.start_frame}"
                    )

    def state_at(self, tower_id: str, frame_index: int):
        """(previous, target, fade phase) for a tower at a frame."""
        if not 0 <= frame_index < self.n_frames:
            raise ValueError(
                f"frame {frame_index} outside timeline [0, {self.n_frames})"
            )
        segs = self.segments[tower_id]
        idx = 0
        for i, seg in enumerate(segs):
            if seg.start_frame <= frame_index:
                idx = i
            else:
                break
        seg = segs[idx]
        prev = segs[idx - 1].combination if idx > 0 else seg.combination
        if seg.fade_frames == 0:
            phase = 1.0
        else:
            phase = min(1.0, (frame_index - seg.start_frame) / seg.fade_frames)
        return prev, seg.combination, phase


@dataclass(frozen=True)
class Distractor:
    cx: float
    cy: float
    radius: float
    rgb: tuple[float, float, float]


@dataclass(frozen=True)
class DarkRect:
    box: tuple[int, int, int, int]
    value: float


@dataclass(frozen=True)
class SceneConfig:
    """Static scene content: frame geometry, towers and background clutter."""

    frame_w: int
    frame_h: int
    towers: tuple[TowerSpec, ...]
    base_value: float = 0.50
    texture_amplitude: float = 0.05
    texture_cell: int = 16
    noise_sigma: float = 0.008
    distractors: tuple[Distractor, ...] = ()
    dark_rects: tuple[DarkRect, ...] = ()

    def __post_init__(self):
        if self.frame_w < 32 or self.frame_h < 32:
            raise ValueError("frame must be at least 32x32")
        if not 0.0 <= self.noise_sigma <= 0.01:
            raise ValueError("noise sigma must be in [0, 0.01]")
        ids = [t.id for t in self.towers]
        if len(set(ids)) != len(ids):
            raise ValueError("tower ids must be unique")
        for t in self.towers:
            if not t.box.within(self.frame_w, self.frame_h):
                raise ValueError(f"tower {t.id} exceeds frame bounds")


@dataclass(frozen=True)
class TowerAnnotation:
    id: str
    box: BoundingBox
    label: LightCombination  # nearest on/off state (previous if fade < 0.5)
    fade: float
    occluded: bool

    @property
    def ambiguous(self) -> bool:
        return 0.25 < self.fade < 0.75


@dataclass(frozen=True)
class Annotation:
    frame_index: int
    towers: tuple[TowerAnnotation, ...]
    other_boxes: tuple[BoundingBox, ...] = ()


def _seg_bounds(box: BoundingBox, n_segments: int) -> list[tuple[int, int]]:
    edges = [box.y + round(i * box.h / n_segments) for i in range(n_segments + 1)]
    return [(edges[i], edges[i + 1]) for i in range(n_segments)]


def _draw_disk(canvas: np.ndarray, cx: float, cy: float, radius: float, rgb) -> None:
    h, w = canvas.shape[:2]
    x0 = max(0, int(np.floor(cx - radius - 1)))
    x1 = min(w, int(np.ceil(cx + radius + 2)))
    y0 = max(0, int(np.floor(cy - radius - 1)))
    y1 = min(h, int(np.ceil(cy + radius + 2)))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dist = np.hypot(xs - cx, ys - cy)
    cov = np.clip(radius + 0.5 - dist, 0.0, 1.0)[:, :, np.newaxis]
    region = canvas[y0:y1, x0:x1, :]
    region *= 1.0 - cov
    region += cov * np.asarray(rgb)


def _fill_rect(canvas: np.ndarray, box, rgb) -> None:
    h, w = canvas.shape[:2]
    x, y, bw, bh = box
    x0, y0 = max(0, int(round(x))), max(0, int(round(y)))
    x1, y1 = min(w, int(round(x + bw))), min(h, int(round(y + bh)))
    if x0 >= x1 or y0 >= y1:
        return
    canvas[y0:y1, x0:x1, :] = np.asarray(rgb)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


class Renderer:
    """Renders frames of one scene/timeline; background is built once."""

    def __init__(self, scene: SceneConfig, timeline: Timeline, seed: int):
        validate_timeline(scene, timeline)
        self.scene = scene
        self.timeline = timeline
        self.seed = seed
        self._background = self._build_background()
        self._tower_style = self._build_tower_styles()

    def _build_background(self) -> np.ndarray:
        scene = self.scene
        rng = _stream(self.seed, 2)
        h, w = scene.frame_h, scene.frame_w
        base = np.full((h, w), scene.base_value)
        # gentle vertical lighting gradient
        base += np.linspace(-0.02, 0.02, h)[:, np.newaxis]
        # coarse texture, bilinearly upsampled
        cell = scene.texture_cell
        gh, gw = h // cell + 2, w // cell + 2
        coarse = rng.uniform(-1.0, 1.0, size=(gh, gw))
        yy = np.arange(h) / cell
        xx = np.arange(w) / cell
        y0 = yy.astype(int)
        x0 = xx.astype(int)
        fy = (yy - y0)[:, np.newaxis]
        fx = (xx - x0)[np.newaxis, :]
        c00 = coarse[y0][:, x0]
        c01 = coarse[y0][:, x0 + 1]
        c10 = coarse[y0 + 1][:, x0]
        c11 = coarse[y0 + 1][:, x0 + 1]
        tex = (1 - fy) * ((1 - fx) * c00 + fx * c01) + fy * ((1 - fx) * c10 + fx * c11)
        base += scene.texture_amplitude * tex
        canvas = np.repeat(base[:, :, np.newaxis], 3, axis=2)
        # slight warm/cool tint variation
        tint = rng.uniform(-0.01, 0.01, size=3)
        canvas += tint[np.newaxis, np.newaxis, :]
        for rect in scene.dark_rects:
            _fill_rect(canvas, rect.box, (rect.value, rect.value, rect.value * 1.04))
        for blob in scene.distractors:
            _draw_disk(canvas, blob.cx, blob.cy, blob.radius, blob.rgb)
        return np.clip(canvas, 0.0, 1.0)

    def _build_tower_styles(self):
        rng = _stream(self.seed, 5)
        styles = {}
        for tower in self.scene.towers:
            housing = rng.uniform(0.13, 0.19)
            jitter = rng.uniform(-0.015, 0.015, size=3)
            styles[tower.id] = (housing, jitter)
        return styles

    def _segment_intensities(self, tower: TowerSpec, frame_index: int):
        prev, target, phase = self.timeline.state_at(tower.id, frame_index)
        prev_lit = lit_colors(prev)
        target_lit = lit_colors(target)
        out = []
        for color in SEGMENT_COLORS[tower.model]:
            a = 1.0 if color in prev_lit else 0.0
            b = 1.0 if color in target_lit else 0.0
            out.append(a + phase * (b - a))
        label = target if phase >= 0.5 else prev
        return out, label, phase

    def _occluder_coverage(self, box: BoundingBox, rects) -> float:
        if not rects:
            return 0.0
        mask = np.zeros((box.h, box.w), dtype=bool)
        for x, y, w, h in rects:
            x0 = max(box.x, int(round(x)))
            y0 = max(box.y, int(round(y)))
            x1 = min(box.x2, int(round(x + w)))
            y1 = min(box.y2, int(round(y + h)))
            if x0 < x1 and y0 < y1:
                mask[y0 - box.y : y1 - box.y, x0 - box.x : x1 - box.x] = True
        return float(mask.mean())

    def render(self, frame_index: int) -> tuple[Image, Annotation]:
        scene = self.scene
        canvas = self._background.copy()
        annotations = []
        active_rects = [
            ev.box_at(frame_index)
            for ev in self.timeline.occluders
            if ev.start_frame <= frame_index < ev.end_frame
        ]
        for tower in scene.towers:
            housing_v, jitter = self._tower_style[tower.id]
            box = tower.box
            _fill_rect(canvas, (box.x, box.y, box.w, box.h), (housing_v,) * 3)
            intensities, label, phase = self._segment_intensities(tower, frame_index)
            colors = SEGMENT_COLORS[tower.model]
            bounds = _seg_bounds(box, len(colors))
            for color, level, (sy0, sy1) in zip(colors, intensities, bounds):
                seg_h = sy1 - sy0
                radius = min(0.40 * box.w, 0.42 * seg_h, box.w / 2 - 2.5)
                radius = max(radius, 1.5)
                cx = box.x + (box.w - 1) / 2.0
                cy = (sy0 + sy1 - 1) / 2.0
                lit = np.clip(np.asarray(LIT_RGB[color]) + jitter, 0.0, 1.0)
                off = np.asarray(unlit_rgb(color))
                _draw_disk(canvas, cx, cy, radius, off + level * (lit - off))
            coverage = self._occluder_coverage(box, active_rects)
            annotations.append(
                TowerAnnotation(
                    id=tower.id,
                    box=box,
                    label=label,
                    fade=phase,
                    occluded=coverage > 0.15,
                )
            )
        for ev, rect in zip(
            [e for e in self.timeline.occluders
             if e.start_frame <= frame_index < e.end_frame],
            active_rects,
        ):
            _fill_rect(canvas, rect, ev.rgb)
        if scene.noise_sigma > 0.0:
            rng = _stream(self.seed, 3, frame_index)
            noise = rng.standard_normal(size=(scene.frame_h, scene.frame_w, 1))
            canvas += scene.noise_sigma * noise
        np.clip(canvas, 0.0, 1.0, out=canvas)
        return Image(canvas, RGB), Annotation(frame_index, tuple(annotations))


def validate_timeline(scene: SceneConfig, timeline: Timeline) -> None:
    tower_ids = {t.id for t in scene.towers}
    if set(timeline.segments) != tower_ids:
        raise ValueError("timeline towers do not match scene towers")
    by_id = {t.id: t for t in scene.towers}
    for tower_id, segs in timeline.segments.items():
        allowed = valid_combinations(by_id[tower_id].model)
        for seg in segs:
            if seg.combination not in allowed:
                raise ValueError(
                    f"tower {tower_id} ({by_id[tower_id].model.value}) cannot show "
                    f"{seg.combination.value}"
                )


def render_frame(
    scene: SceneConfig, timeline: Timeline, frame_index: int, seed: int
) -> tuple[Image, Annotation]:
    """Render one frame with its exact annotation.

    Convenience wrapper; loops should hold a `Renderer` to reuse the static
    background.
    """
    return Renderer(scene, timeline, seed).render(frame_index)


def combination_from_pixels(
    img: Image, box: BoundingBox, model: TowerModel
) -> LightCombination:
    """Recover the lit combination by probing segment centers.

    This is the pixel-level restatement of the rendering rule: a lamp is lit
    when the value channel at its disk center exceeds 0.55 (fully lit lamps
    sit above 0.9, unlit below 0.25).
    """
    colors = SEGMENT_COLORS[model]
    lit = set()
    for color, (sy0, sy1) in zip(colors, _seg_bounds(box, len(colors))):
        cx = int(round(box.x + (box.w - 1) / 2.0))
        cy = int(round((sy0 + sy1 - 1) / 2.0))
        pixel = img.pixels[cy, cx, :]
        if float(pixel.max()) >= 0.55:
            lit.add(color)
    return combination_from_colors(lit)


# --- class mixture presets -------------------------------------------------

# Published occurrence counts for the two dataset columns; used as target
# label mixtures for the generator.
SLCD_COUNTS: dict[str, int] = {
    "Green": 1060,
    "GreenRed": 1017,
    "GreenWhite": 1057,
    "GreenYellow": 1061,
    "GreenYellowRed": 916,
    "Yellow": 1114,
    "YellowRed": 1041,
    "Red": 1042,
    "Off": 1067,
    "Other": 1662,
}

AVS_COUNTS: dict[str, int] = {
    "Green": 253253,
    "GreenRed": 29585,
    "GreenWhite": 17454,
    "GreenYellow": 198514,
    "GreenYellowRed": 10905,
    "Yellow": 60124,
    "YellowRed": 11739,
    "Red": 21143,
    "Off": 25348,
}


def mixture_preset(name: str) -> tuple[dict[LightCombination, float], float]:
    """(per-light-class shares summing to 1, share of Other crops)."""
    if name == "slcd":
        counts = SLCD_COUNTS
    elif name == "avs":
        counts = AVS_COUNTS
    else:
        raise ValueError(f"unknown mixture preset {name!r} (expected slcd or avs)")
    other = counts.get("Other", 0)
    total = sum(counts.values())
    light_total = total - other
    shares = {
        parse_label(k): v / light_total for k, v in counts.items() if k != "Other"
    }
    return shares, other / total


def solve_tower_mixes(
    towers: tuple[TowerSpec, ...], light_shares: dict[LightCombination, float]
) -> dict[str, dict[LightCombination, float]]:
    """Per-tower time shares so pooled tower-frames match `light_shares`.

    GreenWhite can only come from bicolor towers; Green and Off are split
    between the two model families proportionally to the target shares.
    """
    n = len(towers)
    bicolor = [t for t in towers if t.model is TowerModel.BICOLOR]
    tricolor = [t for t in towers if t.model is TowerModel.TRICOLOR]
    gw = light_shares.get(LightCombination.GREEN_WHITE, 0.0)
    if gw > 0 and not bicolor:
        raise ValueError("mixture needs GreenWhite but scene has no bicolor tower")
    tri_only = [
        c
        for c in light_shares
        if c
        not in (
            LightCombination.GREEN,
            LightCombination.GREEN_WHITE,
            LightCombination.OFF,
        )
    ]
    if any(light_shares.get(c, 0) > 0 for c in tri_only) and not tricolor:
        raise ValueError("mixture needs tricolor classes but scene has none")
    mixes: dict[str, dict[LightCombination, float]] = {}
    nb, nt = len(bicolor), len(tricolor)
    gw_b = gw * n / nb if nb else 0.0
    if gw_b > 1.0 + 1e-9:
        raise ValueError("not enough bicolor towers to reach the GreenWhite share")
    g_share = light_shares.get(LightCombination.GREEN, 0.0)
    off_share = light_shares.get(LightCombination.OFF, 0.0)
    rem = max(0.0, 1.0 - gw_b)
    denom = g_share + off_share
    b_green = rem * (g_share / denom) if denom > 0 else rem / 2
    b_off = rem - b_green
    for t in bicolor:
        mixes[t.id] = {
            LightCombination.GREEN: b_green,
            LightCombination.GREEN_WHITE: gw_b,
            LightCombination.OFF: b_off,
        }
    if nt:
        tri_mix: dict[LightCombination, float] = {}
        for combo, share in light_shares.items():
            if combo is LightCombination.GREEN_WHITE:
                continue
            used_by_bicolor = 0.0
            if combo is LightCombination.GREEN:
                used_by_bicolor = b_green * nb / n
            elif combo is LightCombination.OFF:
                used_by_bicolor = b_off * nb / n
            tri_mix[combo] = max(0.0, (share - used_by_bicolor) * n / nt)
        total = sum(tri_mix.values())
        tri_mix = {c: v / total for c, v in tri_mix.items()}
        for t in tricolor:
            mixes[t.id] = tri_mix
    return mixes


# --- scene and timeline sampling --------------------------------------------

_TILE = 416

# Distractor palette: bright blobs, some of them light-colored on purpose.
_BLOB_PALETTE = (
    (0.92, 0.92, 0.90),
    (0.30, 0.92, 0.30),
    (0.92, 0.35, 0.30),
    (0.90, 0.88, 0.30),
    (0.85, 0.90, 0.95),
)


def _near_tile_boundary(x0: int, x1: int, limit: int, margin: int) -> bool:
    k = _TILE
    while k < limit:
        if x0 - margin < k < x1 + margin:
            return True
        k += _TILE
    return False


def sample_scene(
    seed: int,
    n_towers: int = 5,
    frame_w: int = 1248,
    frame_h: int = 832,
    scale: float = 1.0,
    n_distractors: int = 6,
    n_dark_rects: int = 2,
    avoid_tile_boundaries: bool = True,
    retries: int = 200,
) -> SceneConfig:
    """Sample a scene with one bicolor tower and tricolor towers elsewhere.

    At scale 1 tower boxes fall inside the 25..57 x 86..123 pixel envelope.
    By default towers keep clear of the 416-pixel tiling lines, matching a
    camera aimed so no machine straddles a tile; pass
    avoid_tile_boundaries=False to stress cross-tile detections.
    """
    rng = _stream(seed, 0)
    towers: list[TowerSpec] = []
    placed: list[BoundingBox] = []
    margin = 6
    for i in range(n_towers):
        model = TowerModel.BICOLOR if i == 0 else TowerModel.TRICOLOR
        for attempt in range(retries):
            w = int(round(int(rng.integers(28, 53)) * scale))
            h = int(round(int(rng.integers(90, 121)) * scale))
            w, h = max(w, 10), max(h, 20)
            if frame_w <= w + 2 * margin or frame_h <= h + 2 * margin:
                raise PlacementError("frame too small for requested tower scale")
            x = int(rng.integers(margin, frame_w - w - margin))
            y = int(rng.integers(margin, frame_h - h - margin))
            box = BoundingBox(x, y, w, h)
            if avoid_tile_boundaries and (
                _near_tile_boundary(x, x + w, frame_w, 4)
                or _near_tile_boundary(y, y + h, frame_h, 4)
            ):
                continue
            expanded = BoundingBox(
                max(0, x - 20), max(0, y - 20), w + 40, h + 40
            )
            if any(iou(expanded, other) > 0.0 for other in placed):
                continue
            towers.append(TowerSpec(id=f"machine_{i}", model=model, box=box))
            placed.append(box)
            break
        else:
            raise PlacementError(f"could not place tower {i} after {retries} tries")
    towers.sort(key=lambda t: t.box.x)
    towers = [replace(t, id=f"machine_{i}") for i, t in enumerate(towers)]

    def clear_of_towers(x0, y0, x1, y1, pad=14):
        for b in placed:
            if x1 + pad > b.x and x0 - pad < b.x2 and y1 + pad > b.y and y0 - pad < b.y2:
                return False
        return True

    distractors: list[Distractor] = []
    for _ in range(n_distractors):
        for attempt in range(retries):
            r = float(rng.uniform(4.0, 12.0))
            cx = float(rng.uniform(r + 2, frame_w - r - 2))
            cy = float(rng.uniform(r + 2, frame_h - r - 2))
            if not clear_of_towers(cx - r, cy - r, cx + r, cy + r):
                continue
            base = _BLOB_PALETTE[int(rng.integers(0, len(_BLOB_PALETTE)))]
            jitter = rng.uniform(-0.04, 0.04, size=3)
            rgb = tuple(float(v) for v in np.clip(np.asarray(base) + jitter, 0.0, 1.0))
            distractors.append(Distractor(cx, cy, r, rgb))
            break
        else:
            raise PlacementError("could not place distractor blob")
    dark_rects: list[DarkRect] = []
    for _ in range(n_dark_rects):
        for attempt in range(retries):
            h = int(rng.integers(24, 60))
            w = int(h * rng.uniform(1.8, 3.5))
            if frame_w <= w + 4 or frame_h <= h + 4:
                continue
            x = int(rng.integers(2, frame_w - w - 2))
            y = int(rng.integers(2, frame_h - h - 2))
            if not clear_of_towers(x, y, x + w, y + h):
                continue
            dark_rects.append(DarkRect((x, y, w, h), float(rng.uniform(0.18, 0.26))))
            break
        else:
            raise PlacementError("could not place dark rectangle")
    return SceneConfig(
        frame_w=frame_w,
        frame_h=frame_h,
        towers=tuple(towers),
        distractors=tuple(distractors),
        dark_rects=tuple(dark_rects),
    )


def build_timeline(
    scene: SceneConfig,
    n_frames: int,
    seed: int,
    mix: str | dict[LightCombination, float] = "slcd",
    duration_range: tuple[int, int] = (20, 60),
    fade_range: tuple[int, int] = (4, 9),
    n_occluder_events: int = 0,
) -> Timeline:
    """Script per-tower state sequences whose occupancy matches `mix`.

    A greedy deficit scheduler keeps each tower's time-in-class within one
    segment length of its target share, so pooled label frequencies land
    close to the requested mixture even for short sessions.
    """
    if isinstance(mix, str):
        light_shares, _ = mixture_preset(mix)
    else:
        light_shares = dict(mix)
    rng = _stream(seed, 1)
    tower_mixes = solve_tower_mixes(scene.towers, light_shares)
    segments: dict[str, tuple[StateSegment, ...]] = {}
    for tower in scene.towers:
        shares = {c: s for c, s in tower_mixes[tower.id].items() if s > 0}
        order = [c for c in LightCombination if c in shares]
        played = {c: 0.0 for c in order}
        segs: list[StateSegment] = []
        t = 0
        prev = None
        while t < n_frames:
            deficits = [(shares[c] * (t + 1) - played[c], -order.index(c), c) for c in order]
            deficits.sort(reverse=True)
            combo = deficits[0][2]
            if combo == prev and len(order) > 1:
                combo = deficits[1][2]
            duration = int(rng.integers(duration_range[0], duration_range[1] + 1))
            duration = min(duration, n_frames - t)
            fade = 0
            if t > 0:
                fade = int(rng.integers(fade_range[0], fade_range[1] + 1))
                fade = min(fade, max(0, duration - 1))
            segs.append(StateSegment(t, combo, fade))
            played[combo] += duration
            prev = combo
            t += duration
        segments[tower.id] = tuple(segs)
    occluders: list[OccluderEvent] = []
    if n_occluder_events and scene.towers:
        for k in range(n_occluder_events):
            tower = scene.towers[int(rng.integers(0, len(scene.towers)))]
            duration = int(rng.integers(30, 70))
            start = int(rng.integers(0, max(1, n_frames - duration)))
            w = int(tower.box.w * rng.uniform(1.1, 1.7))
            h = int(tower.box.h * rng.uniform(1.0, 1.4))
            y = tower.box.y - int((h - tower.box.h) * 0.5)
            x0 = tower.box.x - w - 8
            x1 = tower.box.x2 + 8
            rgb = (
                float(rng.uniform(0.3, 0.55)),
                float(rng.uniform(0.3, 0.55)),
                float(rng.uniform(0.35, 0.65)),
            )
            occluders.append(
                OccluderEvent(start, start + duration, (x0, y, w, h), (x1, y, w, h), rgb)
            )
    return Timeline(n_frames=n_frames, segments=segments, occluders=tuple(occluders))


# --- crops -------------------------------------------------------------------

MARGIN_MAX = 20


def sample_margins(rng: np.random.Generator) -> tuple[int, int, int, int]:
    """Independent per-side context margins, uniform on 0..20 pixels."""
    m = rng.integers(0, MARGIN_MAX + 1, size=4)
    return int(m[0]), int(m[1]), int(m[2]), int(m[3])


def crop_light(frame: Image, box: BoundingBox, rng: np.random.Generator) -> Image:
    """Crop a tower with random background margins, clipped at frame edges."""
    left, top, right, bottom = sample_margins(rng)
    x0 = max(0, box.x - left)
    y0 = max(0, box.y - top)
    x1 = min(frame.width, box.x2 + right)
    y1 = min(frame.height, box.y2 + bottom)
    return crop(frame, BoundingBox(x0, y0, x1 - x0, y1 - y0))


def sample_other_box(
    frame_w: int,
    frame_h: int,
    tower_boxes,
    rng: np.random.Generator,
    w_range: tuple[int, int] = (25, 57),
    h_range: tuple[int, int] = (86, 123),
    max_iou: float = 0.2,
    retries: int = 100,
) -> BoundingBox:
    """Uniformly place a box with IoU < max_iou against every tower box."""
    for _ in range(retries):
        w = int(rng.integers(w_range[0], w_range[1] + 1))
        h = int(rng.integers(h_range[0], h_range[1] + 1))
        if w >= frame_w or h >= frame_h:
            raise PlacementError("frame smaller than requested crop size")
        x = int(rng.integers(0, frame_w - w))
        y = int(rng.integers(0, frame_h - h))
        box = BoundingBox(x, y, w, h)
        if all(iou(box, tb) < max_iou for tb in tower_boxes):
            return box
    raise PlacementError(f"no valid placement after {retries} retries")


def random_other_crop(
    frame: Image,
    tower_boxes,
    rng: np.random.Generator,
    w_range: tuple[int, int] = (25, 57),
    h_range: tuple[int, int] = (86, 123),
    max_iou: float = 0.2,
    retries: int = 100,
) -> tuple[Image, BoundingBox]:
    box = sample_other_box(
        frame.width, frame.height, tower_boxes, rng, w_range, h_range, max_iou, retries
    )
    return crop(frame, box), box


# --- dataset generation ------------------------------------------------------


@dataclass(frozen=True)
class GenerationConfig:
    """Everything needed to generate a dataset deterministically."""

    n_frames: int
    seed: int = 0
    n_towers: int = 5
    frame_w: int = 1248
    frame_h: int = 832
    mix: str = "slcd"
    duration_range: tuple[int, int] = (20, 60)
    fade_range: tuple[int, int] = (4, 9)
    occluder_events_per_1k: float = 4.0
    avoid_tile_boundaries: bool = True

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")


def plan_generation(config: GenerationConfig) -> tuple[SceneConfig, Timeline, float]:
    """Resolve the scene, the timeline and the other-crop rate from a config."""
    scene = sample_scene(
        config.seed,
        n_towers=config.n_towers,
        frame_w=config.frame_w,
        frame_h=config.frame_h,
        avoid_tile_boundaries=config.avoid_tile_boundaries,
    )
    n_occ = int(round(config.occluder_events_per_1k * config.n_frames / 1000.0))
    timeline = build_timeline(
        scene,
        config.n_frames,
        config.seed,
        mix=config.mix,
        duration_range=config.duration_range,
        fade_range=config.fade_range,
        n_occluder_events=n_occ,
    )
    _, other_share = mixture_preset(config.mix) if isinstance(config.mix, str) else (None, 0.15)
    if other_share >= 1.0:
        raise ValueError("other share must be < 1")
    other_rate = config.n_towers * other_share / (1.0 - other_share)
    return scene, timeline, other_rate


def iter_frames(config: GenerationConfig):
    """Yield (frame_index, Image, Annotation) with other boxes attached."""
    scene, timeline, other_rate = plan_generation(config)
    renderer = Renderer(scene, timeline, config.seed)
    tower_boxes = [t.box for t in scene.towers]
    acc = 0.0
    for k in range(config.n_frames):
        img, ann = renderer.render(k)
        acc += other_rate
        n_other = int(acc)
        acc -= n_other
        rng = _stream(config.seed, 4, k)
        boxes = []
        for _ in range(n_other):
            boxes.append(
                sample_other_box(scene.frame_w, scene.frame_h, tower_boxes, rng)
            )
        yield k, img, Annotation(ann.frame_index, ann.towers, tuple(boxes))


def annotation_to_entry(ann: Annotation, frame_path: str) -> dict:
    return {
        "frame": frame_path,
        "towers": [
            {
                "id": t.id,
                "box": t.box.as_list(),
                "label": t.label.value,
                "fade": round(t.fade, 6),
                "ambiguous": t.ambiguous,
                "occluded": t.occluded,
            }
            for t in ann.towers
        ],
        "others": [b.as_list() for b in ann.other_boxes],
    }


def entry_to_annotation(entry: dict) -> Annotation:
    towers = tuple(
        TowerAnnotation(
            id=t["id"],
            box=BoundingBox.from_list(t["box"]),
            label=parse_label(t["label"]),
            fade=float(t["fade"]),
            occluded=bool(t["occluded"]),
        )
        for t in entry["towers"]
    )
    others = tuple(BoundingBox.from_list(b) for b in entry.get("others", []))
    return Annotation(-1, towers, others)


def write_manifest(entries, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")


def read_manifest(path) -> list[dict]:
    entries = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries


def generate_dataset(config: GenerationConfig, out_dir) -> list[dict]:
    """Render frames to PNG files and write a JSONL manifest.

    Layout: <out_dir>/frames/f<index>.png and <out_dir>/manifest.jsonl, with
    one manifest line per frame. Returns the manifest entries.
    """
    from .imaging import write_image

    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, img, ann in iter_frames(config):
        rel = f"frames/f{k:06d}.png"
        write_image(img, out_dir / rel)
        entries.append(annotation_to_entry(ann, rel))
    write_manifest(entries, out_dir / "manifest.jsonl")
    return entries


# --- crop dataset -------------------------------------------------------------


@dataclass(frozen=True)
class CropExample:
    """One labeled crop for classifier training or evaluation."""

    image: Image
    label: LightCombination
    fade: float = 1.0
    source: str = ""


def build_crop_dataset(
    config: GenerationConfig,
    include_ambiguous: bool = False,
) -> list[CropExample]:
    """Materialize labeled crops (with context margins) from generated frames.

    Tower entries become light-class examples; sampled background boxes become
    Other examples. Occluded towers are always dropped; half-faded towers are
    dropped unless include_ambiguous is set.
    """
    examples: list[CropExample] = []
    for k, img, ann in iter_frames(config):
        rng = _stream(config.seed, 6, k)
        for t in ann.towers:
            if t.occluded:
                continue
            if t.ambiguous and not include_ambiguous:
                continue
            examples.append(
                CropExample(
                    image=crop_light(img, t.box, rng),
                    label=t.label,
                    fade=t.fade,
                    source=f"f{k:06d}:{t.id}",
                )
            )
        for i, box in enumerate(ann.other_boxes):
            examples.append(
                CropExample(
                    image=crop(img, box),
                    label=LightCombination.OTHER,
                    fade=1.0,
                    source=f"f{k:06d}:other{i}",
                )
            )
    return examples
