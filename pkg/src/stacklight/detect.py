"""Detection stage: frame downsizing, 3x2 tiling, the classical spot-light
detector, tile-to-frame coordinate mapping and non-maximal suppression.

The detector seam is a tiny behavioral contract (`Detector`), so any model
that maps a 416x416 tile to scored boxes can be plugged in. The shipped
implementation is a classical pipeline: brightness/saturation thresholding,
connected components, lens-shape filtering, and grouping of lamp spots with
the dark rectangular housing into a tower box.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .imaging import RGB, BoundingBox, Image, iou, rgb_to_hsv

TILE = 416


@dataclass(frozen=True)
class TileGrid:
    """Non-overlapping tiling of the working frame; 3 columns x 2 rows of 416."""

    tile: int = TILE
    cols: int = 3
    rows: int = 2

    def __post_init__(self):
        if self.tile < 1 or self.cols < 1 or self.rows < 1:
            raise ValueError("tile grid dimensions must be >= 1")

    @property
    def working_w(self) -> int:
        return self.tile * self.cols

    @property
    def working_h(self) -> int:
        return self.tile * self.rows

    def origin(self, index: int) -> tuple[int, int]:
        """(x, y) of a tile's top-left corner; tiles are indexed row-major."""
        if not 0 <= index < self.cols * self.rows:
            raise ValueError(f"tile index {index} out of range")
        r, c = divmod(index, self.cols)
        return c * self.tile, r * self.tile


@dataclass(frozen=True)
class Detection:
    """A scored box in working-frame (or tile-local) pixel coordinates."""

    box: BoundingBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


class Detector:
    """Behavioral contract: one 416x416 RGB tile in, tile-local detections out.

    Implementations must be deterministic for identical input.
    """

    def detect(self, tile: Image) -> list[Detection]:
        raise NotImplementedError


def preprocess(frame: Image, grid: TileGrid = TileGrid()) -> tuple[Image, list[Image]]:
    """Downsize a frame to the working resolution and split it into tiles.

    Stitching the returned tiles back together reproduces the working frame
    bit for bit.
    """
    from .imaging import resize_bicubic

    if frame.colorspace != RGB:
        raise ValueError(f"preprocess expects an RGB frame, got {frame.colorspace}")
    working = resize_bicubic(frame, grid.working_w, grid.working_h)
    tiles = []
    for index in range(grid.cols * grid.rows):
        ox, oy = grid.origin(index)
        tiles.append(
            Image(
                working.pixels[oy : oy + grid.tile, ox : ox + grid.tile, :].copy(),
                RGB,
            )
        )
    return working, tiles


def stitch_tiles(tiles: list[Image], grid: TileGrid = TileGrid()) -> Image:
    """Inverse of the tiling step."""
    if len(tiles) != grid.cols * grid.rows:
        raise ValueError(f"expected {grid.cols * grid.rows} tiles, got {len(tiles)}")
    out = np.zeros((grid.working_h, grid.working_w, 3))
    for index, tile in enumerate(tiles):
        ox, oy = grid.origin(index)
        out[oy : oy + grid.tile, ox : ox + grid.tile, :] = tile.pixels
    return Image(out, RGB)


def to_frame_coords(
    per_tile: list[list[Detection]], grid: TileGrid = TileGrid()
) -> list[Detection]:
    """Translate tile-local detections by their tile origins; scores unchanged."""
    if len(per_tile) != grid.cols * grid.rows:
        raise ValueError(f"expected {grid.cols * grid.rows} tile lists, got {len(per_tile)}")
    out = []
    for index, dets in enumerate(per_tile):
        ox, oy = grid.origin(index)
        for det in dets:
            out.append(Detection(det.box.translated(ox, oy), det.score))
    return out


def nms(detections: list[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy non-maximal suppression at IoU > threshold.

    Candidates are visited by descending score; equal scores are ordered by
    the lexicographically smaller (x, y, w, h) box so results are fully
    deterministic. The output keeps that ordering.
    """
    ordered = sorted(detections, key=lambda d: (-d.score, d.box))
    kept: list[Detection] = []
    for det in ordered:
        if all(iou(det.box, k.box) <= iou_threshold for k in kept):
            kept.append(det)
    return kept


# --- classical spot-light detector -------------------------------------------


@dataclass(frozen=True)
class SpotlightParams:
    """Frozen thresholds of the classical detector (tuned once, documented).

    Score formula: a housing candidate scores
    clip(aspect_fit * min(1, fill/fill_norm) * spot_fit) where fill is the
    dark-pixel fraction of its bounding box, aspect_fit is a trapezoid over
    box aspect, and spot_fit measures how well interior lamp spots are
    horizontally centered (0.9 when no lamp is lit). Chains of aligned lamp
    spots without a surrounding housing score chain_score * centering and are
    emitted only when the chain region shows dark-housing evidence.
    """

    bright_v_min: float = 0.80
    dark_v_max: float = 0.30
    blob_area_min: int = 10
    blob_area_max: int = 2500
    blob_aspect: tuple[float, float] = (0.5, 2.0)
    blob_fill_min: float = 0.5
    housing_area_min: int = 600
    housing_area_max: int = 40000
    aspect_full: tuple[float, float] = (0.22, 0.60)
    aspect_zero: tuple[float, float] = (0.15, 0.85)
    housing_fill_min: float = 0.40
    fill_norm: float = 0.60
    no_spot_fit: float = 0.9
    chain_score: float = 0.55
    chain_dark_min: float = 0.25
    accept_threshold: float = 0.5
    box_pad: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["blob_aspect"] = list(self.blob_aspect)
        d["aspect_full"] = list(self.aspect_full)
        d["aspect_zero"] = list(self.aspect_zero)
        return d

    @staticmethod
    def from_json(obj: dict) -> "SpotlightParams":
        kwargs = dict(obj)
        for key in ("blob_aspect", "aspect_full", "aspect_zero"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        known = set(SpotlightParams.__dataclass_fields__)
        unknown = set(kwargs) - known
        if unknown:
            raise ValueError(f"unknown detector parameter(s): {sorted(unknown)}")
        return SpotlightParams(**kwargs)


_EIGHT_CONN = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class _Blob:
    cx: float
    cy: float
    area: int
    box: BoundingBox


def _components(mask: np.ndarray) -> list[_Blob]:
    labels, n = ndimage.label(mask, structure=_EIGHT_CONN)
    if n == 0:
        return []
    blobs = []
    areas = np.bincount(labels.ravel())
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = np.nonzero(labels[sl] == i)
        cy = float(ys.mean()) + sl[0].start
        cx = float(xs.mean()) + sl[1].start
        box = BoundingBox(
            sl[1].start, sl[0].start, sl[1].stop - sl[1].start, sl[0].stop - sl[0].start
        )
        blobs.append(_Blob(cx, cy, int(areas[i]), box))
    return blobs


def _trapezoid(x: float, full: tuple[float, float], zero: tuple[float, float]) -> float:
    if full[0] <= x <= full[1]:
        return 1.0
    if x <= zero[0] or x >= zero[1]:
        return 0.0
    if x < full[0]:
        return (x - zero[0]) / (full[0] - zero[0])
    return (zero[1] - x) / (zero[1] - full[1])


class SpotlightDetector(Detector):
    """Brightness + shape based tower detector for 416x416 tiles."""

    def __init__(self, params: SpotlightParams = SpotlightParams()):
        self.params = params

    def detect(self, tile: Image) -> list[Detection]:
        p = self.params
        if tile.colorspace != RGB:
            raise ValueError("spotlight detector expects an RGB tile")
        if tile.width != TILE or tile.height != TILE:
            raise ValueError(f"expected a {TILE}x{TILE} tile, got {tile.width}x{tile.height}")
        hsv = rgb_to_hsv(tile)
        v = hsv.pixels[..., 2]
        spots = self._lens_spots(v >= p.bright_v_min)
        dark = v <= p.dark_v_max
        candidates = self._housing_candidates(dark, spots)
        used = [c for c in candidates if c.score >= p.accept_threshold]
        chains = self._chain_candidates(spots, used, v)
        out = [c for c in used + chains if c.score >= p.accept_threshold]
        return sorted(out, key=lambda d: (-d.score, d.box))

    def _lens_spots(self, bright: np.ndarray) -> list[_Blob]:
        p = self.params
        keep = []
        for blob in _components(bright):
            if not p.blob_area_min <= blob.area <= p.blob_area_max:
                continue
            aspect = blob.box.w / blob.box.h
            if not p.blob_aspect[0] <= aspect <= p.blob_aspect[1]:
                continue
            if blob.area / blob.box.area < p.blob_fill_min:
                continue
            keep.append(blob)
        return keep

    def _housing_candidates(self, dark: np.ndarray, spots: list[_Blob]) -> list[Detection]:
        p = self.params
        out = []
        for comp in _components(dark):
            if not p.housing_area_min <= comp.area <= p.housing_area_max:
                continue
            box = comp.box
            fill = comp.area / box.area
            if fill < p.housing_fill_min:
                continue
            aspect_fit = _trapezoid(box.w / box.h, p.aspect_full, p.aspect_zero)
            if aspect_fit <= 0.0:
                continue
            inner = [
                s
                for s in spots
                if box.x <= s.cx < box.x2 and box.y <= s.cy < box.y2
            ]
            if inner:
                center_x = box.x + (box.w - 1) / 2.0
                spot_fit = float(
                    np.mean(
                        [max(0.0, 1.0 - 2.0 * abs(s.cx - center_x) / box.w) for s in inner]
                    )
                )
            else:
                spot_fit = p.no_spot_fit
            score = min(1.0, fill / p.fill_norm) * aspect_fit * spot_fit
            score = float(np.clip(score, 0.0, 1.0))
            padded = self._pad_box(box)
            out.append(Detection(padded, score))
        return out

    def _chain_candidates(
        self, spots: list[_Blob], housings: list[Detection], v: np.ndarray
    ) -> list[Detection]:
        """Vertically aligned lamp spots without an accepted housing box."""
        p = self.params
        free = [
            s
            for s in spots
            if not any(
                h.box.x <= s.cx < h.box.x2 and h.box.y <= s.cy < h.box.y2
                for h in housings
            )
        ]
        free.sort(key=lambda s: s.cy)
        chains: list[list[_Blob]] = []
        for spot in free:
            r = max(2.0, np.sqrt(spot.area / np.pi))
            placed = False
            for chain in chains:
                cx = np.mean([s.cx for s in chain])
                gap = spot.cy - chain[-1].cy
                if abs(spot.cx - cx) <= max(4.0, 0.8 * r) and 0 < gap <= 3.5 * r:
                    chain.append(spot)
                    placed = True
                    break
            if not placed:
                chains.append([spot])
        out = []
        for chain in chains:
            if len(chain) < 2:
                continue
            r = float(np.mean([np.sqrt(s.area / np.pi) for s in chain]))
            x0 = int(max(0, np.floor(min(s.box.x for s in chain) - r)))
            y0 = int(max(0, np.floor(min(s.box.y for s in chain) - r)))
            x1 = int(min(v.shape[1], np.ceil(max(s.box.x2 for s in chain) + r)))
            y1 = int(min(v.shape[0], np.ceil(max(s.box.y2 for s in chain) + r)))
            if x1 - x0 <= 0 or y1 - y0 <= 0:
                continue
            region = v[y0:y1, x0:x1]
            dark_fraction = float(np.mean(region <= p.dark_v_max + 0.05))
            if dark_fraction < p.chain_dark_min:
                continue
            center_x = x0 + (x1 - x0 - 1) / 2.0
            centering = float(
                np.mean(
                    [max(0.0, 1.0 - 2.0 * abs(s.cx - center_x) / (x1 - x0)) for s in chain]
                )
            )
            score = float(np.clip(p.chain_score * (0.5 + 0.5 * centering), 0.0, 1.0))
            out.append(Detection(BoundingBox(x0, y0, x1 - x0, y1 - y0), score))
        return out

    def _pad_box(self, box: BoundingBox) -> BoundingBox:
        pad = self.params.box_pad
        if pad == 0:
            return box
        x0 = max(0, box.x - pad)
        y0 = max(0, box.y - pad)
        x1 = min(TILE, box.x2 + pad)
        y1 = min(TILE, box.y2 + pad)
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)


def spotlight_detect(tile: Image, params: SpotlightParams = SpotlightParams()) -> list[Detection]:
    """One-shot functional form of SpotlightDetector."""
    return SpotlightDetector(params).detect(tile)


def detect_frame(
    frame: Image,
    detector: Detector | None = None,
    grid: TileGrid = TileGrid(),
    nms_iou: float = 0.5,
) -> list[Detection]:
    """Full detection pass: preprocess, per-tile detection, merge, NMS."""
    if detector is None:
        detector = SpotlightDetector()
    _, tiles = preprocess(frame, grid)
    per_tile = [detector.detect(tile) for tile in tiles]
    merged = to_frame_coords(per_tile, grid)
    return nms(merged, nms_iou)


def detections_to_json(detections: list[Detection]) -> list[dict]:
    return [{"box": d.box.as_list(), "score": d.score} for d in detections]


def detections_from_json(obj) -> list[Detection]:
    return [
        Detection(BoundingBox.from_list(d["box"]), float(d["score"])) for d in obj
    ]
