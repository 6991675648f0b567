"""Image degradation suite: defocus blur, motion blur, gamma, downscaling.

Degradations are specified by small frozen dataclasses that serialize to
JSON, so sweep grids can be stored alongside their results. Blur kernels are
applied with clamp-to-edge borders; the convolution is evaluated in a
"delta" form around the center tap, which preserves constant images bit for
bit regardless of floating-point kernel normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import Image, resize_bicubic


@dataclass(frozen=True)
class Downscale:
    target_w: int
    target_h: int

    def __post_init__(self):
        if self.target_w < 1 or self.target_h < 1:
            raise ValueError(
                f"target dimensions must be >= 1, got {self.target_w}x{self.target_h}"
            )


@dataclass(frozen=True)
class DefocusBlur:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class MotionBlur:
    angle_deg: float
    strength_px: int

    def __post_init__(self):
        if self.strength_px < 1:
            raise ValueError(f"strength_px must be >= 1, got {self.strength_px}")


@dataclass(frozen=True)
class Gamma:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class Compose:
    steps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))


PerturbationSpec = Downscale | DefocusBlur | MotionBlur | Gamma | Compose


def _shifted(padded: np.ndarray, r_lead: int, off: int, n: int, axis: int) -> np.ndarray:
    start = r_lead + off
    sl = [slice(None)] * padded.ndim
    sl[axis] = slice(start, start + n)
    return padded[tuple(sl)]


def _correlate1d(arr: np.ndarray, kernel: np.ndarray, center: int, axis: int) -> np.ndarray:
    """Correlate along one axis with clamp-to-edge borders.

    Delta form: out = v_center + sum_i k_i * (v_i - v_center). For constant
    neighborhoods every difference is exactly zero, so constants pass through
    unchanged even though sum(k) is only 1.0 up to rounding.
    """
    n = arr.shape[axis]
    r_lead = center
    r_trail = kernel.size - 1 - center
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r_lead, r_trail)
    padded = np.pad(arr, pad, mode="edge")
    acc = np.zeros_like(arr)
    for i, k in enumerate(kernel):
        off = i - center
        if off == 0:
            continue
        acc += k * (_shifted(padded, r_lead, off, n, axis) - arr)
    return arr + acc


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Sampled Gaussian of radius ceil(3*sigma), normalized to sum 1."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    r = math.ceil(3.0 * sigma)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: Image, sigma: float) -> Image:
    """Separable Gaussian low-pass filter (defocus model)."""
    k = gaussian_kernel_1d(sigma)
    c = k.size // 2
    out = _correlate1d(img.pixels, k, c, axis=1)
    out = _correlate1d(out, k, c, axis=0)
    np.clip(out, 0.0, 1.0, out=out)
    return Image(out, img.colorspace)


def motion_kernel(angle_deg: float, strength_px: int) -> tuple[np.ndarray, int, int]:
    """Uniform line kernel of `strength_px` pixels along `angle_deg`.

    Returns (kernel, center_row, center_col). Axis-aligned angles produce an
    exact uniform run; other angles rasterize the segment with tent-shaped
    anti-aliased coverage before normalizing. Angles follow image axes
    (0 = +x, 90 = +y, i.e. downward).
    """
    if strength_px < 1:
        raise ValueError(f"strength_px must be >= 1, got {strength_px}")
    length = strength_px
    lead = (length - 1) // 2
    ang = angle_deg % 180.0
    if ang == 0.0:
        k = np.full((1, length), 1.0 / length)
        return k, 0, lead
    if ang == 90.0:
        k = np.full((length, 1), 1.0 / length)
        return k, lead, 0
    theta = math.radians(angle_deg)
    ux, uy = math.cos(theta), math.sin(theta)
    # segment endpoints in (x, y) cell coordinates, anchored like the
    # axis-aligned case: cells -lead .. length-1-lead along the direction
    p0 = (-lead * ux, -lead * uy)
    p1 = ((length - 1 - lead) * ux, (length - 1 - lead) * uy)
    r = length  # generous half-extent; trimmed below
    ys, xs = np.mgrid[-r : r + 1, -r : r + 1]
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0.0:
        k = np.zeros((2 * r + 1, 2 * r + 1))
        k[r, r] = 1.0
    else:
        t = ((xs - p0[0]) * dx + (ys - p0[1]) * dy) / seg_len2
        t = np.clip(t, 0.0, 1.0)
        px = p0[0] + t * dx
        py = p0[1] + t * dy
        dist = np.hypot(xs - px, ys - py)
        k = np.clip(1.0 - dist, 0.0, 1.0)
    rows = np.nonzero(k.any(axis=1))[0]
    cols = np.nonzero(k.any(axis=0))[0]
    k = k[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    k /= k.sum()
    return k, r - rows[0], r - cols[0]


def motion_blur(img: Image, angle_deg: float, strength_px: int) -> Image:
    """Linear motion blur: uniform averaging along a line of `strength_px`."""
    k, cy, cx = motion_kernel(angle_deg, strength_px)
    if k.shape == (1, 1):
        return Image(img.pixels.copy(), img.colorspace)
    if k.shape[0] == 1:
        out = _correlate1d(img.pixels, k[0], cx, axis=1)
    elif k.shape[1] == 1:
        out = _correlate1d(img.pixels, k[:, 0], cy, axis=0)
    else:
        out = _correlate2d(img.pixels, k, cy, cx)
    np.clip(out, 0.0, 1.0, out=out)
    return Image(out, img.colorspace)


def _correlate2d(arr: np.ndarray, kernel: np.ndarray, cy: int, cx: int) -> np.ndarray:
    """Dense 2D correlation in delta form with clamp-to-edge borders."""
    h, w = arr.shape[:2]
    pad = [(cy, kernel.shape[0] - 1 - cy), (cx, kernel.shape[1] - 1 - cx)]
    pad += [(0, 0)] * (arr.ndim - 2)
    padded = np.pad(arr, pad, mode="edge")
    acc = np.zeros_like(arr)
    for i in range(kernel.shape[0]):
        for j in range(kernel.shape[1]):
            k = kernel[i, j]
            if k == 0.0 or (i == cy and j == cx):
                continue
            win = padded[i : i + h, j : j + w]
            acc += k * (win - arr)
    return arr + acc


def gamma_correct(img: Image, gamma: float) -> Image:
    """Per-channel power law on [0, 1] values: out = in ** gamma."""
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    out = np.power(img.pixels, gamma)
    np.clip(out, 0.0, 1.0, out=out)
    return Image(out, img.colorspace)


def apply(spec: PerturbationSpec, img: Image) -> Image:
    """Apply one perturbation spec (Compose applies its steps left to right)."""
    if isinstance(spec, Downscale):
        return resize_bicubic(img, spec.target_w, spec.target_h)
    if isinstance(spec, DefocusBlur):
        return gaussian_blur(img, spec.sigma)
    if isinstance(spec, MotionBlur):
        return motion_blur(img, spec.angle_deg, spec.strength_px)
    if isinstance(spec, Gamma):
        return gamma_correct(img, spec.gamma)
    if isinstance(spec, Compose):
        out = img
        for step in spec.steps:
            out = apply(step, out)
        return out
    raise ValueError(f"unknown perturbation spec {spec!r}")


def spec_to_json(spec: PerturbationSpec) -> dict:
    if isinstance(spec, Downscale):
        return {"kind": "downscale", "width": spec.target_w, "height": spec.target_h}
    if isinstance(spec, DefocusBlur):
        return {"kind": "defocus", "sigma": spec.sigma}
    if isinstance(spec, MotionBlur):
        return {"kind": "motion", "angle_deg": spec.angle_deg, "strength_px": spec.strength_px}
    if isinstance(spec, Gamma):
        return {"kind": "gamma", "gamma": spec.gamma}
    if isinstance(spec, Compose):
        return {"kind": "compose", "steps": [spec_to_json(s) for s in spec.steps]}
    raise ValueError(f"unknown perturbation spec {spec!r}")


def spec_from_json(obj: dict) -> PerturbationSpec:
    kind = obj.get("kind")
    if kind == "downscale":
        return Downscale(int(obj["width"]), int(obj["height"]))
    if kind == "defocus":
        return DefocusBlur(float(obj["sigma"]))
    if kind == "motion":
        return MotionBlur(float(obj["angle_deg"]), int(obj["strength_px"]))
    if kind == "gamma":
        return Gamma(float(obj["gamma"]))
    if kind == "compose":
        return Compose(tuple(spec_from_json(s) for s in obj["steps"]))
    raise ValueError(f"unknown perturbation kind {kind!r}")


def spec_label(spec: PerturbationSpec) -> str:
    """Short stable name used in sweep tables."""
    if isinstance(spec, Downscale):
        return f"downscale_{spec.target_w}x{spec.target_h}"
    if isinstance(spec, DefocusBlur):
        return f"defocus_{spec.sigma:g}"
    if isinstance(spec, MotionBlur):
        return f"motion_{spec.strength_px:g}"
    if isinstance(spec, Gamma):
        return f"gamma_{spec.gamma:g}"
    if isinstance(spec, Compose):
        if not spec.steps:
            return "clean"
        return "+".join(spec_label(s) for s in spec.steps)
    raise ValueError(f"unknown perturbation spec {spec!r}")


# The seven evaluation sizes, largest first, and the degradation set applied
# to each size group: clean, two defocus severities, two motion severities
# and four gamma values.
SWEEP_SIZES: tuple[tuple[int, int], ...] = (
    (20, 45),
    (8, 15),
    (7, 13),
    (6, 11),
    (5, 9),
    (4, 7),
    (3, 6),
)

SWEEP_DEGRADATIONS: tuple[PerturbationSpec, ...] = (
    Compose(()),
    DefocusBlur(1.5),
    DefocusBlur(3.0),
    MotionBlur(0.0, 10),
    MotionBlur(0.0, 20),
    Gamma(0.5),
    Gamma(0.25),
    Gamma(1.5),
    Gamma(2.5),
)


@dataclass(frozen=True)
class SweepGrid:
    """Cross product of crop sizes and degradations for the robustness sweep."""

    sizes: tuple[tuple[int, int], ...] = SWEEP_SIZES
    degradations: tuple[PerturbationSpec, ...] = SWEEP_DEGRADATIONS

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple((int(w), int(h)) for w, h in self.sizes))
        object.__setattr__(self, "degradations", tuple(self.degradations))
        for w, h in self.sizes:
            if w < 1 or h < 1:
                raise ValueError(f"sweep size must be >= 1, got {w}x{h}")

    def cells(self):
        for size in self.sizes:
            for deg in self.degradations:
                yield size, deg


def default_sweep_grid() -> SweepGrid:
    return SweepGrid()
