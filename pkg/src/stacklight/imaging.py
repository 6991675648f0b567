"""Raster image type, box geometry, colorspace conversion, resampling and file I/O.

Images are immutable float64 rasters with intensities in [0, 1], stored
row-major as (height, width, channels). All operations are pure: they never
modify their inputs and return freshly allocated images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

RGB = "RGB"
HSV = "HSV"
GRAY = "GRAY"
COLORSPACES = (RGB, HSV, GRAY)


@dataclass(frozen=True)
class Image:
    """Immutable raster. `pixels` has shape (height, width, channels).

    Invariants enforced at construction: channels is 1 or 3, every value is
    finite and in [0, 1], and single-channel images are tagged GRAY (and only
    those). The pixel buffer is frozen; pass a copy if you need to keep
    mutating the source array.
    """

    pixels: np.ndarray
    colorspace: str = RGB

    def __post_init__(self):
        arr = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise ValueError(f"pixels must be HxWxC, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise ValueError(f"image dimensions must be >= 1, got {w}x{h}")
        if c not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {c}")
        if self.colorspace not in COLORSPACES:
            raise ValueError(f"unknown colorspace {self.colorspace!r}")
        if (c == 1) != (self.colorspace == GRAY):
            raise ValueError(
                f"channels={c} is inconsistent with colorspace={self.colorspace}"
            )
        mn, mx = arr.min(), arr.max()
        # NaN fails both comparisons, so this also rejects non-finite data
        if not (mn >= 0.0 and mx <= 1.0):
            raise ValueError("pixel values must be finite and lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Axis-aligned pixel box: (x, y) is the top-left corner, w/h the extent."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise ValueError(f"{name} must be an integer, got {type(v).__name__}")
            object.__setattr__(self, name, int(v))
        if self.x < 0 or self.y < 0:
            raise ValueError(f"box origin must be >= 0, got ({self.x}, {self.y})")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extent must be > 0, got {self.w}x{self.h}")

    @property
    def x2(self) -> int:
        """One past the right edge."""
        return self.x + self.w

    @property
    def y2(self) -> int:
        """One past the bottom edge."""
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def within(self, width: int, height: int) -> bool:
        return self.x2 <= width and self.y2 <= height

    def translated(self, dx: int, dy: int) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @staticmethod
    def from_list(v) -> "BoundingBox":
        if len(v) != 4:
            raise ValueError(f"box list must have 4 entries, got {len(v)}")
        return BoundingBox(int(v[0]), int(v[1]), int(v[2]), int(v[3]))


def intersection_area(a: BoundingBox, b: BoundingBox) -> int:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0:
        return 0.0
    return inter / float(a.area + b.area - inter)


def crop(img: Image, box: BoundingBox) -> Image:
    """Extract the sub-image covered by `box`. The box must lie inside `img`."""
    if not box.within(img.width, img.height):
        raise ValueError(
            f"crop box {box} exceeds image bounds {img.width}x{img.height}"
        )
    out = img.pixels[box.y : box.y2, box.x : box.x2, :].copy()
    return Image(out, img.colorspace)


# Catmull-Rom cubic kernel (a = -0.5). At integer offsets the weights are
# exactly {1, 0, 0}, so a same-size resample reproduces the input bit for bit.
_CR_A = -0.5


def _catmull_rom(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    inner = (_CR_A + 2.0) * ax**3 - (_CR_A + 3.0) * ax**2 + 1.0
    outer = _CR_A * ax**3 - 5.0 * _CR_A * ax**2 + 8.0 * _CR_A * ax - 4.0 * _CR_A
    return np.where(ax <= 1.0, inner, np.where(ax < 2.0, outer, 0.0))


def _resample_axis_weights(n_in: int, n_out: int):
    """4-tap Catmull-Rom sample indices (clamped to the edge) and weights."""
    out_idx = np.arange(n_out, dtype=np.float64)
    src = (out_idx + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src)
    t = src - base
    offsets = np.array([-1.0, 0.0, 1.0, 2.0])
    # distance of each tap from the sample point
    dist = offsets[np.newaxis, :] - t[:, np.newaxis]
    weights = _catmull_rom(dist)
    taps = base[:, np.newaxis].astype(np.int64) + offsets[np.newaxis, :].astype(np.int64)
    taps = np.clip(taps, 0, n_in - 1)
    return taps, weights


def _resample_pass(pixels: np.ndarray, taps: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    """One separable pass: 4-tap weighted gather along `axis`."""
    if axis == 1:
        out = weights[np.newaxis, :, 0, np.newaxis] * pixels[:, taps[:, 0], :]
        for t in range(1, 4):
            out += weights[np.newaxis, :, t, np.newaxis] * pixels[:, taps[:, t], :]
    else:
        out = weights[:, 0, np.newaxis, np.newaxis] * pixels[taps[:, 0], :, :]
        for t in range(1, 4):
            out += weights[:, t, np.newaxis, np.newaxis] * pixels[taps[:, t], :, :]
    return out


def resize_bicubic(img: Image, out_w: int, out_h: int) -> Image:
    """Separable Catmull-Rom resampling with clamp-to-edge borders.

    Resampling to the input size is bit-identical (at unit scale the kernel
    weights are exactly 1, 0, 0, 0; the same-size case also takes a plain
    copy shortcut). Output values are clamped back to [0, 1] since the cubic
    kernel can overshoot.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target dimensions must be >= 1, got {out_w}x{out_h}")
    if out_w == img.width and out_h == img.height:
        return Image(img.pixels.copy(), img.colorspace)
    return Image(_resize_generic(img.pixels, out_w, out_h), img.colorspace)


def _resize_generic(pixels: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    taps_x, w_x = _resample_axis_weights(pixels.shape[1], out_w)
    taps_y, w_y = _resample_axis_weights(pixels.shape[0], out_h)
    tmp = _resample_pass(pixels, taps_x, w_x, axis=1)
    out = _resample_pass(tmp, taps_y, w_y, axis=0)
    np.clip(out, 0.0, 1.0, out=out)
    return out


def rgb_to_hsv(img: Image) -> Image:
    """RGB -> hexcone HSV with all three channels scaled to [0, 1]."""
    if img.colorspace != RGB:
        raise ValueError(f"rgb_to_hsv expects an RGB image, got {img.colorspace}")
    r, g, b = img.pixels[..., 0], img.pixels[..., 1], img.pixels[..., 2]
    maxc = np.max(img.pixels, axis=2)
    minc = np.min(img.pixels, axis=2)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0.0, delta / np.where(maxc > 0.0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0.0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(
        r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc)
    )
    h = np.where(delta > 0.0, (h / 6.0) % 1.0, 0.0)
    return Image(np.stack([h, s, v], axis=2), HSV)


def hsv_to_rgb(img: Image) -> Image:
    """Inverse of rgb_to_hsv. Roundtrips within 1e-6 per channel."""
    if img.colorspace != HSV:
        raise ValueError(f"hsv_to_rgb expects an HSV image, got {img.colorspace}")
    h, s, v = img.pixels[..., 0], img.pixels[..., 1], img.pixels[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    out = np.stack([r, g, b], axis=2)
    np.clip(out, 0.0, 1.0, out=out)
    return Image(out, RGB)


def to_gray(img: Image) -> Image:
    """Luma (Rec. 601) grayscale of an RGB image."""
    if img.colorspace != RGB:
        raise ValueError(f"to_gray expects an RGB image, got {img.colorspace}")
    y = img.pixels @ np.array([0.299, 0.587, 0.114])
    np.clip(y, 0.0, 1.0, out=y)
    return Image(y[:, :, np.newaxis], GRAY)


def _quantize(img: Image) -> np.ndarray:
    return np.round(img.pixels * 255.0).astype(np.uint8)


def write_image(img: Image, path) -> None:
    """Write an RGB or GRAY image as 8-bit PNG or binary PPM (P6).

    The format is chosen by the file suffix (.png / .ppm). Values are
    quantized to 8 bits; a write/read roundtrip is exact at that precision.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if img.colorspace == HSV:
        raise ValueError("refusing to write an HSV image; convert to RGB first")
    if suffix == ".png":
        data = _quantize(img)
        if img.channels == 1:
            pil = _PILImage.fromarray(data[:, :, 0], mode="L")
        else:
            pil = _PILImage.fromarray(data, mode="RGB")
        pil.save(path, format="PNG")
    elif suffix == ".ppm":
        if img.channels != 3:
            raise ValueError("binary PPM (P6) stores RGB; got a grayscale image")
        data = _quantize(img)
        header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
        path.write_bytes(header + data.tobytes())
    else:
        raise IOError(f"unsupported image format {suffix!r} (expected .png or .ppm)")


def _read_ppm(raw: bytes, path) -> Image:
    if raw[:2] != b"P6":
        raise IOError(f"{path}: not a binary PPM (missing P6 magic)")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise IOError(f"{path}: truncated PPM header")
        ch = raw[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(raw) and raw[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(raw[start:pos]))
        else:
            raise IOError(f"{path}: malformed PPM header near byte {pos}")
    w, h, maxval = fields
    if maxval != 255:
        raise IOError(f"{path}: only maxval 255 PPM is supported, got {maxval}")
    if w < 1 or h < 1:
        raise IOError(f"{path}: invalid PPM dimensions {w}x{h}")
    pos += 1  # exactly one whitespace byte separates header and raster
    need = w * h * 3
    data = raw[pos : pos + need]
    if len(data) != need:
        raise IOError(f"{path}: PPM raster truncated ({len(data)} of {need} bytes)")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return Image(arr.astype(np.float64) / 255.0, RGB)


def read_image(path) -> Image:
    """Read an 8-bit PNG (RGB or gray) or binary PPM (P6) file."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        try:
            pil = _PILImage.open(path)
            pil.load()
        except FileNotFoundError:
            raise
        except Exception as exc:
            raise IOError(f"{path}: cannot decode PNG ({exc})") from exc
        if pil.mode == "L":
            arr = np.asarray(pil, dtype=np.float64) / 255.0
            return Image(arr[:, :, np.newaxis], GRAY)
        if pil.mode == "RGB":
            arr = np.asarray(pil, dtype=np.float64) / 255.0
            return Image(arr, RGB)
        raise IOError(f"{path}: unsupported PNG mode {pil.mode!r} (need 8-bit L or RGB)")
    if suffix == ".ppm":
        return _read_ppm(path.read_bytes(), path)
    raise IOError(f"unsupported image format {suffix!r} (expected .png or .ppm)")
