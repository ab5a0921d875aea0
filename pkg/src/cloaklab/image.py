"""Immutable RGB images in [0, 1] plus file I/O, resampling, and pixel math.

Pixels are stored as float32 with shape (height, width, 3). Two on-disk
formats are supported: binary PPM (P6, maxval 255) for interchange with
standard tools, and IMF, a raw little-endian float32 format that
round-trips pixels losslessly. All heavier numerics run in float64 and
quantize back to float32 at the Image boundary.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ValidationError

IMF_MAGIC = b"IMF1"


@dataclass(frozen=True, eq=False)
class Image:
    """A height x width x 3 pixel grid, every value in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float32, copy=True)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValidationError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValidationError("image dimensions must be at least 1x1")
        if not np.isfinite(px).all():
            raise ValidationError("pixel values must be finite")
        if float(px.min()) < 0.0 or float(px.max()) > 1.0:
            raise ValidationError("pixel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 3

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    __hash__ = None

    def digest(self) -> str:
        """sha256 over dimensions and raw pixel bytes."""
        import hashlib

        h = hashlib.sha256()
        h.update(struct.pack("<II", self.width, self.height))
        h.update(np.ascontiguousarray(self.pixels, dtype="<f4").tobytes())
        return h.hexdigest()


def as_chw(img: Image) -> np.ndarray:
    """Image -> float64 tensor of shape (3, H, W)."""
    return np.ascontiguousarray(img.pixels.transpose(2, 0, 1), dtype=np.float64)


def from_chw(t: np.ndarray, clip: bool = False) -> Image:
    """(3, H, W) tensor -> Image. With clip=True, clamps into [0, 1] first."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValidationError(f"expected (3, H, W) tensor, got shape {arr.shape}")
    hwc = arr.transpose(1, 2, 0)
    if clip:
        hwc = np.clip(hwc, 0.0, 1.0)
    return Image(hwc)


def clamp01_image(hwc: np.ndarray) -> Image:
    return Image(np.clip(np.asarray(hwc, dtype=np.float64), 0.0, 1.0))


# ---------------------------------------------------------------------------
# File I/O


def save_image(img: Image, path, fmt: str | None = None) -> None:
    """Write an image as PPM (P6) or IMF. fmt defaults to the path suffix."""
    path = Path(path)
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    fmt = fmt.lower()
    if fmt == "ppm":
        data = _encode_ppm(img)
    elif fmt == "imf":
        data = _encode_imf(img)
    else:
        raise ValidationError(f"unknown image format {fmt!r} (expected ppm or imf)")
    try:
        path.write_bytes(data)
    except OSError as e:
        raise ValidationError(f"cannot write {path}: {e}") from e


def load_image(path) -> Image:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such image file: {path}")
    data = path.read_bytes()
    if data[:4] == IMF_MAGIC:
        return _decode_imf(data, path)
    if data[:2] == b"P6":
        return _decode_ppm(data, path)
    raise ValidationError(f"{path}: not a PPM (P6) or IMF file")


def _encode_ppm(img: Image) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    # round-half-up quantization, pinned for cross-platform determinism
    q = np.floor(img.pixels.astype(np.float64) * 255.0 + 0.5)
    return header + q.astype(np.uint8).tobytes()


def _decode_ppm(data: bytes, path) -> Image:
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValidationError(f"{path}: malformed PPM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P6":
        raise ValidationError(f"{path}: malformed PPM header (not P6)")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise ValidationError(f"{path}: malformed PPM header") from None
    if width < 1 or height < 1:
        raise ValidationError(f"{path}: malformed PPM header (bad dimensions)")
    if maxval != 255:
        raise ValidationError(f"{path}: unsupported PPM maxval {maxval} (need 255)")
    n = width * height * 3
    payload = data[pos : pos + n]
    if len(payload) < n:
        raise ValidationError(
            f"{path}: pixel payload has {len(payload)} bytes, header promises {n}"
        )
    raw = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return Image(raw.reshape(height, width, 3))


def _encode_imf(img: Image) -> bytes:
    header = IMF_MAGIC + struct.pack("<III", img.width, img.height, 3)
    return header + np.ascontiguousarray(img.pixels, dtype="<f4").tobytes()


def _decode_imf(data: bytes, path) -> Image:
    if len(data) < 16:
        raise ValidationError(f"{path}: malformed IMF header")
    width, height, channels = struct.unpack("<III", data[4:16])
    if channels != 3:
        raise ValidationError(f"{path}: IMF channel count {channels} != 3")
    if width < 1 or height < 1:
        raise ValidationError(f"{path}: malformed IMF header (bad dimensions)")
    n = width * height * 3
    payload = data[16 : 16 + 4 * n]
    if len(payload) < 4 * n:
        raise ValidationError(
            f"{path}: pixel payload has {len(payload)} bytes, header promises {4 * n}"
        )
    raw = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if np.isnan(raw).any():
        raise ValidationError(f"{path}: IMF payload contains NaN")
    return Image(np.clip(raw, 0.0, 1.0).reshape(height, width, 3))


# ---------------------------------------------------------------------------
# Resampling

# Bilinear resampling with half-pixel-centered sampling is expressed as a
# pair of dense interpolation matrices (rows x input-size); the backward
# pass used by the perceptual metric is then just the transpose.


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    dst = np.arange(n_out, dtype=np.float64)
    src = np.clip((dst + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    m.setflags(write=False)
    return m


def resize_chw(t: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) float tensor."""
    if new_h < 1 or new_w < 1:
        raise ValidationError("resize dimensions must be at least 1")
    _, h, w = t.shape
    rh = _interp_matrix(h, new_h)
    rw = _interp_matrix(w, new_w)
    return np.einsum("oi,ciw->cow", rh, t) @ rw.T


def resize_chw_backward(grad: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Adjoint of resize_chw: scatter (C, H', W') gradients back to (C, H, W)."""
    _, out_h, out_w = grad.shape
    rh = _interp_matrix(in_h, out_h)
    rw = _interp_matrix(in_w, out_w)
    return np.einsum("oi,cow->ciw", rh, grad) @ rw


def resize_bilinear(img: Image, new_width: int, new_height: int) -> Image:
    """Resize with half-pixel-centered bilinear interpolation.

    Resizing to the original dimensions returns a bit-identical image.
    """
    if new_width < 1 or new_height < 1:
        raise ValidationError("resize dimensions must be at least 1")
    out = resize_chw(as_chw(img), new_height, new_width)
    return from_chw(out, clip=True)


# ---------------------------------------------------------------------------
# Pixel arithmetic


def pixel_l2(a: Image, b: Image) -> float:
    """Root-mean-square per-pixel distance. Zero iff the images are bit-identical."""
    if a.pixels.shape != b.pixels.shape:
        raise ValidationError(
            f"dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    d = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    return float(np.sqrt(np.mean(d * d)))


@lru_cache(maxsize=64)
def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(d * d) / (2.0 * sigma * sigma))
    k /= k.sum()
    k.setflags(write=False)
    return k


def _blur_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """1-D correlation along axis with zero padding, renormalized at borders."""
    n = arr.shape[axis]
    radius = (len(kernel) - 1) // 2
    moved = np.moveaxis(arr, axis, 0)
    padded = np.zeros((n + 2 * radius,) + moved.shape[1:], dtype=np.float64)
    padded[radius : radius + n] = moved
    out = np.zeros_like(moved, dtype=np.float64)
    norm = np.zeros(n, dtype=np.float64)
    ones = np.zeros(n + 2 * radius)
    ones[radius : radius + n] = 1.0
    for i, w in enumerate(kernel):
        out += w * padded[i : i + n]
        norm += w * ones[i : i + n]
    out /= norm.reshape((n,) + (1,) * (out.ndim - 1))
    return np.moveaxis(out, 0, axis)


def blur_array(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of an (..., H, W, ...) float array along its
    first two axes. sigma == 0 is the identity."""
    if sigma < 0:
        raise ValidationError("blur sigma must be >= 0")
    if sigma == 0:
        return np.asarray(arr, dtype=np.float64).copy()
    k = _gauss_kernel(float(sigma))
    out = _blur_axis(np.asarray(arr, dtype=np.float64), k, 0)
    return _blur_axis(out, k, 1)


def gaussian_blur(img: Image, sigma: float) -> Image:
    """Gaussian blur with kernel radius 3*sigma, renormalized at borders."""
    return clamp01_image(blur_array(img.pixels, sigma))
