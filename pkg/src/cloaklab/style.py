"""Procedural target-style operator: blur, soft palette remap, texture field.

A style is a small parametric recipe rather than a learned model. The only
property downstream optimization needs is a deterministic map from an image
to a perceptually distinct look, which the pipeline below provides:

  1. Gaussian blur with the style's smoothness sigma,
  2. soft palette remap (softmax blend over palette colors, temperature 0.08),
  3. an additive seeded texture field (oriented strokes or stipple),

with a final clamp to [0, 1].
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .image import Image, blur_array, clamp01_image
from .nn import Rng

PALETTE_TEMPERATURE = 0.08
TEXTURE_KINDS = ("none", "stroke", "stipple")
STYLE_SIZE = 64


@dataclass(frozen=True)
class StyleParams:
    palette: tuple[tuple[float, float, float], ...]
    smoothness_sigma: float
    texture_kind: str
    texture_amplitude: float
    texture_seed: int

    def __post_init__(self):
        if not (4 <= len(self.palette) <= 8):
            raise ValidationError(f"palette needs 4..8 colors, got {len(self.palette)}")
        pal = tuple(tuple(float(v) for v in c) for c in self.palette)
        for c in pal:
            if len(c) != 3 or any(v < 0.0 or v > 1.0 for v in c):
                raise ValidationError(f"palette color {c} outside [0, 1]^3")
        object.__setattr__(self, "palette", pal)
        if self.smoothness_sigma < 0:
            raise ValidationError("smoothness_sigma must be >= 0")
        if self.texture_kind not in TEXTURE_KINDS:
            raise ValidationError(f"texture_kind must be one of {TEXTURE_KINDS}")
        if not (0.0 <= self.texture_amplitude <= 0.3):
            raise ValidationError("texture_amplitude must lie in [0, 0.3]")

    @property
    def is_smooth(self) -> bool:
        return self.texture_amplitude < 0.05 and self.smoothness_sigma >= 1.0

    def palette_array(self) -> np.ndarray:
        return np.asarray(self.palette, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "palette": [list(c) for c in self.palette],
            "smoothness_sigma": self.smoothness_sigma,
            "texture_kind": self.texture_kind,
            "texture_amplitude": self.texture_amplitude,
            "texture_seed": self.texture_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StyleParams":
        return cls(
            palette=tuple(tuple(c) for c in d["palette"]),
            smoothness_sigma=float(d["smoothness_sigma"]),
            texture_kind=str(d["texture_kind"]),
            texture_amplitude=float(d["texture_amplitude"]),
            texture_seed=int(d["texture_seed"]),
        )


def _texture_field(kind: str, seed: int, h: int, w: int) -> np.ndarray:
    """Zero-centered field in [-1, 1], a pure function of (kind, seed)."""
    if kind == "none":
        return np.zeros((h, w), dtype=np.float64)
    rng = Rng(seed)
    if kind == "stroke":
        angle = rng.uniforms(1)[0] * np.pi
        freq = 8.0 + rng.uniforms(1)[0] * 8.0
        phase = rng.uniforms(1)[0] * 2.0 * np.pi
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        scale = max(h, w)
        proj = (xs * np.cos(angle) + ys * np.sin(angle)) / scale
        return np.sin(2.0 * np.pi * freq * proj + phase)
    # stipple: thresholded white noise, blurred, recentered
    noise = rng.uniforms(h * w).reshape(h, w)
    dots = np.where(noise > 0.6, 1.0, 0.0)
    field = blur_array(dots, 0.5)
    field -= field.mean()
    peak = np.abs(field).max()
    return field / (peak + 1e-12)


def stylize(img: Image, params: StyleParams) -> Image:
    """Apply the style recipe to a 64x64 image. Deterministic."""
    if img.width != STYLE_SIZE or img.height != STYLE_SIZE:
        raise ValidationError(
            f"stylize expects {STYLE_SIZE}x{STYLE_SIZE} images, got {img.width}x{img.height}"
        )
    x = blur_array(img.pixels, params.smoothness_sigma)
    pal = params.palette_array()
    diff = x[:, :, None, :] - pal[None, None, :, :]
    logits = -(diff * diff).sum(axis=3) / PALETTE_TEMPERATURE
    logits -= logits.max(axis=2, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=2, keepdims=True)
    out = np.einsum("hwk,kc->hwc", weights, pal)
    if params.texture_amplitude > 0.0:
        field = _texture_field(params.texture_kind, params.texture_seed, img.height, img.width)
        out = out + params.texture_amplitude * field[:, :, None]
    return clamp01_image(out)


def select_target_style(artist_style: StyleParams, pool, metric, probe: Image) -> StyleParams:
    """Pick the pool style whose stylization of the probe is perceptually
    farthest from the artist's own; ties resolve to the lowest pool index."""
    from .perceptual import pd

    pool = list(pool)
    if not pool:
        raise ValidationError("target style pool is empty")
    base = stylize(probe, artist_style)
    best, best_d = None, -1.0
    for cand in pool:
        d = pd(metric, base, stylize(probe, cand))
        if d > best_d:
            best, best_d = cand, d
    return best


# ---------------------------------------------------------------------------
# Presets


def load_styles(path) -> dict[str, StyleParams]:
    """Named styles from a JSON presets file."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise ValidationError(f"cannot read styles file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"malformed styles file {path}: {e}") from e
    if not isinstance(doc, dict) or "styles" not in doc:
        raise ValidationError(f"styles file {path} must contain a 'styles' list")
    out = {}
    for entry in doc["styles"]:
        name = entry.get("name")
        if not name or name in out:
            raise ValidationError(f"styles file {path}: missing or duplicate style name")
        out[name] = StyleParams.from_dict(entry)
    return out


def default_styles() -> dict[str, StyleParams]:
    """The six shipped presets (two smooth, four textured)."""
    ref = resources.files("cloaklab").joinpath("styles.json")
    with resources.as_file(ref) as p:
        return load_styles(p)
