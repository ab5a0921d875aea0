"""Synthetic artist corpora with controlled style properties.

Base content is a seeded composition of a gradient background and a few
soft-edged shapes; an artist corpus is that content pushed through the
artist's style. "Historical" is modeled purely as membership in the
autoencoder training corpus (the in_pretraining flag).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .image import Image
from .nn import Rng, derive_seed
from .style import StyleParams, default_styles, stylize

CONTENT_SIZE = 64


@dataclass(frozen=True)
class ArtistSpec:
    name: str
    style: StyleParams
    content_seed: int
    in_pretraining: bool

    @property
    def smooth_category(self) -> str:
        return "smooth" if self.style.is_smooth else "textured"


def _soft_shape(rng: Rng, h: int, w: int):
    """Alpha mask and color of one randomly placed soft-edged shape."""
    u = rng.uniforms(10)
    kind_rect = u[0] < 0.5
    cx, cy = u[1], u[2]
    ax = 0.10 + 0.35 * u[3]
    ay = 0.10 + 0.35 * u[4]
    angle = u[5] * np.pi
    edge = 0.02 + 0.06 * u[6]
    color = np.array([u[7], u[8], u[9]])
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs = (xs + 0.5) / w - cx
    ys = (ys + 0.5) / h - cy
    ca, sa = np.cos(angle), np.sin(angle)
    xr = xs * ca + ys * sa
    yr = -xs * sa + ys * ca
    if kind_rect:
        dist = np.maximum(np.abs(xr) / ax, np.abs(yr) / ay)
    else:
        dist = np.sqrt((xr / ax) ** 2 + (yr / ay) ** 2)
    alpha = np.clip((1.0 - dist) / edge, 0.0, 1.0)
    return alpha, color


def _content_image(seed: int, h: int = CONTENT_SIZE, w: int = CONTENT_SIZE) -> Image:
    rng = Rng(seed)
    u = rng.uniforms(7)
    c0 = np.array([u[0], u[1], u[2]])
    c1 = np.array([u[3], u[4], u[5]])
    angle = u[6] * 2.0 * np.pi
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    g = ((xs + 0.5) / w - 0.5) * np.cos(angle) + ((ys + 0.5) / h - 0.5) * np.sin(angle)
    g = (g - g.min()) / (g.max() - g.min() + 1e-12)
    img = c0[None, None, :] + g[:, :, None] * (c1 - c0)[None, None, :]
    n_shapes = 3 + int(rng.uniforms(1)[0] * 5)  # 3..7
    for _ in range(n_shapes):
        alpha, color = _soft_shape(rng, h, w)
        img = img + alpha[:, :, None] * (color[None, None, :] - img)
    return Image(np.clip(img, 0.0, 1.0))


def generate_content(seed: int, n: int) -> list[Image]:
    """n deterministic 64x64 base compositions."""
    if n < 1:
        raise ValidationError("content count must be >= 1")
    return [_content_image(derive_seed(seed, i)) for i in range(n)]


def generate_artist_corpus(spec: ArtistSpec, n: int) -> list[Image]:
    return [stylize(c, spec.style) for c in generate_content(spec.content_seed, n)]


# ---------------------------------------------------------------------------
# Standard bench

# An additional smooth style that no training artist uses, for the
# non-historical smooth artist.
INDIE_SMOOTH_STYLE = StyleParams(
    palette=(
        (0.78, 0.82, 0.88),
        (0.92, 0.86, 0.82),
        (0.66, 0.72, 0.80),
        (0.85, 0.78, 0.88),
        (0.58, 0.62, 0.70),
    ),
    smoothness_sigma=1.4,
    texture_kind="none",
    texture_amplitude=0.0,
    texture_seed=7006,
)


@dataclass(frozen=True)
class ArtistCorpus:
    spec: ArtistSpec
    train: tuple[Image, ...]
    holdout: tuple[Image, ...]

    @property
    def images(self) -> tuple[Image, ...]:
        return self.train + self.holdout


@dataclass(frozen=True)
class Bench:
    artists: tuple[ArtistCorpus, ...]
    master_seed: int

    def artist(self, name: str) -> ArtistCorpus:
        for a in self.artists:
            if a.spec.name == name:
                return a
        raise ValidationError(f"no artist named {name!r} in the bench")

    def training_corpus(self) -> list[Image]:
        out = []
        for a in self.artists:
            if a.spec.in_pretraining:
                out.extend(a.train)
        return out

    def pretraining_holdout(self) -> list[Image]:
        out = []
        for a in self.artists:
            if a.spec.in_pretraining:
                out.extend(a.holdout)
        return out


def bench_artist_specs(master_seed: int = 0) -> list[ArtistSpec]:
    styles = default_styles()
    table = [
        ("hist_romantic", styles["romanticism"], True),
        ("hist_realist", styles["realism"], True),
        ("indie_textured", styles["impasto"], False),
        ("indie_smooth", INDIE_SMOOTH_STYLE, False),
        ("aux_textured_a", styles["stipple"], True),
        ("aux_textured_b", styles["crosshatch"], True),
    ]
    return [
        ArtistSpec(name, style, derive_seed(master_seed, 0xA57, i), pretrain)
        for i, (name, style, pretrain) in enumerate(table)
    ]


def standard_bench(
    master_seed: int = 0, images_per_artist: int = 40, train_per_artist: int = 30
) -> Bench:
    """Six artists, 40 images each, 30 train / 10 holdout.

    Two smooth in-pretraining artists (the historical cast), one textured and
    one smooth artist outside pretraining, plus two textured training-only
    artists. The autoencoder training corpus is the union of in-pretraining
    train splits.
    """
    if not (1 <= train_per_artist < images_per_artist):
        raise ValidationError("need 1 <= train_per_artist < images_per_artist")
    artists = []
    for spec in bench_artist_specs(master_seed):
        images = generate_artist_corpus(spec, images_per_artist)
        artists.append(
            ArtistCorpus(
                spec,
                tuple(images[:train_per_artist]),
                tuple(images[train_per_artist:]),
            )
        )
    return Bench(tuple(artists), master_seed)


def genre_corpora(
    master_seed: int = 0,
    n_train: int = 40,
    n_holdout: int = 20,
    styles: dict[str, StyleParams] | None = None,
    train_blur_sigmas: tuple[float, ...] = (0.75, 1.5),
):
    """Labeled corpora for the genre classifier: fresh content per preset
    style, split into train/holdout dicts keyed by style name.

    The training split also carries blur-degraded copies of each image
    (one per sigma in train_blur_sigmas), so genre identity is taught as a
    property of palette and composition rather than of image quality; the
    holdout split stays pristine.
    """
    from .image import gaussian_blur

    styles = styles if styles is not None else default_styles()
    train, holdout = {}, {}
    for gi, (name, style) in enumerate(styles.items()):
        content = generate_content(derive_seed(master_seed, 0x6E, gi), n_train + n_holdout)
        images = [stylize(c, style) for c in content]
        base = images[:n_train]
        degraded = [gaussian_blur(im, s) for s in train_blur_sigmas for im in base]
        train[name] = base + degraded
        holdout[name] = images[n_train:]
    return train, holdout


def corpus_digest(images) -> str:
    """sha256 over per-image digests; order-sensitive."""
    h = hashlib.sha256()
    for img in images:
        h.update(bytes.fromhex(img.digest()))
    return h.hexdigest()


def bench_digest(bench: Bench) -> str:
    h = hashlib.sha256()
    for a in bench.artists:
        h.update(a.spec.name.encode())
        h.update(bytes.fromhex(corpus_digest(a.images)))
    return h.hexdigest()
