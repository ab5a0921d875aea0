"""Measurement machinery: style signatures, a small genre classifier,
frequency-band texture metrics, and reconstruction-gap population reports.

Style mimicry success is proxied by the distance between aggregate style
signatures (color histogram + Laplacian band spectrum + mean latent) of a
candidate training set and of held-out originals; lower means the set still
teaches the original style.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autoencoder import Autoencoder, encode, reconstruction_gap
from .errors import ValidationError
from .image import Image, as_chw
from .nn import (
    AdamState,
    ConvLayer,
    Rng,
    adam_step,
    conv2d_backward,
    conv2d_forward,
    he_init,
    leaky_relu,
    leaky_relu_backward,
)

# ---------------------------------------------------------------------------
# Laplacian pyramid (4 levels, 5-tap binomial filter, reflect padding)

_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
PYRAMID_LEVELS = 4


def _binomial_blur_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(arr, axis, 0)
    n = moved.shape[0]
    padded = np.concatenate(
        [moved[2:0:-1], moved, moved[n - 2 : n - 4 if n >= 4 else None : -1]], axis=0
    )
    out = sum(w * padded[i : i + n] for i, w in enumerate(_BINOMIAL5))
    return np.moveaxis(out, 0, axis)


def _binomial_blur(arr: np.ndarray) -> np.ndarray:
    return _binomial_blur_axis(_binomial_blur_axis(arr, 0), 1)


def _pyr_down(arr: np.ndarray) -> np.ndarray:
    return _binomial_blur(arr)[::2, ::2]


def _pyr_up(arr: np.ndarray) -> np.ndarray:
    return _binomial_blur(arr.repeat(2, axis=0).repeat(2, axis=1))


def laplacian_band_energies(field: np.ndarray) -> tuple[float, ...]:
    """Mean absolute band energy at each pyramid level of a 2-D field,
    finest first; the last entry is the low-pass residual. Constant fields
    produce (numerically) zero difference bands."""
    g = np.asarray(field, dtype=np.float64)
    energies = []
    for _ in range(PYRAMID_LEVELS - 1):
        down = _pyr_down(g)
        band = g - _pyr_up(down)
        energies.append(float(np.abs(band).mean()))
        g = down
    energies.append(float(np.abs(g).mean()))
    return tuple(energies)


def _luma(img: Image) -> np.ndarray:
    return img.pixels.astype(np.float64).mean(axis=2)


def band_energies(img: Image) -> tuple[float, ...]:
    return laplacian_band_energies(_luma(img))


def fine_band_energy(img: Image) -> float:
    return band_energies(img)[0]


def texture_retention(original: Image, processed: Image) -> float:
    """Finest-band energy ratio processed / original. 1.0 for identical images."""
    if original.pixels.shape != processed.pixels.shape:
        raise ValidationError("texture_retention needs equal dimensions")
    if original == processed:
        return 1.0
    return fine_band_energy(processed) / (fine_band_energy(original) + 1e-10)


def artifact_energy(original: Image, processed: Image) -> float:
    """Finest-band energy of the residual processed - original; zero for
    identical images, near zero for any constant shift."""
    if original.pixels.shape != processed.pixels.shape:
        raise ValidationError("artifact_energy needs equal dimensions")
    resid = processed.pixels.astype(np.float64) - original.pixels.astype(np.float64)
    return laplacian_band_energies(resid.mean(axis=2))[0]


# ---------------------------------------------------------------------------
# Style signatures

HIST_BINS = 8


@dataclass(frozen=True)
class StyleSignature:
    color_hist: np.ndarray  # 512 floats, L1-normalized
    texture_spectrum: np.ndarray  # 4 floats
    latent_mean: np.ndarray

    def __post_init__(self):
        if self.color_hist.shape != (HIST_BINS**3,):
            raise ValidationError("color_hist must have 512 bins")
        if abs(float(self.color_hist.sum()) - 1.0) > 1e-9:
            raise ValidationError("color_hist must be L1-normalized")


def style_signature(ae: Autoencoder, images) -> StyleSignature:
    images = list(images)
    if not images:
        raise ValidationError("style_signature needs at least one image")
    hist = np.zeros(HIST_BINS**3, dtype=np.float64)
    spectra, latents = [], []
    for img in images:
        px = img.pixels.astype(np.float64).reshape(-1, 3)
        bins = np.minimum((px * HIST_BINS).astype(np.int64), HIST_BINS - 1)
        flat = (bins[:, 0] * HIST_BINS + bins[:, 1]) * HIST_BINS + bins[:, 2]
        hist += np.bincount(flat, minlength=HIST_BINS**3)
        spectra.append(band_energies(img))
        latents.append(encode(ae, img))
    hist /= hist.sum()
    return StyleSignature(
        hist, np.mean(spectra, axis=0), np.mean(latents, axis=0)
    )


SIGNATURE_WEIGHTS = (1.0, 2.0, 1.0)  # color L1, texture L2, latent cosine


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 0.0
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 1.0
    return 1.0 - float(a @ b) / (na * nb)


def signature_distance(a: StyleSignature, b: StyleSignature) -> float:
    return sum(signature_components(a, b).values())


def signature_components(a: StyleSignature, b: StyleSignature) -> dict[str, float]:
    """Weighted per-component distances: color, texture, latent."""
    if a.color_hist.shape != b.color_hist.shape or a.latent_mean.shape != b.latent_mean.shape:
        raise ValidationError("signature dimensions disagree")
    wc, wt, wz = SIGNATURE_WEIGHTS
    return {
        "color": wc * float(np.abs(a.color_hist - b.color_hist).sum()),
        "texture": wt * float(np.linalg.norm(a.texture_spectrum - b.texture_spectrum)),
        "latent": wz * _cosine_distance(a.latent_mean, b.latent_mean),
    }


def mimic_score(ae: Autoencoder, train_images, holdout_originals) -> float:
    """Signature distance between a candidate training set and held-out
    originals; lower means mimicry from that set stays truer to the style."""
    return signature_distance(
        style_signature(ae, train_images), style_signature(ae, holdout_originals)
    )


def mimic_breakdown(ae: Autoencoder, train_images, holdout_originals) -> dict[str, float]:
    comps = signature_components(
        style_signature(ae, train_images), style_signature(ae, holdout_originals)
    )
    comps["total"] = sum(comps.values())
    return comps


# ---------------------------------------------------------------------------
# Genre classifier

_GENRE_PLAN = [(3, 8, 2), (8, 16, 2), (16, 32, 2)]


@dataclass
class GenreClassifier:
    convs: list[ConvLayer]
    w_out: np.ndarray  # (n_genres, 32)
    b_out: np.ndarray  # (n_genres,)
    labels: tuple[str, ...]

    @classmethod
    def create(cls, labels, seed: int = 0) -> "GenreClassifier":
        rng = Rng(seed)
        convs = [he_init(ConvLayer.zeros(i, o, s), rng) for i, o, s in _GENRE_PLAN]
        n = len(labels)
        w = rng.normals(n * 32).reshape(n, 32) * np.sqrt(1.0 / 32)
        return cls(convs, w, np.zeros(n), tuple(labels))

    def _features(self, x):
        cache = []
        h = x
        for layer in self.convs:
            pre = conv2d_forward(layer, h)
            cache.append((h, pre))
            h = leaky_relu(pre)
        pooled = h.mean(axis=(1, 2))
        return pooled, h.shape, cache

    def logits(self, img: Image) -> np.ndarray:
        pooled, _, _ = self._features(as_chw(img))
        return self.w_out @ pooled + self.b_out

    def predict(self, img: Image) -> str:
        return self.labels[int(np.argmax(self.logits(img)))]


def _softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def train_genre_classifier(
    corpora: dict[str, list[Image]],
    epochs: int = 25,
    lr: float = 0.004,
    rng: Rng | None = None,
    batch: int = 16,
) -> GenreClassifier:
    """Cross-entropy training on labeled style corpora; deterministic."""
    if len(corpora) < 2:
        raise ValidationError("need at least two genres to train a classifier")
    rng = rng if rng is not None else Rng(0)
    labels = tuple(corpora.keys())
    clf = GenreClassifier.create(labels, seed=rng.next_u64())
    data = [
        (as_chw(img), yi) for yi, name in enumerate(labels) for img in corpora[name]
    ]
    n = len(data)
    states = [
        (AdamState.zeros_like(l.weights), AdamState.zeros_like(l.bias))
        for l in clf.convs
    ]
    state_w = AdamState.zeros_like(clf.w_out)
    state_b = AdamState.zeros_like(clf.b_out)
    for _ in range(epochs):
        order = rng.shuffled_indices(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            acc = None
            acc_w = np.zeros_like(clf.w_out)
            acc_b = np.zeros_like(clf.b_out)
            for k in idx:
                x, yi = data[k]
                pooled, feat_shape, cache = clf._features(x)
                logits = clf.w_out @ pooled + clf.b_out
                p = _softmax(logits)
                dlogits = p.copy()
                dlogits[yi] -= 1.0
                acc_w += np.outer(dlogits, pooled)
                acc_b += dlogits
                g_pooled = clf.w_out.T @ dlogits
                spatial = feat_shape[1] * feat_shape[2]
                g = np.broadcast_to(
                    g_pooled[:, None, None] / spatial, feat_shape
                ).astype(np.float64)
                grads = []
                for i in reversed(range(len(clf.convs))):
                    inp, pre = cache[i]
                    g = leaky_relu_backward(pre, g)
                    g, gw, gb = conv2d_backward(clf.convs[i], inp, g)
                    grads.append((gw, gb))
                grads = grads[::-1]
                if acc is None:
                    acc = grads
                else:
                    acc = [
                        (aw + gw, ab + gb) for (aw, ab), (gw, gb) in zip(acc, grads)
                    ]
            scale = 1.0 / len(idx)
            for i, layer in enumerate(clf.convs):
                sw, sb = states[i]
                layer.weights, sw = adam_step(layer.weights, acc[i][0] * scale, sw, lr)
                layer.bias, sb = adam_step(layer.bias, acc[i][1] * scale, sb, lr)
                states[i] = (sw, sb)
            clf.w_out, state_w = adam_step(clf.w_out, acc_w * scale, state_w, lr)
            clf.b_out, state_b = adam_step(clf.b_out, acc_b * scale, state_b, lr)
    return clf


def genre_accuracy(clf: GenreClassifier, images, labels) -> float:
    images, labels = list(images), list(labels)
    if len(images) != len(labels):
        raise ValidationError("images and labels must have equal length")
    if not images:
        raise ValidationError("genre_accuracy needs at least one image")
    for lab in labels:
        if lab not in clf.labels:
            raise ValidationError(f"label {lab!r} outside the classifier's genre set")
    hits = sum(1 for img, lab in zip(images, labels) if clf.predict(img) == lab)
    return hits / len(images)


# ---------------------------------------------------------------------------
# Reconstruction-gap report


@dataclass(frozen=True)
class GapReport:
    clean_gaps: tuple[float, ...]
    treated_gaps: tuple[float, ...]

    @property
    def mean_clean(self) -> float:
        return float(np.mean(self.clean_gaps))

    @property
    def mean_treated(self) -> float:
        return float(np.mean(self.treated_gaps))

    @property
    def std_clean(self) -> float:
        return float(np.std(self.clean_gaps, ddof=1)) if len(self.clean_gaps) > 1 else 0.0

    @property
    def std_treated(self) -> float:
        return float(np.std(self.treated_gaps, ddof=1)) if len(self.treated_gaps) > 1 else 0.0

    @property
    def cohens_d(self) -> float:
        n1, n2 = len(self.clean_gaps), len(self.treated_gaps)
        if n1 + n2 < 3:
            return 0.0
        pooled = np.sqrt(
            ((n1 - 1) * self.std_clean**2 + (n2 - 1) * self.std_treated**2)
            / (n1 + n2 - 2)
        )
        diff = self.mean_treated - self.mean_clean
        if diff == 0.0:
            return 0.0
        if pooled == 0.0:
            return float(np.inf) if diff > 0 else float(-np.inf)
        return float(diff / pooled)

    def csv_rows(self):
        rows = [("image_id", "population", "gap")]
        for i, g in enumerate(self.clean_gaps):
            rows.append((f"clean_{i:03d}", "clean", repr(g)))
        for i, g in enumerate(self.treated_gaps):
            rows.append((f"treated_{i:03d}", "treated", repr(g)))
        return rows

    def summary(self) -> dict:
        return {
            "n_clean": len(self.clean_gaps),
            "n_treated": len(self.treated_gaps),
            "mean_clean": self.mean_clean,
            "mean_treated": self.mean_treated,
            "std_clean": self.std_clean,
            "std_treated": self.std_treated,
            "cohens_d": self.cohens_d,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def gap_report(ae: Autoencoder, clean, treated) -> GapReport:
    """Per-population reconstruction gaps with means, stds and Cohen's d."""
    clean, treated = list(clean), list(treated)
    if not clean or not treated:
        raise ValidationError("gap_report needs nonempty populations")
    return GapReport(
        tuple(reconstruction_gap(ae, img) for img in clean),
        tuple(reconstruction_gap(ae, img) for img in treated),
    )
