"""Multi-scale perceptual distance over frozen early encoder features.

The metric taps the first two encoder layers of a trained autoencoder at
image scales 1.0, 0.5 and 0.25. Feature maps are unit-normalized per
channel, squared differences are summed over channels and averaged over
spatial positions, weighted per layer, then averaged over scales. The
feature layers are frozen copies, so distances never change after
construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .image import Image, as_chw, resize_chw, resize_chw_backward
from .nn import ConvLayer, conv2d_forward, conv2d_input_grad, leaky_relu, leaky_relu_backward

NORM_EPS = 1e-10
SCALES = (1.0, 0.5, 0.25)
LAYER_WEIGHTS = (1.0, 1.0)


def _normalize(f: np.ndarray):
    nrm = np.sqrt((f * f).sum(axis=(1, 2), keepdims=True))
    return f / (nrm + NORM_EPS), nrm


def _normalize_backward(f, nrm, grad):
    denom = nrm + NORM_EPS
    dots = (f * grad).sum(axis=(1, 2), keepdims=True)
    safe = np.where(nrm > 0, nrm, 1.0)
    correction = np.where(nrm > 0, f * dots / (safe * denom * denom), 0.0)
    return grad / denom - correction


@dataclass(frozen=True)
class PerceptualMetric:
    layers: tuple[ConvLayer, ConvLayer]
    scales: tuple[float, ...] = SCALES
    layer_weights: tuple[float, float] = LAYER_WEIGHTS
    input_size: int = 64

    @classmethod
    def from_autoencoder(cls, ae) -> "PerceptualMetric":
        frozen = []
        for layer in ae.encoder[:2]:
            c = layer.copy()
            c.weights.setflags(write=False)
            c.bias.setflags(write=False)
            frozen.append(c)
        return cls(layers=(frozen[0], frozen[1]), input_size=ae.input_size)

    def _check(self, img: Image):
        if img.width != self.input_size or img.height != self.input_size:
            raise ValidationError(
                f"perceptual metric expects {self.input_size}x{self.input_size} images, "
                f"got {img.width}x{img.height}"
            )


def _scale_forward(m: PerceptualMetric, xs: np.ndarray):
    """Features of one already-resized input: returns cache dict."""
    l1, l2 = m.layers
    pre1 = conv2d_forward(l1, xs)
    f1 = leaky_relu(pre1)
    pre2 = conv2d_forward(l2, f1)
    f2 = leaky_relu(pre2)
    n1, nrm1 = _normalize(f1)
    n2, nrm2 = _normalize(f2)
    return {
        "xs": xs,
        "pre1": pre1,
        "f1": f1,
        "pre2": pre2,
        "f2": f2,
        "n1": n1,
        "nrm1": nrm1,
        "n2": n2,
        "nrm2": nrm2,
    }


def features(m: PerceptualMetric, x: np.ndarray):
    """Normalized feature taps of a (3, S, S) tensor at every scale."""
    out = []
    size = m.input_size
    for s in m.scales:
        target = int(round(size * s))
        xs = x if target == size else resize_chw(x, target, target)
        c = _scale_forward(m, xs)
        out.append((c["n1"], c["n2"]))
    return out


def features_of_image(m: PerceptualMetric, img: Image):
    m._check(img)
    return features(m, as_chw(img))


def pd_from_features(m: PerceptualMetric, fa, fb) -> float:
    total = 0.0
    for (a1, a2), (b1, b2) in zip(fa, fb):
        for w, a, b in ((m.layer_weights[0], a1, b1), (m.layer_weights[1], a2, b2)):
            d = a - b
            spatial = d.shape[1] * d.shape[2]
            total += w * float((d * d).sum()) / spatial
    return total / len(m.scales)


def pd(m: PerceptualMetric, a: Image, b: Image) -> float:
    """Perceptual distance; nonnegative, symmetric, exactly zero at identity."""
    if a.pixels.shape != b.pixels.shape:
        raise ValidationError("perceptual distance needs equal dimensions")
    m._check(a)
    m._check(b)
    return pd_from_features(m, features(m, as_chw(a)), features(m, as_chw(b)))


def pd_value_and_grad(m: PerceptualMetric, x: np.ndarray, fb):
    """pd between a (3, S, S) tensor and cached reference features, with the
    analytic gradient with respect to the tensor."""
    size = m.input_size
    total = 0.0
    grad_x = np.zeros_like(x)
    n_scales = len(m.scales)
    l1, l2 = m.layers
    for si, s in enumerate(m.scales):
        target = int(round(size * s))
        xs = x if target == size else resize_chw(x, target, target)
        c = _scale_forward(m, xs)
        b1, b2 = fb[si]
        d1 = c["n1"] - b1
        d2 = c["n2"] - b2
        sp1 = d1.shape[1] * d1.shape[2]
        sp2 = d2.shape[1] * d2.shape[2]
        w1, w2 = m.layer_weights
        total += (w1 * float((d1 * d1).sum()) / sp1 + w2 * float((d2 * d2).sum()) / sp2) / n_scales
        gn1 = (2.0 * w1 / (sp1 * n_scales)) * d1
        gn2 = (2.0 * w2 / (sp2 * n_scales)) * d2
        gf2 = _normalize_backward(c["f2"], c["nrm2"], gn2)
        gp2 = leaky_relu_backward(c["pre2"], gf2)
        gf1 = conv2d_input_grad(l2, gp2, c["f1"].shape[1], c["f1"].shape[2])
        gf1 += _normalize_backward(c["f1"], c["nrm1"], gn1)
        gp1 = leaky_relu_backward(c["pre1"], gf1)
        gxs = conv2d_input_grad(l1, gp1, xs.shape[1], xs.shape[2])
        grad_x += gxs if target == size else resize_chw_backward(gxs, size, size)
    return total, grad_x


def pd_gradient(m: PerceptualMetric, a: Image, b_fixed: Image) -> np.ndarray:
    """d pd(a, b)/d a as an (H, W, 3) array matching the image layout."""
    if a.pixels.shape != b_fixed.pixels.shape:
        raise ValidationError("perceptual distance needs equal dimensions")
    m._check(a)
    m._check(b_fixed)
    fb = features(m, as_chw(b_fixed))
    _, g = pd_value_and_grad(m, as_chw(a), fb)
    return g.transpose(1, 2, 0)
