"""Convolutional autoencoder: encoder, decoder, training, reconstruction gap.

Architecture is fixed at 64x64 inputs: three stride-2 encoder convs
(3 -> 16 -> 32 -> C_lat) with LeakyReLU between, and a mirrored decoder
(nearest-neighbor 2x upsampling before each stride-1 conv) ending in a
sigmoid. The latent is the flattened C_lat x 8 x 8 output of the last
encoder conv. The model is deterministic end to end: no sampling anywhere,
so encode/decode/reconstruct are pure functions of the weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .image import Image, as_chw, from_chw, pixel_l2
from .nn import (
    AdamState,
    ConvLayer,
    Rng,
    adam_step,
    conv2d_backward,
    conv2d_forward,
    conv2d_input_grad,
    ensure_finite,
    he_init,
    leaky_relu,
    leaky_relu_backward,
    load_layers,
    quantize_f32,
    save_layers,
)

INPUT_SIZE = 64
LATENT_GRID = 8  # spatial size after three stride-2 convs


def _encoder_plan(latent_channels):
    return [(3, 16, 2), (16, 32, 2), (32, latent_channels, 2)]


def _decoder_plan(latent_channels):
    return [(latent_channels, 32, 1), (32, 16, 1), (16, 3, 1)]


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * y * (1.0 - y)


def upsample2x(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2x_backward(grad: np.ndarray) -> np.ndarray:
    c, h, w = grad.shape
    return grad.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


@dataclass
class Autoencoder:
    encoder: list[ConvLayer]
    decoder: list[ConvLayer]
    input_size: int = INPUT_SIZE

    @property
    def latent_channels(self) -> int:
        return self.encoder[-1].out_channels

    @property
    def latent_dim(self) -> int:
        return self.latent_channels * LATENT_GRID * LATENT_GRID

    @classmethod
    def create(cls, latent_channels: int = 8, seed: int = 0) -> "Autoencoder":
        """He-initialized model; deterministic per seed."""
        rng = Rng(seed)
        enc = [
            he_init(ConvLayer.zeros(i, o, s), rng) for i, o, s in _encoder_plan(latent_channels)
        ]
        dec = [
            he_init(ConvLayer.zeros(i, o, s), rng) for i, o, s in _decoder_plan(latent_channels)
        ]
        return cls(enc, dec)

    def layers(self) -> list[ConvLayer]:
        return list(self.encoder) + list(self.decoder)

    def copy(self) -> "Autoencoder":
        return Autoencoder(
            [l.copy() for l in self.encoder], [l.copy() for l in self.decoder]
        )


def _check_input(ae: Autoencoder, img: Image) -> None:
    if img.width != ae.input_size or img.height != ae.input_size:
        raise ValidationError(
            f"autoencoder expects {ae.input_size}x{ae.input_size} images, "
            f"got {img.width}x{img.height}"
        )


# ---------------------------------------------------------------------------
# Tensor-level forward/backward (shared by training and the optimizers)


def encode_t(ae: Autoencoder, x: np.ndarray):
    """Encoder forward on a (3, H, W) tensor. Returns (latent grid, cache)."""
    cache = []
    h = x
    for i, layer in enumerate(ae.encoder):
        pre = conv2d_forward(layer, h)
        cache.append((h, pre))
        h = leaky_relu(pre) if i < len(ae.encoder) - 1 else pre
    return h, cache


def encode_input_grad(ae: Autoencoder, cache, grad_latent: np.ndarray) -> np.ndarray:
    g = grad_latent
    for i in reversed(range(len(ae.encoder))):
        inp, pre = cache[i]
        if i < len(ae.encoder) - 1:
            g = leaky_relu_backward(pre, g)
        g = conv2d_input_grad(ae.encoder[i], g, inp.shape[1], inp.shape[2])
    return g


def decode_t(ae: Autoencoder, z: np.ndarray):
    """Decoder forward on a (C_lat, 8, 8) latent grid. Returns (image tensor, cache)."""
    cache = []
    h = z
    for i, layer in enumerate(ae.decoder):
        up = upsample2x(h)
        pre = conv2d_forward(layer, up)
        cache.append((up, pre))
        h = leaky_relu(pre) if i < len(ae.decoder) - 1 else sigmoid(pre)
    cache.append(h)  # final activation, needed for the sigmoid backward
    return h, cache


def decode_input_grad(ae: Autoencoder, cache, grad_out: np.ndarray) -> np.ndarray:
    y = cache[-1]
    g = sigmoid_backward(y, grad_out)
    for i in reversed(range(len(ae.decoder))):
        up, pre = cache[i]
        if i < len(ae.decoder) - 1:
            g = leaky_relu_backward(pre, g)
        g = conv2d_input_grad(ae.decoder[i], g, up.shape[1], up.shape[2])
        g = upsample2x_backward(g)
    return g


def _forward_with_caches(ae: Autoencoder, x: np.ndarray):
    z, ecache = encode_t(ae, x)
    y, dcache = decode_t(ae, z)
    return y, z, ecache, dcache


def _backward_weight_grads(ae: Autoencoder, ecache, dcache, grad_y: np.ndarray):
    """Full backward pass; returns per-layer (grad_w, grad_b) in layers() order."""
    enc_grads = [None] * len(ae.encoder)
    dec_grads = [None] * len(ae.decoder)
    y = dcache[-1]
    g = sigmoid_backward(y, grad_y)
    for i in reversed(range(len(ae.decoder))):
        up, pre = dcache[i]
        if i < len(ae.decoder) - 1:
            g = leaky_relu_backward(pre, g)
        g, gw, gb = conv2d_backward(ae.decoder[i], up, g)
        dec_grads[i] = (gw, gb)
        g = upsample2x_backward(g)
    for i in reversed(range(len(ae.encoder))):
        inp, pre = ecache[i]
        if i < len(ae.encoder) - 1:
            g = leaky_relu_backward(pre, g)
        g, gw, gb = conv2d_backward(ae.encoder[i], inp, g)
        enc_grads[i] = (gw, gb)
    return enc_grads + dec_grads


# ---------------------------------------------------------------------------
# Public operations


def encode(ae: Autoencoder, img: Image) -> np.ndarray:
    """Latent vector of length latent_channels * 64."""
    _check_input(ae, img)
    z, _ = encode_t(ae, as_chw(img))
    return z.reshape(-1)


def decode(ae: Autoencoder, latent: np.ndarray) -> Image:
    z = np.asarray(latent, dtype=np.float64)
    if z.size != ae.latent_dim:
        raise ValidationError(
            f"latent length {z.size} != expected {ae.latent_dim}"
        )
    ensure_finite(z, "latent")
    y, _ = decode_t(ae, z.reshape(ae.latent_channels, LATENT_GRID, LATENT_GRID))
    return from_chw(y, clip=True)


def reconstruct(ae: Autoencoder, img: Image) -> Image:
    return decode(ae, encode(ae, img))


def reconstruction_gap(ae: Autoencoder, img: Image) -> float:
    """RMS distance between an image and its reconstruction."""
    return pixel_l2(img, reconstruct(ae, img))


def train(
    ae: Autoencoder,
    corpus: list[Image],
    epochs: int,
    lr: float,
    batch: int,
    rng: Rng,
):
    """Adam on mean squared reconstruction error.

    Shuffles deterministically from rng each epoch; gradients inside a batch
    are accumulated in index order so results are reproducible. Returns
    (trained model, per-epoch mean loss history). Final weights are snapped
    to float32-representable values so weight-file round trips are exact.
    """
    if not corpus:
        raise ValidationError("training corpus is empty")
    for img in corpus:
        _check_input(ae, img)
    if epochs < 0 or batch < 1:
        raise ValidationError("epochs must be >= 0 and batch >= 1")
    model = ae.copy()
    layers = model.layers()
    states = [
        (AdamState.zeros_like(l.weights), AdamState.zeros_like(l.bias)) for l in layers
    ]
    tensors = [as_chw(img) for img in corpus]
    n = len(tensors)
    history = []
    for epoch in range(epochs):
        order = rng.shuffled_indices(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            acc = None
            for k in idx:
                x = tensors[k]
                y, z, ecache, dcache = _forward_with_caches(model, x)
                resid = y - x
                loss = float(np.mean(resid * resid))
                if not np.isfinite(loss):
                    raise NumericalError(
                        f"training diverged at epoch {epoch}: loss={loss}"
                    )
                epoch_loss += loss
                grad_y = (2.0 / resid.size) * resid
                grads = _backward_weight_grads(model, ecache, dcache, grad_y)
                if acc is None:
                    acc = [(gw, gb) for gw, gb in grads]
                else:
                    acc = [
                        (aw + gw, ab + gb)
                        for (aw, ab), (gw, gb) in zip(acc, grads)
                    ]
            scale = 1.0 / len(idx)
            for i, layer in enumerate(layers):
                gw, gb = acc[i]
                sw, sb = states[i]
                layer.weights, sw = adam_step(layer.weights, gw * scale, sw, lr)
                layer.bias, sb = adam_step(layer.bias, gb * scale, sb, lr)
                states[i] = (sw, sb)
        mean_loss = epoch_loss / n
        if not np.isfinite(mean_loss):
            raise NumericalError(f"training diverged at epoch {epoch}: loss={mean_loss}")
        history.append(mean_loss)
    model = Autoencoder(
        quantize_f32(model.encoder), quantize_f32(model.decoder), model.input_size
    )
    return model, history


def save_weights(ae: Autoencoder, path) -> None:
    save_layers(path, ae.layers())


def load_weights(path) -> Autoencoder:
    layers = load_layers(path)
    if len(layers) != 6:
        raise ValidationError(
            f"{path}: expected 6 layers (3 encoder + 3 decoder), got {len(layers)}"
        )
    latent_channels = layers[2].out_channels
    plan = _encoder_plan(latent_channels) + _decoder_plan(latent_channels)
    for layer, (in_c, out_c, stride) in zip(layers, plan):
        if (layer.in_channels, layer.out_channels, layer.stride) != (in_c, out_c, stride):
            raise ValidationError(
                f"{path}: layer manifest does not match the expected architecture"
            )
    return Autoencoder(layers[:3], layers[3:])
