"""Differentiable building blocks with hand-derived backward passes.

Fixed design: 3x3 kernels, zero padding 1, strides 1 or 2. All ops are
dtype-polymorphic; float64 is the default ("high precision", used by the
gradient-check suites), float32 is available for cheaper runs. Randomness
comes from a SplitMix64 stream with Box-Muller normals, pinned bit-exactly
so every experiment replays from its seed.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericalError, ValidationError

KERNEL = 3
PADDING = 1

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_U53 = float(2**-53)


def mix64(z: int) -> int:
    """SplitMix64 output mix of a 64-bit state value."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def derive_seed(base: int, *parts: int) -> int:
    """Deterministically fold integer tags into a base seed."""
    s = mix64(base & _MASK)
    for p in parts:
        s = mix64((s ^ mix64(p & _MASK)) & _MASK)
    return s


@dataclass
class Rng:
    """SplitMix64 stream; same seed gives the same draws on every platform."""

    state: int

    def __post_init__(self):
        self.state &= _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        return mix64(self.state)

    def _draw(self, n: int) -> np.ndarray:
        # SplitMix64 is counter-based: draw k has state s0 + k*gamma.
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        ks = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + ks * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z ^= z >> np.uint64(31)
        self.state = (self.state + n * _GAMMA) & _MASK
        return z

    def uniforms(self, n: int) -> np.ndarray:
        """n float64 samples in [0, 1)."""
        if n < 0:
            raise ValidationError("sample count must be >= 0")
        return (self._draw(n) >> np.uint64(11)).astype(np.float64) * _U53

    def normals(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller over consecutive uniforms."""
        if n < 0:
            raise ValidationError("sample count must be >= 0")
        if n == 0:
            return np.empty(0, dtype=np.float64)
        pairs = (n + 1) // 2
        raw = self._draw(2 * pairs)
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * _U53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def shuffled_indices(self, n: int) -> np.ndarray:
        """Deterministic Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniforms(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def rng_normal(rng: Rng, n: int) -> np.ndarray:
    return rng.normals(n)


def ensure_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# Convolution


@dataclass
class ConvLayer:
    """3x3 convolution (cross-correlation), zero padding 1, stride 1 or 2."""

    in_channels: int
    out_channels: int
    stride: int
    weights: np.ndarray  # (out, in, 3, 3)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ValidationError(f"stride must be 1 or 2, got {self.stride}")
        expected = (self.out_channels, self.in_channels, KERNEL, KERNEL)
        if self.weights.shape != expected:
            raise ValidationError(
                f"weight shape {self.weights.shape} inconsistent with {expected}"
            )
        if self.bias.shape != (self.out_channels,):
            raise ValidationError(f"bias shape {self.bias.shape} inconsistent")

    @classmethod
    def zeros(cls, in_channels, out_channels, stride, dtype=np.float64):
        return cls(
            in_channels,
            out_channels,
            stride,
            np.zeros((out_channels, in_channels, KERNEL, KERNEL), dtype=dtype),
            np.zeros(out_channels, dtype=dtype),
        )

    def copy(self) -> "ConvLayer":
        return ConvLayer(
            self.in_channels,
            self.out_channels,
            self.stride,
            self.weights.copy(),
            self.bias.copy(),
        )


def he_init(layer: ConvLayer, rng: Rng) -> ConvLayer:
    """Fresh layer with weights ~ N(0, 2/(in*9)) and zero bias."""
    std = np.sqrt(2.0 / (layer.in_channels * KERNEL * KERNEL))
    n = layer.out_channels * layer.in_channels * KERNEL * KERNEL
    w = (rng.normals(n) * std).reshape(layer.weights.shape)
    return ConvLayer(
        layer.in_channels,
        layer.out_channels,
        layer.stride,
        w.astype(layer.weights.dtype),
        np.zeros_like(layer.bias),
    )


def _pad_input(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    xp[:, 1 : h + 1, 1 : w + 1] = x
    return xp


def conv2d_forward(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    """Zero-padded cross-correlation plus bias; output is ceil(H/s) x ceil(W/s)."""
    if x.ndim != 3 or x.shape[0] != layer.in_channels:
        raise ValidationError(
            f"input has shape {x.shape}, layer expects {layer.in_channels} channels"
        )
    ensure_finite(x, "conv input")
    _, h, w = x.shape
    s = layer.stride
    ho, wo = -(-h // s), -(-w // s)
    xp = _pad_input(x)
    out = np.broadcast_to(
        layer.bias[:, None, None], (layer.out_channels, ho, wo)
    ).astype(np.result_type(x.dtype, layer.weights.dtype), copy=True)
    for u in range(KERNEL):
        for v in range(KERNEL):
            sl = xp[:, u : u + s * (ho - 1) + 1 : s, v : v + s * (wo - 1) + 1 : s]
            out += np.tensordot(layer.weights[:, :, u, v], sl, axes=([1], [0]))
    return out


def conv2d_backward(layer: ConvLayer, x: np.ndarray, grad_out: np.ndarray):
    """Exact gradients of conv2d_forward: (grad_input, grad_weights, grad_bias)."""
    _, h, w = x.shape
    s = layer.stride
    ho, wo = -(-h // s), -(-w // s)
    if grad_out.shape != (layer.out_channels, ho, wo):
        raise ValidationError(
            f"grad_out shape {grad_out.shape} != {(layer.out_channels, ho, wo)}"
        )
    xp = _pad_input(x)
    grad_b = grad_out.sum(axis=(1, 2))
    grad_w = np.empty_like(layer.weights)
    grad_xp = np.zeros_like(xp)
    for u in range(KERNEL):
        for v in range(KERNEL):
            rows = slice(u, u + s * (ho - 1) + 1, s)
            cols = slice(v, v + s * (wo - 1) + 1, s)
            grad_w[:, :, u, v] = np.tensordot(
                grad_out, xp[:, rows, cols], axes=([1, 2], [1, 2])
            )
            grad_xp[:, rows, cols] += np.tensordot(
                layer.weights[:, :, u, v], grad_out, axes=([0], [0])
            )
    return grad_xp[:, 1 : h + 1, 1 : w + 1].copy(), grad_w, grad_b


def conv2d_input_grad(
    layer: ConvLayer, grad_out: np.ndarray, in_h: int, in_w: int
) -> np.ndarray:
    """grad_input only; cheaper path for optimizers that never touch weights."""
    s = layer.stride
    ho, wo = -(-in_h // s), -(-in_w // s)
    grad_xp = np.zeros(
        (layer.in_channels, in_h + 2, in_w + 2), dtype=grad_out.dtype
    )
    for u in range(KERNEL):
        for v in range(KERNEL):
            rows = slice(u, u + s * (ho - 1) + 1, s)
            cols = slice(v, v + s * (wo - 1) + 1, s)
            grad_xp[:, rows, cols] += np.tensordot(
                layer.weights[:, :, u, v], grad_out, axes=([0], [0])
            )
    return grad_xp[:, 1 : in_h + 1, 1 : in_w + 1].copy()


# ---------------------------------------------------------------------------
# Activation

LEAKY_SLOPE = 0.2


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(
    x: np.ndarray, grad_out: np.ndarray, slope: float = LEAKY_SLOPE
) -> np.ndarray:
    # derivative at exactly 0 takes the slope branch
    return grad_out * np.where(x > 0, 1.0, slope)


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update. Returns (new_params, new_state)."""
    if params.shape != grads.shape:
        raise ValidationError("params and grads shapes disagree")
    if not np.isfinite(grads).all():
        raise NumericalError("non-finite gradient passed to adam_step")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, t)


# ---------------------------------------------------------------------------
# Weight files (NNW1)

NNW_MAGIC = b"NNW1"


def save_layers(path, layers: list[ConvLayer]) -> None:
    """Serialize conv layers: magic, manifest, then raw LE float32 tensors."""
    blob = bytearray()
    blob += NNW_MAGIC
    blob += struct.pack("<I", len(layers))
    for layer in layers:
        blob += struct.pack("<III", layer.in_channels, layer.out_channels, layer.stride)
    for layer in layers:
        blob += np.ascontiguousarray(layer.weights, dtype="<f4").tobytes()
        blob += np.ascontiguousarray(layer.bias, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(bytes(blob))
    except OSError as e:
        raise ValidationError(f"cannot write {path}: {e}") from e


def load_layers(path) -> list[ConvLayer]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such weight file: {path}")
    data = path.read_bytes()
    if data[:4] != NNW_MAGIC:
        raise ValidationError(f"{path}: bad magic, not an NNW1 weight file")
    try:
        (count,) = struct.unpack("<I", data[4:8])
        pos = 8
        shapes = []
        for _ in range(count):
            shapes.append(struct.unpack("<III", data[pos : pos + 12]))
            pos += 12
    except struct.error:
        raise ValidationError(f"{path}: truncated weight manifest") from None
    layers = []
    for in_c, out_c, stride in shapes:
        n_w = out_c * in_c * KERNEL * KERNEL
        try:
            w = np.frombuffer(data, dtype="<f4", count=n_w, offset=pos)
            pos += 4 * n_w
            b = np.frombuffer(data, dtype="<f4", count=out_c, offset=pos)
            pos += 4 * out_c
        except ValueError:
            raise ValidationError(f"{path}: truncated tensor payload") from None
        layers.append(
            ConvLayer(
                in_c,
                out_c,
                stride,
                w.astype(np.float64).reshape(out_c, in_c, KERNEL, KERNEL),
                b.astype(np.float64),
            )
        )
    for layer in layers:
        ensure_finite(layer.weights, "stored weights")
        ensure_finite(layer.bias, "stored bias")
    return layers


def quantize_f32(layers: list[ConvLayer]) -> list[ConvLayer]:
    """Snap weights to float32-representable values so NNW1 round trips are
    bit-exact for the model as used."""
    return [
        ConvLayer(
            l.in_channels,
            l.out_channels,
            l.stride,
            l.weights.astype(np.float32).astype(l.weights.dtype),
            l.bias.astype(np.float32).astype(l.bias.dtype),
        )
        for l in layers
    ]
