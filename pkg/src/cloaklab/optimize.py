"""Cloaking and purification as penalty-method gradient descent.

Both operations optimize a pixel-space perturbation delta with Adam under a
perceptual-distance budget enforced by a squared hinge penalty:

  cloak:  minimize ||E(clamp01(x + d)) - E(stylize(x, t))||_2
  purify: minimize mean((y - reconstruct(y))^2),  y = clamp01(x + d)

subject to pd(y, input) <= budget. The penalty weight grows geometrically
while the constraint is violated, and the returned iterate is the feasible
one (pd within 1.05 * budget) with the lowest primary loss seen, falling
back to the last evaluated iterate when none was feasible. The clamp is
applied inside the objective: entries pushed past [0, 1] stop receiving
outward gradient, so every iterate is a valid image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autoencoder import (
    LATENT_GRID,
    Autoencoder,
    decode_input_grad,
    decode_t,
    encode,
    encode_input_grad,
    encode_t,
)
from .errors import NumericalError, ValidationError
from .image import Image, as_chw
from .nn import AdamState, adam_step
from .perceptual import PerceptualMetric, features, pd_value_and_grad
from .style import StyleParams, stylize

FEASIBLE_SLACK = 1.05
ALPHA_PERIOD = 50


@dataclass(frozen=True)
class OptConfig:
    budget: float = 0.07
    steps: int = 400
    lr: float = 0.01
    penalty_alpha: float = 10.0
    alpha_growth: float = 1.5
    seed: int = 0  # reserved for batch drivers; the descent itself is seedless

    def __post_init__(self):
        if self.budget <= 0 or self.lr <= 0 or self.penalty_alpha <= 0:
            raise ValidationError("budget, lr and penalty_alpha must be positive")
        if self.alpha_growth <= 0:
            raise ValidationError("alpha_growth must be positive")
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")


@dataclass
class OptResult:
    output: Image
    delta: np.ndarray  # (H, W, 3) float32 signed field
    objective_history: list[float]
    primary_history: list[float]
    pd_history: list[float]
    feasible_history: list[bool]
    final_pd: float
    final_primary_loss: float
    constraint_satisfied: bool
    best_step: int


def _check_model(ae: Autoencoder, img: Image) -> None:
    z = encode(ae, img)
    if float(np.std(z)) < 1e-12:
        raise ValidationError(
            "autoencoder produces zero-variance latents; train it before optimizing"
        )


def objective_at(
    x: np.ndarray,
    delta: np.ndarray,
    primary_fn,
    metric: PerceptualMetric,
    fb,
    alpha: float,
    budget: float,
):
    """One evaluation of the penalized objective and its delta-gradient.

    The clamp sits inside the objective: coordinates whose raw value x+delta
    falls outside [0, 1] receive zero gradient, so boundary-pinned pixels stop
    moving outward. Returns (objective, grad_delta, primary, pd_value).
    """
    raw = x + delta
    y = np.clip(raw, 0.0, 1.0)
    primary, grad_primary = primary_fn(y)
    pd_val, grad_pd = pd_value_and_grad(metric, y, fb)
    hinge = max(0.0, pd_val - budget)
    objective = primary + alpha * hinge * hinge
    grad_y = grad_primary + (2.0 * alpha * hinge) * grad_pd
    grad_delta = np.where((raw >= 0.0) & (raw <= 1.0), grad_y, 0.0)
    return objective, grad_delta, primary, pd_val


def _penalty_descent(x_img: Image, primary_fn, metric: PerceptualMetric, cfg: OptConfig) -> OptResult:
    """Shared driver. primary_fn(y) -> (loss, grad wrt y) on (3, H, W) tensors."""
    x = as_chw(x_img)
    fb = features(metric, x)  # budget anchor: the unperturbed input
    delta = np.zeros_like(x)
    state = AdamState.zeros_like(delta)
    alpha = cfg.penalty_alpha
    objective_hist, primary_hist, pd_hist, feasible_hist = [], [], [], []
    best_step, best_delta, best_primary = -1, None, np.inf
    last_delta = delta
    for step in range(cfg.steps):
        objective, grad_delta, primary, pd_val = objective_at(
            x, delta, primary_fn, metric, fb, alpha, cfg.budget
        )
        if not np.isfinite(objective):
            raise NumericalError(f"optimization objective non-finite at step {step}")
        feasible = pd_val <= cfg.budget * FEASIBLE_SLACK
        objective_hist.append(float(objective))
        primary_hist.append(float(primary))
        pd_hist.append(float(pd_val))
        feasible_hist.append(bool(feasible))
        if feasible and primary < best_primary:
            best_step, best_delta, best_primary = step, delta.copy(), primary
        last_delta = delta
        delta, state = adam_step(delta, grad_delta, state, cfg.lr)
        if (step + 1) % ALPHA_PERIOD == 0 and pd_val > cfg.budget:
            alpha *= cfg.alpha_growth
    if best_delta is None:
        chosen, chosen_step = last_delta, cfg.steps - 1
    else:
        chosen, chosen_step = best_delta, best_step
    delta32 = chosen.astype(np.float32)
    out64 = np.clip(x + delta32.astype(np.float64), 0.0, 1.0)
    output = Image(out64.transpose(1, 2, 0))
    # re-measure independently of the loop values
    final_pd, _ = pd_value_and_grad(metric, as_chw(output), fb)
    final_primary, _ = primary_fn(as_chw(output))
    return OptResult(
        output=output,
        delta=delta32.transpose(1, 2, 0),
        objective_history=objective_hist,
        primary_history=primary_hist,
        pd_history=pd_hist,
        feasible_history=feasible_hist,
        final_pd=float(final_pd),
        final_primary_loss=float(final_primary),
        constraint_satisfied=bool(final_pd <= cfg.budget * FEASIBLE_SLACK),
        best_step=chosen_step,
    )


def cloak_primary_fn(ae: Autoencoder, target_latent: np.ndarray):
    """Primary loss of the cloak: unsquared L2 latent distance to a frozen
    target, with its gradient through the encoder."""
    zt = np.asarray(target_latent, dtype=np.float64).reshape(
        ae.latent_channels, LATENT_GRID, LATENT_GRID
    )

    def primary_fn(y):
        z, cache = encode_t(ae, y)
        d = z - zt
        norm = float(np.sqrt((d * d).sum()))
        if norm < 1e-12:
            return 0.0, np.zeros_like(y)
        grad_z = d / norm
        return norm, encode_input_grad(ae, cache, grad_z)

    return primary_fn


def purify_primary_fn(ae: Autoencoder):
    """Primary loss of the purifier: mean squared reconstruction residual,
    with gradient through both occurrences of the perturbed image."""

    def primary_fn(y):
        z, ecache = encode_t(ae, y)
        recon, dcache = decode_t(ae, z)
        resid = y - recon
        primary = float(np.mean(resid * resid))
        grad_direct = (2.0 / resid.size) * resid
        grad_recon = -grad_direct
        grad_z = decode_input_grad(ae, dcache, grad_recon)
        grad_through_net = encode_input_grad(ae, ecache, grad_z)
        return primary, grad_direct + grad_through_net

    return primary_fn


def cloak(
    x: Image,
    t: StyleParams,
    ae: Autoencoder,
    m: PerceptualMetric,
    cfg: OptConfig = OptConfig(),
) -> OptResult:
    """Perturb x so its latent approaches the latent of its stylized version.

    The target latent E(stylize(x, t)) is computed once and frozen; the
    primary loss is the unsquared L2 latent distance.
    """
    _check_model(ae, x)
    target_latent = encode(ae, stylize(x, t))
    if float(np.std(target_latent)) < 1e-12:
        raise ValidationError("target-style latent is degenerate (zero variance)")
    return _penalty_descent(x, cloak_primary_fn(ae, target_latent), m, cfg)


def purify(
    x_cloaked: Image,
    ae: Autoencoder,
    m: PerceptualMetric,
    cfg: OptConfig = OptConfig(),
) -> OptResult:
    """Perturb an image to shrink its autoencoder reconstruction discrepancy.

    The primary loss is the squared RMS residual mean((y - reconstruct(y))^2);
    the gradient flows through both occurrences of y, i.e. through the
    identity term and back through the full encoder-decoder stack.
    """
    _check_model(ae, x_cloaked)
    return _penalty_descent(x_cloaked, purify_primary_fn(ae), m, cfg)
