"""Training losses and the composite anomaly score.

All loss functions build on the taped primitives so they are differentiable;
``anomaly_score`` works on plain arrays at evaluation time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from madae.autodiff import ShapeError, Tensor

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights: score = rec_weight * rec + fwd_weight * fwd + back_weight * back."""

    rec_weight: float = 1.0
    fwd_weight: float = 2.0
    back_weight: float = 0.1


@dataclass
class LossReport:
    """Detached per-batch loss values for logging."""

    rec: float
    adv_d: float
    adv_g: float
    pred_fwd: float
    pred_back: float
    full: float


def _clip(p: Tensor, lo: float, hi: float) -> Tensor:
    # identity on [lo, hi], clamped and gradient-blocked outside
    return (p - lo).relu() - (p - hi).relu() + lo


def _as_batch(t: Tensor, ndim: int) -> Tensor:
    if t.ndim == ndim - 1:
        return t.reshape((1,) + t.shape)
    if t.ndim != ndim:
        raise ShapeError(f"expected {ndim - 1}-d sample or {ndim}-d batch, got shape {t.shape}")
    return t


def loss_rec(x: Tensor, xhat: Tensor) -> Tensor:
    """Euclidean norm of the flattened per-sample difference, batch averaged.

    1-d inputs count as a single sample; otherwise axis 0 is the batch.
    """
    if x.shape != xhat.shape:
        raise ShapeError(f"loss_rec: shapes {x.shape} and {xhat.shape} differ")
    diff = x - xhat
    if diff.ndim == 0:
        diff = diff.reshape((1, 1))
    elif diff.ndim == 1:
        diff = diff.reshape((1, diff.size))
    else:
        diff = diff.reshape((diff.shape[0], -1))
    return (diff * diff).sum(axis=1).sqrt().mean()


def loss_adv(real_probs: Tensor, fake_probs: Tensor) -> tuple[Tensor, Tensor]:
    """Discriminator and (non-saturating) generator adversarial losses.

    d_loss = -(E[log p_real] + E[log(1 - p_fake)]); g_loss = -E[log p_fake].
    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    real = _clip(real_probs, PROB_EPS, 1.0 - PROB_EPS)
    fake = _clip(fake_probs, PROB_EPS, 1.0 - PROB_EPS)
    d_loss = -(real.log().mean() + (1.0 - fake).log().mean())
    g_loss = -(fake.log().mean())
    return d_loss, g_loss


def pred_step_weights(horizon: int, inclusive: bool = False) -> np.ndarray:
    """Decay weight for prediction step i = 1..T: (T - i), or (T - i + 1)
    with the inclusive variant, both scaled by 1/T**2."""
    i = np.arange(1, horizon + 1, dtype=np.float64)
    w = horizon - i + (1.0 if inclusive else 0.0)
    return w / float(horizon) ** 2


def loss_pred(targets: Tensor, preds: Tensor, inclusive: bool = False) -> Tensor:
    """Decay-weighted multi-step prediction loss over (B, T, K) tensors.

    Per step i the error is the Euclidean norm over the K variables; the
    default weighting (T - i) gives the final step weight zero, so a horizon
    of 1 makes the loss identically zero. ``inclusive`` switches to
    (T - i + 1) weights.
    """
    if targets.shape != preds.shape:
        raise ShapeError(f"loss_pred: shapes {targets.shape} and {preds.shape} differ")
    targets = _as_batch(targets, 3)
    preds = _as_batch(preds, 3)
    horizon = targets.shape[1]
    diff = targets - preds
    step_err = (diff * diff).sum(axis=2).sqrt()  # (B, T)
    w = Tensor(pred_step_weights(horizon, inclusive))
    return (step_err * w).sum(axis=1).mean()


def loss_full(adv_g: Tensor, rec: Tensor, pred_fwd: Tensor, pred_back: Tensor,
              weights: LossWeights) -> Tensor:
    """Generator objective: adv + lambda * rec + gamma_fwd * fwd + gamma_back * back."""
    return (adv_g + weights.rec_weight * rec
            + weights.fwd_weight * pred_fwd + weights.back_weight * pred_back)


def anomaly_score(rec, pred_fwd, pred_back, weights: LossWeights):
    """Per-point score: the weighted error sum without the adversarial term.

    Operates on plain floats/arrays; callers substitute 0 for terms that are
    undefined at a timestamp (series edges).
    """
    return (weights.rec_weight * np.asarray(rec, dtype=np.float64)
            + weights.fwd_weight * np.asarray(pred_fwd, dtype=np.float64)
            + weights.back_weight * np.asarray(pred_back, dtype=np.float64))
