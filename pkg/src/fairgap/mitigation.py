"""Fairness-regularized training loss.

The objective is ``(1 - lam) * CE + lam * |corr(p, z | y = q)|`` where the
correlation is taken over the rows whose true label equals ``q`` and each
square-root factor of its denominator is padded by ``epsilon``. Conditioning
on ``q = 1`` targets the false-negative gap, ``q = 0`` the false-positive gap.

Both the sample-weighted and unweighted forms are provided, together with
closed-form derivatives with respect to the predicted probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EPSILON",
    "MitigationConfig",
    "PenaltyError",
    "primary_loss",
    "primary_loss_grad",
    "correlation_penalty",
    "correlation_penalty_grad",
    "loss_components",
    "combined_loss",
    "combined_loss_grad_p",
]

EPSILON = math.exp(-20)


class PenaltyError(ValueError):
    """The correlation penalty is undefined (no rows with ``y == q``)."""


@dataclass(frozen=True)
class MitigationConfig:
    """Settings of the regularized loss.

    ``reduction`` applies to the unweighted cross-entropy only: ``"sum"`` is the
    plain summed negative log-likelihood, ``"mean"`` divides it by the row
    count. The weighted form is always normalized by the total weight.
    """

    lam: float = 0.0
    q: int = 1
    epsilon: float = EPSILON
    weighted: bool = False
    reduction: str = "mean"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.q not in (0, 1):
            raise ValueError(f"target class q must be 0 or 1, got {self.q}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")


def _as_float(a):
    a = np.asarray(a)
    return a if a.dtype.kind == "f" else a.astype(float)


def _row_losses(p, y):
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def primary_loss(p, y, w=None) -> float:
    """Binary cross-entropy; summed when ``w`` is None, else weight-normalized."""
    p = _as_float(p)
    losses = _row_losses(p, np.asarray(y, dtype=p.dtype))
    if w is None:
        return float(losses.sum())
    w = np.asarray(w, dtype=p.dtype)
    return float((w * losses).sum() / w.sum())


def primary_loss_grad(p, y, w=None):
    p = _as_float(p)
    y = np.asarray(y, dtype=p.dtype)
    g = -y / p + (1 - y) / (1 - p)
    if w is None:
        return g
    w = np.asarray(w, dtype=p.dtype)
    return w * g / w.sum()


def _restrict(p, z, y, q, w):
    p = _as_float(p)
    mask = np.asarray(y) == q
    if not mask.any():
        raise PenaltyError(f"no rows with y == {q}; the correlation penalty is undefined")
    ws = np.ones(int(mask.sum()), dtype=p.dtype) if w is None else np.asarray(w, dtype=p.dtype)[mask]
    return mask, p[mask], np.asarray(z, dtype=p.dtype)[mask], ws


def _corr_parts(ps, zs, ws, epsilon):
    wsum = ws.sum()
    dp = ps - (ws * ps).sum() / wsum
    dz = zs - (ws * zs).sum() / wsum
    num = (ws * dp * dz).sum()
    a = math.sqrt(max(float((ws * dp * dp).sum()), 0.0))
    b = math.sqrt(max(float((ws * dz * dz).sum()), 0.0))
    denom = (a + epsilon) * (b + epsilon)
    return dp, dz, float(num), a, b, denom


def correlation_penalty(p, z, y, q: int = 1, epsilon: float = EPSILON, w=None) -> float:
    """Signed epsilon-guarded correlation between ``p`` and ``z`` on rows with ``y == q``.

    With ``w`` the means, cross-products and squares are weighted by the
    sample weights of those rows.
    """
    _, ps, zs, ws = _restrict(p, z, y, q, w)
    _, _, num, _, _, denom = _corr_parts(ps, zs, ws, epsilon)
    return num / denom


def correlation_penalty_grad(p, z, y, q: int = 1, epsilon: float = EPSILON, w=None):
    """Derivative of :func:`correlation_penalty` with respect to every ``p_i``.

    Rows outside the conditioning class get zero. A zero-spread ``p`` leaves the
    norm term out (its derivative is taken as 0 there).
    """
    p = _as_float(p)
    mask, ps, zs, ws = _restrict(p, z, y, q, w)
    dp, dz, num, a, b, denom = _corr_parts(ps, zs, ws, epsilon)
    corr = num / denom
    g = ws * dz / denom
    if a > 0:
        g = g - corr * ws * dp / (a * (a + epsilon))
    out = np.zeros_like(p)
    out[mask] = g
    return out


def _weights_for(cfg: MitigationConfig, p, w):
    if cfg.weighted:
        return np.ones_like(p) if w is None else np.asarray(w, dtype=p.dtype)
    if cfg.reduction == "mean":
        return np.ones_like(p)
    return None


def _penalty_defined(y, q) -> bool:
    return bool(np.any(np.asarray(y) == q))


def loss_components(p, y, z, cfg: MitigationConfig, w=None, allow_empty: bool = False):
    """Return ``((1 - lam) * CE, lam * |corr|, corr)``.

    ``lam == 0`` skips the penalty entirely. With ``allow_empty`` a missing
    conditioning class contributes zero instead of raising.
    """
    p = _as_float(p)
    weights = _weights_for(cfg, p, w)
    primary = primary_loss(p, y, weights)
    if cfg.lam == 0.0:
        return primary, 0.0, float("nan")
    if allow_empty and not _penalty_defined(y, cfg.q):
        return (1.0 - cfg.lam) * primary, 0.0, float("nan")
    corr = correlation_penalty(p, z, y, cfg.q, cfg.epsilon, w if cfg.weighted else None)
    return (1.0 - cfg.lam) * primary, cfg.lam * abs(corr), corr


def combined_loss(p, y, z, cfg: MitigationConfig, w=None, allow_empty: bool = False) -> float:
    primary, fair, _ = loss_components(p, y, z, cfg, w, allow_empty)
    if cfg.lam == 0.0:
        return primary
    return primary + fair


def combined_loss_grad_p(p, y, z, cfg: MitigationConfig, w=None, allow_empty: bool = False):
    """Gradient of :func:`combined_loss` with respect to ``p``.

    The absolute value uses subgradient 0 when the correlation is exactly 0.
    """
    p = _as_float(p)
    weights = _weights_for(cfg, p, w)
    g = primary_loss_grad(p, y, weights)
    if cfg.lam == 0.0:
        return g
    g = (1.0 - cfg.lam) * g
    if allow_empty and not _penalty_defined(y, cfg.q):
        return g
    pw = w if cfg.weighted else None
    corr = correlation_penalty(p, z, y, cfg.q, cfg.epsilon, pw)
    if corr != 0.0:
        g = g + cfg.lam * math.copysign(1.0, corr) * correlation_penalty_grad(p, z, y, cfg.q, cfg.epsilon, pw)
    return g
