"""Finite-difference validation of backward passes."""

from __future__ import annotations

import numpy as np

from . import simplex
from .autodiff import bce_with_logits, grad_check
from .rng import derive_rng
from .simplex import MappingKind


def _transformed(z: np.ndarray, kind: MappingKind) -> np.ndarray:
    """Scores in the domain the mapping thresholds against."""
    z = z - z.max()
    if kind.name == "entmax15":
        return z / 2.0
    if kind.name == "entmax":
        return (kind.alpha - 1.0) * z
    return z


def boundary_margin(z: np.ndarray, kind: MappingKind) -> float:
    """Distance of the closest score to the support threshold (inf for softmax)."""
    if kind.name == "softmax":
        return float("inf")
    _, tau = simplex.apply_mapping_nd(z, kind, return_threshold=True)
    return float(np.min(np.abs(_transformed(z, kind) - tau)))


def mapping_max_grad_error(
    kind: MappingKind,
    trials: int = 200,
    seed: int = 0,
    eps: float = 1e-6,
    min_margin: float = 1e-3,
) -> float:
    """Max relative error of the Jacobian-vector product vs central
    differences over random (z, upstream) pairs.

    Inputs closer than `min_margin` to a support boundary are resampled;
    the forward map is non-differentiable exactly there.
    """
    rng = derive_rng(seed, "gradcheck", str(kind))
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        z = rng.normal(0.0, 2.0, n)
        while boundary_margin(z, kind) < min_margin:
            z = rng.normal(0.0, 2.0, n)
        u = rng.normal(0.0, 1.0, n)
        p = simplex.apply_mapping_nd(z, kind)
        analytic = simplex.mapping_backward_nd(p, u, kind)
        numeric = np.zeros(n)
        for j in range(n):
            zp = z.copy()
            zp[j] += eps
            zm = z.copy()
            zm[j] -= eps
            hi = float(simplex.apply_mapping_nd(zp, kind) @ u)
            lo = float(simplex.apply_mapping_nd(zm, kind) @ u)
            numeric[j] = (hi - lo) / (2.0 * eps)
        err = np.abs(analytic - numeric) / (1.0 + np.abs(analytic) + np.abs(numeric))
        worst = max(worst, float(err.max()))
    return worst


def model_grad_error(model, batch, eps: float = 1e-5) -> float:
    """grad_check over every model parameter through the training loss.

    The model should be built with float64 storage.
    """
    labels = batch.labels.astype(model.dtype)

    def loss():
        logits, _ = model.forward(batch, training=False)
        return bce_with_logits(logits, labels).mean()

    return grad_check(loss, model.params, eps=eps)
