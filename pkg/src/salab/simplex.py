"""Probability-simplex mappings that normalise attention scores.

Four mappings are provided: softmax, sparsemax (Euclidean projection onto
the simplex, sort-based), exact 1.5-entmax (sort-based), and a generic
bisection solver for alpha-entmax with alpha > 1.  Each comes in a 1-D
public form and an ``*_nd`` form vectorised over the last axis.

All arithmetic runs in float64 regardless of the caller's dtype: the
threshold selection is branchy and loses support entries in float32.
Every mapping subtracts the per-row max first, which makes translation
invariance exact rather than approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Probabilities below this are snapped to exact zero for sparse mappings
# so the support mask agrees bit-for-bit with the backward pass.
SPARSE_FLOOR = 1e-12

DEFAULT_BISECT_ITERS = 50


@dataclass(frozen=True)
class MappingKind:
    """Which normaliser to use inside attention.

    ``alpha`` is only meaningful for the generic entmax family; the three
    named mappings correspond to alpha = 1 (softmax), 1.5, and 2.
    """

    name: str
    alpha: float | None = None

    def __post_init__(self):
        if self.name not in ("softmax", "sparsemax", "entmax15", "entmax"):
            raise ValueError(f"unknown mapping name: {self.name!r}")
        if self.name == "entmax":
            if self.alpha is None or not (1.0 < self.alpha <= 4.0):
                raise ValueError(
                    f"entmax alpha must lie in (1, 4], got {self.alpha!r}"
                )
        elif self.alpha is not None:
            raise ValueError(f"{self.name} does not take an alpha")

    @classmethod
    def softmax(cls) -> "MappingKind":
        return cls("softmax")

    @classmethod
    def sparsemax(cls) -> "MappingKind":
        return cls("sparsemax")

    @classmethod
    def entmax15(cls) -> "MappingKind":
        return cls("entmax15")

    @classmethod
    def entmax(cls, alpha: float) -> "MappingKind":
        return cls("entmax", float(alpha))

    @classmethod
    def parse(cls, text: str) -> "MappingKind":
        """Parse CLI syntax: softmax | sparsemax | entmax15 | entmax:<alpha>."""
        text = text.strip().lower()
        if text.startswith("entmax:"):
            return cls.entmax(float(text.split(":", 1)[1]))
        return cls(text)

    def __str__(self) -> str:
        if self.name == "entmax":
            return f"entmax:{self.alpha:g}"
        return self.name

    @property
    def exponent_alpha(self) -> float:
        """The alpha value governing the backward rule p**(2 - alpha)."""
        return {"softmax": 1.0, "sparsemax": 2.0, "entmax15": 1.5}.get(
            self.name, self.alpha
        )

    @property
    def is_sparse(self) -> bool:
        return self.name != "softmax"


@dataclass(frozen=True)
class SupportInfo:
    """Threshold and support of a sparse mapping's output."""

    threshold: float
    support_size: int
    support_mask: np.ndarray


def _check_input(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("input must be a non-empty 1-D vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("input contains NaN or Inf")
    return z


# ---------------------------------------------------------------------------
# batched forms, last axis

def softmax_nd(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sparsemax_nd(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised sparsemax; returns (p, tau).

    Sort each row descending, find the largest k with
    1 + k*z_(k) > sum of the top k, then threshold at
    tau = (topk_sum - 1) / k and clip.
    """
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    n = z.shape[-1]
    zs = -np.sort(-z, axis=-1)
    cs = np.cumsum(zs, axis=-1)
    k = np.arange(1, n + 1, dtype=np.float64)
    support = 1.0 + k * zs > cs
    k_star = support.sum(axis=-1, keepdims=True)
    tau = (np.take_along_axis(cs, k_star - 1, axis=-1) - 1.0) / k_star
    p = np.maximum(z - tau, 0.0)
    p[p < SPARSE_FLOOR] = 0.0
    return p, tau[..., 0]


def entmax15_nd(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised exact 1.5-entmax; returns (p, tau) in the z/2 domain."""
    z = np.asarray(z, dtype=np.float64)
    z = (z - z.max(axis=-1, keepdims=True)) / 2.0
    n = z.shape[-1]
    zs = -np.sort(-z, axis=-1)
    k = np.arange(1, n + 1, dtype=np.float64)
    mean = np.cumsum(zs, axis=-1) / k
    mean_sq = np.cumsum(zs**2, axis=-1) / k
    ss = k * (mean_sq - mean**2)
    delta = np.maximum((1.0 - ss) / k, 0.0)
    tau_candidates = mean - np.sqrt(delta)
    k_star = (tau_candidates <= zs).sum(axis=-1, keepdims=True)
    tau = np.take_along_axis(tau_candidates, k_star - 1, axis=-1)
    p = np.maximum(z - tau, 0.0) ** 2
    p[p < SPARSE_FLOOR] = 0.0
    return p, tau[..., 0]


def entmax_bisect_nd(
    z: np.ndarray, alpha: float, max_iter: int = DEFAULT_BISECT_ITERS
) -> tuple[np.ndarray, np.ndarray]:
    """Generic alpha-entmax by bisection on the threshold; returns (p, tau).

    Solves sum_i max((alpha-1)*z_i - tau, 0)**(1/(alpha-1)) = 1.  The
    bracket [min - 1, max] always contains the root, and a fixed
    iteration count keeps runs bit-reproducible.
    """
    if alpha <= 1.0:
        raise ValueError(f"entmax bisection requires alpha > 1, got {alpha}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    z = np.asarray(z, dtype=np.float64)
    zz = (alpha - 1.0) * (z - z.max(axis=-1, keepdims=True))
    inv = 1.0 / (alpha - 1.0)
    lo = zz.min(axis=-1, keepdims=True) - 1.0
    hi = zz.max(axis=-1, keepdims=True)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f = (np.maximum(zz - mid, 0.0) ** inv).sum(axis=-1, keepdims=True) - 1.0
        lo = np.where(f >= 0.0, mid, lo)
        hi = np.where(f >= 0.0, hi, mid)
    tau = 0.5 * (lo + hi)
    p = np.maximum(zz - tau, 0.0) ** inv
    p[p < SPARSE_FLOOR] = 0.0
    return p, tau[..., 0]


def apply_mapping_nd(
    z: np.ndarray, kind: MappingKind, return_threshold: bool = False
):
    """Dispatch over the last axis. Threshold rows are NaN for softmax."""
    if kind.name == "softmax":
        p = softmax_nd(z)
        tau = np.full(p.shape[:-1], np.nan)
    elif kind.name == "sparsemax":
        p, tau = sparsemax_nd(z)
    elif kind.name == "entmax15":
        p, tau = entmax15_nd(z)
    else:
        p, tau = entmax_bisect_nd(z, kind.alpha)
    if return_threshold:
        return p, tau
    return p


def mapping_backward_nd(
    p: np.ndarray, upstream: np.ndarray, kind: MappingKind
) -> np.ndarray:
    """Jacobian-vector product shared by the whole family.

    With g_i = p_i**(2 - alpha) on the support (softmax g = p, sparsemax
    g = support indicator, 1.5-entmax g = sqrt(p)):

        dz = g * u - (sum(g * u) / sum(g)) * g

    Finite-difference validation pins the leading constant at exactly 1
    for every member, so none is applied.
    """
    p = np.asarray(p, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if p.shape != upstream.shape:
        raise ValueError(
            f"probability/upstream length mismatch: {p.shape} vs {upstream.shape}"
        )
    a = kind.exponent_alpha
    if kind.name == "softmax":
        g = p
    elif kind.name == "sparsemax":
        g = (p > 0.0).astype(np.float64)
    elif kind.name == "entmax15":
        g = np.sqrt(p)
    else:
        g = np.where(p > 0.0, p, 1.0) ** (2.0 - a) * (p > 0.0)
    gu = (g * upstream).sum(axis=-1, keepdims=True)
    gs = g.sum(axis=-1, keepdims=True)
    return g * upstream - (gu / gs) * g


# ---------------------------------------------------------------------------
# 1-D public API

def softmax(z) -> np.ndarray:
    return softmax_nd(_check_input(z))


def _support_info(p: np.ndarray, tau: float) -> SupportInfo:
    mask = p > 0.0
    return SupportInfo(float(tau), int(mask.sum()), mask)


def sparsemax(z) -> tuple[np.ndarray, SupportInfo]:
    p, tau = sparsemax_nd(_check_input(z))
    # report tau in the caller's (untranslated) coordinates
    shift = float(np.max(np.asarray(z, dtype=np.float64)))
    return p, _support_info(p, tau + shift)


def entmax15(z) -> tuple[np.ndarray, SupportInfo]:
    p, tau = entmax15_nd(_check_input(z))
    shift = float(np.max(np.asarray(z, dtype=np.float64))) / 2.0
    return p, _support_info(p, tau + shift)


def entmax_bisect(z, alpha: float, max_iter: int = DEFAULT_BISECT_ITERS) -> np.ndarray:
    p, _ = entmax_bisect_nd(_check_input(z), alpha, max_iter)
    return p


def apply_mapping(z, kind: MappingKind) -> np.ndarray:
    return apply_mapping_nd(_check_input(z), kind)


def mapping_backward(p, upstream, kind: MappingKind) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if p.ndim != 1 or upstream.ndim != 1:
        raise ValueError("expected 1-D vectors")
    return mapping_backward_nd(p, upstream, kind)
