"""Probability-simplex primitives: projection, divergences, regularizers."""

from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr, softmax, xlogy

from .errors import InvalidInputError

# Floor applied after projection when the active geometry needs interior points.
ZETA = 1e-12
SUM_TOL = 1e-9


def check_strategy(probs, name="strategy", tol=SUM_TOL):
    """Return ``probs`` as a float array after checking it lies on the simplex."""
    x = np.asarray(probs, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} has non-finite entries")
    if np.any(x < 0):
        raise InvalidInputError(f"{name} has negative entries")
    if abs(x.sum() - 1.0) > tol:
        raise InvalidInputError(f"{name} sums to {x.sum()!r}, not 1")
    return x


@dataclass(frozen=True)
class ProductStrategy:
    """One mixed strategy per opponent, also viewable as a flat vector."""

    parts: tuple

    def __post_init__(self):
        parts = tuple(check_strategy(p, f"part {k}") for k, p in enumerate(self.parts))
        object.__setattr__(self, "parts", parts)

    @property
    def flat(self):
        return np.concatenate(self.parts)

    @property
    def sizes(self):
        return tuple(len(p) for p in self.parts)

    @classmethod
    def from_flat(cls, flat, sizes):
        flat = np.asarray(flat, dtype=float)
        if flat.size != sum(sizes):
            raise InvalidInputError(f"flat length {flat.size} != {sum(sizes)}")
        cuts = np.cumsum(sizes)[:-1]
        return cls(tuple(np.split(flat, cuts)))


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError("project_simplex expects a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("project_simplex got non-finite entries")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def floor_interior(p, zeta=ZETA):
    """Clip to at least ``zeta`` and renormalize."""
    p = np.maximum(p, zeta)
    return p / p.sum()


def _pair(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InvalidInputError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return p, q


def kl(p, q):
    """KL(p || q); +inf when p puts mass where q has none."""
    p, q = _pair(p, q)
    # summands can cancel to -1e-16 near p == q
    return max(float(rel_entr(p, q).sum()), 0.0)


def reverse_kl(p, q):
    """sum q log(q/p), i.e. kl(q, p)."""
    return kl(q, p)


def kl_grad(p, q):
    """Gradients of kl(p, q) in p and in q (interior points)."""
    p, q = _pair(p, q)
    return np.log(p / q) + 1.0, -p / q


def reverse_kl_grad(p, q):
    """Gradients of reverse_kl(p, q) in p and in q (interior points)."""
    p, q = _pair(p, q)
    return -q / p, np.log(q / p) + 1.0


def total_variation(p, q):
    """l1 distance; the TV penalty scales this by its weight."""
    p, q = _pair(p, q)
    return float(np.abs(p - q).sum())


def product_divergence(divergence, p, q):
    """Sum of ``divergence`` over matching parts of two product strategies."""
    if not isinstance(p, ProductStrategy):
        p = ProductStrategy(tuple(p))
    if not isinstance(q, ProductStrategy):
        q = ProductStrategy(tuple(q))
    if p.sizes != q.sizes:
        raise InvalidInputError(f"part structure mismatch: {p.sizes} vs {q.sizes}")
    return float(sum(divergence(a, b) for a, b in zip(p.parts, q.parts)))


def neg_entropy(pi):
    return float(xlogy(pi, pi).sum())


def neg_entropy_grad(pi):
    return np.log(pi) + 1.0


def log_barrier(pi):
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        return float("inf")
    return float(-np.log(pi).sum())


def log_barrier_grad(pi):
    return -1.0 / np.asarray(pi, dtype=float)


def logit_response(x, eps):
    """Quantal response with weights proportional to exp(-x / eps)."""
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=float)
    return softmax(-x / eps)


# name -> (value, gradient, diagonal of the Hessian)
REGULARIZERS = {
    "negentropy": (neg_entropy, neg_entropy_grad, lambda pi: 1.0 / pi),
    "logbarrier": (log_barrier, log_barrier_grad, lambda pi: 1.0 / pi**2),
}
