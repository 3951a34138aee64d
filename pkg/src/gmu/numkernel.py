"""Dense linear algebra, special functions and samplers shared by every module.

Vector arguments accept either a single ``(d,)`` point or a ``(n, d)`` batch;
results follow the same leading shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    AllNegativeInfinity,
    AsymmetricInput,
    DimensionMismatch,
    EmptyInput,
    InvalidDegreesOfFreedom,
    InvalidProbability,
    NegativeInput,
    NotNormalized,
    NotPositiveDefinite,
)

LOG_2PI = math.log(2.0 * math.pi)

_SYMMETRY_RTOL = 1e-8
_GAMMA_EPS = 1e-14
_GAMMA_MAX_ITER = 10_000
_TINY = 1e-300


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor of a symmetric positive definite matrix."""

    dim: int
    lower: np.ndarray
    log_det: float

    def matrix(self) -> np.ndarray:
        return self.lower @ self.lower.T


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by a Philox bit generator whose key is derived from a
    ``SeedSequence`` with ``stream_id`` as spawn key, so distinct ids give
    independent streams and equal ids replay the same sequence.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def standard_normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def chisquare(self, df, size=None) -> np.ndarray:
        # numpy draws chi-square through its Marsaglia-Tsang gamma sampler
        return self._gen.chisquare(df, size)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


# ---------------------------------------------------------------------------
# Factorization and Gaussian densities
# ---------------------------------------------------------------------------

def cholesky(m, jitter: float = 0.0) -> SpdFactor:
    """Factor ``m + jitter * I`` as ``L L^T``.

    Raises AsymmetricInput when ``m`` is not symmetric to 1e-8 relative and
    NotPositiveDefinite when a pivot is non-positive.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {m.shape}")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = float(np.max(np.abs(m)))
    if np.max(np.abs(m - m.T)) > _SYMMETRY_RTOL * max(scale, _TINY):
        raise AsymmetricInput("matrix is not symmetric within 1e-8 relative")
    d = m.shape[0]
    a = m + jitter * np.eye(d) if jitter > 0 else m
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    diag = np.diag(lower)
    if not np.all(diag > 0) or not np.all(np.isfinite(lower)):
        raise NotPositiveDefinite("non-positive pivot")
    lower.setflags(write=False)
    return SpdFactor(dim=d, lower=lower, log_det=float(2.0 * np.sum(np.log(diag))))


def _centered(x, mean, factor: SpdFactor) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    single = x.ndim == 1
    if mean.shape != (factor.dim,) or x.shape[-1:] != (factor.dim,) or x.ndim > 2:
        raise DimensionMismatch(
            f"x {x.shape}, mean {mean.shape} incompatible with dimension {factor.dim}"
        )
    return np.atleast_2d(x) - mean, single


def mahalanobis_sq(x, mean, factor: SpdFactor):
    """Squared Mahalanobis distance via one forward substitution."""
    diff, single = _centered(x, mean, factor)
    z = solve_triangular(factor.lower, diff.T, lower=True, check_finite=False)
    out = np.einsum("ij,ij->j", z, z)
    return float(out[0]) if single else out


def log_mvn_pdf(x, mean, factor: SpdFactor):
    d2 = mahalanobis_sq(x, mean, factor)
    return -0.5 * (factor.dim * LOG_2PI + factor.log_det + d2)


def log_sum_exp(v, axis: int | None = None):
    """Overflow-free ``log(sum(exp(v)))``.

    With ``axis=None`` ``v`` must be a vector and a float is returned.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise EmptyInput("log_sum_exp of an empty vector")
    if axis is None:
        v = v.ravel()
        axis = 0
    vmax = np.max(v, axis=axis, keepdims=True)
    if np.any(np.isneginf(vmax)):
        raise AllNegativeInfinity("every entry is -inf")
    out = vmax + np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True))
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Chi-square distribution
# ---------------------------------------------------------------------------

def _gamma_p_series(a: float, x: float) -> float:
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if x <= 0.0:
        return 0.0
    if x < a + 1.0:
        return min(1.0, _gamma_p_series(a, x))
    return max(0.0, 1.0 - _gamma_q_contfrac(a, x))


def chi2_cdf(x: float, dof: int) -> float:
    if x < 0:
        raise NegativeInput(f"chi-square cdf needs x >= 0, got {x}")
    if dof <= 0:
        raise InvalidDegreesOfFreedom(f"dof must be positive, got {dof}")
    if math.isinf(x):
        return 1.0
    return gamma_p(0.5 * dof, 0.5 * x)


def chi2_pdf(x: float, dof: int) -> float:
    if x <= 0.0:
        return 0.0
    k = 0.5 * dof
    return math.exp((k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k))


def chi2_quantile(dof: int, p: float) -> float:
    """Inverse chi-square cdf: bisection on a guaranteed bracket, then Newton."""
    if not 0.0 < p < 1.0:
        raise InvalidProbability(f"p must lie in (0, 1), got {p}")
    if dof <= 0:
        raise InvalidDegreesOfFreedom(f"dof must be positive, got {dof}")
    lo = 0.0
    hi = dof + 20.0 * math.sqrt(2.0 * dof)
    while chi2_cdf(hi, dof) < p:
        lo, hi = hi, 2.0 * hi
    while hi - lo > 1e-6 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    for _ in range(50):
        err = chi2_cdf(x, dof) - p
        if abs(err) <= 1e-14:
            break
        dens = chi2_pdf(x, dof)
        if dens <= 0.0:
            break
        step = err / dens
        x_new = min(max(x - step, lo), hi)
        if x_new == x:
            break
        x = x_new
        if abs(step) <= 1e-15 * x:
            break
    return x


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def sample_gaussian(mean, factor: SpdFactor, rng: RngStream, size: int | None = None):
    """``mean + L z`` with ``z`` standard normal; ``size`` draws a batch."""
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (factor.dim,):
        raise DimensionMismatch(f"mean {mean.shape} vs factor dim {factor.dim}")
    if size is None:
        return mean + factor.lower @ rng.standard_normal(factor.dim)
    z = rng.standard_normal((size, factor.dim))
    return mean + z @ factor.lower.T


def _bartlett(d: int, dof: float, rng: RngStream, n: int) -> np.ndarray:
    """Lower-triangular Bartlett factors, shape (n, d, d)."""
    a = np.zeros((n, d, d))
    diag = np.sqrt(rng.chisquare(dof - np.arange(d), size=(n, d)))
    rows, cols = np.tril_indices(d, -1)
    a[:, rows, cols] = rng.standard_normal((n, rows.size))
    idx = np.arange(d)
    a[:, idx, idx] = diag
    return a


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def sample_wishart(scale_factor: SpdFactor, dof: float, rng: RngStream, size: int | None = None):
    """Wishart(L L^T, dof) draw(s) by Bartlett decomposition."""
    d = scale_factor.dim
    if not dof > d - 1:
        raise InvalidDegreesOfFreedom(f"Wishart needs dof > {d - 1}, got {dof}")
    a = _bartlett(d, dof, rng, 1 if size is None else size)
    b = scale_factor.lower @ a
    w = _symmetrize(b @ np.swapaxes(b, -1, -2))
    return w[0] if size is None else w


def sample_inverse_wishart(psi, nu: float, rng: RngStream, size: int | None = None):
    """Inverse-Wishart(psi, nu) draw(s): the inverse of a Wishart(psi^-1, nu) draw.

    With ``psi = L L^T`` the Wishart draw is built on the square root
    ``L^-T`` of ``psi^-1``, so its inverse is ``(L A^-T)(L A^-T)^T`` and only
    triangular solves against the Bartlett factor ``A`` are needed.
    """
    factor = psi if isinstance(psi, SpdFactor) else cholesky(psi)
    d = factor.dim
    if not nu > d + 1:
        raise InvalidDegreesOfFreedom(f"Inverse-Wishart needs nu > {d + 1}, got {nu}")
    a = _bartlett(d, nu, rng, 1 if size is None else size)
    # y = A^-1 L^T, so y^T y = L A^-T A^-1 L^T
    y = np.linalg.solve(a, np.broadcast_to(factor.lower.T, a.shape))
    out = _symmetrize(np.swapaxes(y, -1, -2) @ y)
    return out[0] if size is None else out


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------

def entropy(p, base: Literal["natural", "two"] = "natural"):
    """Shannon entropy along the last axis with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise EmptyInput("entropy of an empty vector")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise NotNormalized("probabilities must be non-negative and sum to 1")
    safe = np.where(p > 0, p, 1.0)
    h = -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=-1)
    if base == "two":
        h = h / math.log(2.0)
    elif base != "natural":
        raise ValueError(f"unknown entropy base {base!r}")
    h = np.maximum(h, 0.0)
    return float(h) if h.ndim == 0 else h
