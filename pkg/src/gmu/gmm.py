"""Class-conditional Gaussian mixture: one full-covariance component per class."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import BadLabel, DimensionMismatch, MissingClass, NotPositiveDefinite, SingularClass
from .numkernel import SpdFactor, cholesky, log_sum_exp

DEFAULT_JITTER_REL = 1e-6


@dataclass(frozen=True)
class FeatureSet:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if f.ndim != 2 or f.shape[0] < 1:
            raise DimensionMismatch(f"features must be a non-empty (n, d) matrix, got {f.shape}")
        if y.shape != (f.shape[0],):
            raise DimensionMismatch(f"{f.shape[0]} feature rows but labels of shape {y.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("features contain non-finite values")
        if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0):
            raise BadLabel("labels must be non-negative integers")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y.astype(np.int64))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ClassComponent:
    class_id: int
    mu: np.ndarray
    sigma: np.ndarray
    factor: SpdFactor
    log_pi: float
    count: int
    jitter: float = 0.0  # absolute diagonal load inside ``factor``


@dataclass(frozen=True)
class GmmModel:
    d: int
    num_classes: int
    components: tuple[ClassComponent, ...]
    jitter: float = DEFAULT_JITTER_REL
    class_names: Optional[tuple[str, ...]] = None
    # stacked parameters for batch evaluation
    _means: np.ndarray = field(init=False, repr=False, compare=False)
    _lowers: np.ndarray = field(init=False, repr=False, compare=False)
    _consts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) != self.num_classes or [c.class_id for c in comps] != list(range(self.num_classes)):
            raise ValueError("need exactly one component per class id, in order")
        if self.class_names is not None:
            names = tuple(self.class_names)
            if len(names) != self.num_classes:
                raise ValueError("class_names length must equal num_classes")
            object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "_means", np.stack([c.mu for c in comps]))
        object.__setattr__(self, "_lowers", np.stack([c.factor.lower for c in comps]))
        consts = np.array([c.log_pi - 0.5 * (self.d * math.log(2 * math.pi) + c.factor.log_det) for c in comps])
        object.__setattr__(self, "_consts", consts)

    @property
    def log_pi(self) -> np.ndarray:
        return np.array([c.log_pi for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return self._means

    @property
    def covariances(self) -> np.ndarray:
        return np.stack([c.sigma for c in self.components])

    @property
    def counts(self) -> np.ndarray:
        return np.array([c.count for c in self.components], dtype=np.int64)


def make_component(class_id: int, mu, sigma, log_pi: float, count: int, jitter: float = 0.0) -> ClassComponent:
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    return ClassComponent(class_id, mu, sigma, cholesky(sigma, jitter), float(log_pi), int(count), float(jitter))


def model_from_params(means, covariances, priors, counts=None, jitter: float = 0.0,
                      class_names: Sequence[str] | None = None) -> GmmModel:
    """Assemble a model from explicit parameters (no fitting)."""
    means = np.asarray(means, dtype=np.float64)
    priors = np.asarray(priors, dtype=np.float64)
    c, d = means.shape
    counts = np.full(c, 1, dtype=np.int64) if counts is None else np.asarray(counts)
    comps = [make_component(k, means[k], covariances[k], math.log(priors[k]), counts[k], jitter) for k in range(c)]
    return GmmModel(d=d, num_classes=c, components=tuple(comps), jitter=jitter,
                    class_names=None if class_names is None else tuple(class_names))


def _shrink(sigma: np.ndarray, n_c: int, d: int) -> np.ndarray:
    lam = min(1.0, (d + 2 - n_c) / (d + 2))
    return (1.0 - lam) * sigma + lam * np.diag(np.diag(sigma))


def fit_gmm(data: FeatureSet, num_classes: int | None = None, jitter_rel: float = DEFAULT_JITTER_REL,
            class_names: Sequence[str] | None = None) -> GmmModel:
    """Empirical per-class means, unbiased covariances and frequency priors.

    Each covariance is factored with an absolute diagonal load of
    ``jitter_rel * trace(sigma) / d`` (``jitter_rel`` alone when the trace is
    zero).  Classes with ``n_c <= d + 1`` are shrunk toward their diagonal.
    """
    if jitter_rel < 0:
        raise ValueError("jitter_rel must be non-negative")
    labels = data.labels
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    if labels.max() >= num_classes:
        raise BadLabel(f"label {int(labels.max())} out of range for {num_classes} classes")
    counts = np.bincount(labels, minlength=num_classes)
    absent = np.flatnonzero(counts == 0)
    if absent.size:
        raise MissingClass(f"no samples for class id(s) {absent.tolist()}")
    d, n = data.d, data.n
    comps = []
    for c in range(num_classes):
        x = data.features[labels == c]
        n_c = x.shape[0]
        if n_c < 2:
            raise SingularClass(f"class {c} has a single sample; covariance undefined")
        mu = x.mean(axis=0)
        xc = x - mu
        sigma = (xc.T @ xc) / (n_c - 1)
        sigma = 0.5 * (sigma + sigma.T)
        if n_c <= d + 1:
            sigma = _shrink(sigma, n_c, d)
        tr = float(np.trace(sigma))
        jitter = jitter_rel * (tr / d if tr > 0 else 1.0)
        try:
            factor = cholesky(sigma, jitter)
        except NotPositiveDefinite:
            raise SingularClass(f"covariance of class {c} is singular (n_c={n_c})") from None
        comps.append(ClassComponent(c, mu, sigma, factor, math.log(n_c / n), n_c, jitter))
    return GmmModel(d=d, num_classes=num_classes, components=tuple(comps), jitter=jitter_rel,
                    class_names=None if class_names is None else tuple(class_names))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _as_batch(model: GmmModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != model.d:
        raise DimensionMismatch(f"expected points of dimension {model.d}, got shape {x.shape}")
    return np.atleast_2d(x), x.ndim == 1


def _mahalanobis_all(model: GmmModel, xb: np.ndarray) -> np.ndarray:
    """(n, C) squared Mahalanobis distances to every component."""
    out = np.empty((xb.shape[0], model.num_classes))
    for k in range(model.num_classes):
        z = solve_triangular(model._lowers[k], (xb - model._means[k]).T, lower=True, check_finite=False)
        out[:, k] = np.einsum("ij,ij->j", z, z)
    return out


def component_log_scores(model: GmmModel, x):
    """``log pi_c + log N(x | mu_c, Sigma_c)`` for every class."""
    xb, single = _as_batch(model, x)
    scores = model._consts - 0.5 * _mahalanobis_all(model, xb)
    return scores[0] if single else scores


def mixture_log_density(model: GmmModel, x):
    scores = component_log_scores(model, x)
    return log_sum_exp(scores) if scores.ndim == 1 else log_sum_exp(scores, axis=1)


def responsibilities(model: GmmModel, x):
    scores = component_log_scores(model, x)
    lse = log_sum_exp(scores, axis=-1)
    return np.exp(scores - np.expand_dims(lse, -1))


def classify(model: GmmModel, x):
    """Argmax of the weighted component scores; ties go to the lowest id."""
    scores = component_log_scores(model, x)
    out = np.argmax(scores, axis=-1)
    return int(out) if np.ndim(out) == 0 else out

