"""Parameter uncertainty for the class-conditional mixture.

Each class mean gets a Gaussian centred on the empirical mean and each class
covariance an Inverse-Wishart whose expectation equals the empirical
covariance.  Sampling both for every class yields an ensemble of mixtures;
disagreement between their classifications measures epistemic uncertainty and
the entropy of their averaged responsibilities measures aleatoric uncertainty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDraw, DimensionMismatch, InsufficientSupport, NotPositiveDefinite
from .gmm import ClassComponent, GmmModel, _as_batch, component_log_scores, mixture_log_density
from .numkernel import RngStream, SpdFactor, cholesky, entropy, log_sum_exp, sample_gaussian, sample_inverse_wishart

DEFAULT_ENSEMBLE_SIZE = 30
JITTER_ESCALATIONS = 3


@dataclass(frozen=True)
class ClassPosterior:
    mean_center: np.ndarray
    mean_cov_factor: SpdFactor
    iw_scale: np.ndarray
    iw_scale_factor: SpdFactor
    iw_dof: float
    count: int
    jitter: float


@dataclass(frozen=True)
class ParamPosterior:
    d: int
    num_classes: int
    classes: tuple[ClassPosterior, ...]
    log_pi: np.ndarray
    class_names: tuple[str, ...] | None = None


@dataclass(frozen=True)
class GmmEnsemble:
    models: tuple[GmmModel, ...]
    seed: int

    @property
    def t(self) -> int:
        return len(self.models)

    @property
    def d(self) -> int:
        return self.models[0].d

    @property
    def num_classes(self) -> int:
        return self.models[0].num_classes


def build_posterior(model: GmmModel) -> ParamPosterior:
    """Sigma' = Sigma/n, nu = n, Psi = (n - d - 1) Sigma for every class."""
    d = model.d
    classes = []
    for comp in model.components:
        n_c = comp.count
        if n_c <= d + 2:
            name = model.class_names[comp.class_id] if model.class_names else str(comp.class_id)
            raise InsufficientSupport(
                f"class {name} has {n_c} samples; the Inverse-Wishart mean needs more than d + 2 = {d + 2}"
            )
        scale = n_c - d - 1.0
        psi = scale * comp.sigma
        classes.append(ClassPosterior(
            mean_center=comp.mu,
            mean_cov_factor=cholesky(comp.sigma / n_c, comp.jitter / n_c),
            iw_scale=psi,
            iw_scale_factor=cholesky(psi, scale * comp.jitter),
            iw_dof=float(n_c),
            count=n_c,
            jitter=comp.jitter,
        ))
    return ParamPosterior(d=d, num_classes=model.num_classes, classes=tuple(classes),
                          log_pi=model.log_pi.copy(), class_names=model.class_names)


def _factor_with_escalation(sigma: np.ndarray, jitter: float) -> tuple[SpdFactor, float]:
    base = jitter if jitter > 0 else 1e-10 * float(np.trace(sigma)) / sigma.shape[0]
    trial = jitter
    for attempt in range(JITTER_ESCALATIONS + 1):
        try:
            return cholesky(sigma, trial), trial
        except NotPositiveDefinite:
            trial = base * 10.0 ** (attempt + 1)
    raise DegenerateDraw("sampled covariance failed to factorize after jitter escalation")


def sample_member(posterior: ParamPosterior, seed: int, index: int) -> GmmModel:
    rng = RngStream(seed, index)
    comps = []
    for c, cp in enumerate(posterior.classes):
        mu = sample_gaussian(cp.mean_center, cp.mean_cov_factor, rng)
        sigma = sample_inverse_wishart(cp.iw_scale_factor, cp.iw_dof, rng)
        factor, jitter = _factor_with_escalation(sigma, cp.jitter)
        comps.append(ClassComponent(c, mu, sigma, factor, float(posterior.log_pi[c]), cp.count, jitter))
    return GmmModel(d=posterior.d, num_classes=posterior.num_classes, components=tuple(comps),
                    jitter=0.0, class_names=posterior.class_names)


def sample_ensemble(posterior: ParamPosterior, t: int = DEFAULT_ENSEMBLE_SIZE, seed: int = 0) -> GmmEnsemble:
    """Draw ``t`` mixtures; member ``k`` depends only on ``(seed, k)``."""
    if t < 1:
        raise ValueError(f"ensemble size must be >= 1, got {t}")
    return GmmEnsemble(models=tuple(sample_member(posterior, seed, k) for k in range(t)), seed=int(seed))


@dataclass(frozen=True)
class EnsembleScores:
    freq: np.ndarray          # (n, C) classification frequencies
    epistemic: np.ndarray     # (n,)
    mean_resp: np.ndarray     # (n, C)
    aleatoric: np.ndarray     # (n,)


def ensemble_scores(ensemble: GmmEnsemble, x) -> EnsembleScores:
    """Epistemic and aleatoric quantities for a batch in one pass over members."""
    xb, _ = _as_batch(ensemble.models[0], x)
    n, c = xb.shape[0], ensemble.num_classes
    votes = np.zeros((n, c), dtype=np.int64)
    resp_sum = np.zeros((n, c))
    rows = np.arange(n)
    for member in ensemble.models:
        scores = component_log_scores(member, xb)
        votes[rows, np.argmax(scores, axis=1)] += 1
        resp_sum += np.exp(scores - log_sum_exp(scores, axis=1)[:, None])
    freq = votes / ensemble.t
    mean_resp = resp_sum / ensemble.t
    return EnsembleScores(freq=freq, epistemic=entropy(freq), mean_resp=mean_resp, aleatoric=entropy(mean_resp))


def epistemic_entropy(ensemble: GmmEnsemble, x):
    """Entropy of the class-assignment frequencies across members.

    Returns ``(entropy, freq)`` for a single point or arrays for a batch.
    """
    s = ensemble_scores(ensemble, x)
    if np.ndim(x) == 1:
        return float(s.epistemic[0]), s.freq[0]
    return s.epistemic, s.freq


def mean_responsibilities(ensemble: GmmEnsemble, x):
    s = ensemble_scores(ensemble, x)
    return s.mean_resp[0] if np.ndim(x) == 1 else s.mean_resp


def aleatoric_entropy(ensemble: GmmEnsemble, x):
    s = ensemble_scores(ensemble, x)
    return float(s.aleatoric[0]) if np.ndim(x) == 1 else s.aleatoric


def ddu_epistemic_score(model: GmmModel, x):
    """Negative log mixture density of the point-estimate model (higher = less familiar)."""
    return -mixture_log_density(model, x)


def check_compatible(model: GmmModel, ensemble: GmmEnsemble) -> None:
    if ensemble.d != model.d or ensemble.num_classes != model.num_classes:
        raise DimensionMismatch(
            f"ensemble (d={ensemble.d}, C={ensemble.num_classes}) does not match model "
            f"(d={model.d}, C={model.num_classes})"
        )
