"""Chi-square OOD test on squared Mahalanobis distances and per-sample reports."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .ensemble import GmmEnsemble, check_compatible, ensemble_scores
from .errors import DimensionMismatch, InvalidProbability
from .gmm import GmmModel, _as_batch, _mahalanobis_all
from .numkernel import chi2_quantile, log_sum_exp

DEFAULT_ALPHA = 0.025
# Rows per work unit.  Fixed so that results never depend on the thread count.
CHUNK_ROWS = 2048


@dataclass(frozen=True)
class OodPolicy:
    d: int
    alpha: float
    threshold: float


def make_policy(d: int, alpha: float = DEFAULT_ALPHA) -> OodPolicy:
    if not 0.0 < alpha < 1.0:
        raise InvalidProbability(f"alpha must lie in (0, 1), got {alpha}")
    return OodPolicy(d=d, alpha=alpha, threshold=chi2_quantile(d, 1.0 - alpha))


def min_mahalanobis_sq(model: GmmModel, x):
    xb, single = _as_batch(model, x)
    d2 = _mahalanobis_all(model, xb).min(axis=1)
    return float(d2[0]) if single else d2


def is_ood(model: GmmModel, x, policy: OodPolicy):
    """``(flag, min_d2)``; a point is in-distribution if any component accepts it."""
    if policy.d != model.d:
        raise DimensionMismatch(f"policy built for d={policy.d}, model has d={model.d}")
    d2 = min_mahalanobis_sq(model, x)
    flag = d2 > policy.threshold
    return (bool(flag), d2) if np.ndim(d2) == 0 else (flag, d2)


@dataclass(frozen=True)
class SampleReport:
    predicted_class: int
    epistemic: float
    aleatoric: float
    min_mahalanobis_sq: float
    is_ood: bool
    aleatoric_valid: bool
    ddu_score: float
    confidence: float  # max mean responsibility


REPORT_COLUMNS = ("index", "predicted_class", "epistemic", "aleatoric", "min_d2",
                  "is_ood", "aleatoric_valid", "ddu_score", "confidence")


def _score_chunk(model: GmmModel, ensemble: GmmEnsemble, policy: OodPolicy, xb: np.ndarray) -> dict:
    d2_all = _mahalanobis_all(model, xb)
    scores = model._consts - 0.5 * d2_all
    min_d2 = d2_all.min(axis=1)
    flags = min_d2 > policy.threshold
    ens = ensemble_scores(ensemble, xb)
    return {
        "predicted_class": np.argmax(scores, axis=1),
        "epistemic": ens.epistemic,
        "aleatoric": ens.aleatoric,
        "min_d2": min_d2,
        "is_ood": flags,
        "aleatoric_valid": ~flags,
        "ddu_score": -log_sum_exp(scores, axis=1),
        "confidence": ens.mean_resp.max(axis=1),
    }


def score_arrays(model: GmmModel, ensemble: GmmEnsemble, policy: OodPolicy, batch, threads: int = 1) -> dict:
    """Column-wise reports for a batch, keyed by :data:`REPORT_COLUMNS` (minus ``index``)."""
    check_compatible(model, ensemble)
    if policy.d != model.d:
        raise DimensionMismatch(f"policy built for d={policy.d}, model has d={model.d}")
    keys = REPORT_COLUMNS[1:]
    if np.size(batch) == 0:
        empty = {k: np.empty(0) for k in keys}
        for k in ("is_ood", "aleatoric_valid"):
            empty[k] = np.empty(0, dtype=bool)
        empty["predicted_class"] = np.empty(0, dtype=np.int64)
        return empty
    xb, _ = _as_batch(model, batch)
    n = xb.shape[0]
    chunks = [xb[i:i + CHUNK_ROWS] for i in range(0, n, CHUNK_ROWS)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _score_chunk(model, ensemble, policy, c), chunks))
    else:
        parts = [_score_chunk(model, ensemble, policy, c) for c in chunks]
    return {k: np.concatenate([p[k] for p in parts]) for k in keys}


def score_batch(model: GmmModel, ensemble: GmmEnsemble, policy: OodPolicy, batch, threads: int = 1) -> list[SampleReport]:
    cols = score_arrays(model, ensemble, policy, batch, threads)
    names = [f.name for f in fields(SampleReport)]
    keys = ["predicted_class", "epistemic", "aleatoric", "min_d2", "is_ood", "aleatoric_valid",
            "ddu_score", "confidence"]
    rows = zip(*(cols[k].tolist() for k in keys))
    return [SampleReport(**dict(zip(names, r))) for r in rows]
