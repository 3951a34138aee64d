"""Calibration and detection metrics, plus the softmax baseline with temperature scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EmptyInput, LengthMismatch
from .numkernel import entropy, log_sum_exp

DEFAULT_BINS = 15
TEMPERATURE_BOUNDS = (0.05, 20.0)
TEMPERATURE_TOL = 1e-4


@dataclass(frozen=True)
class CalibrationReport:
    num_bins: int
    bin_edges: np.ndarray
    bin_confidence: np.ndarray
    bin_accuracy: np.ndarray
    bin_weight: np.ndarray
    bin_count: np.ndarray
    ece: float


def ece(confidences, correct, num_bins: int = DEFAULT_BINS) -> CalibrationReport:
    """Expected calibration error over equal-width, right-closed bins on [0, 1].

    A confidence of exactly 0 falls into the first bin.  Empty bins report
    zero weight and zero confidence/accuracy.
    """
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    hit = np.asarray(correct, dtype=bool).ravel()
    if conf.shape != hit.shape:
        raise LengthMismatch(f"{conf.size} confidences vs {hit.size} correctness flags")
    if conf.size == 0:
        raise EmptyInput("ece needs at least one sample")
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    if np.any((conf < 0) | (conf > 1)):
        raise ValueError("confidences must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, num_bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, num_bins - 1)
    count = np.bincount(idx, minlength=num_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=num_bins)
    acc_sum = np.bincount(idx, weights=hit.astype(np.float64), minlength=num_bins)
    nonzero = count > 0
    safe = np.where(nonzero, count, 1)
    bin_conf = np.where(nonzero, conf_sum / safe, 0.0)
    bin_acc = np.where(nonzero, acc_sum / safe, 0.0)
    weight = count / conf.size
    value = float(np.sum(weight * np.abs(bin_acc - bin_conf)))
    return CalibrationReport(num_bins, edges, bin_conf, bin_acc, weight, count, value)


@dataclass(frozen=True)
class OodConfusion:
    """OOD-positive confusion counts.  ``None`` marks an undefined ratio."""

    tp: int
    fp: int
    fn: int
    tn: int
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    # rows: predicted OOD / predicted ID; columns: true OOD / true ID
    column_normalized: np.ndarray

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den > 0 else None


def ood_confusion(predicted_ood, true_ood) -> OodConfusion:
    pred = np.asarray(predicted_ood, dtype=bool).ravel()
    true = np.asarray(true_ood, dtype=bool).ravel()
    if pred.shape != true.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {true.size} ground-truth flags")
    if pred.size == 0:
        raise EmptyInput("ood_confusion needs at least one sample")
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    tn = int(np.sum(~pred & ~true))
    return confusion_from_counts(tp, fp, fn, tn)


def confusion_from_counts(tp: int, fp: int, fn: int, tn: int) -> OodConfusion:
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    if precision is None or recall is None:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    norm = np.full((2, 2), np.nan)
    if tp + fn > 0:
        norm[:, 0] = (tp / (tp + fn), fn / (tp + fn))
    if fp + tn > 0:
        norm[:, 1] = (fp / (fp + tn), tn / (fp + tn))
    return OodConfusion(tp, fp, fn, tn, precision, recall, f1, norm)


# ---------------------------------------------------------------------------
# Softmax baseline
# ---------------------------------------------------------------------------

def log_softmax(logits, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    return z - np.expand_dims(log_sum_exp(z, axis=-1), -1)


def softmax_entropy(logits, temperature: float = 1.0):
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    return entropy(np.exp(log_softmax(logits, temperature)))


def softmax_confidence(logits, temperature: float = 1.0) -> np.ndarray:
    return np.exp(log_softmax(logits, temperature).max(axis=-1))


def nll(logits, labels, temperature: float) -> float:
    logp = log_softmax(logits, temperature)
    return float(-np.mean(logp[np.arange(logp.shape[0]), labels]))


@dataclass(frozen=True)
class TemperatureFit:
    temperature: float
    nll: float
    clamped: bool


def fit_temperature(logits, labels, bounds: tuple[float, float] = TEMPERATURE_BOUNDS,
                    tol: float = TEMPERATURE_TOL) -> TemperatureFit:
    """Golden-section search for the NLL-minimizing temperature.

    NLL is convex in ``1/T`` and so unimodal in ``T`` on the bracket.  The
    result never has higher NLL than ``T = 1``; a flat objective returns 1.
    ``clamped`` is set when the optimum sits on a bracket end.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64).ravel()
    if logits.ndim != 2 or logits.shape[0] != labels.size:
        raise LengthMismatch(f"logits {logits.shape} vs {labels.size} labels")
    if logits.shape[0] == 0:
        raise EmptyInput("temperature scaling needs at least one sample")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("labels out of range for the logit columns")

    def f(t):
        return nll(logits, labels, t)

    lo, hi = bounds
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    t_best = 0.5 * (a + b)
    f_best = f(t_best)
    f_one = f(1.0)
    f_lo, f_hi = f(lo), f(hi)
    if max(f_lo, f_hi, f_best) - min(f_lo, f_hi, f_best) <= 1e-12:
        return TemperatureFit(1.0, f_one, False)
    # the bracket ends themselves are candidates (monotone objectives)
    for t_edge, f_edge in ((lo, f_lo), (hi, f_hi)):
        if f_edge < f_best:
            t_best, f_best = t_edge, f_edge
    if f_one <= f_best:
        return TemperatureFit(1.0, f_one, False)
    clamped = t_best - lo <= tol or hi - t_best <= tol
    return TemperatureFit(float(t_best), f_best, clamped)


def temperature_scale(logits, labels) -> float:
    return fit_temperature(logits, labels).temperature
