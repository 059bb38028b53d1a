"""Calibration metrics: binned ECE, fiber-wise dispersion scores, bleed.

The regression calibration score compares the predicted dispersion
sqrt(2 s / pi) with observed absolute residuals fiber by fiber; its
squared-moment variant compares s with squared residuals.  Both are
normalized by the squared norm of the predicted quantity, so they are
invariant to rescaling targets by c and variances by c^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

VARIANCE_FLOOR = 1e-12


class VarianceUnderflowError(ValueError):
    """A fiber's representative variance fell at or below the guard floor."""


@dataclass(frozen=True)
class ClassifierOutput:
    label: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class RegressorOutput:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.variance, dtype=float)
        if mean.shape != var.shape:
            raise ValueError("mean and variance must have the same shape")
        if np.any(var <= 0):
            raise ValueError("variance components must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)


def stack_classifier_outputs(outputs) -> tuple[np.ndarray, np.ndarray]:
    """(confidences, labels) arrays from a sequence of ClassifierOutput."""
    conf = np.array([o.confidence for o in outputs], dtype=float)
    labels = np.array([o.label for o in outputs], dtype=int)
    return conf, labels


def stack_regressor_outputs(outputs) -> tuple[np.ndarray, np.ndarray]:
    means = np.stack([np.atleast_1d(o.mean) for o in outputs])
    variances = np.stack([np.atleast_1d(o.variance) for o in outputs])
    return means, variances


def _norm_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("weights must be one per sample")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have positive total mass")
    return w / total


# -- fibers -------------------------------------------------------------------


@dataclass(frozen=True)
class FiberPartition:
    """Grouping of sample indices by predicted confidence or variance.

    ``masses`` estimate the push-forward density of the grouping key;
    they are the normalized total weights of each group.
    """

    mode: str
    groups: tuple[np.ndarray, ...]
    masses: np.ndarray
    keys: tuple

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float)
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        groups = tuple(np.asarray(g, dtype=int) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        covered = np.sort(np.concatenate(groups)) if groups else np.array([])
        if not np.array_equal(covered, np.arange(len(covered))):
            raise ValueError("fiber groups must partition the sample indices")
        if abs(float(masses.sum()) - 1.0) > 1e-10:
            raise ValueError("fiber masses do not sum to 1")

    def __len__(self) -> int:
        return len(self.groups)


def _partition_from_ids(mode, ids, weights, key_of) -> FiberPartition:
    w = _norm_weights(weights, len(ids))
    order = {}
    for i, fid in enumerate(ids):
        order.setdefault(fid, []).append(i)
    groups, masses, keys = [], [], []
    for fid in sorted(order):
        idx = np.array(order[fid], dtype=int)
        groups.append(idx)
        masses.append(float(w[idx].sum()))
        keys.append(key_of(fid, idx))
    return FiberPartition(mode=mode, groups=tuple(groups),
                          masses=np.array(masses), keys=tuple(keys))


def exact_fibers(values: np.ndarray, weights=None) -> FiberPartition:
    """One fiber per distinct value (row for 2-D input)."""
    values = np.asarray(values, dtype=float)
    flat = values.reshape(len(values), -1)
    ids = [tuple(row.tolist()) for row in flat]
    return _partition_from_ids("exact", ids, weights,
                               lambda fid, idx: np.array(fid) if len(fid) > 1 else fid[0])


def epsilon_fibers(values: np.ndarray, eps: float, weights=None) -> FiberPartition:
    """Fibers from rounding values to a grid of spacing eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    values = np.asarray(values, dtype=float)
    flat = values.reshape(len(values), -1)
    ids = [tuple(np.round(row / eps).astype(int).tolist()) for row in flat]
    w = _norm_weights(weights, len(values))

    def rep(fid, idx):
        sub = flat[idx]
        ww = w[idx] / w[idx].sum()
        mean = (sub * ww[:, None]).sum(axis=0)
        return mean if mean.size > 1 else float(mean[0])

    return _partition_from_ids(f"epsilon-bin({eps:g})", ids, weights, rep)


def quantile_fibers(variances: np.ndarray, k: int = 10, weights=None) -> FiberPartition:
    """Fibers from k quantile bins of the variance norm."""
    if k < 1:
        raise ValueError("k must be >= 1")
    variances = np.asarray(variances, dtype=float)
    norms = np.linalg.norm(variances.reshape(len(variances), -1), axis=1)
    qs = np.quantile(norms, np.linspace(0, 1, k + 1)[1:-1])
    ids = np.searchsorted(qs, norms, side="right")
    w = _norm_weights(weights, len(variances))
    flat = variances.reshape(len(variances), -1)

    def rep(fid, idx):
        ww = w[idx] / w[idx].sum()
        mean = (flat[idx] * ww[:, None]).sum(axis=0)
        return mean if mean.size > 1 else float(mean[0])

    return _partition_from_ids(f"quantile({k})", ids.tolist(), weights, rep)


# -- binned expected calibration error ---------------------------------------


@dataclass(frozen=True)
class BinTable:
    """Per-bin masses, weighted accuracies, and mean confidences."""

    edges: np.ndarray
    mass: np.ndarray
    accuracy: np.ndarray
    confidence: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.accuracy - self.confidence)

    def rows(self):
        for m in range(len(self.mass)):
            yield (self.edges[m], self.edges[m + 1], self.mass[m],
                   self.accuracy[m], self.confidence[m], self.gap[m])


def ece_binned(confidences, predicted, truths, weights=None,
               n_bins: int = 100) -> tuple[float, BinTable]:
    """Equal-width binned ECE: sum over bins of mass * |acc - conf|.

    Empty bins contribute zero; a confidence of exactly 1 lands in the
    last bin.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    conf = np.asarray(confidences, dtype=float)
    pred = np.asarray(predicted)
    truth = np.asarray(truths)
    if np.any(conf < 0) or np.any(conf > 1):
        raise ValueError("confidence outside [0, 1]")
    w = _norm_weights(weights, len(conf))
    idx = np.minimum((conf * n_bins).astype(int), n_bins - 1)
    correct = (pred == truth).astype(float)
    mass = np.bincount(idx, weights=w, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=w * correct, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=w * conf, minlength=n_bins)
    nonzero = mass > 0
    acc = np.zeros(n_bins)
    mean_conf = np.zeros(n_bins)
    acc[nonzero] = acc_sum[nonzero] / mass[nonzero]
    mean_conf[nonzero] = conf_sum[nonzero] / mass[nonzero]
    ece = float(np.sum(mass * np.abs(acc - mean_conf)))
    table = BinTable(edges=np.linspace(0.0, 1.0, n_bins + 1), mass=mass,
                     accuracy=acc, confidence=mean_conf)
    return ece, table


# -- fiber-normalized regression calibration ----------------------------------


def _fiber_rep_variance(variances: np.ndarray, w: np.ndarray,
                        idx: np.ndarray) -> np.ndarray:
    ww = w[idx] / w[idx].sum()
    s = (variances[idx] * ww[:, None]).sum(axis=0)
    if np.any(s <= VARIANCE_FLOOR):
        raise VarianceUnderflowError(
            f"fiber variance {s} at or below floor {VARIANCE_FLOOR:g}")
    return s


def _fiberwise_score(means, variances, truths, weights, fibers, numerator):
    means = np.atleast_2d(np.asarray(means, dtype=float))
    variances = np.atleast_2d(np.asarray(variances, dtype=float))
    truths = np.atleast_2d(np.asarray(truths, dtype=float))
    if means.shape != truths.shape or means.shape != variances.shape:
        raise ValueError("means, variances, and truths must share a shape")
    w = _norm_weights(weights, len(means))
    if fibers is None:
        fibers = quantile_fibers(variances, k=10, weights=w)
    total = 0.0
    for idx, mass in zip(fibers.groups, fibers.masses):
        if len(idx) == 0:
            continue
        s = _fiber_rep_variance(variances, w, idx)
        ww = w[idx] / w[idx].sum()
        num, denom = numerator(s, means[idx], truths[idx])
        total += mass * float((num * ww).sum()) / denom
    return float(total)


def gence(means, variances, truths, weights=None,
          fibers: FiberPartition | None = None) -> float:
    """Fiber-averaged normalized gap between predicted dispersion and |residual|.

    Per fiber with representative variance s (mass-weighted mean of member
    variances): E[ || sqrt(2s/pi) - |mean - truth| ||^2 ] / || sqrt(2s/pi) ||^2,
    combined with fiber masses.  An intrinsically calibrated Gaussian
    predictor scores (pi - 2) / 2, not 0.
    """

    def numerator(s, mu, y):
        disp = np.sqrt(2.0 * s / math.pi)
        gap = disp[None, :] - np.abs(mu - y)
        return (gap ** 2).sum(axis=1), float((disp ** 2).sum())

    return _fiberwise_score(means, variances, truths, weights, fibers, numerator)


def gence_sq(means, variances, truths, weights=None,
             fibers: FiberPartition | None = None) -> float:
    """Squared-moment variant: numerator ||s - (mean-truth)^2||^2 over ||s||^2.

    Zero when squared residuals equal s everywhere; an intrinsically
    calibrated Gaussian predictor scores 2.
    """

    def numerator(s, mu, y):
        gap = s[None, :] - (mu - y) ** 2
        return (gap ** 2).sum(axis=1), float((s ** 2).sum())

    return _fiberwise_score(means, variances, truths, weights, fibers, numerator)


# -- regression error and bleed ------------------------------------------------


def regression_error(preds, truths, weights=None, fiber_mask=None) -> float:
    """Weighted mean squared Euclidean error, optionally on a renormalized subset."""
    preds = np.atleast_2d(np.asarray(preds, dtype=float))
    truths = np.atleast_2d(np.asarray(truths, dtype=float))
    if preds.shape != truths.shape:
        raise ValueError("predictions and truths must share a shape")
    w = _norm_weights(weights, len(preds))
    if fiber_mask is not None:
        idx = np.asarray(fiber_mask)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        if len(idx) == 0:
            raise ValueError("empty fiber mask")
        preds, truths, w = preds[idx], truths[idx], w[idx]
        w = w / w.sum()
    sq = ((preds - truths) ** 2).sum(axis=1)
    return float((w * sq).sum())


def aleatoric_bleed(pred_aleatoric, truth_aleatoric=None, weights=None) -> float:
    """Regression error between predicted and true aleatoric variances.

    With deterministic ground truth (truth identically zero) this is the
    weighted mean squared norm of the predicted variance vectors.
    """
    preds = np.atleast_2d(np.asarray(pred_aleatoric, dtype=float))
    if np.any(preds < 0):
        raise ValueError("predicted aleatoric variance must be nonnegative")
    if truth_aleatoric is None:
        truth_aleatoric = np.zeros_like(preds)
    return regression_error(preds, truth_aleatoric, weights)
