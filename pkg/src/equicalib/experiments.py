"""Experiment harnesses: the correct-invariance sweep on swiss rolls and
the vector-field regression comparison.

Both return plain row dictionaries ready for CSV emission; per-task seeds
derive from the root seed, so results are independent of execution order.
Set EQUICALIB_THREADS to parallelize across training runs.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import gen_swiss_rolls, gen_vector_field
from .groups import build_group, decompose_orbits
from .models import (MlpConfig, evaluate_classifier, evaluate_regressor,
                     train_classifier, train_vector_regressor)
from .symmetry import cls_error_lower, cls_error_upper

DEFAULT_RATIOS = (0.0, 0.25, 0.5, 0.75, 1.0)

SWISS_CLASSIFIER_CFG = MlpConfig(layer_widths=[64, 64], activation="relu",
                                 learning_rate=0.05, epochs=220, batch_size=32)
VECTORFIELD_CFG = MlpConfig(layer_widths=[48, 48], activation="tanh",
                            learning_rate=0.02, epochs=400, batch_size=64)


def _thread_count() -> int:
    raw = os.environ.get("EQUICALIB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_tasks(tasks):
    """Run callables, optionally on a thread pool; order of results is fixed."""
    workers = _thread_count()
    if workers == 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


# -- swiss-roll classification sweep -------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    ratio: float
    seed: int
    model: str
    acc: float
    ece: float
    lb: float
    ub: float

    def as_dict(self) -> dict:
        return {"ratio": self.ratio, "seed": self.seed, "model": self.model,
                "acc": self.acc, "ece": self.ece, "lb": self.lb, "ub": self.ub}


def _swiss_task(ratio, seed, cfg, n_per_arm, n_bins):
    ds = gen_swiss_rolls(ratio, n_per_arm, seed)
    group = build_group("z-swap", ambient_dim=3)
    orbits = decompose_orbits(ds, group)
    acc_ub = 1.0 - cls_error_lower(ds, group, orbits=orbits)
    acc_lb = 1.0 - cls_error_upper(ds, group, orbits=orbits)
    rows = []
    for model_kind, mode in (("invariant", "drop-z"), ("unconstrained", "none")):
        model_cfg = replace(cfg, invariant_mode=mode, seed=seed)
        model = train_classifier(ds, model_cfg)
        ev = evaluate_classifier(model, ds, n_bins=n_bins, indices=model.test_idx)
        rows.append(SweepRow(ratio=ratio, seed=seed, model=model_kind,
                             acc=ev.accuracy, ece=ev.ece, lb=acc_lb, ub=acc_ub))
    return rows


def run_swissroll_sweep(ratios=DEFAULT_RATIOS, seeds=(0, 1, 2, 3, 4),
                        cfg: MlpConfig | None = None, n_per_arm: int = 150,
                        n_bins: int = 100) -> list[SweepRow]:
    """Train both model kinds across the correct-ratio grid.

    Rows carry test accuracy, test ECE, and the dataset-level accuracy
    band [lb, ub] implied by the orbit dissents.
    """
    cfg = cfg or SWISS_CLASSIFIER_CFG
    tasks = [lambda r=ratio, s=seed: _swiss_task(r, s, cfg, n_per_arm, n_bins)
             for ratio in ratios for seed in seeds]
    rows: list[SweepRow] = []
    for chunk in _run_tasks(tasks):
        rows.extend(chunk)
    return rows


def sweep_averages(rows, model: str) -> dict[float, dict[str, float]]:
    """Seed-averaged accuracy and ECE per ratio for one model kind."""
    grouped: dict[float, list[SweepRow]] = {}
    for row in rows:
        if row.model == model:
            grouped.setdefault(row.ratio, []).append(row)
    return {ratio: {"acc": float(np.mean([r.acc for r in group])),
                    "ece": float(np.mean([r.ece for r in group])),
                    "ub": float(np.mean([r.ub for r in group]))}
            for ratio, group in sorted(grouped.items())}


def spearman(xs, ys) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    def ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v)
        r = np.empty(len(v))
        r[order] = np.arange(1, len(v) + 1, dtype=float)
        for value in np.unique(v):
            sel = v == value
            if sel.sum() > 1:
                r[sel] = r[sel].mean()
        return r

    rx, ry = ranks(xs), ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx * rx).sum()) * float((ry * ry).sum()))
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)


# -- vector-field regression ------------------------------------------------------


@dataclass(frozen=True)
class VectorFieldRow:
    kind: str
    seed: int
    model: str
    mse: float
    beta_nll: float
    bleed: float
    gence: float

    def as_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "model": self.model,
                "mse": self.mse, "beta_nll": self.beta_nll,
                "bleed": self.bleed, "gence": self.gence}


@dataclass(frozen=True)
class VectorFieldReport:
    rows: tuple[VectorFieldRow, ...]
    angle_rows: tuple[dict, ...]

    def mean_metric(self, model: str, metric: str) -> float:
        vals = [getattr(r, metric) for r in self.rows if r.model == model]
        return float(np.mean(vals))


def _vectorfield_task(kind, seed, model_kind, cfg, n, radius):
    ds = gen_vector_field(kind, n, radius, seed)
    model = train_vector_regressor(ds, model_kind, replace(cfg, seed=seed))
    ev = evaluate_regressor(model, ds, indices=model.test_idx)
    finite = [r.beta_nll for r in ev.per_angle if not math.isnan(r.beta_nll)]
    row = VectorFieldRow(kind=kind, seed=seed, model=model_kind, mse=ev.mse,
                         beta_nll=float(np.mean(finite)), bleed=ev.bleed,
                         gence=ev.gence)
    angle_rows = [{"kind": kind, "seed": seed, "model": model_kind,
                   "sector": r.sector, "angle_lo": r.angle_lo,
                   "angle_hi": r.angle_hi, "count": r.count,
                   "mse": r.mse, "beta_nll": r.beta_nll}
                  for r in ev.per_angle]
    return row, angle_rows


def run_vectorfield_experiment(kind: str, seeds=(0, 1, 2, 3, 4),
                               cfg: MlpConfig | None = None, n: int = 512,
                               radius: float = math.pi) -> VectorFieldReport:
    """Train the unconstrained and radial-equivariant regressors on one field."""
    cfg = cfg or VECTORFIELD_CFG
    tasks = [lambda s=seed, mk=model_kind: _vectorfield_task(kind, s, mk, cfg, n, radius)
             for seed in seeds
             for model_kind in ("unconstrained", "radial_equivariant")]
    rows, angle_rows = [], []
    for row, angles in _run_tasks(tasks):
        rows.append(row)
        angle_rows.extend(angles)
    return VectorFieldReport(rows=tuple(rows), angle_rows=tuple(angle_rows))
