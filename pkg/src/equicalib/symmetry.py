"""Orbit-level dissent and moment statistics, plus the error bounds they imply.

For a labeled dataset, any classifier that is constant on each orbit has
weighted error at least the summed majority dissent and at most the summed
minority dissent.  For targets, the per-orbit mean is the best constant,
with error equal to the orbit variance; the equivariant generalization
whitens by the output action before averaging.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .groups import (DEFAULT_ORBIT_TOL, FiniteGroup, OrbitDecomposition,
                     WeightedDataset, _match_index, apply, decompose_orbits)

Q_CONDITION_LIMIT = 1e12


class DegenerateOrbitWeightingError(ValueError):
    """The output-action Gram matrix of an orbit is numerically singular."""


class VacuousBoundWarning(UserWarning):
    """Every orbit omits at least one label, so the error upper bound is 1."""


@dataclass(frozen=True)
class OrbitStats:
    orbit: tuple[int, ...]
    mass: float
    majority_dissent: float
    minority_dissent: float
    target_mean: np.ndarray | None = None
    target_variance: float | None = None


def _label_masses(orbit, labels, weights, label_set) -> np.ndarray:
    orbit = np.asarray(orbit, dtype=int)
    masses = np.zeros(len(label_set))
    for j, y in enumerate(label_set):
        masses[j] = weights[orbit[labels[orbit] == y]].sum()
    return masses


def majority_dissent(orbit, labels, weights, label_set=None) -> float:
    """min over labels y of the orbit mass carrying a label other than y."""
    if len(orbit) == 0:
        raise ValueError("orbit is empty")
    labels = np.asarray(labels)
    if label_set is None:
        label_set = np.unique(labels)
    masses = _label_masses(orbit, labels, weights, label_set)
    return float(masses.sum() - masses.max())


def minority_dissent(orbit, labels, weights, label_set=None) -> float:
    """max over labels y of the orbit mass carrying a label other than y.

    The max ranges over the full label set; if some label is absent from
    the orbit, the whole orbit dissents from it and the value is the
    orbit mass.
    """
    if len(orbit) == 0:
        raise ValueError("orbit is empty")
    labels = np.asarray(labels)
    if label_set is None:
        label_set = np.unique(labels)
    masses = _label_masses(orbit, labels, weights, label_set)
    return float(masses.sum() - masses.min())


def orbit_target_stats(orbit, targets, weights) -> tuple[np.ndarray, float, float]:
    """(weighted mean, variance about the mean, mass) of targets on an orbit."""
    orbit = np.asarray(orbit, dtype=int)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    w = np.asarray(weights, dtype=float)[orbit]
    mass = float(w.sum())
    if mass <= 0:
        raise ValueError("orbit has zero mass")
    q = w / mass
    sub = targets[orbit]
    mean = (sub * q[:, None]).sum(axis=0)
    var = float((q * ((sub - mean) ** 2).sum(axis=1)).sum())
    return mean, var, mass


def _ensure_orbits(ds, group, tol, orbits) -> OrbitDecomposition:
    if orbits is not None:
        return orbits
    return decompose_orbits(ds, group, tol)


def orbit_stats_table(ds: WeightedDataset, group: FiniteGroup,
                      tol: float = DEFAULT_ORBIT_TOL,
                      orbits: OrbitDecomposition | None = None) -> list[OrbitStats]:
    """Per-orbit mass, dissents, and (when targets exist) moments."""
    orbits = _ensure_orbits(ds, group, tol, orbits)
    label_set = ds.label_set if ds.labels is not None else None
    rows = []
    for orbit, mass in zip(orbits.orbits, orbits.masses):
        k = kappa = math.nan
        mean = var = None
        if ds.labels is not None:
            k = majority_dissent(orbit, ds.labels, ds.weights, label_set)
            kappa = minority_dissent(orbit, ds.labels, ds.weights, label_set)
        if ds.targets is not None:
            mean, var, _ = orbit_target_stats(orbit, ds.targets, ds.weights)
        rows.append(OrbitStats(orbit=orbit, mass=float(mass),
                               majority_dissent=k, minority_dissent=kappa,
                               target_mean=mean, target_variance=var))
    return rows


def cls_error_lower(ds: WeightedDataset, group: FiniteGroup,
                    tol: float = DEFAULT_ORBIT_TOL,
                    orbits: OrbitDecomposition | None = None) -> float:
    """Summed majority dissent: error floor for orbit-constant classifiers."""
    if ds.labels is None:
        raise ValueError("dataset has no labels")
    orbits = _ensure_orbits(ds, group, tol, orbits)
    label_set = ds.label_set
    return math.fsum(majority_dissent(o, ds.labels, ds.weights, label_set)
                     for o in orbits.orbits)


def cls_error_upper(ds: WeightedDataset, group: FiniteGroup,
                    tol: float = DEFAULT_ORBIT_TOL,
                    orbits: OrbitDecomposition | None = None) -> float:
    """Summed minority dissent: error ceiling for orbit-constant classifiers.

    Warns when every orbit omits at least one label, in which case the
    ceiling is the trivial 1.
    """
    if ds.labels is None:
        raise ValueError("dataset has no labels")
    orbits = _ensure_orbits(ds, group, tol, orbits)
    label_set = ds.label_set
    values, omits = [], []
    for orbit in orbits.orbits:
        masses = _label_masses(orbit, ds.labels, ds.weights, label_set)
        values.append(float(masses.sum() - masses.min()))
        omits.append(bool(np.any(masses == 0.0)))
    if all(omits):
        warnings.warn("every orbit omits at least one label; the bound is vacuous",
                      VacuousBoundWarning, stacklevel=2)
    return math.fsum(values)


def fiber_dissent(ds: WeightedDataset, orbits: OrbitDecomposition,
                  fiber: np.ndarray, kind: str = "majority") -> float:
    """Summed orbit dissent on one fiber under fiber-renormalized weights.

    The fiber must be a union of whole orbits (an orbit-constant
    confidence head cannot split an orbit across fibers).
    """
    fiber = set(np.asarray(fiber, dtype=int).tolist())
    mass = float(ds.weights[sorted(fiber)].sum())
    if mass <= 0:
        raise ValueError("fiber has zero mass")
    weights = ds.weights / mass
    label_set = ds.label_set
    fn = majority_dissent if kind == "majority" else minority_dissent
    total = []
    for orbit in orbits.orbits:
        inside = [i for i in orbit if i in fiber]
        if not inside:
            continue
        if len(inside) != len(orbit):
            raise ValueError("fiber splits an orbit; invariant heads cannot do that")
        total.append(fn(orbit, ds.labels, weights, label_set))
    return math.fsum(total)


def min_fiber_dissent(ds: WeightedDataset, orbits: OrbitDecomposition,
                      fibers, kind: str = "majority") -> float:
    """min over fibers of the fiber-renormalized summed dissent."""
    return min(fiber_dissent(ds, orbits, f, kind) for f in fibers)


def invariant_regression_lower(ds: WeightedDataset, group: FiniteGroup,
                               tol: float = DEFAULT_ORBIT_TOL,
                               orbits: OrbitDecomposition | None = None) -> float:
    """Sum over orbits of mass times target variance.

    The per-orbit weighted mean attains this error exactly, so it is the
    floor for any orbit-constant regressor.
    """
    if ds.targets is None:
        raise ValueError("dataset has no targets")
    orbits = _ensure_orbits(ds, group, tol, orbits)
    parts = []
    for orbit in orbits.orbits:
        _, var, mass = orbit_target_stats(orbit, ds.targets, ds.weights)
        parts.append(mass * var)
    return math.fsum(parts)


def equivariant_orbit_lower_bound(ds: WeightedDataset, group: FiniteGroup,
                                  tol: float = DEFAULT_ORBIT_TOL,
                                  orbits: OrbitDecomposition | None = None) -> float:
    """Error floor for equivariant regressors on a finite-group dataset.

    Per orbit with representative x and output action rho: with weights
    w_g = weight(g x) / |stabilizer|,

        Q        = sum_g w_g rho(g)^T rho(g)
        E[f, x]  = Q^{-1} sum_g w_g rho(g)^T rho(g) rho(g)^{-1} f(g x)
        bound    = sum_g w_g || f(g x) - rho(g) E[f, x] ||^2

    summed over orbit representatives.  Reduces to the invariant bound
    when the output action is the identity.
    """
    if ds.targets is None:
        raise ValueError("dataset has no targets")
    if group.output_reps is None:
        raise ValueError("group has no output representation")
    orbits = _ensure_orbits(ds, group, tol, orbits)
    m = ds.targets.shape[1]
    total = []
    for orbit, rep in zip(orbits.orbits, orbits.representatives):
        stab = group.order / len(orbit)
        x = ds.points[rep]
        q_mat = np.zeros((m, m))
        rhs = np.zeros(m)
        entries = []
        for g in group.elements:
            z = apply(group, g, x)
            j = _match_index(z, ds.points, tol, ds.is_point_set)
            if j is None:
                raise ValueError("group action left the dataset; refine tol or data")
            w_g = ds.weights[j] / stab
            rho = group.output_reps[g.index]
            gram = rho.T @ rho
            q_mat += w_g * gram
            rhs += w_g * gram @ np.linalg.solve(rho, ds.targets[j])
            entries.append((w_g, rho, ds.targets[j]))
        if np.linalg.cond(q_mat) > Q_CONDITION_LIMIT:
            raise DegenerateOrbitWeightingError(
                f"orbit at index {rep} has ill-conditioned output weighting")
        e_vec = np.linalg.solve(q_mat, rhs)
        total.append(math.fsum(w_g * float(((t - rho @ e_vec) ** 2).sum())
                               for w_g, rho, t in entries))
    return math.fsum(total)
