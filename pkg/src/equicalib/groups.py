"""Finite groups, their actions on dataset points, and orbit decomposition.

Group elements act on inputs either through affine maps (matrix plus
offset, so that e.g. the two-level swap z -> 1 - z is representable) or
through row permutations of point-set inputs.  Output-side actions, used
for equivariant targets, are plain matrices.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

MATRIX_TOL = 1e-12
DEFAULT_ORBIT_TOL = 1e-8

GROUP_GRAMMAR = "cyclic:<n> | dihedral:<n> | symmetric:<n> | reflect-x | z-swap"


class GroupSpecError(ValueError):
    """Unparseable or unsupported group descriptor."""


@dataclass(frozen=True)
class GroupElement:
    index: int
    description: str


@dataclass(frozen=True)
class AffineRep:
    """Input action x -> matrix @ x + offset."""

    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        t = np.asarray(self.offset, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or t.shape != (m.shape[0],):
            raise ValueError("affine rep needs a square matrix and a matching offset")
        m.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "offset", t)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, point: np.ndarray) -> np.ndarray:
        return self.matrix @ point + self.offset

    def compose(self, other: "AffineRep") -> "AffineRep":
        # self after other: x -> A1 (A2 x + t2) + t1
        return AffineRep(self.matrix @ other.matrix,
                         self.matrix @ other.offset + self.offset)

    def close_to(self, other: "AffineRep", tol: float = MATRIX_TOL) -> bool:
        return (np.abs(self.matrix - other.matrix).max() <= tol
                and np.abs(self.offset - other.offset).max() <= tol)


@dataclass(frozen=True)
class PermutationRep:
    """Input action on point sets: reorder the rows of an (n, d) matrix."""

    perm: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=int)
        if sorted(p.tolist()) != list(range(len(p))):
            raise ValueError("not a permutation")
        p.setflags(write=False)
        object.__setattr__(self, "perm", p)

    @property
    def size(self) -> int:
        return len(self.perm)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return points[self.perm]

    def compose(self, other: "PermutationRep") -> "PermutationRep":
        return PermutationRep(other.perm[self.perm])

    def close_to(self, other: "PermutationRep", tol: float = 0.0) -> bool:
        return np.array_equal(self.perm, other.perm)


InputRep = AffineRep | PermutationRep


@dataclass(frozen=True)
class FiniteGroup:
    """Enumerated finite group with input (and optional output) actions.

    Invariants checked at construction: an identity element exists,
    every element has an inverse in the list, and composition stays in
    the list (verified exhaustively for small groups, by sampling for
    large ones).
    """

    name: str
    elements: tuple[GroupElement, ...]
    input_reps: tuple[InputRep, ...]
    output_reps: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        if len(self.elements) != len(self.input_reps):
            raise ValueError("one input rep per element required")
        if self.output_reps is not None:
            if len(self.output_reps) != len(self.elements):
                raise ValueError("one output rep per element required")
            mats = []
            for m in self.output_reps:
                m = np.asarray(m, dtype=float)
                m.setflags(write=False)
                mats.append(m)
            object.__setattr__(self, "output_reps", tuple(mats))
        indices = [e.index for e in self.elements]
        if sorted(indices) != list(range(len(indices))):
            raise ValueError("element indices must be 0..n-1 and unique")
        self._check_structure()

    # -- structural checks -------------------------------------------------

    def _perm_lookup(self) -> dict:
        cached = self.__dict__.get("_perm_lookup_cache")
        if cached is None:
            cached = {tuple(rep.perm.tolist()): j
                      for j, rep in enumerate(self.input_reps)
                      if isinstance(rep, PermutationRep)}
            object.__setattr__(self, "_perm_lookup_cache", cached)
        return cached

    def _find(self, rep: InputRep) -> int | None:
        if isinstance(rep, PermutationRep):
            return self._perm_lookup().get(tuple(rep.perm.tolist()))
        for j, candidate in enumerate(self.input_reps):
            if isinstance(candidate, AffineRep) and candidate.close_to(rep):
                return j
        return None

    def _check_structure(self):
        ident = self.identity
        if ident is None:
            raise ValueError(f"group {self.name!r} has no identity element")
        n = len(self.elements)
        if n <= 60:
            pairs = itertools.product(range(n), range(n))
            singles = range(n)
        else:
            rng = np.random.default_rng(0)
            pairs = zip(rng.integers(0, n, 200), rng.integers(0, n, 200))
            singles = rng.integers(0, n, 100)
        for i, j in pairs:
            if self._find(self.input_reps[i].compose(self.input_reps[j])) is None:
                raise ValueError(f"group {self.name!r} not closed under composition")
        for i in singles:
            if self.inverse(self.elements[i]) is None:
                raise ValueError(f"group {self.name!r}: element {i} has no inverse")

    # -- group structure ---------------------------------------------------

    @property
    def order(self) -> int:
        return len(self.elements)

    @property
    def identity(self) -> GroupElement | None:
        cached = self.__dict__.get("_identity_cache")
        if cached is not None:
            return cached
        for e, rep in zip(self.elements, self.input_reps):
            if isinstance(rep, AffineRep):
                if rep.close_to(AffineRep(np.eye(rep.dim), np.zeros(rep.dim))):
                    object.__setattr__(self, "_identity_cache", e)
                    return e
            else:
                if np.array_equal(rep.perm, np.arange(rep.size)):
                    object.__setattr__(self, "_identity_cache", e)
                    return e
        return None

    def compose(self, g: GroupElement, h: GroupElement) -> GroupElement:
        """The element whose action equals g after h."""
        j = self._find(self.input_reps[g.index].compose(self.input_reps[h.index]))
        if j is None:
            raise ValueError("composition left the group")
        return self.elements[j]

    def inverse(self, g: GroupElement) -> GroupElement | None:
        rep = self.input_reps[g.index]
        if isinstance(rep, PermutationRep):
            inv = PermutationRep(np.argsort(rep.perm))
        else:
            inv_m = np.linalg.inv(rep.matrix)
            inv = AffineRep(inv_m, -inv_m @ rep.offset)
        j = self._find(inv)
        return self.elements[j] if j is not None else None


# -- actions ---------------------------------------------------------------


def apply(group: FiniteGroup, g: GroupElement, point: np.ndarray,
          side: str = "input") -> np.ndarray:
    """Act on a point (input side) or on a target vector (output side)."""
    point = np.asarray(point, dtype=float)
    if side == "output":
        if group.output_reps is None:
            raise ValueError(f"group {group.name!r} has no output representation")
        rho = group.output_reps[g.index]
        if point.shape != (rho.shape[1],):
            raise ValueError(f"target shape {point.shape} does not match output rep")
        return rho @ point
    if side != "input":
        raise ValueError(f"unknown side {side!r}")
    rep = group.input_reps[g.index]
    if isinstance(rep, AffineRep):
        if point.shape != (rep.dim,):
            raise ValueError(f"point shape {point.shape} does not match rep dim {rep.dim}")
    else:
        if point.ndim != 2 or point.shape[0] != rep.size:
            raise ValueError(f"point-set shape {point.shape} does not match perm size {rep.size}")
    return rep(point)


def _apply_all(group: FiniteGroup, g: GroupElement, points: np.ndarray) -> np.ndarray:
    """Vectorized input action over a stack of points."""
    rep = group.input_reps[g.index]
    if isinstance(rep, AffineRep):
        return points @ rep.matrix.T + rep.offset
    return points[:, rep.perm, :]


# -- datasets ---------------------------------------------------------------


@dataclass(frozen=True)
class WeightedDataset:
    """Discrete weighted dataset: points with optional labels or targets.

    Points are either vectors (N, d) or point sets (N, n, d).  Weights are
    nonnegative and sum to one.  Exactly one of labels/targets may be
    present (both absent = unlabeled).
    """

    points: np.ndarray
    weights: np.ndarray
    labels: np.ndarray | None = None
    targets: np.ndarray | None = None
    annotations: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pts.ndim not in (2, 3):
            raise ValueError("points must be (N, d) vectors or (N, n, d) point sets")
        n = pts.shape[0]
        if n == 0:
            raise ValueError("dataset is empty")
        if w.shape != (n,):
            raise ValueError("weights must be one per point")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("weights not normalized")
        if self.labels is not None and self.targets is not None:
            raise ValueError("labels and targets are mutually exclusive")
        labels = targets = None
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int)
            if labels.shape != (n,):
                raise ValueError("labels must be one per point")
            labels.setflags(write=False)
        if self.targets is not None:
            targets = np.asarray(self.targets, dtype=float)
            if targets.ndim != 2 or targets.shape[0] != n:
                raise ValueError("targets must be (N, m)")
            targets.setflags(write=False)
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "targets", targets)
        anns = {}
        for key, value in self.annotations.items():
            arr = np.asarray(value)
            arr.setflags(write=False)
            anns[key] = arr
        object.__setattr__(self, "annotations", anns)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def is_point_set(self) -> bool:
        return self.points.ndim == 3

    @property
    def label_set(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError("dataset has no labels")
        return np.unique(self.labels)


@dataclass(frozen=True)
class OrbitDecomposition:
    """Partition of dataset indices into group orbits.

    The representative of each orbit is its smallest index; orbits are
    listed in representative order.
    """

    orbits: tuple[tuple[int, ...], ...]
    masses: np.ndarray
    representatives: tuple[int, ...]

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float)
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        seen: list[int] = []
        for orbit, rep in zip(self.orbits, self.representatives):
            if rep != min(orbit):
                raise ValueError("representative must be the smallest index of its orbit")
            seen.extend(orbit)
        if sorted(seen) != list(range(len(seen))):
            raise ValueError("orbits do not partition the index set")
        if abs(float(masses.sum()) - 1.0) > 1e-10:
            raise ValueError("orbit masses do not sum to 1")

    def __len__(self) -> int:
        return len(self.orbits)

    def orbit_of(self, index: int) -> int:
        for k, orbit in enumerate(self.orbits):
            if index in orbit:
                return k
        raise KeyError(index)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, x: int, y: int):
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            self.parent[max(rx, ry)] = min(rx, ry)


def set_distance(a: np.ndarray, b: np.ndarray, tol: float | None = None) -> float:
    """Squared minimal-assignment distance between two point sets.

    Greedy nearest matching first; exact assignment as a fallback when the
    greedy matching is not already within tolerance (sets of up to 8 rows).
    """
    n = a.shape[0]
    cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    taken = np.zeros(n, dtype=bool)
    greedy = 0.0
    for i in range(n):
        order = np.argsort(cost[i])
        for j in order:
            if not taken[j]:
                taken[j] = True
                greedy += cost[i, j]
                break
    if tol is not None and greedy <= tol:
        return greedy
    if n > 8:
        return greedy
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def _match_index(transformed: np.ndarray, points: np.ndarray, tol: float,
                 point_set: bool) -> int | None:
    """Index of the dataset point within tol of `transformed`, or None."""
    if point_set:
        best, best_j = math.inf, None
        for j in range(points.shape[0]):
            d = set_distance(transformed, points[j], tol=tol ** 2)
            if d < best:
                best, best_j = d, j
        return best_j if best <= tol ** 2 else None
    d2 = ((points - transformed[None, :]) ** 2).sum(axis=1)
    j = int(np.argmin(d2))
    return j if d2[j] <= tol ** 2 else None


def decompose_orbits(ds: WeightedDataset, group: FiniteGroup,
                     tol: float = DEFAULT_ORBIT_TOL) -> OrbitDecomposition:
    """Partition dataset indices into orbits of the group action.

    Two indices share an orbit iff some group element maps one point to
    within `tol` of the other (Euclidean distance for vectors, minimal
    assignment distance for point sets).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = len(ds)
    uf = _UnionFind(n)
    ident = group.identity
    for g in group.elements:
        if g == ident:
            continue
        moved = _apply_all(group, g, ds.points)
        for i in range(n):
            j = _match_index(moved[i], ds.points, tol, ds.is_point_set)
            if j is not None:
                uf.union(i, j)
    buckets: dict[int, list[int]] = {}
    for i in range(n):
        buckets.setdefault(uf.find(i), []).append(i)
    reps = sorted(buckets)
    orbits = tuple(tuple(sorted(buckets[r])) for r in reps)
    masses = np.array([ds.weights[list(o)].sum() for o in orbits])
    return OrbitDecomposition(orbits=orbits, masses=masses,
                              representatives=tuple(reps))


# -- group construction -----------------------------------------------------


def _rotation(angle: float, dim: int) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    m = np.eye(dim)
    m[0, 0], m[0, 1], m[1, 0], m[1, 1] = c, -s, s, c
    return m


def _affine_elements(name, mats, offsets, descriptions, output):
    elements = tuple(GroupElement(i, d) for i, d in enumerate(descriptions))
    reps = tuple(AffineRep(m, t) for m, t in zip(mats, offsets))
    out = None
    if output == "same":
        for t in offsets:
            if np.any(t != 0):
                raise GroupSpecError("output rep 'same' needs a linear input action")
        out = tuple(np.array(m) for m in mats)
    elif output != "identity":
        raise GroupSpecError(f"unknown output mode {output!r}")
    return FiniteGroup(name=name, elements=elements, input_reps=reps,
                       output_reps=out)


def build_group(spec: str, ambient_dim: int = 2,
                output: str = "identity") -> FiniteGroup:
    """Build a finite group from a descriptor string.

    Grammar: ``cyclic:<n>``, ``dihedral:<n>``, ``symmetric:<n>``,
    ``reflect-x``, ``z-swap``.  Planar families (cyclic, dihedral,
    reflect-x) may be embedded in 3-D, acting on the xy block.  Pass
    ``output="same"`` to attach the input matrices as the output action.
    """
    spec = spec.strip()
    family, _, arg = spec.partition(":")
    if family == "cyclic":
        n = _parse_order(arg, spec)
        mats = [_rotation(2 * math.pi * k / n, ambient_dim) for k in range(n)]
        offs = [np.zeros(ambient_dim)] * n
        desc = [f"rot {k * 360 / n:g}°" for k in range(n)]
        return _affine_elements(spec, mats, offs, desc, output)
    if family == "dihedral":
        n = _parse_order(arg, spec)
        flip = np.eye(ambient_dim)
        flip[1, 1] = -1.0
        mats, desc = [], []
        for k in range(n):
            mats.append(_rotation(2 * math.pi * k / n, ambient_dim))
            desc.append(f"rot {k * 360 / n:g}°")
        for k in range(n):
            mats.append(_rotation(2 * math.pi * k / n, ambient_dim) @ flip)
            desc.append(f"reflect then rot {k * 360 / n:g}°")
        offs = [np.zeros(ambient_dim)] * (2 * n)
        return _affine_elements(spec, mats, offs, desc, output)
    if family == "symmetric":
        n = _parse_order(arg, spec)
        if n > 8:
            raise GroupSpecError("symmetric:<n> supports n <= 8")
        perms = list(itertools.permutations(range(n)))
        elements = tuple(GroupElement(i, f"rows {p}") for i, p in enumerate(perms))
        reps = tuple(PermutationRep(np.array(p)) for p in perms)
        if output != "identity":
            raise GroupSpecError("symmetric groups support only invariant outputs")
        return FiniteGroup(name=spec, elements=elements, input_reps=reps)
    if spec == "reflect-x":
        flip = np.eye(ambient_dim)
        flip[1, 1] = -1.0
        return _affine_elements(spec, [np.eye(ambient_dim), flip],
                                [np.zeros(ambient_dim)] * 2,
                                ["identity", "reflect over x-axis"], output)
    if spec == "z-swap":
        if ambient_dim != 3:
            raise GroupSpecError("z-swap acts on 3-D points")
        swap = np.diag([1.0, 1.0, -1.0])
        offset = np.array([0.0, 0.0, 1.0])
        if output != "identity":
            raise GroupSpecError("z-swap supports only invariant outputs")
        return _affine_elements(spec, [np.eye(3), swap],
                                [np.zeros(3), offset],
                                ["identity", "swap z levels"], "identity")
    raise GroupSpecError(f"unsupported group {spec!r}; expected {GROUP_GRAMMAR}")


def _parse_order(arg: str, spec: str) -> int:
    try:
        n = int(arg)
    except ValueError:
        raise GroupSpecError(f"bad group order in {spec!r}") from None
    if n < 1:
        raise GroupSpecError("group order must be >= 1")
    return n
