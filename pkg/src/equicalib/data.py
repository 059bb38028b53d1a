"""Synthetic dataset generators and line-delimited persistence.

Every generator is deterministic given its seed.  Files are UTF-8 JSON
lines: a header record carrying provenance, then one record per sample
with fields ``point``, optional ``label`` or ``target``, and ``weight``.
Floats serialize via shortest round-trip decimal repr, so save/load is
lossless.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .groups import WeightedDataset
from .rng import child_rng

FILE_SCHEMA = "equicalib-dataset"
FILE_VERSION = 1

DATASET_KINDS = ("circle20", "swiss_roll", "permutation24", "pointcloud_gence",
                 "vector_field_spiral", "vector_field_sinusoidal",
                 "calibrated_gaussian")


class DatasetFormatError(ValueError):
    """Malformed dataset file; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")


# -- circle with 20 labeled points -------------------------------------------


def gen_circle20() -> WeightedDataset:
    """Twenty unit-circle points with a reflection-adversarial label layout.

    Points sit at angles (2k+1) * 9 degrees, so the set is closed under
    both the 18-degree rotation and reflection over the x-axis, and no
    point lies on the axis.  Reflection pairs are (k, 19-k).  On the right
    half four pairs agree and one is mixed; on the left half all five
    pairs are mixed.  Totals: 14 points of label 0, 6 of label 1, so the
    single full-rotation orbit has minority mass 0.3.
    """
    angles = (2 * np.arange(20) + 1) * (math.pi / 20.0)
    points = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = np.zeros(20, dtype=int)
    labels[15] = 1          # mixed pair on the right half: (4, 15)
    labels[10:15] = 1       # left-half pairs (5,14)..(9,10) all mixed
    weights = np.full(20, 1.0 / 20.0)
    return WeightedDataset(points=points, weights=weights, labels=labels)


def circle20_half_fibers(ds: WeightedDataset) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays for the right (x > 0) and left (x < 0) halves."""
    right = np.flatnonzero(ds.points[:, 0] > 0)
    left = np.flatnonzero(ds.points[:, 0] < 0)
    return right, left


# -- swiss rolls --------------------------------------------------------------

SWISS_SECTORS = 12
_SWISS_THETA_MAX = 3 * math.pi


def _swiss_radius(theta: np.ndarray, arm: int) -> np.ndarray:
    return 0.4 + 0.15 * (theta + arm * math.pi) / math.pi


def gen_swiss_rolls(correct_ratio: float, n_per_arm: int, seed: int) -> WeightedDataset:
    """Two interleaved spiral arms duplicated at z = 0 and z = 1.

    Each sampled (theta, arm) point appears at both z levels, so the
    two-level swap maps the dataset to itself exactly.  The angular range
    is cut into sectors; a ``correct_ratio`` fraction of sectors keeps the
    same label at both levels, the rest flips it.
    """
    if not 0.0 <= correct_ratio <= 1.0:
        raise ValueError("correct_ratio must lie in [0, 1]")
    if n_per_arm < 10:
        raise ValueError("n_per_arm must be >= 10")
    rng = child_rng(seed, "swiss")
    theta = rng.uniform(0.0, _SWISS_THETA_MAX, size=(2, n_per_arm))
    n_correct = round(correct_ratio * SWISS_SECTORS)
    correct_sectors = set(rng.choice(SWISS_SECTORS, size=n_correct, replace=False).tolist())

    pts, labels = [], []
    for arm in range(2):
        r = _swiss_radius(theta[arm], arm)
        x = r * np.cos(theta[arm])
        y = r * np.sin(theta[arm])
        sector = np.minimum((theta[arm] / _SWISS_THETA_MAX * SWISS_SECTORS).astype(int),
                            SWISS_SECTORS - 1)
        for z in (0.0, 1.0):
            pts.append(np.stack([x, y, np.full(n_per_arm, z)], axis=1))
            lab = np.full(n_per_arm, arm, dtype=int)
            if z == 1.0:
                flip = np.array([s not in correct_sectors for s in sector])
                lab = np.where(flip, 1 - lab, lab)
            labels.append(lab)
    points = np.concatenate(pts, axis=0)
    labels = np.concatenate(labels, axis=0)
    n = points.shape[0]
    return WeightedDataset(points=points, weights=np.full(n, 1.0 / n), labels=labels)


# -- permuted point sets ------------------------------------------------------

_PERM_BASE = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.5, 0.5, 0.5],
])


def gen_permutation24() -> WeightedDataset:
    """All 24 row orderings of four distinct feature vectors.

    Label 0 iff the first row is the designated vector (6 of 24 orderings),
    label 1 otherwise; uniform weights.  One orbit under row permutations.
    """
    import itertools

    points, labels = [], []
    for perm in itertools.permutations(range(4)):
        points.append(_PERM_BASE[list(perm)])
        labels.append(0 if perm[0] == 0 else 1)
    return WeightedDataset(points=np.stack(points), weights=np.full(24, 1.0 / 24.0),
                           labels=np.array(labels))


# -- point-cloud regression example -------------------------------------------


def _rot2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def gen_pointcloud_gence() -> tuple[WeightedDataset, np.ndarray]:
    """Five 2-D point clouds with scalar targets and a fixed fiber split.

    Items: a(+), a(x), b, c, d with weights 0.125/0.125/0.125/0.125/0.5.
    a(x) is a(+) rotated 45 degrees and carries the same target; c is b
    rotated 90 degrees with a different target, placed so the {b, c}
    orbit has target variance pi/4.  Returns the dataset and the fiber
    index per item (0 for the first four, 1 for the last).
    """
    plus = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    cross = plus @ _rot2(math.pi / 4).T
    b = np.array([[2.0, 0.0], [3.0, 0.5], [2.5, 1.5], [4.0, 0.0]])
    c = b @ _rot2(math.pi / 2).T
    d = np.array([[-2.0, -2.0], [-3.0, -2.5], [-2.0, -3.5], [-4.5, -2.0]])
    points = np.stack([plus, cross, b, c, d])
    half = math.sqrt(math.pi) / 2.0
    targets = np.array([[2.0], [2.0], [half], [-half], [-1.0]])
    weights = np.array([0.125, 0.125, 0.125, 0.125, 0.5])
    fibers = np.array([0, 0, 0, 0, 1])
    ds = WeightedDataset(points=points, weights=weights, targets=targets)
    return ds, fibers


# -- planar vector fields ------------------------------------------------------

SPIRAL_ROTATION = np.array([[0.0, -1.0, 0.0],
                            [1.0, 0.0, 0.0],
                            [0.0, 0.0, 1.0]])


def vector_field_target(kind: str, x: np.ndarray) -> np.ndarray:
    """Ground-truth field value: a quarter-turn of x, or -sin^2(|x|) x."""
    if kind == "spiral":
        return x @ SPIRAL_ROTATION.T
    if kind == "sinusoidal":
        norms = np.linalg.norm(x, axis=-1, keepdims=True)
        return -np.sin(norms) ** 2 * x
    raise ValueError(f"unknown vector field kind {kind!r}")


def gen_vector_field(kind: str, n: int, radius: float, seed: int) -> WeightedDataset:
    """n inputs uniform in the xy-disk of the given radius (z = 0)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if kind not in ("spiral", "sinusoidal"):
        raise ValueError(f"unknown vector field kind {kind!r}")
    rng = child_rng(seed, "vector_field", kind)
    r = radius * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0.0, 2 * math.pi, size=n)
    points = np.stack([r * np.cos(phi), r * np.sin(phi), np.zeros(n)], axis=1)
    targets = vector_field_target(kind, points)
    return WeightedDataset(points=points, weights=np.full(n, 1.0 / n),
                           targets=targets)


# -- calibrated gaussian oracle ------------------------------------------------


def gen_calibrated_gaussian(n: int, dims: int, s_range: tuple[float, float],
                            seed: int) -> WeightedDataset:
    """Targets drawn as mu + eps with eps ~ N(0, diag(s)); (mu, s) stored.

    The generating pair is kept in ``annotations`` so the intrinsically
    calibrated predictor is recoverable; it attains the population
    dispersion-gap score (pi - 2) / 2 and squared-gap score 2.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = float(s_range[0]), float(s_range[1])
    if lo <= 0 or hi < lo:
        raise ValueError("s_range must be positive and ordered")
    rng = child_rng(seed, "calibrated_gaussian")
    mu = rng.uniform(-1.0, 1.0, size=(n, dims))
    s = rng.uniform(lo, hi, size=(n, dims))
    eps = rng.standard_normal((n, dims)) * np.sqrt(s)
    targets = mu + eps
    return WeightedDataset(points=mu.copy(), weights=np.full(n, 1.0 / n),
                           targets=targets, annotations={"mu": mu, "s": s})


# -- persistence ---------------------------------------------------------------


def save_dataset(ds: WeightedDataset, path: str | Path,
                 provenance: dict | None = None) -> Path:
    """Write a dataset as JSON lines with a provenance header."""
    path = Path(path)
    header = {"schema": FILE_SCHEMA, "version": FILE_VERSION, "n": len(ds)}
    if provenance:
        header.update(provenance)
    lines = [json.dumps(header, sort_keys=True)]
    for i in range(len(ds)):
        rec: dict = {"point": ds.points[i].tolist()}
        if ds.labels is not None:
            rec["label"] = int(ds.labels[i])
        if ds.targets is not None:
            rec["target"] = ds.targets[i].tolist()
        rec["weight"] = float(ds.weights[i])
        for key, arr in ds.annotations.items():
            rec[key] = arr[i].tolist()
        lines.append(json.dumps(rec))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_dataset(path: str | Path) -> WeightedDataset:
    """Read a dataset written by :func:`save_dataset`."""
    path = Path(path)
    points, labels, targets, weights = [], [], [], []
    annotations: dict[str, list] = {}
    n_records = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if lineno == 1 and rec.get("schema") == FILE_SCHEMA:
                continue
            if "point" not in rec:
                raise DatasetFormatError("point absent", lineno)
            if "weight" not in rec:
                raise DatasetFormatError("weights absent", lineno)
            n_records += 1
            points.append(rec["point"])
            weights.append(rec["weight"])
            if "label" in rec:
                labels.append(rec["label"])
            if "target" in rec:
                targets.append(rec["target"])
            for key in rec:
                if key not in ("point", "label", "target", "weight"):
                    annotations.setdefault(key, []).append(rec[key])
    if n_records == 0:
        raise DatasetFormatError("no records in file")
    if labels and len(labels) != n_records:
        raise DatasetFormatError("label present on only some records")
    if targets and len(targets) != n_records:
        raise DatasetFormatError("target present on only some records")
    w = np.asarray(weights, dtype=float)
    if abs(float(w.sum()) - 1.0) > 1e-12:
        raise DatasetFormatError(f"weights not normalized (sum={w.sum()!r})")
    anns = {k: np.asarray(v) for k, v in annotations.items()
            if len(v) == n_records}
    return WeightedDataset(points=np.asarray(points, dtype=float), weights=w,
                           labels=np.asarray(labels, dtype=int) if labels else None,
                           targets=np.asarray(targets, dtype=float) if targets else None,
                           annotations=anns)


def generate(spec: DatasetSpec):
    """Dispatch a DatasetSpec to its generator.

    Returns the dataset; for the point-cloud regression example the fiber
    assignment is stored under ``annotations["fiber"]``.
    """
    kind, params, seed = spec.kind, dict(spec.params), spec.seed
    if kind == "circle20":
        return gen_circle20()
    if kind == "swiss_roll":
        return gen_swiss_rolls(params.get("correct_ratio", 0.5),
                               params.get("n_per_arm", 150), seed)
    if kind == "permutation24":
        return gen_permutation24()
    if kind == "pointcloud_gence":
        ds, fibers = gen_pointcloud_gence()
        return WeightedDataset(points=ds.points, weights=ds.weights,
                               targets=ds.targets, annotations={"fiber": fibers})
    if kind in ("vector_field_spiral", "vector_field_sinusoidal"):
        return gen_vector_field(kind.removeprefix("vector_field_"),
                                params.get("n", 512), params.get("radius", math.pi),
                                seed)
    if kind == "calibrated_gaussian":
        return gen_calibrated_gaussian(params.get("n", 1000), params.get("dims", 1),
                                       tuple(params.get("s_range", (0.5, 2.0))), seed)
    raise ValueError(f"unknown dataset kind {kind!r}")
