"""Calibration-error bound calculators.

Upper bounds on binned calibration error start from the hedging bound
1/2 + E_r|1/2 - p| and tighten by the dissent of the cheapest nonzero
orbit; lower bounds integrate the gap between an accuracy floor m and the
confidence density below it.  The dispersion-score upper bound combines
fiber masses, fiber regression errors, and predicted dispersions.

Each calculator returns a BoundReport whose value is recomputable from
its named components (audit identity, 1e-10).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .groups import DEFAULT_ORBIT_TOL, FiniteGroup, WeightedDataset, decompose_orbits
from .symmetry import cls_error_upper

QUAD_TOL = 1e-9
AUDIT_TOL = 1e-10


class QuadratureError(RuntimeError):
    """Adaptive integration failed to reach tolerance."""


class DegenerateTruncationError(ValueError):
    """Truncated-normal normalizer vanished."""


# -- confidence densities -----------------------------------------------------


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _Phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def trunc_normal_pdf(x: float, mu: float, sigma: float, a: float, b: float) -> float:
    """Density of a normal(mu, sigma^2) truncated to [a, b]; 0 outside."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if a >= b:
        raise ValueError("truncation needs a < b")
    if x < a or x > b:
        return 0.0
    z = _Phi((b - mu) / sigma) - _Phi((a - mu) / sigma)
    if z < 1e-300:
        raise DegenerateTruncationError("truncation window carries no mass")
    return _phi((x - mu) / sigma) / (sigma * z)


@dataclass(frozen=True)
class TruncatedNormalDensity:
    """Analytic confidence density: normal(mu, sigma^2) truncated to [a, b]."""

    mu: float
    sigma: float
    a: float = 0.0
    b: float = 1.0

    def pdf(self, x: float) -> float:
        return trunc_normal_pdf(x, self.mu, self.sigma, self.a, self.b)

    def describe(self) -> str:
        return f"truncnorm({self.mu:g}, {self.sigma:g}, [{self.a:g}, {self.b:g}])"


@dataclass(frozen=True)
class EmpiricalDensity:
    """Discrete confidence density from weighted samples in [0, 1]."""

    values: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.masses, dtype=float)
        if v.shape != m.shape or v.ndim != 1:
            raise ValueError("values and masses must be matching 1-D arrays")
        if np.any(m < 0) or abs(float(m.sum()) - 1.0) > 1e-10:
            raise ValueError("masses must be nonnegative and sum to 1")
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "masses", m)

    def describe(self) -> str:
        return f"empirical({len(self.values)} atoms)"


ConfidenceDensity = TruncatedNormalDensity | EmpiricalDensity


def _adaptive_simpson(f, a, b, tol=QUAD_TOL, max_depth=40):
    """Adaptive Simpson quadrature with an absolute error target."""

    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, eps, depth):
        mid = 0.5 * (lo + hi)
        lmid, rmid = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flmid, frmid = f(lmid), f(rmid)
        left = simpson(lo, mid, flo, flmid, fmid)
        right = simpson(mid, hi, fmid, frmid, fhi)
        if depth >= max_depth:
            raise QuadratureError("adaptive quadrature recursion limit reached")
        if abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return (recurse(lo, mid, flo, flmid, fmid, left, eps / 2.0, depth + 1)
                + recurse(mid, hi, fmid, frmid, fhi, right, eps / 2.0, depth + 1))

    if a >= b:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, tol, 0)


def density_expectation_abs_half(r: ConfidenceDensity) -> float:
    """E_r |1/2 - p| on [0, 1] (quadrature split at the kink for analytic r)."""
    if isinstance(r, EmpiricalDensity):
        return float((r.masses * np.abs(0.5 - r.values)).sum())
    lo, hi = max(r.a, 0.0), min(r.b, 1.0)
    f = lambda p: r.pdf(p) * abs(0.5 - p)
    total = 0.0
    if lo < 0.5 < hi:
        total += _adaptive_simpson(f, lo, 0.5)
        total += _adaptive_simpson(f, 0.5, hi)
    else:
        total += _adaptive_simpson(f, lo, hi)
    return total


def density_lower_integral(r: ConfidenceDensity, m: float) -> float:
    """integral_0^m r(p) (m - p) dp."""
    if isinstance(r, EmpiricalDensity):
        below = r.values < m
        return float((r.masses[below] * (m - r.values[below])).sum())
    lo, hi = max(r.a, 0.0), min(r.b, m)
    if hi <= lo:
        return 0.0
    return _adaptive_simpson(lambda p: r.pdf(p) * (m - p), lo, hi)


def density_total_mass(r: ConfidenceDensity, lo: float | None = None,
                       hi: float | None = None) -> float:
    """integral of r over [lo, hi] (defaults to the full support)."""
    if isinstance(r, EmpiricalDensity):
        sel = np.ones(len(r.values), dtype=bool)
        if lo is not None:
            sel &= r.values >= lo
        if hi is not None:
            sel &= r.values <= hi
        return float(r.masses[sel].sum())
    a = r.a if lo is None else max(r.a, lo)
    b = r.b if hi is None else min(r.b, hi)
    if b <= a:
        return 0.0
    return _adaptive_simpson(r.pdf, a, b, tol=1e-10)


# -- bound reports --------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    """A computed bound with named components for auditing."""

    kind: str
    value: float
    components: dict = field(default_factory=dict)
    notes: tuple = ()

    _RECOMBINE = {
        "ece-upper-naive": lambda c: c["half"] + c["abs_integral"],
        "ece-upper-invariant": lambda c: (c["half"] + c["abs_integral"]
                                          - c["k_star"] * c["p2_mass"]),
        "ece-upper-fiberwise": lambda c: (c["half"] + c["abs_integral"]
                                          - c["m"] * c["p2_mass"]),
        "ece-upper-binary": lambda c: 1.0 - c["m"],
        "ece-upper-bilipschitz": lambda c: (
            0.5 + c["k2"] / 4.0
            + min(0.0, -c["k_star"] * c["k2"] * c["p2_mass"] * c["min_orbit_mass"])),
        "ece-lower": lambda c: c["lower_integral"],
        "accuracy-floor": lambda c: min(1.0, max(0.0, 1.0 - c["kappa_sum"]
                                                 / c["min_orbit_mass"])),
        "ece-lower-lipschitz": lambda c: (c["min_orbit_mass"] / c["lipschitz"]
                                          * c["m_prime"] ** 2 / 2.0),
        "deepsets-lipschitz": lambda c: c["sigma_max_pool"] * (1.0 + c["sigma_max_mix"]),
        "gence-upper": lambda c: 1.0 + c["excess"],
        "gence-sq-lower": lambda c: c["lower_integral"],
    }

    def recombined(self) -> float:
        fn = self._RECOMBINE.get(self.kind)
        if fn is None:
            raise KeyError(f"no audit formula for kind {self.kind!r}")
        return float(fn(self.components))

    def audit(self) -> bool:
        return abs(self.recombined() - self.value) <= AUDIT_TOL


# -- classification bounds -------------------------------------------------------


def ece_upper_naive(r: ConfidenceDensity) -> BoundReport:
    """1/2 + E_r|1/2 - p|: the hedging bound for an unconstrained model."""
    integral = density_expectation_abs_half(r)
    return BoundReport(kind="ece-upper-naive", value=0.5 + integral,
                       components={"half": 0.5, "abs_integral": integral})


def ece_upper_invariant(r: ConfidenceDensity, k_star: float,
                        p2_mass: float) -> BoundReport:
    """Hedging bound minus the cheapest nonzero orbit dissent times P2 mass."""
    if not 0.0 <= k_star <= 1.0:
        raise ValueError("k_star must lie in [0, 1]")
    if not 0.0 <= p2_mass <= 1.0:
        raise ValueError("p2_mass must lie in [0, 1]")
    integral = density_expectation_abs_half(r)
    value = 0.5 + integral - k_star * p2_mass
    notes = ()
    if k_star == 0.0:
        notes = ("k_star is zero; the bound degenerates to the unconstrained one",)
    return BoundReport(kind="ece-upper-invariant", value=value,
                       components={"half": 0.5, "abs_integral": integral,
                                   "k_star": k_star, "p2_mass": p2_mass},
                       notes=notes)


def ece_upper_fiberwise(r: ConfidenceDensity, m: float, p2_mass: float) -> BoundReport:
    """Hedging bound minus the minimum fiber-wise dissent times P2 mass."""
    if not 0.0 <= m <= 1.0:
        raise ValueError("m must lie in [0, 1]")
    integral = density_expectation_abs_half(r)
    return BoundReport(kind="ece-upper-fiberwise", value=0.5 + integral - m * p2_mass,
                       components={"half": 0.5, "abs_integral": integral,
                                   "m": m, "p2_mass": p2_mass})


def ece_upper_binary(m_or_kstar: float) -> BoundReport:
    """Binary tasks: calibration error is at most 1 - m."""
    if not 0.0 <= m_or_kstar <= 1.0:
        raise ValueError("dissent must lie in [0, 1]")
    return BoundReport(kind="ece-upper-binary", value=1.0 - m_or_kstar,
                       components={"m": m_or_kstar})


def ece_upper_bilipschitz(k2: float, k_star: float, p2_mass: float,
                          min_orbit_mass: float) -> BoundReport:
    """1/2 + K2/4 + min(0, -k* K2 P2 q_min) for a bi-Lipschitz confidence head."""
    if k2 <= 0:
        raise ValueError("K2 must be positive")
    correction = min(0.0, -k_star * k2 * p2_mass * min_orbit_mass)
    return BoundReport(kind="ece-upper-bilipschitz",
                       value=0.5 + k2 / 4.0 + correction,
                       components={"k2": k2, "k_star": k_star, "p2_mass": p2_mass,
                                   "min_orbit_mass": min_orbit_mass})


def ece_lower(r: ConfidenceDensity, m: float) -> BoundReport:
    """integral_0^m r(p) (m - p) dp: calibration floor given accuracy floor m."""
    if not 0.0 <= m <= 1.0:
        raise ValueError("m must lie in [0, 1]")
    integral = density_lower_integral(r, m)
    return BoundReport(kind="ece-lower", value=integral,
                       components={"lower_integral": integral, "m": m})


def m_prime(ds: WeightedDataset, group: FiniteGroup,
            tol: float = DEFAULT_ORBIT_TOL, orbits=None) -> BoundReport:
    """Fiber-free accuracy floor: 1 - (summed minority dissent) / (least orbit mass).

    Clamped to [0, 1]; a note flags clamping, which happens when the least
    orbit mass is small relative to the dissent.
    """
    if orbits is None:
        orbits = decompose_orbits(ds, group, tol)
    min_orbit_mass = float(orbits.masses.min())
    if min_orbit_mass <= 0:
        raise ValueError("least orbit mass is zero")
    kappa_sum = cls_error_upper(ds, group, tol, orbits=orbits)
    raw = 1.0 - kappa_sum / min_orbit_mass
    value = min(1.0, max(0.0, raw))
    notes = ()
    if raw < 0.0:
        notes = (f"raw floor {raw:.6g} clamped to 0",)
    return BoundReport(kind="accuracy-floor", value=value,
                       components={"kappa_sum": kappa_sum,
                                   "min_orbit_mass": min_orbit_mass},
                       notes=notes)


def ece_lower_lipschitz(lipschitz: float, m_prime_value: float,
                        min_orbit_mass: float) -> BoundReport:
    """(q_min / K) * m'^2 / 2: fiber-free calibration floor for K-Lipschitz heads."""
    if lipschitz <= 0:
        raise ValueError("Lipschitz constant must be positive")
    value = min_orbit_mass / lipschitz * m_prime_value ** 2 / 2.0
    return BoundReport(kind="ece-lower-lipschitz", value=value,
                       components={"lipschitz": lipschitz, "m_prime": m_prime_value,
                                   "min_orbit_mass": min_orbit_mass})


def deepsets_lipschitz(n: int) -> tuple[BoundReport, "DeepSetsLayer"]:
    """Lipschitz constant of the shallow permutation-invariant readout net.

    The mixing layer tanh(l1) I + tanh(l2) 11^T has top singular value at
    most 1 + n; the pooling row 1^T has singular value sqrt(n); ReLU is
    1-Lipschitz.  Composition gives K = sqrt(n) (1 + n).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sigma_pool = math.sqrt(n)
    sigma_mix = float(n)
    report = BoundReport(kind="deepsets-lipschitz",
                         value=sigma_pool * (1.0 + sigma_mix),
                         components={"sigma_max_pool": sigma_pool,
                                     "sigma_max_mix": sigma_mix, "n": float(n)})
    return report, DeepSetsLayer(n)


@dataclass(frozen=True)
class DeepSetsLayer:
    """Constructor for the permutation-equivariant mixing layer."""

    n: int

    def weight(self, lam1: float, lam2: float) -> np.ndarray:
        return (math.tanh(lam1) * np.eye(self.n)
                + math.tanh(lam2) * np.ones((self.n, self.n)))

    def pool(self, lam3: float) -> np.ndarray:
        return math.tanh(lam3) * np.ones((1, self.n))


# -- regression calibration bounds ------------------------------------------------


def _dispersion_norm_sq(s) -> float:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s <= 0):
        raise ValueError("variance components must be positive")
    return float((2.0 * s / math.pi).sum())


def gence_upper(fiber_reports) -> BoundReport:
    """1 + sum over fibers of mass * err / ||sqrt(2 s / pi)||^2.

    ``fiber_reports`` is a sequence of (mass, regression error, variance)
    triples; the errors may come from the invariant (mass-weighted orbit
    variance) or equivariant orbit bounds, so one calculator serves both.
    """
    masses, parts = [], []
    for mass, err, s in fiber_reports:
        if err < 0:
            raise ValueError("fiber regression error must be nonnegative")
        masses.append(float(mass))
        parts.append(float(mass) * float(err) / _dispersion_norm_sq(s))
    if abs(math.fsum(masses) - 1.0) > 1e-10:
        raise ValueError("fiber masses must sum to 1")
    excess = math.fsum(parts)
    return BoundReport(kind="gence-upper", value=1.0 + excess,
                       components={"excess": excess,
                                   "n_fibers": float(len(masses))})


def gence_sq_lower(r_s: EmpiricalDensity, m: float) -> BoundReport:
    """Scalar-variance floor: sum over atoms s < m of mass (s - m)^2 / s^2."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    s = r_s.values
    if np.any(s <= 0):
        raise ValueError("variance atoms must be positive")
    below = s < m
    integral = float((r_s.masses[below] * (s[below] - m) ** 2 / s[below] ** 2).sum())
    return BoundReport(kind="gence-sq-lower", value=integral,
                       components={"lower_integral": integral, "m": m})


# -- sample complexity --------------------------------------------------------------


def hoeffding_n(epsilon: float, delta: float) -> int:
    """Smallest n with 2 exp(-2 n eps^2) <= delta."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0.0 < delta < 2.0:
        raise ValueError("delta must lie in (0, 2)")
    return max(1, math.ceil(math.log(2.0 / delta) / (2.0 * epsilon ** 2)))
