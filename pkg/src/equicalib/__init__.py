"""equicalib: calibration metrics and symmetry-derived calibration bounds."""

__version__ = "0.1.0"

from .groups import (FiniteGroup, GroupElement, OrbitDecomposition,
                     WeightedDataset, apply, build_group, decompose_orbits)
from .metrics import (ClassifierOutput, FiberPartition, RegressorOutput,
                      aleatoric_bleed, ece_binned, exact_fibers, gence,
                      gence_sq, quantile_fibers, regression_error)
from .bounds import (BoundReport, EmpiricalDensity, TruncatedNormalDensity,
                     deepsets_lipschitz, ece_lower, ece_lower_lipschitz,
                     ece_upper_binary, ece_upper_bilipschitz,
                     ece_upper_fiberwise, ece_upper_invariant, ece_upper_naive,
                     gence_sq_lower, gence_upper, hoeffding_n, m_prime,
                     trunc_normal_pdf)
from .symmetry import (OrbitStats, cls_error_lower, cls_error_upper,
                       equivariant_orbit_lower_bound, invariant_regression_lower,
                       majority_dissent, minority_dissent, orbit_stats_table,
                       orbit_target_stats)
from .evidential import (NIGParams, UncertaintySummary, beta_nll,
                         evidential_nll, nig_summaries, student_t_pdf)

__all__ = [name for name in dir() if not name.startswith("_")]
