"""Finite-time Lyapunov analysis of two-timescale ODE systems."""

__version__ = "0.1.0"

from .bench import SYSTEMS, make_system, reference_manifold
from .diagnose import (
    DiagnosisOptions,
    Region,
    check_two_timescale,
    cone_invariance_check,
    convergence_rate,
    exponential_bounds,
    select_cutoff,
    spectral_gap_scan,
    vector_alignment,
)
from .dsl import VectorField, linear_field, load_field, parse_field
from .ildm import ildm_complement, ildm_point
from .integrate import Tolerance, flow, trajectory, transition_chain
from .lyap import (
    build_splitting,
    compute_ftle,
    lyapunov_subspace,
    principal_angles,
    subspace_distance,
    subspace_ftles,
)
from .manifold import (
    Parametrization,
    SolverSchedule,
    invariance_percent,
    solve_manifold,
    solve_manifold_point,
)
