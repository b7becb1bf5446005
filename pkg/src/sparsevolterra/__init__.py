"""Sparse identification of second-order Volterra systems with exponential atoms."""

from .atoms import (
    AtomCatalog,
    PoleGrid,
    atomic_l1_cost,
    augment_grid,
    build_catalog,
    build_dictionary,
    build_grid,
    complex_coeffs,
    output_dictionary,
    real_coeffs,
)
from .data import Dataset, Metrics, add_uniform_noise, compute_metrics, load_report, load_signals, save_report, save_signals
from .model import (
    AtomicModel,
    FirstOrderAtom,
    SecondOrderAtom,
    VolterraKernels,
    eval_kernels,
    regression_matrix,
    simulate,
    stack,
    unstack,
)
from .presets import preset_model
from .solvers import (
    Infeasible,
    MaxIterations,
    NodeBudgetExceeded,
    Problem,
    SolveResult,
    build_problem,
    extract_support,
    solve_fw,
    solve_l1,
    solve_mip,
)

__version__ = "0.1.0"
