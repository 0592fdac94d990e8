"""Cavity-method solver for ferromagnetic Ising models on random k-regular
multispecies graphs, with exact, graph-sampling and Monte Carlo oracles."""

__version__ = "0.1.0"

from .cavity import (
    f_beta,
    fixed_point_nonneg,
    fixed_point_zero_field_positive,
    high_temp_contraction_check,
    iterate,
    solve,
    trajectory,
)
from .errors import (
    CriticalPointError,
    FeasibilityError,
    MultibetheError,
    NumericError,
    RegimeError,
    SamplingError,
    SizeError,
    SpecError,
    StructuralError,
)
from .model import (
    ModelSpec,
    class_edge_set,
    feasible_sizes,
    figure_one_spec,
    is_simply_cyclic,
    load_spec,
    regular_spec,
    save_spec,
    star_walk_reach,
    validate_spec,
)
from .observables import (
    bethe_pressure,
    edge_correlation,
    magnetization,
    pressure_beta_derivative,
    report,
    spontaneous_magnetization,
)
from .spectral import build_M, build_Mbar, critical_beta, critical_beta_bounds, spectral_radius

__all__ = [name for name in dir() if not name.startswith("_")]
