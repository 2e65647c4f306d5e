"""Open quantum dynamics on the two-ring register."""

from .operators import (
    Generator,
    JumpOperator,
    build_classical_jumps,
    build_rk_jumps,
    cycle_generators,
    mixed_generator,
)
from .states import (
    build_rk_state,
    dense_null_dim,
    ensemble_density,
    integrate_density,
    negativity,
    steady_state,
    steady_state_dense,
)
from .trajectories import CycleEvolver, NumericalFailure, QuantumEnsemble, evolve_trajectory, run_quantum_ensemble

__all__ = [
    "Generator",
    "JumpOperator",
    "build_classical_jumps",
    "build_rk_jumps",
    "cycle_generators",
    "mixed_generator",
    "build_rk_state",
    "dense_null_dim",
    "ensemble_density",
    "integrate_density",
    "negativity",
    "steady_state",
    "steady_state_dense",
    "CycleEvolver",
    "NumericalFailure",
    "evolve_trajectory",
    "QuantumEnsemble",
    "run_quantum_ensemble",
]
