"""Recovery of simultaneously low-rank and row-wise sparse matrices from
nested linear measurements, with minimax lower-bound constructions and a
compressive phase retrieval pipeline."""

from .estimator import (
    RecoveryConfig,
    RecoveryResult,
    noise_band_check,
    recover,
    recover_doubly_sparse,
    stage1_radius,
    stage2_radius,
)
from .model import (
    NoiseModel,
    ProblemDims,
    StructuredTarget,
    derive_rng,
    gaussian_noise,
    random_target,
    read_matrix,
    write_matrix,
)
from .operators import (
    NestedOperator,
    ProbeStructure,
    RankOperator,
    RipEstimate,
    SensingMatrix,
    adjoint,
    apply,
    estimate_rip,
    gaussian_rank_operator,
    gaussian_sensing,
    load_nested_operator,
    rank_one_operator,
    save_nested_operator,
)
from .solvers import (
    DivergenceError,
    SolveReport,
    SolverConfig,
    iht_lowrank,
    iht_rowsparse,
    solve_lowrank_stage,
    solve_rowsparse_stage,
)

__version__ = "0.1.0"
