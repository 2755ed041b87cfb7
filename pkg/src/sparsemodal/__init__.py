"""Sparse Bayesian inference of substructure stiffness loss from modal data.

The package covers the full pipeline: a parameterized structural model
(``structural``), identified modal datasets (``modal``), the hierarchical
Bayesian kernels and MAP updates (``kernels``, ``updates``), the
calibration and sparse-monitoring solvers (``solver``, with scikit-learn
style wrappers in ``estimators``), probabilistic damage assessment
(``assessment``), a synthetic benchmark generator (``synth``) and a CLI
(``sparsemodal``).
"""

from .assessment import (
    DamageCurve,
    DamageReport,
    build_report,
    damage_curve,
    damage_probability,
)
from .errors import (
    ConvergenceError,
    DegenerateDataError,
    FormatError,
    NumericalError,
)
from .estimators import SparseStiffnessMonitor, StiffnessCalibrator
from .kernels import (
    HyperState,
    PosteriorState,
    ResidualSystem,
    conditional_posterior,
    log_pseudo_evidence,
    objective_j,
    ockham_decomposition,
)
from .modal import ModalDataset, SelectionMaps, build_selection, load_dataset, save_dataset
from .solver import (
    CalibrationResult,
    MonitoringResult,
    SolverConfig,
    run_calibration,
    run_monitoring,
)
from .structural import (
    ShearBuildingSpec,
    StructuralBasis,
    assemble_stiffness,
    build_shear_building,
    load_model,
    save_model,
    solve_modes,
)
from .synth import DamageScenario, NoiseSpec, generate_dataset, make_benchmark_suite

__version__ = "0.1.0"

__all__ = [
    "CalibrationResult",
    "ConvergenceError",
    "DamageCurve",
    "DamageReport",
    "DamageScenario",
    "DegenerateDataError",
    "FormatError",
    "HyperState",
    "ModalDataset",
    "MonitoringResult",
    "NoiseSpec",
    "NumericalError",
    "PosteriorState",
    "ResidualSystem",
    "SelectionMaps",
    "ShearBuildingSpec",
    "SolverConfig",
    "SparseStiffnessMonitor",
    "StiffnessCalibrator",
    "StructuralBasis",
    "assemble_stiffness",
    "build_report",
    "build_selection",
    "build_shear_building",
    "conditional_posterior",
    "damage_curve",
    "damage_probability",
    "generate_dataset",
    "load_dataset",
    "load_model",
    "log_pseudo_evidence",
    "make_benchmark_suite",
    "objective_j",
    "ockham_decomposition",
    "run_calibration",
    "run_monitoring",
    "save_dataset",
    "save_model",
    "solve_modes",
]
