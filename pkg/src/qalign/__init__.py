"""qalign: photon-pair source simulation and autonomous fiber alignment.

The package models a temperature-tuned PPLN pair source, a misalignable
fiber coupling stage with Poisson counting statistics, and two alignment
policies on top of it: a hypothesis-testing heuristic search and a soft
actor-critic agent.  Evaluation utilities score both policies with a
time-threshold accuracy curve and its exact area.
"""

from qalign.spdc import (
    CrystalConfig,
    PhaseMatchPoint,
    SpectralSummary,
    BiphotonWavefunction,
    refractive_index,
    delta_k_collinear,
    phase_matching_amplitude,
    solve_phase_match,
    spectral_summary,
    biphoton_wavefunction,
    temperature_sweep,
)
from qalign.env import (
    CouplingModel,
    RewardConfig,
    MdpConfig,
    MeasurementRecord,
    AlignmentState,
    CouplingStage,
    AlignmentEnv,
    true_rate,
)
from qalign.heuristic import (
    HeuristicConfig,
    SearchTrace,
    TraceEvent,
    HeuristicAligner,
    w_statistic,
    decision_threshold,
    run_alignment,
)
from qalign.sac import SacConfig, SacAgent, ReplayBuffer, train, evaluate_policy
from qalign.metrics import (
    TrialResult,
    RocCurve,
    PolicyComparison,
    accuracy_at,
    exact_auc,
    roc_curve,
    compare_policies,
)
from qalign.errors import (
    QalignError,
    ConfigError,
    CheckpointError,
    NumericsError,
)

__version__ = "0.1.0"

__all__ = [
    "CrystalConfig",
    "PhaseMatchPoint",
    "SpectralSummary",
    "BiphotonWavefunction",
    "refractive_index",
    "delta_k_collinear",
    "phase_matching_amplitude",
    "solve_phase_match",
    "spectral_summary",
    "biphoton_wavefunction",
    "temperature_sweep",
    "CouplingModel",
    "RewardConfig",
    "MdpConfig",
    "MeasurementRecord",
    "AlignmentState",
    "CouplingStage",
    "AlignmentEnv",
    "true_rate",
    "HeuristicConfig",
    "SearchTrace",
    "TraceEvent",
    "HeuristicAligner",
    "w_statistic",
    "decision_threshold",
    "run_alignment",
    "SacConfig",
    "SacAgent",
    "ReplayBuffer",
    "train",
    "evaluate_policy",
    "TrialResult",
    "RocCurve",
    "PolicyComparison",
    "accuracy_at",
    "exact_auc",
    "roc_curve",
    "compare_policies",
    "QalignError",
    "ConfigError",
    "CheckpointError",
    "NumericsError",
    "__version__",
]
