"""Monte Carlo simulator of a measurement-based feedback loop that
prepares and stabilizes photon-number states of a cavity field.

The loop combines weak dispersive qubit measurements of the photon
number, a Bayesian filter that tracks the field under detector
imperfections and transport delay, and a Lyapunov controller driving
bounded coherent injections.
"""

__version__ = "0.1.0"

from .config import LoopConfig, parse_config
from .controller import ControlDecision, LyapunovWeights, build_lambda, distance, optimal_alpha
from .dissipation import RelaxationModel, build_propagator, relax
from .estimator import (
    EstimatorState,
    advance_iteration,
    control_state,
    update_on_event,
)
from .experiment import (
    EnsembleStats,
    TrajectoryRecord,
    run_ensemble,
    run_feedback_trajectory,
    run_jump_recovery,
    run_trial_and_error,
    tune_lambda,
)
from .fock import (
    DensityMatrix,
    coherent_state,
    displacement_exact,
    displacement_quadratic_terms,
    fock_state,
    ladder_operators,
)
from .measurement import (
    DetectionEvent,
    ImperfectionModel,
    RamseySetting,
    interact_and_report,
    povm_operators,
)
from .reconstruction import ProbeRecord, collect_probes, ml_reconstruct

__all__ = [
    "LoopConfig",
    "parse_config",
    "ControlDecision",
    "LyapunovWeights",
    "build_lambda",
    "distance",
    "optimal_alpha",
    "RelaxationModel",
    "build_propagator",
    "relax",
    "EstimatorState",
    "advance_iteration",
    "control_state",
    "update_on_event",
    "EnsembleStats",
    "TrajectoryRecord",
    "run_ensemble",
    "run_feedback_trajectory",
    "run_jump_recovery",
    "run_trial_and_error",
    "tune_lambda",
    "DensityMatrix",
    "coherent_state",
    "displacement_exact",
    "displacement_quadratic_terms",
    "fock_state",
    "ladder_operators",
    "DetectionEvent",
    "ImperfectionModel",
    "RamseySetting",
    "interact_and_report",
    "povm_operators",
    "ProbeRecord",
    "collect_probes",
    "ml_reconstruct",
]
