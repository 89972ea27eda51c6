"""Koopman-operator system identification with analytic noise sensitivity.

Estimate lifted linear models of controlled nonlinear systems from
snapshot data, differentiate the whole estimation chain with respect to
measurement noise, and produce constant-time online predictions together
with first-order estimates of the noise-induced prediction error.
"""

from .dictionary import (
    Dictionary,
    Observable,
    build_dictionary,
    build_identity_dictionary,
    build_poly_dictionary,
    evaluate,
    evaluate_batch,
    jacobian_state,
)
from .edmd import (
    KoopmanModel,
    SnapshotSet,
    compute_B,
    compute_F,
    compute_g_a,
    eigendecompose,
    estimate_koopman,
    fit_koopman,
    predict,
    predict_mode_sum,
    truncated_pinv,
)
from .errors import DegenerateSpectrumError, NonFiniteDataError
from .experiments import (
    CaseResult,
    StudyConfig,
    TrackingController,
    emit_outputs,
    run_tracking_study,
    run_vdp_study,
    semicircle_reference,
)
from .pipeline import (
    TrainedArtifacts,
    TrajectoryLog,
    load_artifacts,
    run_closed_loop,
    save_artifacts,
    step_online,
    train_offline,
)
from .sensitivity import (
    EigenSensitivity,
    KoopmanSensitivity,
    NoiseSpec,
    build_sensitivity,
    delta_K,
    eigen_sensitivities,
    mode_term_derivative,
    partial_A,
    partial_G,
    pinv_derivative,
    prediction_error,
)
from .systems import (
    UNICYCLE,
    VAN_DER_POL,
    ContinuousSystem,
    TrainingConfig,
    generate_training_data,
    rk4_step,
    simulate,
    unicycle_derivative,
    vdp_derivative,
)

__version__ = "0.1.0"

__all__ = [
    "CaseResult",
    "ContinuousSystem",
    "DegenerateSpectrumError",
    "Dictionary",
    "EigenSensitivity",
    "KoopmanModel",
    "KoopmanSensitivity",
    "NoiseSpec",
    "NonFiniteDataError",
    "Observable",
    "SnapshotSet",
    "StudyConfig",
    "TrackingController",
    "TrainedArtifacts",
    "TrainingConfig",
    "TrajectoryLog",
    "UNICYCLE",
    "VAN_DER_POL",
    "build_dictionary",
    "build_identity_dictionary",
    "build_poly_dictionary",
    "build_sensitivity",
    "compute_B",
    "compute_F",
    "compute_g_a",
    "delta_K",
    "eigen_sensitivities",
    "eigendecompose",
    "emit_outputs",
    "estimate_koopman",
    "evaluate",
    "evaluate_batch",
    "fit_koopman",
    "generate_training_data",
    "jacobian_state",
    "load_artifacts",
    "mode_term_derivative",
    "partial_A",
    "partial_G",
    "pinv_derivative",
    "predict",
    "predict_mode_sum",
    "prediction_error",
    "rk4_step",
    "run_closed_loop",
    "run_tracking_study",
    "run_vdp_study",
    "save_artifacts",
    "semicircle_reference",
    "simulate",
    "step_online",
    "train_offline",
    "truncated_pinv",
    "unicycle_derivative",
    "vdp_derivative",
]
