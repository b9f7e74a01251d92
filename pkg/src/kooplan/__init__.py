"""kooplan: Koopman-operator system identification fused with a predictive,
collision-aware RRT planner and a manipulator/debris simulator."""

from .koopman import (
    CompositeState,
    LiftedOperator,
    SnapshotDataset,
    Trajectory,
    build_snapshots,
    fit_edmd,
    pinv,
    predict_rollout,
    prediction_loss,
    step_lifted,
)
from .observables import (
    Dictionary,
    EncoderParams,
    compose_composite,
    fourier_dictionary,
    fourier_dictionary_from_data,
    identity_dictionary,
    init_encoder,
    lift,
    lift_jacobian_params,
    lift_jacobian_state,
    polynomial_dictionary,
    rbf_dictionary,
    rbf_dictionary_from_data,
    trained_dictionary,
)

__all__ = [
    "CompositeState",
    "Trajectory",
    "SnapshotDataset",
    "LiftedOperator",
    "build_snapshots",
    "pinv",
    "fit_edmd",
    "step_lifted",
    "predict_rollout",
    "prediction_loss",
    "Dictionary",
    "EncoderParams",
    "identity_dictionary",
    "polynomial_dictionary",
    "rbf_dictionary",
    "rbf_dictionary_from_data",
    "fourier_dictionary",
    "fourier_dictionary_from_data",
    "trained_dictionary",
    "compose_composite",
    "init_encoder",
    "lift",
    "lift_jacobian_state",
    "lift_jacobian_params",
]

__version__ = "0.1.0"
