"""Gradient-free ensemble training of LSTM sequence regressors.

A library and CLI for synthesizing expensive well logs from cheap ones:
an LSTM stack evaluated per ensemble member, trained by covariance-based
randomized-maximum-likelihood updates instead of backpropagation, with
parameter-smoothing and scale-faithful observation perturbations, and a
cascade scheme that predicts many targets two at a time.
"""

from .cascade import (
    CASE_STUDY_TARGET_ORDER,
    CascadePlan,
    CascadeResult,
    build_plan,
    cascade_predict,
    cascade_predict_windows,
    cascade_train,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ChannelStats,
    WellRecord,
    WindowedBatch,
    build_windows,
    load_csv,
    loo_splits,
    mse,
    synth_generate,
    window,
    write_csv,
    zscore_apply,
    zscore_fit,
    zscore_invert,
)
from .enrml import (
    EnsembleState,
    EpochMetrics,
    TrainConfig,
    TrainResult,
    enrml_step,
    init_ensemble,
    lambda_update,
    predict,
    train,
)
from .linalg import cross_covariance, ensemble_mean, spd_solve
from .network import (
    BatchNorm,
    Dense,
    Dropout,
    Lstm,
    NetworkAux,
    NetworkSpec,
    NetworkTemplate,
    NumericalBlowup,
    forward,
    forward_ensemble,
    layout,
    param_count,
)
from .perturb import (
    PerturbationConfig,
    apply_disturbance,
    compensation_term,
    perturb_observations,
    smooth_perturb,
)

__version__ = "0.1.0"

__all__ = [
    "BatchNorm",
    "CASE_STUDY_TARGET_ORDER",
    "CascadePlan",
    "CascadeResult",
    "ChannelStats",
    "Dense",
    "Dropout",
    "EnsembleState",
    "EpochMetrics",
    "Lstm",
    "NetworkAux",
    "NetworkSpec",
    "NetworkTemplate",
    "NumericalBlowup",
    "PerturbationConfig",
    "TrainConfig",
    "TrainResult",
    "WellRecord",
    "WindowedBatch",
    "apply_disturbance",
    "build_plan",
    "build_windows",
    "cascade_predict",
    "cascade_predict_windows",
    "cascade_train",
    "compensation_term",
    "cross_covariance",
    "enrml_step",
    "ensemble_mean",
    "forward",
    "forward_ensemble",
    "init_ensemble",
    "lambda_update",
    "layout",
    "load_checkpoint",
    "load_csv",
    "loo_splits",
    "mse",
    "param_count",
    "perturb_observations",
    "predict",
    "save_checkpoint",
    "smooth_perturb",
    "spd_solve",
    "synth_generate",
    "train",
    "window",
    "write_csv",
    "zscore_apply",
    "zscore_fit",
    "zscore_invert",
]
