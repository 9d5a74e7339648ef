"""Infinite-ensemble classifiers trained by stochastic particle gradient descent."""

from .data import (
    Dataset,
    FoldAssignment,
    StandardizationStats,
    gen_double_circle,
    kfold_protocol,
    load_table,
    standardize,
)
from .diagnostics import (
    MarginReport,
    empirical_loss,
    margin_bound_rhs,
    margin_report,
    optimality_norm,
    smooth_margin,
    taylor_residual,
)
from .ensemble import (
    ParticleEnsemble,
    ResidualLayer,
    ResidualTransportMap,
    apply_transport,
    classify,
    init_ensemble,
    load_checkpoint,
    predict_mean,
    save_checkpoint,
)
from .loss import LossSpec, eval_loss
from .model import ModelSpec, forward, grad_margin, init_params, margin
from .optimizer import (
    MomentumState,
    TrainConfig,
    TrainTrace,
    spgd_step,
    stochastic_update_direction,
    train_practical,
    train_resampling,
)
from .baseline import BaselineConfig, train_single

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig",
    "Dataset",
    "FoldAssignment",
    "LossSpec",
    "MarginReport",
    "ModelSpec",
    "MomentumState",
    "ParticleEnsemble",
    "ResidualLayer",
    "ResidualTransportMap",
    "StandardizationStats",
    "TrainConfig",
    "TrainTrace",
    "apply_transport",
    "classify",
    "empirical_loss",
    "eval_loss",
    "forward",
    "gen_double_circle",
    "grad_margin",
    "init_ensemble",
    "init_params",
    "kfold_protocol",
    "load_checkpoint",
    "load_table",
    "margin",
    "margin_bound_rhs",
    "margin_report",
    "optimality_norm",
    "predict_mean",
    "save_checkpoint",
    "smooth_margin",
    "spgd_step",
    "standardize",
    "stochastic_update_direction",
    "taylor_residual",
    "train_practical",
    "train_resampling",
    "train_single",
]
