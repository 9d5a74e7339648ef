"""Single-model SGD baselines.

The same model families trained one parameter vector at a time, either on
standard cross-entropy or on the same margin surrogate the particle loops
use. With the surrogate loss, momentum matched, and a shared seed, the
trajectory coincides step for step with the particle loop run at M = 1:
optimizing a point mass is plain SGD.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .diagnostics import accuracy, empirical_loss, optimality_norm, smooth_margin
from .ensemble import ParticleEnsemble
from .loss import LOSS_KINDS, LossSpec, eval_loss
from .model import (
    ModelSpec,
    cross_entropy_many,
    ensemble_margin_and_grads,
    grad_cross_entropy_many,
    init_params,
    targets_for,
)
from .optimizer import (
    SCHEDULES,
    DivergenceError,
    TrainTrace,
    learning_rate_at,
    sample_stream,
)

BASELINE_LOSSES = ("cross_entropy",) + LOSS_KINDS


@dataclass(frozen=True)
class BaselineConfig:
    spec: ModelSpec
    steps: int
    lr: float
    loss: str = "cross_entropy"
    schedule: str = "constant"
    momentum: float = 0.0
    batch_size: int = 1
    seed: int = 0
    eval_every: int = 0
    alpha: float = 0.05

    def __post_init__(self):
        if self.loss not in BASELINE_LOSSES:
            raise ValueError(f"unknown baseline loss {self.loss!r}")
        if self.steps < 0 or self.lr <= 0 or self.batch_size < 1 or self.seed < 0:
            raise ValueError("invalid baseline config")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.loss == "cross_entropy" and self.spec.output != "softmax":
            raise ValueError("cross-entropy baseline needs a softmax head")


def _ce_value(spec: ModelSpec, params: np.ndarray, ds: Dataset, onehot: np.ndarray) -> float:
    return float(cross_entropy_many(spec, params[None, :], ds.features, onehot).mean())


def _ce_grad_norm(spec: ModelSpec, params: np.ndarray, ds: Dataset, onehot: np.ndarray) -> float:
    g = grad_cross_entropy_many(spec, params[None, :], ds.features, onehot)[0].mean(axis=0)
    return float(g @ g)


def _record(trace: TrainTrace, step: int, params: np.ndarray, ds: Dataset,
            config: BaselineConfig, surrogate: LossSpec | None, onehot) -> None:
    dirac = ParticleEnsemble(config.spec, params[None, :])
    if surrogate is not None:
        loss_val = empirical_loss(dirac, ds, surrogate)
        opt = optimality_norm(dirac, ds, surrogate)
    else:
        loss_val = _ce_value(config.spec, params, ds, onehot)
        opt = _ce_grad_norm(config.spec, params, ds, onehot)
    if not np.isfinite(loss_val):
        trace.records.append({"step": step, "loss": loss_val})
        raise DivergenceError(f"baseline objective diverged at step {step}", trace)
    trace.records.append({
        "step": step,
        "loss": loss_val,
        "accuracy": accuracy(dirac, ds),
        "optimality_norm": opt,
        "smooth_margin": smooth_margin(dirac, ds, config.alpha),
    })


def train_single(config: BaselineConfig, dataset: Dataset) -> tuple:
    """Vanilla (optionally Nesterov) SGD on one model; returns (params, trace)."""
    spec = config.spec
    surrogate = None if config.loss == "cross_entropy" else LossSpec(config.loss)
    X = dataset.features
    margin_targets = targets_for(spec, dataset.labels)
    onehot = np.eye(spec.num_classes)[dataset.labels] if spec.output == "softmax" else None
    params = init_params(spec, config.seed)
    velocity = np.zeros_like(params)
    rng = sample_stream(config.seed)
    gamma = config.momentum
    trace = TrainTrace()
    _record(trace, 0, params, dataset, config, surrogate, onehot)
    for k in range(config.steps):
        idx = rng.integers(0, dataset.n_samples, size=config.batch_size)
        lr_k = learning_rate_at(config, k)
        point = params if gamma == 0.0 else params + gamma * velocity
        if surrogate is not None:
            margins, grads = ensemble_margin_and_grads(spec, point[None, :], X[idx],
                                                       margin_targets[idx])
            _, lp, _ = eval_loss(surrogate, -margins)
            if config.batch_size == 1:
                coeff = lr_k * float(lp[0])
                upd = coeff * grads[0, 0, :]
            else:
                upd = lr_k * (np.einsum("b,bd->d", lp, grads[0]) / config.batch_size)
        else:
            g = grad_cross_entropy_many(spec, point[None, :], X[idx], onehot[idx])[0]
            upd = -lr_k * g.mean(axis=0)
        if not np.isfinite(upd).all():
            raise DivergenceError(f"non-finite baseline update at step {k}", trace)
        if gamma == 0.0:
            velocity[:] = upd
        else:
            velocity *= gamma
            velocity += upd
        params += velocity
        if (config.eval_every > 0 and (k + 1) % config.eval_every == 0
                and k + 1 < config.steps) or k + 1 == config.steps:
            _record(trace, k + 1, params, dataset, config, surrogate, onehot)
    return params, trace
