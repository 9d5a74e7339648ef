"""Particle training loops.

``train_practical`` is the workhorse: fixed seed particles, one
margin-weighted gradient step per draw, optional Nesterov momentum and a
scalar preconditioner. ``train_resampling`` is the reference residual-map
builder: every step draws fresh seed particles and pushes them through the
recorded layer stack before extending it, which costs O(T^2) gradient
evaluations and is intended for small step counts.

Both loops derive their randomness from the config seed: particle draws
consume ``default_rng(seed)`` and sample indices consume
``default_rng([seed, 1])``, so runs that share a seed share the sample
sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .diagnostics import accuracy, empirical_loss, optimality_norm, smooth_margin
from .ensemble import (
    ParticleEnsemble,
    ResidualLayer,
    ResidualTransportMap,
    apply_transport,
    dataset_fingerprint,
    init_ensemble,
)
from .loss import LossSpec, eval_loss
from .model import ModelSpec, ensemble_margin_and_grads, targets_for

SCHEDULES = ("constant", "inverse_sqrt")

LOSS_CEILING = 1e12


class DivergenceError(RuntimeError):
    """Training aborted on a non-finite or exploding objective."""

    def __init__(self, message: str, trace: "TrainTrace | None" = None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec
    steps: int
    lr: float
    schedule: str = "constant"
    momentum: float = 0.0
    precond: float = 1.0
    batch_size: int = 1
    seed: int = 0
    eval_every: int = 0
    alpha: float = 0.05

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.precond <= 0:
            raise ValueError("preconditioner must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass
class MomentumState:
    velocity: np.ndarray

    @classmethod
    def zeros(cls, m: int, d: int) -> "MomentumState":
        return cls(np.zeros((m, d)))


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def write_jsonl(self, path) -> None:
        import json

        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")


def learning_rate_at(config: TrainConfig, k: int) -> float:
    if config.schedule == "constant":
        return config.lr
    return config.lr / np.sqrt(k + 1.0)


def sample_stream(seed: int) -> np.random.Generator:
    """The index-drawing stream shared by every loop run under this seed."""
    return np.random.default_rng([seed, 1])


def _as_batch(spec: ModelSpec, x, y) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    xb = x[None, :] if x.ndim == 1 else x
    y = np.asarray(y, dtype=np.float64)
    if spec.output == "tanh":
        yb = y.reshape(-1)
    else:
        yb = y[None, :] if y.ndim == 1 else y
    return xb, yb


def stochastic_update_direction(ens: ParticleEnsemble, loss: LossSpec, sample) -> tuple:
    """Per-particle ascent-on-margin direction for one sample.

    Returns (direction (M, d), a) with a = l'(-margin of the mean
    prediction); the direction is a * grad_margin per particle, i.e. the
    negative of the stochastic gradient integrand.
    """
    xb, yb = _as_batch(ens.spec, *sample)
    if xb.shape[0] != 1:
        raise ValueError("stochastic_update_direction takes a single sample")
    margins, grads = ensemble_margin_and_grads(ens.spec, ens.particles, xb, yb)
    _, lp, _ = eval_loss(loss, -margins)
    a = float(lp[0])
    return a * grads[:, 0, :], a


def _step_inplace(spec: ModelSpec, particles: np.ndarray, velocity: np.ndarray,
                  loss: LossSpec, lr_k: float, gamma: float, precond: float,
                  xb: np.ndarray, yb: np.ndarray, step_index: int):
    """One update; returns the replay coefficient (None for mini-batches).

    Look-ahead momentum: the direction is evaluated at particles + gamma *
    velocity, then velocity <- gamma * velocity + step and particles +=
    velocity. With gamma = 0 this is exactly particles += coeff * grad.
    """
    point = particles if gamma == 0.0 else particles + gamma * velocity
    margins, grads = ensemble_margin_and_grads(spec, point, xb, yb)
    _, lp, _ = eval_loss(loss, -margins)
    bsz = xb.shape[0]
    if bsz == 1:
        coeff = lr_k * float(lp[0]) / precond
        upd = coeff * grads[:, 0, :]
    else:
        coeff = None
        upd = (lr_k / precond) * (np.einsum("b,mbd->md", lp, grads) / bsz)
    if gamma == 0.0:
        velocity[:] = upd
    else:
        velocity *= gamma
        velocity += upd
    if not np.isfinite(velocity).all():
        bad = np.unique(np.where(~np.isfinite(velocity))[0])
        raise DivergenceError(
            f"non-finite update at step {step_index} for particles {bad.tolist()}"
        )
    particles += velocity
    return coeff


def spgd_step(ens: ParticleEnsemble, momentum: MomentumState, config: TrainConfig,
              sample, step_index: int) -> tuple:
    """One out-of-place update step; returns (ensemble, momentum)."""
    xb, yb = _as_batch(ens.spec, *sample)
    particles = ens.particles.copy()
    velocity = np.asarray(momentum.velocity, dtype=np.float64).copy()
    if velocity.shape != particles.shape:
        raise ValueError("momentum state shape does not match the ensemble")
    _step_inplace(ens.spec, particles, velocity, config.loss,
                  learning_rate_at(config, step_index), config.momentum,
                  config.precond, xb, yb, step_index)
    return ParticleEnsemble(ens.spec, particles), MomentumState(velocity)


def _record(trace: TrainTrace, step: int, ens: ParticleEnsemble, ds: Dataset,
            config: TrainConfig) -> None:
    loss_val = empirical_loss(ens, ds, config.loss)
    if not np.isfinite(loss_val) or loss_val > LOSS_CEILING:
        trace.records.append({"step": step, "loss": loss_val})
        raise DivergenceError(f"objective diverged at step {step}: {loss_val}", trace)
    trace.records.append({
        "step": step,
        "loss": loss_val,
        "accuracy": accuracy(ens, ds),
        "optimality_norm": optimality_norm(ens, ds, config.loss),
        "smooth_margin": smooth_margin(ens, ds, config.alpha),
    })


def _eval_boundary(k1: int, steps: int, eval_every: int) -> bool:
    if k1 == steps:
        return True
    return eval_every > 0 and k1 % eval_every == 0


def train_practical(spec: ModelSpec, dataset: Dataset, config: TrainConfig,
                    m: int, init: np.ndarray | None = None) -> tuple:
    """Fixed-seed particle training; returns (ensemble, transport map, trace).

    ``init`` overrides the seed particles (the initial measure is a free
    input of the method); by default they are drawn from the standard init
    distribution under the config seed. The (coeff, sample) layer stack is
    recorded only for momentum-free, single-sample runs; otherwise the
    returned map is flagged non-replayable and carries no layers.
    """
    if dataset.n_samples < 1:
        raise ValueError("dataset is empty")
    X = dataset.features
    targets = targets_for(spec, dataset.labels)
    if init is None:
        ens = init_ensemble(spec, m, config.seed)
    else:
        ens = ParticleEnsemble(spec, np.array(init, dtype=np.float64))
        if ens.m != m:
            raise ValueError(f"init has {ens.m} particles, expected {m}")
    particles = ens.particles  # updated in place; ens always reflects current state
    velocity = np.zeros_like(particles)
    rng = sample_stream(config.seed)
    replayable = config.momentum == 0.0 and config.batch_size == 1
    layers: list = []
    trace = TrainTrace()
    _record(trace, 0, ens, dataset, config)
    for k in range(config.steps):
        idx = rng.integers(0, dataset.n_samples, size=config.batch_size)
        coeff = _step_inplace(spec, particles, velocity, config.loss,
                              learning_rate_at(config, k), config.momentum,
                              config.precond, X[idx], targets[idx], k)
        if replayable:
            layers.append(ResidualLayer(coeff, int(idx[0])))
        if _eval_boundary(k + 1, config.steps, config.eval_every):
            _record(trace, k + 1, ens, dataset, config)
    tmap = ResidualTransportMap(spec, layers, dataset_fingerprint(dataset), replayable)
    return ens, tmap, trace


def train_resampling(spec: ModelSpec, dataset: Dataset, config: TrainConfig,
                     m: int, resample: bool = True,
                     init: np.ndarray | None = None) -> tuple:
    """Residual-map training with per-step seed redraws.

    Returns (transport map, ensemble, trace); the ensemble is the last
    seed batch pushed through the full map. With ``resample=False`` the
    same seeds are pushed every step, which reproduces ``train_practical``
    under a shared seed; only that mode accepts an ``init`` override (a
    fixed matrix cannot be redrawn). Momentum and mini-batches are
    unsupported here: the layer stack could not replay them.
    """
    if config.momentum != 0.0:
        raise ValueError("train_resampling requires momentum = 0")
    if config.batch_size != 1:
        raise ValueError("train_resampling requires batch_size = 1")
    if init is not None and resample:
        raise ValueError("explicit seed particles require resample=False")
    if dataset.n_samples < 1:
        raise ValueError("dataset is empty")
    X = dataset.features
    targets = targets_for(spec, dataset.labels)
    particle_rng = np.random.default_rng(config.seed)

    def draw_seeds():
        from .model import draw_params

        return np.stack([draw_params(spec, particle_rng) for _ in range(m)])

    if resample:
        base_seeds = None
    elif init is not None:
        base_seeds = np.array(init, dtype=np.float64)
        if base_seeds.shape != (m, spec.param_dim):
            raise ValueError(f"init must have shape ({m}, {spec.param_dim})")
    else:
        base_seeds = draw_seeds()
    rng = sample_stream(config.seed)
    tmap = ResidualTransportMap(spec, [], dataset_fingerprint(dataset), True)
    trace = TrainTrace()
    current = base_seeds if base_seeds is not None else None
    if config.steps == 0:
        current = current if current is not None else draw_seeds()
        _record(trace, 0, ParticleEnsemble(spec, current), dataset, config)
        return tmap, ParticleEnsemble(spec, current), trace
    for k in range(config.steps):
        seeds = base_seeds if base_seeds is not None else draw_seeds()
        pushed = apply_transport(tmap, seeds, dataset)
        if k == 0:
            _record(trace, 0, ParticleEnsemble(spec, pushed), dataset, config)
        idx = rng.integers(0, dataset.n_samples, size=1)
        j = int(idx[0])
        margins, grads = ensemble_margin_and_grads(spec, pushed, X[idx], targets[idx])
        _, lp, _ = eval_loss(config.loss, -margins)
        coeff = learning_rate_at(config, k) * float(lp[0]) / config.precond
        upd = coeff * grads[:, 0, :]
        if not np.isfinite(upd).all():
            raise DivergenceError(f"non-finite update at step {k}", trace)
        tmap.layers.append(ResidualLayer(coeff, j))
        current = pushed + upd
        if _eval_boundary(k + 1, config.steps, config.eval_every):
            _record(trace, k + 1, ParticleEnsemble(spec, current), dataset, config)
    return tmap, ParticleEnsemble(spec, current), trace
