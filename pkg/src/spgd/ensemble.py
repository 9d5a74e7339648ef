"""Particle approximation of a parameter measure.

An ensemble is an (M, d) stack of parameter vectors; prediction averages
the base classifiers over the stack. A residual transport map is the
recorded layer stack (coeff_k, sample_k): applying layer k moves every
particle by coeff_k * grad_margin(theta, x_k, y_k), so a map replays a
momentum-free training run from its seed particles.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .model import ModelSpec, draw_params, forward_many, grad_margin_many, targets_for

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or schema-incompatible checkpoint file."""


class FingerprintError(ValueError):
    """Transport map applied against a dataset it was not recorded on."""


@dataclass
class ParticleEnsemble:
    spec: ModelSpec
    particles: np.ndarray

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=np.float64)
        if self.particles.ndim != 2 or self.particles.shape[0] < 1:
            raise ValueError("particles must be a nonempty (M, d) matrix")
        if self.particles.shape[1] != self.spec.param_dim:
            raise ValueError(
                f"particle width {self.particles.shape[1]} != param_dim {self.spec.param_dim}"
            )
        if not np.isfinite(self.particles).all():
            raise ValueError("particles contain non-finite entries")

    @property
    def m(self) -> int:
        return self.particles.shape[0]


def init_ensemble(spec: ModelSpec, m: int, seed: int) -> ParticleEnsemble:
    """M i.i.d. parameter draws from the init distribution, one shared stream.

    The first particle equals ``init_params(spec, seed)``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    return ParticleEnsemble(spec, np.stack([draw_params(spec, rng) for _ in range(m)]))


def predict_mean_many(ens: ParticleEnsemble, X: np.ndarray) -> np.ndarray:
    """Particle average of forward outputs: (J,) scalar head, (J, c) softmax."""
    return forward_many(ens.spec, ens.particles, np.atleast_2d(X)).mean(axis=0)


def predict_mean(ens: ParticleEnsemble, x: np.ndarray):
    out = predict_mean_many(ens, np.asarray(x, dtype=np.float64)[None, :])
    if ens.spec.output == "tanh":
        return float(out[0])
    return out[0]


def classify_many(ens: ParticleEnsemble, X: np.ndarray) -> np.ndarray:
    """Predicted class indices; binary score >= 0 maps to class 1, argmax otherwise."""
    out = predict_mean_many(ens, X)
    if ens.spec.output == "tanh":
        return (out >= 0).astype(np.int64)
    return np.argmax(out, axis=-1)


def classify(ens: ParticleEnsemble, x: np.ndarray) -> int:
    return int(classify_many(ens, np.asarray(x, dtype=np.float64)[None, :])[0])


def dataset_fingerprint(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.features).tobytes())
    h.update(np.ascontiguousarray(ds.labels).tobytes())
    h.update(f"{ds.num_classes}:{ds.encoding}".encode())
    return h.hexdigest()


@dataclass
class ResidualLayer:
    coeff: float
    sample_index: int


@dataclass
class ResidualTransportMap:
    """Ordered residual layers; an empty stack is the identity map.

    ``replayable`` is False when the run that produced the map (momentum,
    mini-batches) cannot be represented by single-sample layers; such maps
    refuse application instead of replaying something wrong.
    """

    spec: ModelSpec
    layers: list = field(default_factory=list)
    dataset_fingerprint: str = ""
    replayable: bool = True


def apply_transport(tmap: ResidualTransportMap, seeds: np.ndarray, dataset: Dataset) -> np.ndarray:
    """Push seed particles through the layer stack, in recording order."""
    if not tmap.replayable:
        raise ValueError("transport map is flagged non-replayable (momentum or mini-batch run)")
    if tmap.dataset_fingerprint and tmap.dataset_fingerprint != dataset_fingerprint(dataset):
        raise FingerprintError("dataset does not match the map's recorded fingerprint")
    seeds = np.asarray(seeds, dtype=np.float64)
    if seeds.ndim != 2 or seeds.shape[1] != tmap.spec.param_dim:
        raise ValueError(f"seed matrix has shape {seeds.shape}, expected (*, {tmap.spec.param_dim})")
    targets = targets_for(tmap.spec, dataset.labels)
    cur = seeds.copy()
    for layer in tmap.layers:
        j = layer.sample_index
        if not 0 <= j < dataset.n_samples:
            raise ValueError(f"layer sample index {j} outside dataset")
        g = grad_margin_many(tmap.spec, cur, dataset.features[j : j + 1],
                             targets[j : j + 1])[:, 0, :]
        cur += layer.coeff * g
    return cur


def _hex_values(a: np.ndarray) -> list:
    return [struct.pack(">d", v).hex() for v in np.asarray(a, dtype=np.float64).ravel()]


def _unhex_values(vals: list) -> np.ndarray:
    return np.array([struct.unpack(">d", bytes.fromhex(v))[0] for v in vals])


def save_checkpoint(ens: ParticleEnsemble, path, meta: dict | None = None) -> None:
    """Write the ensemble as JSON with hex-encoded binary64 particle values."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "spec": ens.spec.to_dict(),
        "m": ens.m,
        "d": ens.spec.param_dim,
        "particles": _hex_values(ens.particles),
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple:
    """Read a checkpoint; returns (ensemble, meta). Round-trip is bit-exact."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint schema in {path}")
    try:
        spec = ModelSpec.from_dict(doc["spec"])
        m, d = int(doc["m"]), int(doc["d"])
        values = _unhex_values(doc["particles"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    if d != spec.param_dim or values.size != m * d:
        raise CheckpointError(f"checkpoint {path}: stored sizes disagree with the model spec")
    return ParticleEnsemble(spec, values.reshape(m, d)), doc.get("meta", {})


def save_transport_map(tmap: ResidualTransportMap, path) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "spec": tmap.spec.to_dict(),
        "fingerprint": tmap.dataset_fingerprint,
        "replayable": tmap.replayable,
        "layers": [[struct.pack(">d", l.coeff).hex(), int(l.sample_index)] for l in tmap.layers],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_transport_map(path) -> ResidualTransportMap:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read transport map {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported transport-map schema in {path}")
    try:
        layers = [ResidualLayer(struct.unpack(">d", bytes.fromhex(c))[0], int(j))
                  for c, j in doc["layers"]]
        return ResidualTransportMap(ModelSpec.from_dict(doc["spec"]), layers,
                                    doc.get("fingerprint", ""), bool(doc.get("replayable", True)))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed transport map {path}: {exc}") from exc
