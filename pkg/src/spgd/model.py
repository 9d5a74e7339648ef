"""Base-classifier families: forward maps, margins, and analytic margin gradients.

Three parametric families share one flat parameter layout (layer-major,
weights before bias):

* ``linear_tanh``  h(theta, x) = tanh(w.x + b), scalar in [-1, 1]
* ``logreg``       softmax(W x + b), a point in the c-simplex
* ``mlp3``         tanh-or-softmax(W2 sigmoid(W1 x + b1) + b2)

All heavy operations are vectorized over an (M, d) stack of parameter
vectors and a (J, n) batch of inputs; the scalar-signature wrappers just
slice the batched result.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit, softmax

MODEL_KINDS = ("linear_tanh", "logreg", "mlp3")
OUTPUT_KINDS = ("tanh", "softmax")


@dataclass(frozen=True)
class ModelSpec:
    """Description of one base-classifier family.

    ``hidden_dim`` applies to mlp3 only and defaults to the input dimension.
    ``output`` is forced to "tanh" for linear_tanh and to "softmax" for
    logreg; mlp3 supports both, with "tanh" allowed only for 2 classes.
    """

    kind: str
    input_dim: int
    num_classes: int = 2
    hidden_dim: int | None = None
    output: str = "softmax"
    use_bias: bool = True

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.kind == "linear_tanh":
            object.__setattr__(self, "output", "tanh")
        elif self.kind == "logreg":
            object.__setattr__(self, "output", "softmax")
        if self.output not in OUTPUT_KINDS:
            raise ValueError(f"unknown output kind {self.output!r}")
        if self.output == "tanh" and self.num_classes != 2:
            raise ValueError("tanh (scalar) output requires exactly 2 classes")

    @property
    def hidden(self) -> int:
        return self.hidden_dim if self.hidden_dim is not None else self.input_dim

    @property
    def out_dim(self) -> int:
        """Width of the last linear layer (1 for the scalar tanh head)."""
        return 1 if self.output == "tanh" else self.num_classes

    @property
    def param_dim(self) -> int:
        n, b = self.input_dim, int(self.use_bias)
        if self.kind == "linear_tanh":
            return n + b
        if self.kind == "logreg":
            c = self.num_classes
            return c * n + b * c
        h, o = self.hidden, self.out_dim
        return h * n + b * h + o * h + b * o

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def _layout(spec: ModelSpec):
    """Yield (size, is_bias) blocks in flat order."""
    n, b = spec.input_dim, spec.use_bias
    if spec.kind == "linear_tanh":
        yield n, False
        if b:
            yield 1, True
    elif spec.kind == "logreg":
        c = spec.num_classes
        yield c * n, False
        if b:
            yield c, True
    else:
        h, o = spec.hidden, spec.out_dim
        yield h * n, False
        if b:
            yield h, True
        yield o * h, False
        if b:
            yield o, True


def bias_indices(spec: ModelSpec) -> np.ndarray:
    """Flat indices of the bias entries (empty when use_bias is off)."""
    idx, off = [], 0
    for size, is_bias in _layout(spec):
        if is_bias:
            idx.extend(range(off, off + size))
        off += size
    return np.array(idx, dtype=np.int64)


def draw_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """One parameter vector: weights ~ N(0,1), biases ~ N(0, 0.01^2)."""
    blocks = []
    for size, is_bias in _layout(spec):
        scale = 0.01 if is_bias else 1.0
        blocks.append(rng.normal(0.0, scale, size=size))
    return np.concatenate(blocks)


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    return draw_params(spec, np.random.default_rng(seed))


def targets_for(spec: ModelSpec, labels: np.ndarray) -> np.ndarray:
    """Margin targets matching the model head.

    Scalar (tanh) head: signed labels, class index 1 -> +1, index 0 -> -1.
    Softmax head: one-hot rows of shape (J, c).
    """
    labels = np.asarray(labels)
    if spec.output == "tanh":
        return np.where(labels == 1, 1.0, -1.0)
    return np.eye(spec.num_classes)[labels]


def _check_shapes(spec: ModelSpec, particles: np.ndarray, X: np.ndarray):
    if particles.ndim != 2 or particles.shape[1] != spec.param_dim:
        raise ValueError(
            f"parameter stack has shape {particles.shape}, expected (*, {spec.param_dim})"
        )
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"input batch has shape {X.shape}, expected (*, {spec.input_dim})")


def _views(spec: ModelSpec, particles: np.ndarray) -> dict:
    """Reshape the flat stack into per-layer views (no copies)."""
    m = particles.shape[0]
    n, b = spec.input_dim, spec.use_bias
    if spec.kind == "linear_tanh":
        return {
            "w": particles[:, :n],
            "b": particles[:, n] if b else None,
        }
    if spec.kind == "logreg":
        c = spec.num_classes
        return {
            "W": particles[:, : c * n].reshape(m, c, n),
            "b": particles[:, c * n :] if b else None,
        }
    h, o = spec.hidden, spec.out_dim
    off = h * n
    out = {"W1": particles[:, :off].reshape(m, h, n)}
    if b:
        out["b1"] = particles[:, off : off + h]
        off += h
    else:
        out["b1"] = None
    out["W2"] = particles[:, off : off + o * h].reshape(m, o, h)
    off += o * h
    out["b2"] = particles[:, off : off + o] if b else None
    return out


def _forward_cache(spec: ModelSpec, particles: np.ndarray, X: np.ndarray):
    """Run the forward pass, keeping what the backward pass needs.

    Returns (out, cache): out is (M, J) for the scalar head, (M, J, c) for
    softmax.
    """
    _check_shapes(spec, particles, X)
    v = _views(spec, particles)
    if spec.kind == "linear_tanh":
        z = v["w"] @ X.T
        if v["b"] is not None:
            z = z + v["b"][:, None]
        out = np.tanh(z)
        return out, {"views": v, "out": out}
    if spec.kind == "logreg":
        z = np.einsum("mcn,jn->mjc", v["W"], X)
        if v["b"] is not None:
            z = z + v["b"][:, None, :]
        p = softmax(z, axis=-1)
        return p, {"views": v, "P": p}
    u = np.einsum("mhn,jn->mjh", v["W1"], X)
    if v["b1"] is not None:
        u = u + v["b1"][:, None, :]
    s = expit(u)
    z = np.einsum("moh,mjh->mjo", v["W2"], s)
    if v["b2"] is not None:
        z = z + v["b2"][:, None, :]
    if spec.output == "tanh":
        out = np.tanh(z[..., 0])
        return out, {"views": v, "S": s, "out": out}
    p = softmax(z, axis=-1)
    return p, {"views": v, "S": s, "P": p}


def forward_many(spec: ModelSpec, particles: np.ndarray, X: np.ndarray) -> np.ndarray:
    out, _ = _forward_cache(spec, particles, X)
    return out


def forward(spec: ModelSpec, theta: np.ndarray, x: np.ndarray):
    """Single evaluation h(theta, x): float for scalar heads, (c,) for softmax."""
    out = forward_many(spec, np.atleast_2d(np.asarray(theta, dtype=np.float64)),
                       np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if spec.output == "tanh":
        return float(out[0, 0])
    return out[0, 0]


def _margins_from_out(spec: ModelSpec, out: np.ndarray, targets: np.ndarray) -> np.ndarray:
    if spec.output == "tanh":
        return out * np.asarray(targets)[None, :]
    return np.einsum("mjc,jc->mj", out, np.asarray(targets))


def margin_many(spec: ModelSpec, particles: np.ndarray, X: np.ndarray,
                targets: np.ndarray) -> np.ndarray:
    """Per-(particle, sample) margins: y*h (scalar head) or y^T h (softmax)."""
    return _margins_from_out(spec, forward_many(spec, particles, X), targets)


def margin(spec: ModelSpec, theta: np.ndarray, x: np.ndarray, y) -> float:
    t = np.asarray(y, dtype=np.float64)
    t = t[None, :] if t.ndim == 1 else t.reshape(1)
    m = margin_many(spec, np.atleast_2d(np.asarray(theta, dtype=np.float64)),
                    np.atleast_2d(np.asarray(x, dtype=np.float64)), t)
    return float(m[0, 0])


def _head_dZ(spec: ModelSpec, cache: dict, targets: np.ndarray) -> np.ndarray:
    """Gradient of the margin w.r.t. the last-layer pre-activation.

    Scalar head: d(y tanh z)/dz = y (1 - tanh^2 z), shape (M, J, 1).
    Softmax head: d(y^T p)/dz_k = p_k (y_k - y^T p), shape (M, J, c).
    """
    targets = np.asarray(targets, dtype=np.float64)
    if spec.output == "tanh":
        out = cache["out"]
        return (targets[None, :] * (1.0 - out * out))[..., None]
    p = cache["P"]
    m = np.einsum("mjc,jc->mj", p, targets)
    return p * (targets[None, :, :] - m[..., None])


def _backprop(spec: ModelSpec, cache: dict, X: np.ndarray, dZ: np.ndarray) -> np.ndarray:
    """Per-sample parameter gradients (M, J, d) from head gradients dZ (M, J, o)."""
    v = cache["views"]
    mm, jj = dZ.shape[0], dZ.shape[1]
    pieces = []
    if spec.kind == "linear_tanh":
        dz = dZ[..., 0]
        pieces.append(dz[:, :, None] * X[None, :, :])
        if v["b"] is not None:
            pieces.append(dz[..., None])
    elif spec.kind == "logreg":
        gW = np.einsum("mjc,jn->mjcn", dZ, X)
        pieces.append(gW.reshape(mm, jj, -1))
        if v["b"] is not None:
            pieces.append(dZ)
    else:
        s = cache["S"]
        dS = np.einsum("moh,mjo->mjh", v["W2"], dZ)
        dU = dS * s * (1.0 - s)
        pieces.append(np.einsum("mjh,jn->mjhn", dU, X).reshape(mm, jj, -1))
        if v["b1"] is not None:
            pieces.append(dU)
        pieces.append(np.einsum("mjo,mjh->mjoh", dZ, s).reshape(mm, jj, -1))
        if v["b2"] is not None:
            pieces.append(dZ)
    return np.concatenate(pieces, axis=2)


def _backprop_weighted(spec: ModelSpec, cache: dict, X: np.ndarray, dZ: np.ndarray,
                       weights: np.ndarray) -> np.ndarray:
    """sum_j weights_j * grad_j without materializing the (M, J, d) stack."""
    v = cache["views"]
    pieces = []
    if spec.kind == "linear_tanh":
        dz = dZ[..., 0]
        pieces.append(np.einsum("mj,jn,j->mn", dz, X, weights))
        if v["b"] is not None:
            pieces.append(np.einsum("mj,j->m", dz, weights)[:, None])
    elif spec.kind == "logreg":
        mm = dZ.shape[0]
        pieces.append(np.einsum("mjc,jn,j->mcn", dZ, X, weights).reshape(mm, -1))
        if v["b"] is not None:
            pieces.append(np.einsum("mjc,j->mc", dZ, weights))
    else:
        mm = dZ.shape[0]
        s = cache["S"]
        dS = np.einsum("moh,mjo->mjh", v["W2"], dZ)
        dU = dS * s * (1.0 - s)
        pieces.append(np.einsum("mjh,jn,j->mhn", dU, X, weights).reshape(mm, -1))
        if v["b1"] is not None:
            pieces.append(np.einsum("mjh,j->mh", dU, weights))
        pieces.append(np.einsum("mjo,mjh,j->moh", dZ, s, weights).reshape(mm, -1))
        if v["b2"] is not None:
            pieces.append(np.einsum("mjo,j->mo", dZ, weights))
    return np.concatenate(pieces, axis=1)


def grad_margin_many(spec: ModelSpec, particles: np.ndarray, X: np.ndarray,
                     targets: np.ndarray) -> np.ndarray:
    """Analytic gradient of the margin w.r.t. the flat parameters, (M, J, d)."""
    _, cache = _forward_cache(spec, particles, X)
    return _backprop(spec, cache, X, _head_dZ(spec, cache, targets))


def grad_margin(spec: ModelSpec, theta: np.ndarray, x: np.ndarray, y) -> np.ndarray:
    t = np.asarray(y, dtype=np.float64)
    t = t[None, :] if t.ndim == 1 else t.reshape(1)
    g = grad_margin_many(spec, np.atleast_2d(np.asarray(theta, dtype=np.float64)),
                         np.atleast_2d(np.asarray(x, dtype=np.float64)), t)
    return g[0, 0]


def weighted_grad_margin_sum(spec: ModelSpec, particles: np.ndarray, X: np.ndarray,
                             targets: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_j weights_j * grad_margin(theta_i, x_j, y_j), shape (M, d)."""
    _, cache = _forward_cache(spec, particles, X)
    return _backprop_weighted(spec, cache, X, _head_dZ(spec, cache, targets),
                              np.asarray(weights, dtype=np.float64))


def ensemble_margin_and_grads(spec: ModelSpec, particles: np.ndarray, X: np.ndarray,
                              targets: np.ndarray) -> tuple:
    """Margins of the particle-mean prediction plus per-particle margin gradients.

    One forward pass serves both. Returns (margins (J,), grads (M, J, d)).
    """
    out, cache = _forward_cache(spec, particles, X)
    mean_out = out.mean(axis=0)
    targets = np.asarray(targets, dtype=np.float64)
    if spec.output == "tanh":
        margins = mean_out * targets
    else:
        margins = np.einsum("jc,jc->j", mean_out, targets)
    grads = _backprop(spec, cache, X, _head_dZ(spec, cache, targets))
    return margins, grads


def cross_entropy_many(spec: ModelSpec, particles: np.ndarray, X: np.ndarray,
                       targets: np.ndarray) -> np.ndarray:
    """Per-(particle, sample) -log p_true for softmax heads, shape (M, J)."""
    if spec.output != "softmax":
        raise ValueError("cross-entropy requires a softmax head")
    p, _ = _forward_cache(spec, particles, X)
    p_true = np.einsum("mjc,jc->mj", p, np.asarray(targets))
    return -np.log(np.maximum(p_true, 1e-300))


def grad_cross_entropy_many(spec: ModelSpec, particles: np.ndarray, X: np.ndarray,
                            targets: np.ndarray) -> np.ndarray:
    """Gradient of -log p_true w.r.t. flat parameters, (M, J, d); dZ = p - y."""
    if spec.output != "softmax":
        raise ValueError("cross-entropy requires a softmax head")
    _, cache = _forward_cache(spec, particles, X)
    dZ = cache["P"] - np.asarray(targets, dtype=np.float64)[None, :, :]
    return _backprop(spec, cache, X, dZ)
