"""Dense feedforward networks with hand-written reverse-mode gradients.

The layer convention follows the recurrence z_1 = z,
z_l = act(W_l z_{l-1} + b_l) for l = 2 .. L-1, and an affine last layer
N(z) = W_L z_{L-1} + b_L.  A network of depth L therefore owns L-1 weight
matrices and applies L-2 activations; L = 2 is a single affine map.

Everything is float64 numpy.  Initialization draws from a Philox
counter-based generator so that a seed value reproduces the same
parameters on any platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_ACTIVATIONS = ("tanh", "relu")


@dataclass
class MLP:
    """Weights W_2..W_L (each (fan_out, fan_in)) with matching biases."""

    weights: list
    biases: list
    activation: str = "tanh"
    seed: int | None = None

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty and aligned")
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError("weight/bias shape mismatch")
        for Wa, Wb in zip(self.weights[:-1], self.weights[1:]):
            if Wb.shape[1] != Wa.shape[0]:
                raise ValueError("consecutive layer shapes do not chain")

    @property
    def num_layers(self) -> int:
        """Depth L in the recurrence convention (affine maps + 1)."""
        return len(self.weights) + 1

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def parameters(self) -> list:
        """Flat parameter list [W_2, b_2, W_3, b_3, ...] (live views)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.append(W)
            out.append(b)
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def parameter_count(arch: tuple) -> int:
    """Closed-form parameter count for arch = (L, width, in_dim, out_dim)."""
    L, w, din, dout = arch
    dims = [din] + [w] * (L - 2) + [dout]
    return sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(len(dims) - 1))


def init_mlp(seed, arch: tuple, activation: str = "tanh") -> MLP:
    """Glorot-uniform initialization from a Philox stream keyed by seed.

    arch is (L, width, in_dim, out_dim) with L >= 2; biases start at zero.
    seed may be an integer or a numpy SeedSequence (used when a caller
    splits one seed across several networks).
    """
    L, w, din, dout = (int(a) for a in arch)
    if L < 2:
        raise ValueError(f"depth must be at least 2, got {L}")
    if min(w, din, dout) < 1:
        raise ValueError(f"arch dimensions must be positive, got {arch}")
    if isinstance(seed, np.random.SeedSequence):
        ss, recorded = seed, None
    else:
        ss, recorded = np.random.SeedSequence(int(seed)), int(seed)
    rng = np.random.Generator(np.random.Philox(ss))
    dims = [din] + [w] * (L - 2) + [dout]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases, activation=activation, seed=recorded)


def _activate(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(a)
    return np.maximum(a, 0.0)


def _activation_slope(post: np.ndarray, kind: str) -> np.ndarray:
    # both activations expose their derivative through the post-activation value
    if kind == "tanh":
        return 1.0 - post * post
    return (post > 0.0).astype(np.float64)


def forward_batch(net: MLP, Z: np.ndarray):
    """Evaluate the network on rows of Z.

    Returns (Y, cache) where cache holds the input and every hidden
    post-activation, enough to run backward_batch.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != net.in_dim:
        raise ValueError(f"expected input of shape (n, {net.in_dim}), got {Z.shape}")
    cache = [Z]
    h = Z
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        h = _activate(h @ W.T + b, net.activation)
        cache.append(h)
    Y = h @ net.weights[-1].T + net.biases[-1]
    return Y, cache


def backward_batch(net: MLP, cache: list, dY: np.ndarray):
    """Reverse accumulation through a cached forward pass.

    Returns (grads, dZ): grads is the flat list [dW_2, db_2, ...] aligned
    with net.parameters(), dZ the gradient with respect to the input rows.
    """
    dY = np.asarray(dY, dtype=np.float64)
    grads_W = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    grads_W[-1] = dY.T @ cache[-1]
    grads_b[-1] = dY.sum(axis=0)
    dH = dY @ net.weights[-1]
    for l in range(len(net.weights) - 2, -1, -1):
        dPre = dH * _activation_slope(cache[l + 1], net.activation)
        grads_W[l] = dPre.T @ cache[l]
        grads_b[l] = dPre.sum(axis=0)
        dH = dPre @ net.weights[l]
    grads = []
    for gW, gb in zip(grads_W, grads_b):
        grads.append(gW)
        grads.append(gb)
    return grads, dH


def mlp_forward(net: MLP, z: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single input vector."""
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    Y, _ = forward_batch(net, z)
    return Y[0]


def mlp_gradient(net: MLP, z: np.ndarray, loss_tail):
    """Gradient of a scalar loss composed with the network at input z.

    loss_tail maps the output vector to (value, d value / d output).
    Returns (value, grads) with grads aligned to net.parameters().
    Non-finite intermediates are reported as errors.
    """
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    Y, cache = forward_batch(net, z)
    if not np.all(np.isfinite(Y)):
        raise FloatingPointError("non-finite network output in mlp_gradient")
    value, dY = loss_tail(Y[0])
    value = float(value)
    dY = np.asarray(dY, dtype=np.float64).reshape(1, -1)
    if not np.isfinite(value) or not np.all(np.isfinite(dY)):
        raise FloatingPointError("non-finite loss tail in mlp_gradient")
    grads, _ = backward_batch(net, cache, dY)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite parameter gradient in mlp_gradient")
    return value, grads


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    """First/second moment accumulators plus the running learning rate."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list, lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(state: AdamState, params: list, grads: list) -> list:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("parameter/gradient/state lengths disagree")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class PlateauScheduler:
    """Halve the learning rate after `patience` epochs without improvement.

    An epoch improves when the metric drops below best * (1 - threshold).
    When the bad-epoch counter reaches `patience` the rate is multiplied by
    `factor` (floored at min_lr) and the counter resets.
    """

    lr: float
    factor: float = 0.5
    patience: int = 10
    threshold: float = 1e-4
    min_lr: float = 0.0
    best: float = float("inf")
    num_bad: int = 0

    def step(self, metric: float) -> float:
        metric = float(metric)
        if metric < self.best * (1.0 - self.threshold):
            self.best = metric
            self.num_bad = 0
        else:
            self.num_bad += 1
            if self.num_bad >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.num_bad = 0
        return self.lr


def scheduler_step(sched: PlateauScheduler, val_loss: float) -> float:
    return sched.step(val_loss)


# ---------------------------------------------------------------------------
# checkpoints


def mlp_to_dict(net: MLP) -> dict:
    hidden = net.weights[0].shape[0] if len(net.weights) > 1 else 0
    return {
        "arch": {
            "num_layers": net.num_layers,
            "width": int(hidden),
            "in_dim": net.in_dim,
            "out_dim": net.out_dim,
        },
        "activation": net.activation,
        "seed": net.seed,
        "layers": [
            {"W": [[float(x) for x in row] for row in W], "b": [float(x) for x in b]}
            for W, b in zip(net.weights, net.biases)
        ],
    }


def mlp_from_dict(doc: dict) -> MLP:
    layers = doc["layers"]
    weights = [np.asarray(l["W"], dtype=np.float64) for l in layers]
    biases = [np.asarray(l["b"], dtype=np.float64) for l in layers]
    seed = doc.get("seed")
    return MLP(weights, biases, activation=doc["activation"], seed=seed)


def save_checkpoint(net: MLP, path) -> None:
    Path(path).write_text(json.dumps(mlp_to_dict(net)), encoding="utf-8")


def load_checkpoint(path) -> MLP:
    return mlp_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
