"""Dense feed-forward networks trained by backpropagation.

Hidden layers apply ReLU or leaky ReLU; the output layer is affine so the
network can produce signed targets.  Everything runs in float64 and all
randomness (initialization, shuffling) comes from :mod:`gmsfem_dl.rng`,
so a training run is a pure function of its inputs.
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager
from dataclasses import dataclass, field

import numba
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import rng

ACTIVATIONS = ("relu", "leaky_relu")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class Mlp:
    weights: list  # W_l with shape (d_l, d_{l-1})
    biases: list
    activation: str = "relu"
    alpha: float = 0.01

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not 0 < self.alpha < 1:
            raise ValueError("leaky slope must lie in (0, 1)")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[0],):
                raise ValueError(f"bias {k} has shape {b.shape}, expected ({W.shape[0]},)")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} input size does not match layer {k - 1}")

    @property
    def sizes(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(W.shape[0] for W in self.weights)

    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def flatten(self) -> np.ndarray:
        """Move all parameters into one contiguous buffer; W and b become views of it."""
        flat = np.concatenate([p.ravel() for p in self.params()])
        off = 0
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[k] = flat[off:off + W.size].reshape(W.shape)
            off += W.size
            self.biases[k] = flat[off:off + b.size]
            off += b.size
        return flat

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()


def init_mlp(sizes, activation="relu", alpha=0.01, seed=0) -> Mlp:
    """He-uniform weights (limit ``sqrt(6 / fan_in)``) and zero biases."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError("need at least input and output sizes, all positive")
    weights, biases = [], []
    for k, (d_in, d_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / d_in)
        u = rng.uniform(rng.derive_seed(seed, k), d_in * d_out)
        weights.append(((2.0 * u - 1.0) * limit).reshape(d_out, d_in))
        biases.append(np.zeros(d_out))
    return Mlp(weights, biases, activation, alpha)


def _act(net, z):
    if net.activation == "relu":
        return np.maximum(z, 0.0)
    # alpha < 1, so max(z, alpha z) is the leaky ReLU
    return np.maximum(z, net.alpha * z)


def _act_grad(net, z):
    # subgradient at 0: 0 for ReLU, alpha for leaky ReLU
    if net.activation == "relu":
        return (z > 0).astype(np.float64)
    return np.where(z > 0, 1.0, net.alpha)


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    a = x[None, :] if x.ndim == 1 else x
    if a.shape[1] != net.sizes[0]:
        raise ValueError(f"input has {a.shape[1]} features, network expects {net.sizes[0]}")
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        a = z if k == last else _act(net, z)
    return a[0] if x.ndim == 1 else a


def loss_and_grad(net: Mlp, X, Y, out=None):
    """Batch-mean squared error ``mean_j ||y_j - N(x_j)||^2`` and its exact gradient.

    Returns ``(mse, grads)`` with ``grads`` ordered like :meth:`Mlp.params`.
    If ``out`` is a flat buffer laid out like :meth:`Mlp.flatten`, the
    gradients are written into views of it.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    acts, pre = [X], []
    last = len(net.weights) - 1
    with np.errstate(over="ignore", invalid="ignore"):
        for k, (W, b) in enumerate(zip(net.weights, net.biases)):
            z = acts[-1] @ W.T + b
            pre.append(z)
            acts.append(z if k == last else _act(net, z))
        diff = acts[-1] - Y
        mse = float(np.sum(diff * diff) / n)
    if not np.isfinite(mse):
        raise FloatingPointError("non-finite network output")
    grads = [None] * (2 * len(net.weights))
    if out is not None:
        off = 0
        for k, (W, b) in enumerate(zip(net.weights, net.biases)):
            grads[2 * k] = out[off:off + W.size].reshape(W.shape)
            grads[2 * k + 1] = out[off + W.size:off + W.size + b.size]
            off += W.size + b.size
    delta = (2.0 / n) * diff
    for k in range(last, -1, -1):
        if out is None:
            grads[2 * k] = delta.T @ acts[k]
            grads[2 * k + 1] = delta.sum(axis=0)
        else:
            np.matmul(delta.T, acts[k], out=grads[2 * k])
            np.sum(delta, axis=0, out=grads[2 * k + 1])
        if k:
            delta = (delta @ net.weights[k]) * _act_grad(net, pre[k - 1])
    return mse, grads


# ---------------------------------------------------------------- optimizers


@numba.njit(cache=True)
def _adamax_kernel(p, g, m, u, beta1, beta2, eps, scale):
    for i in range(p.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        u[i] = max(beta2 * u[i], abs(g[i]))
        p[i] -= scale * m[i] / (u[i] + eps)


@numba.njit(cache=True)
def _prox_adagrad_kernel(p, g, G, lr, l1, l2, eps):
    for i in range(p.size):
        G[i] += g[i] * g[i]
        eta = lr / (np.sqrt(G[i]) + eps)
        q = p[i] - eta * g[i]
        mag = abs(q) - eta * l1
        if mag <= 0.0:
            p[i] = 0.0
        else:
            p[i] = np.sign(q) * mag / (1.0 + eta * l2)



def _flat(a):
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1)


@contextmanager
def _flat_view(p):
    # kernels update a 1-D buffer in place; copy back when p is not contiguous
    flat = p.reshape(-1)
    yield flat
    if not np.shares_memory(flat, p):
        p[...] = flat.reshape(p.shape)


class Adamax:
    """Adamax: first moment plus an exponentially weighted infinity norm."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0 or not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("invalid Adamax hyperparameters")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.u = None
        self.t = 0

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.u = [np.zeros_like(p) for p in params]
        self.t += 1
        scale = self.lr / (1.0 - self.beta1**self.t)
        for p, g, m, u in zip(params, grads, self.m, self.u):
            with _flat_view(p) as pf:
                _adamax_kernel(pf, _flat(g), m.reshape(-1), u.reshape(-1),
                               self.beta1, self.beta2, self.eps, scale)
        return params


class ProximalAdagrad:
    """Adagrad step followed by the proximal map of ``l1 |x| + l2/2 x^2``."""

    def __init__(self, lr=1e-2, l1=0.0, l2=1e-6, eps=1e-10):
        if lr <= 0 or l1 < 0 or l2 < 0:
            raise ValueError("invalid proximal Adagrad hyperparameters")
        self.lr, self.l1, self.l2, self.eps = lr, l1, l2, eps
        self.G = None

    def step(self, params, grads):
        if self.G is None:
            self.G = [np.zeros_like(p) for p in params]
        for p, g, G in zip(params, grads, self.G):
            with _flat_view(p) as pf:
                _prox_adagrad_kernel(pf, _flat(g), G.reshape(-1), self.lr, self.l1, self.l2, self.eps)
        return params


def adamax_step(state: Adamax, params, grads):
    return state.step(params, grads)


def adagrad_prox_step(state: ProximalAdagrad, params, grads):
    return state.step(params, grads)


OPTIMIZER_DEFAULTS = {
    "adamax": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "adagrad_prox": {"lr": 1e-2, "l1": 0.0, "l2": 1e-6, "eps": 1e-10},
}


def make_optimizer(name, **overrides):
    if name not in OPTIMIZER_DEFAULTS:
        raise ValueError(f"unknown optimizer {name!r}")
    kw = dict(OPTIMIZER_DEFAULTS[name])
    kw.update({k: v for k, v in overrides.items() if k in kw and v is not None})
    return Adamax(**kw) if name == "adamax" else ProximalAdagrad(**kw)


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    optimizer: str = "adamax"
    lr: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    eps: float | None = None
    l1: float | None = None
    l2: float | None = None
    epochs: int = 500
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def make_optimizer(self):
        return make_optimizer(self.optimizer, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                              eps=self.eps, l1=self.l1, l2=self.l2)


@dataclass
class LossReport:
    losses: list = field(default_factory=list)
    checksum: str = ""


def train(net: Mlp, X, Y, cfg: TrainConfig):
    """Seeded mini-batch training; returns ``(net, LossReport)``.

    ``losses[0]`` is the MSE of the initial network, ``losses[e]`` the
    sample-weighted mean batch loss of epoch ``e``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    opt = cfg.make_optimizer()
    flat = net.flatten()
    gbuf = np.empty_like(flat)
    params = [flat]
    report = LossReport()
    with np.errstate(over="ignore", invalid="ignore"):
        report.losses.append(float(np.sum((forward(net, X) - Y) ** 2) / n))
    if not np.isfinite(report.losses[0]):
        report.checksum = net.checksum()
        raise TrainingDivergedError("initial loss is not finite", report)
    shuffle_seed = rng.derive_seed(cfg.seed, 0x5EED)
    for epoch in range(cfg.epochs):
        order = rng.permutation(rng.derive_seed(shuffle_seed, epoch), n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                mse, _ = loss_and_grad(net, X[idx], Y[idx], out=gbuf)
            except FloatingPointError as exc:
                report.checksum = net.checksum()
                raise TrainingDivergedError(f"training diverged in epoch {epoch + 1}", report) from exc
            opt.step(params, [gbuf])
            total += mse * idx.size
        report.losses.append(total / n)
        if not np.isfinite(report.losses[-1]):
            report.checksum = net.checksum()
            raise TrainingDivergedError(f"training diverged in epoch {epoch + 1}", report)
    report.checksum = net.checksum()
    return net, report


class MLPRegressor(RegressorMixin, BaseEstimator):
    """Multi-output MLP regressor with the scikit-learn estimator interface.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
    activation : {"relu", "leaky_relu"}
    alpha : float
        Negative-side slope of the leaky ReLU.
    optimizer : {"adamax", "adagrad_prox"}
    learning_rate, beta1, beta2, epsilon, l1, l2 : float or None
        Optimizer hyperparameters; ``None`` keeps the optimizer default.
    epochs, batch_size, random_state : int
    """

    def __init__(self, hidden_layer_sizes=(256,) * 10, activation="leaky_relu", alpha=0.01,
                 optimizer="adamax", learning_rate=None, beta1=None, beta2=None, epsilon=None,
                 l1=None, l2=None, epochs=500, batch_size=64, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.alpha = alpha
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.l1 = l1
        self.l2 = l2
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.optimizer, self.learning_rate, self.beta1, self.beta2, self.epsilon,
                           self.l1, self.l2, int(self.epochs), int(self.batch_size),
                           int(self.random_state))

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64, y_numeric=True)
        self._y_1d = y.ndim == 1
        Y = y.reshape(len(y), -1)
        sizes = (X.shape[1], *self.hidden_layer_sizes, Y.shape[1])
        net = init_mlp(sizes, self.activation, self.alpha, rng.derive_seed(self.random_state, 0x1417))
        self.net_, self.loss_report_ = train(net, X, Y, self.train_config())
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        out = forward(self.net_, X)
        return out[:, 0] if getattr(self, "_y_1d", False) else out
