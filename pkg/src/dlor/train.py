"""Trainable dense, deep-DLoR and wide-DLoR regressors with hand-written backprop.

All three networks map a scalar input to a scalar output through the same
input projection ``rho(W_in x + b_in)`` and linear readout; they differ in the
hidden transformation:

* dense_mlp: ``n_hidden`` full ``width x width`` layers;
* deep_dlor: ``x <- rho((alpha I + U_l V_l^T) x + b_l)`` for l = 1..k with one shared alpha;
* wide_dlor: ``rho(sum_l alpha_l rho(U_l V_l^T x + b_l) + outer_bias)``.

Inputs are processed as columns, so a whole dataset is one batch.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg as la
from .activation import ActivationSpec, make_activation, slope_from_output
from .errors import DivergedAt

KINDS = ("dense_mlp", "deep_dlor", "wide_dlor")


def rank_for(width, k) -> int:
    return math.ceil(width / k)


def param_shapes(kind, width, k=1, n_hidden=1) -> dict:
    if kind not in KINDS:
        raise ValueError(f"unknown network kind {kind!r}")
    shapes = {"w_in": (width, 1), "b_in": (width,)}
    if kind == "dense_mlp":
        for i in range(n_hidden):
            shapes[f"w{i}"] = (width, width)
            shapes[f"b{i}"] = (width,)
    else:
        r = rank_for(width, k)
        if kind == "deep_dlor":
            shapes["alpha"] = ()
        else:
            shapes["alphas"] = (k,)
            shapes["outer_bias"] = (width,)
        for l in range(k):
            shapes[f"u{l}"] = (width, r)
            shapes[f"v{l}"] = (width, r)
            shapes[f"b{l}"] = (width,)
    shapes["w_out"] = (1, width)
    shapes["b_out"] = (1,)
    return shapes


def param_count(kind, width=16, k=1, n_hidden=1) -> int:
    return int(sum(np.prod(s, dtype=int) for s in param_shapes(kind, width, k, n_hidden).values()))


def dense_width_for(target, lo=1, n_hidden=1) -> int:
    """Dense width whose parameter count is closest to ``target`` (ties go to the smaller width)."""
    best, best_gap = lo, math.inf
    w = lo
    while True:
        count = param_count("dense_mlp", w, n_hidden=n_hidden)
        gap = abs(count - target)
        if gap < best_gap:
            best, best_gap = w, gap
        if count > target:
            return best
        w += 1


@dataclass
class TrainableNet:
    kind: str
    width: int
    k: int
    activation: ActivationSpec
    params: dict
    n_hidden: int = 1

    @property
    def rank(self) -> int:
        return rank_for(self.width, self.k)

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self, x):
        """Outputs for a scalar or a 1-d array of scalar inputs."""
        x = np.asarray(x, dtype=float)
        y = _forward(self, x.reshape(1, -1))[0]
        return float(y[0, 0]) if x.ndim == 0 else y[0]

    __call__ = forward

    def copy(self) -> "TrainableNet":
        return TrainableNet(self.kind, self.width, self.k, self.activation,
                            {n: p.copy() for n, p in self.params.items()}, self.n_hidden)

    def to_json(self) -> dict:
        return {
            "kind": self.kind, "width": self.width, "k": self.k, "n_hidden": self.n_hidden,
            "activation": self.activation.to_json(),
            "params": {n: {"shape": list(p.shape), "data": p.reshape(-1).tolist()} for n, p in self.params.items()},
        }

    @classmethod
    def from_json(cls, obj) -> "TrainableNet":
        params = {n: np.array(v["data"], dtype=float).reshape(v["shape"]) for n, v in obj["params"].items()}
        return cls(obj["kind"], int(obj["width"]), int(obj["k"]), ActivationSpec.from_json(obj["activation"]),
                   params, int(obj.get("n_hidden", 1)))


def make_net(kind, width=16, k=1, activation=None, seed=0, n_hidden=1) -> TrainableNet:
    net = TrainableNet(kind, width, k, activation or make_activation("softplus"), {}, n_hidden)
    init_params(net, seed)
    return net


def init_params(net: TrainableNet, seed) -> None:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, alpha = 1 (deep) or 1/k per branch (wide)."""
    rng = la.make_rng(seed)
    shapes = param_shapes(net.kind, net.width, net.k, net.n_hidden)
    params = {}
    for name, shape in shapes.items():
        if name == "alpha":
            params[name] = np.array(1.0)
        elif name == "alphas":
            params[name] = np.full(shape, 1.0 / net.k)
        elif name.startswith("b") or name == "outer_bias":
            params[name] = np.zeros(shape)
        else:
            # V reads the width-dim state; U reads the r-dim code
            fan_in = shape[1] if name[0] in "wu" else shape[0]
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    net.params = params


def _forward(net, x, keep=False):
    p, act = net.params, net.activation
    cache = {"x": x}
    a0 = p["w_in"] @ x + p["b_in"][:, None]
    h = act(a0)
    cache["h0"] = h
    if net.kind == "dense_mlp":
        for i in range(net.n_hidden):
            a = p[f"w{i}"] @ h + p[f"b{i}"][:, None]
            cache[f"in{i}"] = h
            h = cache[f"o{i}"] = act(a)
    elif net.kind == "deep_dlor":
        alpha = p["alpha"]
        for l in range(net.k):
            t = p[f"v{l}"].T @ h
            a = alpha * h + p[f"u{l}"] @ t + p[f"b{l}"][:, None]
            cache[f"in{l}"], cache[f"t{l}"] = h, t
            h = cache[f"o{l}"] = act(a)
    else:
        h0 = h
        s = np.repeat(p["outer_bias"][:, None], h0.shape[1], axis=1)
        for l in range(net.k):
            t = p[f"v{l}"].T @ h0
            a = p[f"u{l}"] @ t + p[f"b{l}"][:, None]
            z = act(a)
            cache[f"t{l}"], cache[f"z{l}"] = t, z
            s = s + p["alphas"][l] * z
        h = act(s)
    cache["h"] = h
    y = p["w_out"] @ h + p["b_out"][:, None]
    return (y, cache) if keep else (y,)


def mse(net, x, y) -> float:
    pred = _forward(net, np.asarray(x, dtype=float).reshape(1, -1))[0][0]
    return float(np.mean((pred - np.asarray(y, dtype=float)) ** 2))


def loss_and_grad(net, x, y):
    """Mean squared error over the batch and its gradient for every parameter."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    m = x.shape[1]
    pred, cache = _forward(net, x, keep=True)
    resid = pred - y
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite losses are reported by train()
        loss = float(np.mean(resid ** 2))
    p, act = net.params, net.activation
    g = {}
    g_pred = 2.0 * resid / m
    g["w_out"] = g_pred @ cache["h"].T
    g["b_out"] = g_pred.sum(axis=1)
    g_h = p["w_out"].T @ g_pred
    if net.kind == "dense_mlp":
        for i in reversed(range(net.n_hidden)):
            g_a = g_h * slope_from_output(act, cache[f"o{i}"])
            g[f"w{i}"] = g_a @ cache[f"in{i}"].T
            g[f"b{i}"] = g_a.sum(axis=1)
            g_h = p[f"w{i}"].T @ g_a
        g_h0 = g_h
    elif net.kind == "deep_dlor":
        alpha = p["alpha"]
        g_alpha = 0.0
        for l in reversed(range(net.k)):
            g_a = g_h * slope_from_output(act, cache[f"o{l}"])
            x_l = cache[f"in{l}"]
            g_alpha += float(np.sum(g_a * x_l))
            g[f"b{l}"] = g_a.sum(axis=1)
            g[f"u{l}"] = g_a @ cache[f"t{l}"].T
            g_t = p[f"u{l}"].T @ g_a
            g[f"v{l}"] = x_l @ g_t.T
            g_h = alpha * g_a + p[f"v{l}"] @ g_t
        g["alpha"] = np.array(g_alpha)
        g_h0 = g_h
    else:
        h0 = cache["h0"]
        g_s = g_h * slope_from_output(act, cache["h"])
        g["outer_bias"] = g_s.sum(axis=1)
        g_alphas = np.zeros(net.k)
        g_h0 = np.zeros_like(h0)
        for l in range(net.k):
            g_alphas[l] = np.sum(g_s * cache[f"z{l}"])
            g_a = p["alphas"][l] * g_s * slope_from_output(act, cache[f"z{l}"])
            g[f"b{l}"] = g_a.sum(axis=1)
            g[f"u{l}"] = g_a @ cache[f"t{l}"].T
            g_t = p[f"u{l}"].T @ g_a
            g[f"v{l}"] = h0 @ g_t.T
            g_h0 += p[f"v{l}"] @ g_t
        g["alphas"] = g_alphas
    g_a0 = g_h0 * slope_from_output(act, cache["h0"])
    g["w_in"] = g_a0 @ x.T
    g["b_in"] = g_a0.sum(axis=1)
    return loss, g


@dataclass(frozen=True)
class SchedulerConfig:
    patience: int = 200
    factor: float = 0.5
    min_lr: float = 1e-5
    threshold: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    epochs: int = 5000
    scheduler: SchedulerConfig | None = field(default_factory=SchedulerConfig)
    seed: int = 0
    stop_threshold: float | None = None
    record_every: int = 1
    snapshot_epochs: tuple = ()

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.scheduler is not None and not 0 < self.scheduler.factor < 1:
            raise ValueError("scheduler factor must lie in (0, 1)")
        if self.epochs < 0 or self.record_every < 1:
            raise ValueError("epochs must be >= 0 and record_every >= 1")


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without relative improvement."""

    def __init__(self, lr, cfg: SchedulerConfig):
        self.lr = lr
        self.cfg = cfg
        self.best = math.inf
        self.bad = 0

    def step(self, loss) -> float:
        if loss < self.best * (1.0 - self.cfg.threshold):
            self.best = loss
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.cfg.patience:
                self.lr = max(self.lr * self.cfg.factor, self.cfg.min_lr)
                self.bad = 0
        return self.lr


def _pack(params):
    """Rebind every parameter as a view into one flat buffer; returns (flat, slices)."""
    names = sorted(params)
    sizes = [params[n].size for n in names]
    flat = np.empty(sum(sizes))
    slices = {}
    pos = 0
    for n, size in zip(names, sizes):
        flat[pos:pos + size] = np.reshape(params[n], -1)
        slices[n] = (pos, pos + size, np.shape(params[n]))
        params[n] = flat[pos:pos + size].reshape(slices[n][2])
        pos += size
    return flat, slices


class Adam:
    """Adam on a flat parameter vector (updated in place)."""

    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, flat, grad, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grad
        self.v *= b2
        self.v += (1 - b2) * grad * grad
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        flat -= lr * (self.m / c1) / (np.sqrt(self.v / c2) + self.eps)


@dataclass(frozen=True)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


@dataclass
class TrainResult:
    final_train_mse: float
    final_test_mse: float
    epochs_run: int
    reached_threshold: bool
    loss_curve: list  # (epoch, train_mse, test_mse, lr)
    train_history: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)  # epoch -> (train_mse, test_mse)

    def first_epoch_below(self, threshold):
        """Number of updates after which the train MSE first fell below ``threshold``, or None."""
        for epoch, loss in enumerate(self.train_history):
            if loss < threshold:
                return epoch
        return None

    def curve_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "test_mse", "lr"])
        for row in self.loss_curve:
            writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
        return buf.getvalue()


def train(net: TrainableNet, data: Dataset, cfg: TrainConfig) -> TrainResult:
    """Full-batch Adam; stops early once the train MSE drops below ``cfg.stop_threshold``.

    Each epoch evaluates the loss at the current parameters, records it,
    checks the stop threshold, then updates, so ``epochs_run`` counts
    updates.  A non-finite loss raises DivergedAt carrying the partial result.
    """
    flat, slices = _pack(net.params)
    grad_flat = np.empty_like(flat)
    opt = Adam(flat.size)
    sched = PlateauScheduler(cfg.lr, cfg.scheduler) if cfg.scheduler is not None else None
    snap_at = set(cfg.snapshot_epochs)
    lr = cfg.lr
    result = TrainResult(math.nan, math.nan, 0, False, [])
    epoch = 0
    while True:
        loss, grads = loss_and_grad(net, data.x_train, data.y_train)
        if not math.isfinite(loss):
            result.epochs_run = epoch
            raise DivergedAt(epoch, result)
        result.train_history.append(loss)
        done = epoch >= cfg.epochs
        if cfg.stop_threshold is not None and loss < cfg.stop_threshold:
            result.reached_threshold = done = True
        test = None
        if epoch % cfg.record_every == 0 or done:
            test = mse(net, data.x_test, data.y_test)
            result.loss_curve.append((epoch, loss, test, lr))
        if epoch in snap_at:
            result.snapshots[epoch] = (loss, test if test is not None else mse(net, data.x_test, data.y_test))
        if done:
            break
        for name, (lo, hi, _) in slices.items():
            grad_flat[lo:hi] = np.reshape(grads[name], -1)
        opt.step(flat, grad_flat, lr)
        if sched is not None:
            lr = sched.step(loss)
        epoch += 1
    result.final_train_mse = loss
    result.final_test_mse = result.loss_curve[-1][2]
    result.epochs_run = epoch
    return result


def gradient_check(net: TrainableNet, x, y, n_samples=100, seed=0, step=1e-5) -> float:
    """Largest relative gap between backprop and central differences over random coordinates.

    The denominator is max(|fd|, |bp|, 1e-4 * max(1, loss)): central differences
    carry a rounding error near eps * loss / step, so coordinates whose
    gradient is tiny next to the loss are compared on the loss scale instead.
    """
    rng = la.make_rng(seed)
    loss, grads = loss_and_grad(net, x, y)
    names = sorted(net.params)
    floor = 1e-4 * max(1.0, abs(loss))
    worst = 0.0
    for _ in range(n_samples):
        name = names[int(rng.integers(len(names)))]
        p = net.params[name]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        old = p[idx]
        p[idx] = old + step
        plus = mse(net, x, y)
        p[idx] = old - step
        minus = mse(net, x, y)
        p[idx] = old
        fd = (plus - minus) / (2 * step)
        bp = float(grads[name][idx])
        worst = max(worst, abs(fd - bp) / max(abs(fd), abs(bp), floor))
    return worst
