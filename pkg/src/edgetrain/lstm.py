"""Single-layer LSTM regressor trained by backpropagation through time.

One scalar power reading enters each of ``T`` unrolled cells (oldest first)
and a dense head maps the last hidden state to the forecast. Parameters are
kept stacked by gate in the order input, forget, output, candidate:

    W      (1, 4H)   input weights
    U      (H, 4H)   recurrent weights
    b      (4H,)     gate biases
    w_out  (H, 1)    dense head weights
    b_out  (1,)      dense head bias

Everything runs on numpy arrays whose widths follow a
:class:`~edgetrain.numeric.PrecisionPolicy`.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .dataset import WindowedDataset
from .numeric import (
    PrecisionPolicy,
    Scheme,
    VariableGroup,
    apply_policy,
    check_finite,
    sigmoid,
    width_of,
)
from .report import TrainReport, array_hash

FORMAT_VERSION = 1
GATES = ("input", "forget", "output", "candidate")
PARAM_NAMES = ("W", "U", "b", "w_out", "b_out")

_IN, _PAR, _ACT, _GRAD, _OPT = (
    VariableGroup.INPUT_DATA,
    VariableGroup.PARAMETERS,
    VariableGroup.ACTIVATIONS,
    VariableGroup.GRADIENTS,
    VariableGroup.OPTIMIZER_STATE,
)


class TrainingDiverged(RuntimeError):
    pass


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


class CellCache(NamedTuple):
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    ifo: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray


@dataclass
class ForwardCache:
    """Per-timestep values kept for BPTT; time is the leading axis."""

    x: np.ndarray  # (T, B)
    h: np.ndarray  # (T+1, B, H), h[0] is the initial state
    c: np.ndarray  # (T+1, B, H)
    ifo: np.ndarray  # (T, B, 3H) sigmoid outputs
    g: np.ndarray  # (T, B, H)
    tanh_c: np.ndarray  # (T, B, H)
    pred: np.ndarray  # (B,)

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in (self.x, self.h, self.c, self.ifo, self.g, self.tanh_c, self.pred))


@dataclass
class LstmModel:
    hidden: int
    T: int
    params: dict[str, np.ndarray]
    scheme: str = "double"
    cap: float = 1.0
    normalization: str = "capacity"

    def copy(self) -> "LstmModel":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "lstm",
            "hidden": self.hidden,
            "T": self.T,
            "precision_scheme": self.scheme,
            "parameter_width": width_of(self.params["U"]),
            "normalization": {"mode": self.normalization, "cap": self.cap},
            "params": {k: self.params[k].tolist() for k in PARAM_NAMES},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LstmModel":
        if d.get("format_version") != FORMAT_VERSION or d.get("kind", "lstm") != "lstm":
            raise ValueError(f"unsupported lstm model format_version {d.get('format_version')!r}")
        dtype = np.float32 if d.get("parameter_width", 64) == 32 else np.float64
        params = {k: np.array(d["params"][k], dtype=dtype) for k in PARAM_NAMES}
        model = cls(
            hidden=int(d["hidden"]),
            T=int(d["T"]),
            params=params,
            scheme=d.get("precision_scheme", "double"),
            cap=float(d["normalization"]["cap"]),
            normalization=d["normalization"]["mode"],
        )
        _check_shapes(model)
        return model

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "LstmModel":
        return cls.from_dict(json.loads(text))


def _check_shapes(model: LstmModel) -> None:
    H = model.hidden
    want = {"W": (1, 4 * H), "U": (H, 4 * H), "b": (4 * H,), "w_out": (H, 1), "b_out": (1,)}
    for name, shape in want.items():
        if model.params[name].shape != shape:
            raise ValueError(f"{name} has shape {model.params[name].shape}, expected {shape}")


def init_model(hidden: int = 32, T: int = 24, seed: int = 0, forget_bias: float = 1.0,
               width: int = 64) -> LstmModel:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights; forget-gate bias starts at ``forget_bias``."""
    rng = np.random.default_rng(seed)
    H = hidden
    bound = 1.0 / math.sqrt(H)
    params = {
        "W": rng.uniform(-bound, bound, size=(1, 4 * H)),
        "U": rng.uniform(-bound, bound, size=(H, 4 * H)),
        "b": np.zeros(4 * H),
        "w_out": rng.uniform(-bound, bound, size=(H, 1)),
        "b_out": np.zeros(1),
    }
    params["b"][H:2 * H] = forget_bias
    dtype = np.float32 if width == 32 else np.float64
    return LstmModel(hidden=H, T=T, params={k: v.astype(dtype) for k, v in params.items()})


def zero_state(batch: int, hidden: int, dtype=np.float64) -> LstmState:
    return LstmState(np.zeros((batch, hidden), dtype), np.zeros((batch, hidden), dtype))


def cell_forward(params: dict[str, np.ndarray], x, state: LstmState) -> tuple[LstmState, CellCache]:
    """One LSTM step for a batch of scalar inputs ``x`` (shape ``(B,)``)."""
    h_prev, c_prev = state
    H = h_prev.shape[-1]
    x = np.asarray(x, dtype=h_prev.dtype).reshape(-1)
    z = x[:, None] * params["W"] + h_prev @ params["U"] + params["b"]
    ifo = sigmoid(z[:, : 3 * H])
    g = np.tanh(z[:, 3 * H:])
    c = ifo[:, H:2 * H] * c_prev + ifo[:, :H] * g
    tanh_c = np.tanh(c)
    h = ifo[:, 2 * H:] * tanh_c
    return LstmState(h, c), CellCache(x, h_prev, c_prev, ifo, g, tanh_c)


def _compute_params(model: LstmModel, policy: PrecisionPolicy) -> dict[str, np.ndarray]:
    # parameters at the activation width for the forward/backward arithmetic
    return {k: apply_policy(_ACT, policy, v) for k, v in model.params.items()}


def _as_batch(features, T: int) -> tuple[np.ndarray, bool]:
    X = np.asarray(features)
    single = X.ndim == 1
    X = X.reshape(1, -1) if single else X
    if X.ndim != 2 or X.shape[1] != T:
        raise ValueError(f"expected {T} features per sample, got shape {np.shape(features)}")
    return X, single


def forward_batch(params: dict[str, np.ndarray], X: np.ndarray, hidden: int) -> ForwardCache:
    """Unrolled forward pass; ``X`` rows are newest-first lag vectors."""
    dtype = params["U"].dtype
    B, T = X.shape
    H = hidden
    xs = np.ascontiguousarray(X[:, ::-1].T, dtype=dtype)  # (T, B), oldest first
    hs = np.zeros((T + 1, B, H), dtype)
    cs = np.zeros((T + 1, B, H), dtype)
    ifo = np.empty((T, B, 3 * H), dtype)
    gs = np.empty((T, B, H), dtype)
    tcs = np.empty((T, B, H), dtype)
    proj = xs[:, :, None] * params["W"][0] + params["b"]  # (T, B, 4H)
    U = params["U"]
    for t in range(T):
        z = proj[t] + hs[t] @ U
        s = sigmoid(z[:, : 3 * H])
        g = np.tanh(z[:, 3 * H:])
        c = s[:, H:2 * H] * cs[t] + s[:, :H] * g
        tc = np.tanh(c)
        ifo[t] = s
        gs[t] = g
        cs[t + 1] = c
        tcs[t] = tc
        hs[t + 1] = s[:, 2 * H:] * tc
    pred = (hs[T] @ params["w_out"])[:, 0] + params["b_out"][0]
    return ForwardCache(xs, hs, cs, ifo, gs, tcs, pred)


def model_forward(model: LstmModel, features, policy: PrecisionPolicy | None = None):
    """Forecast for one lag vector (returns a float) or a batch of them."""
    policy = policy or PrecisionPolicy.from_scheme(model.scheme)
    X, single = _as_batch(features, model.T)
    X = apply_policy(_ACT, policy, apply_policy(_IN, policy, np.asarray(X, dtype=np.float64)))
    cache = forward_batch(_compute_params(model, policy), X, model.hidden)
    check_finite("prediction", cache.pred)
    if single:
        return float(cache.pred[0]), cache
    return cache.pred, cache


def mse_loss(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.size == 0:
        raise ValueError("mse of an empty batch")
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch {preds.shape} vs {targets.shape}")
    return float(np.mean((preds - targets) ** 2))


def backward_batch(params: dict[str, np.ndarray], cache: ForwardCache, targets: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the batch MSE with respect to every parameter."""
    T, B = cache.x.shape
    H = cache.h.shape[-1]
    dtype = cache.h.dtype
    dpred = (2.0 / B) * (cache.pred - np.asarray(targets, dtype=dtype))
    grads = {
        "w_out": cache.h[T].T @ dpred[:, None],
        "b_out": np.array([dpred.sum()], dtype=dtype),
    }
    U_T = params["U"].T
    dz = np.empty((T, B, 4 * H), dtype)
    dh = dpred[:, None] * params["w_out"][:, 0]
    dc = np.zeros((B, H), dtype)
    for t in range(T - 1, -1, -1):
        s = cache.ifo[t]
        i, f, o = s[:, :H], s[:, H:2 * H], s[:, 2 * H:]
        g, tc = cache.g[t], cache.tanh_c[t]
        dc = dc + dh * o * (1 - tc * tc)
        dz[t, :, :H] = dc * g
        dz[t, :, H:2 * H] = dc * cache.c[t]
        dz[t, :, 2 * H:3 * H] = dh * tc
        dz[t, :, : 3 * H] *= s * (1 - s)
        dz[t, :, 3 * H:] = dc * i * (1 - g * g)
        dc = dc * f
        dh = dz[t] @ U_T
    flat = dz.reshape(T * B, 4 * H)
    grads["U"] = cache.h[:T].reshape(T * B, H).T @ flat
    grads["W"] = (cache.x.reshape(1, T * B) @ flat)
    grads["b"] = flat.sum(axis=0)
    return grads


def backward(model: LstmModel, targets, cache: ForwardCache, policy: PrecisionPolicy | None = None):
    policy = policy or PrecisionPolicy.from_scheme(model.scheme)
    grads = backward_batch(_compute_params(model, policy), cache, np.asarray(targets))
    grads = {k: apply_policy(_GRAD, policy, v) for k, v in grads.items()}
    check_finite("gradients", *grads.values())
    return grads


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], threshold: float | None) -> dict[str, np.ndarray]:
    if threshold is None:
        return grads
    norm = global_norm(grads)
    if norm <= threshold:
        return grads
    scale = threshold / norm
    return {k: g * g.dtype.type(scale) for k, g in grads.items()}


class Adam:
    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads, policy: PrecisionPolicy):
        if not self.m:
            dt = policy.dtype(_OPT)
            self.m = {k: np.zeros(p.shape, dt) for k, p in params.items()}
            self.v = {k: np.zeros(p.shape, dt) for k, p in params.items()}
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        out = {}
        for k, p in params.items():
            g = apply_policy(_OPT, policy, grads[k])
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            step = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            out[k] = p - apply_policy(_PAR, policy, step.astype(m.dtype, copy=False))
        return out

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in (*self.m.values(), *self.v.values()))


class SGD:
    def __init__(self, lr=0.001):
        self.lr = lr

    def step(self, params, grads, policy: PrecisionPolicy):
        return {k: p - apply_policy(_PAR, policy, self.lr * grads[k]) for k, p in params.items()}

    nbytes = 0


def optimizer_step(params, grads, opt, policy: PrecisionPolicy):
    return opt.step(params, grads, policy)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 0.001
    precision: PrecisionPolicy = field(default_factory=lambda: PrecisionPolicy(Scheme.DOUBLE))
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not isinstance(self.precision, PrecisionPolicy):
            self.precision = PrecisionPolicy.from_scheme(self.precision)

    def make_optimizer(self):
        if self.optimizer == "sgd":
            return SGD(self.lr)
        return Adam(self.lr, self.beta1, self.beta2, self.eps)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "precision": self.precision.scheme.value,
            "widths": {g.value: w for g, w in self.precision.widths.items()},
            "seed": self.seed,
            "optimizer": self.optimizer,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "clip_norm": self.clip_norm,
        }



def _run_epochs(hidden, X, y, params, opt, config: TrainConfig, report: TrainReport):
    policy = config.precision
    rng = np.random.default_rng(config.seed)
    n = len(y)
    peak = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            work = {k: apply_policy(_ACT, policy, v) for k, v in params.items()}
            xb = apply_policy(_ACT, policy, X[idx])
            yb = apply_policy(_ACT, policy, y[idx])
            cache = forward_batch(work, xb, hidden)
            loss = float(np.mean(np.square(cache.pred - yb, dtype=np.float64)))
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became non-finite in epoch {epoch}")
            total += loss * len(idx)
            grads = backward_batch(work, cache, yb)
            grads = {k: apply_policy(_GRAD, policy, g) for k, g in grads.items()}
            grads = clip_gradients(grads, config.clip_norm)
            params = opt.step(params, grads, policy)
            if start == 0 and epoch == 1:
                peak = (sum(p.nbytes for p in params.values()) * 2 + opt.nbytes
                        + sum(w.nbytes for w in work.values()) + cache.nbytes + X.nbytes + y.nbytes)
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            raise TrainingDiverged(f"loss became non-finite in epoch {epoch}")
        report.losses.append(epoch_loss)
        report.epoch_seconds.append(time.perf_counter() - t0)
    return params, peak


def train(model: LstmModel, train_set: WindowedDataset, config: TrainConfig) -> tuple[LstmModel, TrainReport]:
    """Minibatch BPTT training; returns a new model and the loss/timing history.

    Pairs are reshuffled every epoch from ``config.seed``. Losses are the
    sample-weighted mean of the batch MSEs seen during each epoch.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if train_set.k != model.T:
        raise ValueError(f"model unrolls {model.T} steps but the dataset has k={train_set.k}")
    policy = config.precision
    X = apply_policy(_IN, policy, train_set.features)
    y = apply_policy(_IN, policy, train_set.targets)
    params = {k: apply_policy(_PAR, policy, v) for k, v in model.params.items()}
    opt = config.make_optimizer()
    report = TrainReport(model="lstm", scheme=policy.scheme.value, config=config.to_dict())

    t_start = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        params, peak = _run_epochs(model.hidden, X, y, params, opt, config, report)
    report.total_seconds = time.perf_counter() - t_start
    report.peak_memory_bytes = int(peak)
    report.split_hash = array_hash(train_set.features, train_set.targets)

    trained = replace(
        model,
        params=params,
        scheme=policy.scheme.value,
        cap=train_set.cap,
        normalization=train_set.normalization,
    )
    return trained, report


def predict(model: LstmModel, dataset: WindowedDataset, policy: PrecisionPolicy | None = None,
            chunk: int = 4096) -> np.ndarray:
    """Forecasts in kW (rescaled by capacity for normalized datasets)."""
    if len(dataset) == 0:
        return np.zeros(0)
    if dataset.k != model.T:
        raise ValueError(f"model unrolls {model.T} steps but the dataset has k={dataset.k}")
    policy = policy or PrecisionPolicy.from_scheme(model.scheme)
    work = _compute_params(model, policy)
    X = apply_policy(_IN, policy, dataset.features)
    out = []
    for start in range(0, len(dataset), chunk):
        pred = forward_batch(work, apply_policy(_ACT, policy, X[start:start + chunk]), model.hidden).pred
        check_finite("prediction", pred)
        out.append(pred.astype(np.float64))
    return dataset.to_kw(np.concatenate(out))


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    tolerance: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def numerical_gradients(model: LstmModel, X: np.ndarray, y: np.ndarray, delta: float = 1e-6,
                        dtype=np.longdouble) -> dict[str, np.ndarray]:
    """Central differences of the batch MSE, one parameter entry at a time.

    The loss is evaluated in ``dtype`` (extended precision by default) so that
    cancellation in ``f(p+d) - f(p-d)`` stays well below the tolerance even
    for gradient entries around 1e-6.
    """
    params = {k: np.array(v, dtype=dtype) for k, v in model.params.items()}
    X = np.asarray(X, dtype=dtype)
    y = np.asarray(y, dtype=dtype)

    def loss():
        r = forward_batch(params, X, model.hidden).pred - y
        return np.mean(r * r)

    step = dtype(delta)
    out = {}
    for name, p in params.items():
        g = np.zeros(p.shape)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = loss()
            p[idx] = orig - step
            down = loss()
            p[idx] = orig
            g[idx] = float((up - down) / (2 * step))
        out[name] = g
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """``|a-b| / max(|a|, |b|)``; entries where both are below ``floor`` count as exact."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.abs(a), np.abs(b))
    return np.where(scale < floor, 0.0, np.abs(a - b) / np.where(scale < floor, 1.0, scale))


def gradient_check(model: LstmModel, X, y, delta: float = 1e-6, tolerance: float = 1e-6,
                   analytic: dict[str, np.ndarray] | None = None) -> GradCheckReport:
    """Compare BPTT gradients (or ``analytic`` if given) with central differences."""
    if any(p.dtype != np.float64 for p in model.params.values()):
        raise ValueError("gradient checking needs 64-bit parameters")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if analytic is None:
        cache = forward_batch(model.params, X, model.hidden)
        analytic = backward_batch(model.params, cache, y)
    numeric = numerical_gradients(model, X, y, delta)
    worst = (0.0, "", ())
    count = 0
    for name in PARAM_NAMES:
        rel = relative_error(analytic[name], numeric[name])
        count += rel.size
        i = np.unravel_index(int(np.argmax(rel)), rel.shape)
        if rel[i] > worst[0] or not worst[1]:
            worst = (float(rel[i]), name, tuple(int(j) for j in i))
    return GradCheckReport(worst[0], worst[1], worst[2], tolerance, count)
