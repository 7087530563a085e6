"""Fully connected ReLU networks ``R^{d_H} -> R^{d_Y}`` written directly in numpy.

A network maps ``a`` to ``W_L relu(... relu(W_1 a + b_1) ...) + b_L`` on the
clamp box ``[-M, M]^{d_H}`` and to zero outside it.  Training minimises the
empirical mean squared code error with minibatch SGD, momentum or Adam.
"""
from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, step: int):
        self.epoch, self.step = epoch, step
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}")


class BudgetError(ValueError):
    def __init__(self, r: float, budget: int):
        self.r = r
        super().__init__(f"parameter bound r={r:.6g} exceeds budget {budget}")


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...]
    clamp: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input and output dimensions must be positive")
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def depth(self) -> int:
        return len(self.hidden) + 1

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum((w[i] + 1) * w[i + 1] for i in range(len(w) - 1))


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        """Layer-major concatenation: ``W_1`` (row-major), ``b_1``, ``W_2``, ..."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)

    @classmethod
    def unflat(cls, arch: MlpArchitecture, flat: np.ndarray) -> "MlpParams":
        w = arch.widths
        weights, biases, pos = [], [], 0
        for i in range(len(w) - 1):
            n = w[i + 1] * w[i]
            weights.append(flat[pos:pos + n].reshape(w[i + 1], w[i]).copy())
            pos += n
            biases.append(flat[pos:pos + w[i + 1]].copy())
            pos += w[i + 1]
        if pos != flat.size:
            raise ValueError(f"expected {pos} parameters, got {flat.size}")
        return cls(weights, biases)


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    MOMENTUM = "momentum"
    ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: Optimizer = Optimizer.ADAM
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int | None = None
    freeze_hidden: bool = False
    momentum: float = 0.9
    grad_chunks: int = 1
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.validation_fraction <= 0.5:
            raise ValueError("validation fraction must lie in [0, 0.5]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch size >= 1")


def init_params(arch: MlpArchitecture, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    w = arch.widths
    weights, biases = [], []
    for fan_in, fan_out in zip(w[:-1], w[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _inside(a: np.ndarray, clamp: float | None) -> np.ndarray:
    if clamp is None:
        return np.ones(a.shape[0], dtype=bool)
    return np.all(np.abs(a) <= clamp, axis=1)


def _forward_cache(params: MlpParams, a: np.ndarray):
    pre, post = [], [a]
    h = a
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        post.append(h)
    return pre, post


def forward(params: MlpParams, a, clamp: float | None = None) -> np.ndarray:
    """Network output; rows of ``a`` outside ``[-clamp, clamp]^{d_H}`` map to zero."""
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    a2 = np.atleast_2d(a)
    out = _forward_cache(params, a2)[1][-1]
    out = np.where(_inside(a2, clamp)[:, None], out, 0.0)
    return out[0] if single else out


def loss(params: MlpParams, inputs, targets, clamp: float | None = None) -> float:
    inputs, targets = np.atleast_2d(inputs), np.atleast_2d(targets)
    if inputs.shape[0] == 0:
        raise ValueError("loss of an empty batch")
    diff = forward(params, inputs, clamp) - targets
    return float(np.mean(np.sum(diff**2, axis=1)))


def _grad_sum(params: MlpParams, a: np.ndarray, y: np.ndarray, clamp):
    """Gradient of the summed squared error over the rows of ``a``."""
    pre, post = _forward_cache(params, a)
    delta = 2.0 * (post[-1] - y)
    delta[~_inside(a, clamp)] = 0.0
    gw, gb = [], []
    for i in range(len(params.weights) - 1, -1, -1):
        gw.append(delta.T @ post[i])
        gb.append(delta.sum(axis=0))
        if i > 0:
            # relu'(0) := 0
            delta = (delta @ params.weights[i]) * (pre[i - 1] > 0.0)
    return gw[::-1], gb[::-1]


def _tree_sum(items):
    while len(items) > 1:
        nxt = []
        for i in range(0, len(items) - 1, 2):
            (w1, b1), (w2, b2) = items[i], items[i + 1]
            nxt.append(([x + y for x, y in zip(w1, w2)], [x + y for x, y in zip(b1, b2)]))
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def grad(params: MlpParams, inputs, targets, clamp: float | None = None,
         chunks: int = 1, workers: int = 1) -> MlpParams:
    """Exact gradient of :func:`loss`.

    The batch is cut into ``chunks`` contiguous pieces whose gradients are
    summed pairwise in a fixed tree, so ``workers`` never changes the result.
    """
    a, y = np.atleast_2d(np.asarray(inputs, float)), np.atleast_2d(np.asarray(targets, float))
    n = a.shape[0]
    if n == 0:
        raise ValueError("gradient of an empty batch")
    bounds = np.linspace(0, n, min(chunks, n) + 1).astype(int)
    pieces = [(a[s:e], y[s:e]) for s, e in zip(bounds[:-1], bounds[1:])]
    if workers > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda p: _grad_sum(params, p[0], p[1], clamp), pieces))
    else:
        parts = [_grad_sum(params, p[0], p[1], clamp) for p in pieces]
    gw, gb = _tree_sum(parts)
    return MlpParams([w / n for w in gw], [b / n for b in gb])


class _Stepper:
    def __init__(self, cfg: TrainConfig, params: MlpParams):
        self.cfg = cfg
        self.t = 0
        zeros = lambda: [np.zeros_like(x) for x in params.weights + params.biases]  # noqa: E731
        self.m1, self.m2 = zeros(), zeros()

    def step(self, params: MlpParams, g: MlpParams) -> None:
        cfg = self.cfg
        self.t += 1
        tensors = params.weights + params.biases
        grads = g.weights + g.biases
        n_layers = len(params.weights)
        for idx, (p, dp) in enumerate(zip(tensors, grads)):
            layer = idx % n_layers
            if cfg.freeze_hidden and layer != n_layers - 1:
                continue
            if cfg.optimizer is Optimizer.SGD:
                p -= cfg.learning_rate * dp
            elif cfg.optimizer is Optimizer.MOMENTUM:
                self.m1[idx] = cfg.momentum * self.m1[idx] + dp
                p -= cfg.learning_rate * self.m1[idx]
            else:
                b1, b2, eps = 0.9, 0.999, 1e-8
                self.m1[idx] = b1 * self.m1[idx] + (1 - b1) * dp
                self.m2[idx] = b2 * self.m2[idx] + (1 - b2) * dp * dp
                mhat = self.m1[idx] / (1 - b1**self.t)
                vhat = self.m2[idx] / (1 - b2**self.t)
                p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)


@dataclass
class TrainResult:
    params: MlpParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def train(inputs, targets, arch: MlpArchitecture, cfg: TrainConfig,
          init: MlpParams | None = None) -> TrainResult:
    """Minibatch training; returns the parameters with the best validation loss."""
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.shape[1] != arch.input_dim or y.shape[1] != arch.output_dim:
        raise ValueError(f"data dims ({x.shape[1]}, {y.shape[1]}) do not match architecture "
                         f"({arch.input_dim}, {arch.output_dim})")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(x.shape[0])
    n_val = int(round(cfg.validation_fraction * x.shape[0]))
    val_idx, tr_idx = order[:n_val], order[n_val:]
    xt, yt, xv, yv = x[tr_idx], y[tr_idx], x[val_idx], y[val_idx]
    params = init.copy() if init is not None else init_params(arch, cfg.seed)
    stepper = _Stepper(cfg, params)
    clamp = arch.clamp

    def evaluate():
        # overflow here is divergence; the finiteness check below reports it
        with np.errstate(over="ignore", invalid="ignore"):
            tr = loss(params, xt, yt, clamp)
            va = loss(params, xv, yv, clamp) if n_val else tr
        return tr, va

    tr0, va0 = evaluate()
    history = [{"epoch": 0, "train": tr0, "val": va0}]
    best, best_val, best_epoch, stale = params.copy(), va0, 0, 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(xt.shape[0])
        for step, s in enumerate(range(0, xt.shape[0], cfg.batch_size)):
            idx = perm[s:s + cfg.batch_size]
            g = grad(params, xt[idx], yt[idx], clamp, cfg.grad_chunks, cfg.workers)
            stepper.step(params, g)
        tr, va = evaluate()
        if not (math.isfinite(tr) and math.isfinite(va)):
            raise TrainingError(epoch, step)
        history.append({"epoch": epoch, "train": tr, "val": va})
        if va < best_val:
            best, best_val, best_epoch, stale = params.copy(), va, epoch, 0
        else:
            stale += 1
            if cfg.patience is not None and stale > cfg.patience:
                break
    return TrainResult(best, history, best_epoch)


@dataclass(frozen=True)
class SizeEstimate:
    depth: int
    params: int
    width: int | None


def size_for_accuracy(delta: float, d_H: int, d_Y: int, R: float, c: float = 1.0,
                      budget: int = 10**9) -> SizeEstimate:
    """Depth and parameter budget from the Yarotsky-type bounds.

    ``L = ceil(c (log(R sqrt(d_Y) / (delta sqrt(d_H))) + 1))`` and
    ``r = ceil(c (delta sqrt(d_H) / (2R))^(-d_H) (log(...) + 1))``; ``width`` is the
    largest uniform hidden width whose parameter count fits in ``r`` at depth ``L``.
    """
    if delta <= 0 or c <= 0:
        raise ValueError("delta and c must be positive")
    log_term = math.log(R * math.sqrt(d_Y) / (delta * math.sqrt(d_H))) + 1.0
    depth = max(1, math.ceil(c * log_term))
    r_real = c * (delta * math.sqrt(d_H) / (2.0 * R)) ** (-d_H) * log_term
    if not math.isfinite(r_real) or r_real > budget:
        raise BudgetError(r_real, budget)
    r = max(1, math.ceil(r_real))
    width = None
    if depth > 1:
        count = lambda w: MlpArchitecture(d_H, d_Y, (w,) * (depth - 1)).n_params  # noqa: E731
        if count(1) <= r:
            lo, hi = 1, 2
            while count(hi) <= r:
                lo, hi = hi, 2 * hi
            while hi - lo > 1:
                mid = (lo + hi) // 2
                lo, hi = (mid, hi) if count(mid) <= r else (lo, mid)
            width = lo
    return SizeEstimate(depth, r, width)


def save_model(path, arch: MlpArchitecture, params: MlpParams, seed: int, train_cfg: TrainConfig | None = None,
               extra: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {"architecture": {"input_dim": arch.input_dim, "output_dim": arch.output_dim,
                             "hidden": list(arch.hidden), "clamp": arch.clamp,
                             "n_params": arch.n_params},
            "seed": seed,
            "train_config": None if train_cfg is None else
            {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in asdict(train_cfg).items()}}
    if extra:
        meta.update(extra)
    (path / "weights.f64").write_bytes(params.flat().astype("<f8").tobytes())
    (path / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_model(path) -> tuple[MlpArchitecture, MlpParams, dict]:
    path = Path(path)
    meta = json.loads((path / "model.json").read_text())
    a = meta["architecture"]
    arch = MlpArchitecture(a["input_dim"], a["output_dim"], tuple(a["hidden"]), a["clamp"])
    flat = np.frombuffer((path / "weights.f64").read_bytes(), dtype="<f8").astype(float)
    return arch, MlpParams.unflat(arch, flat), meta
