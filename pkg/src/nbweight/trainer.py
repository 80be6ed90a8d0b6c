"""Deterministic sample-weighted training of a one-hidden-layer MLP.

The objective for a batch of ``N`` samples is ``(1/N) * sum_i w_i * CE_i``:
the divisor is the sample count, not the weight total. Training is plain
mini-batch gradient descent; initialization and batch order depend only on
``TrainConfig.seed``, never on the sample weights, so two runs that differ
only in weights start from the same parameters and see the same batches.
"""

from __future__ import annotations

import json
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from threadpoolctl import threadpool_limits

from .dataset import Dataset
from .errors import DataError, NumericalError

PROB_FLOOR = 1e-12
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    hidden: int = 64
    seed: int = 0
    deterministic: bool = True
    activation: str = "relu"
    renormalize: bool = False  # divide by the batch weight total instead of N (non-default)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("epochs must be >= 0; batch_size and hidden must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


@dataclass(frozen=True, eq=False)
class ModelParameters:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return self.W1, self.b1, self.W2, self.b2

    def equals(self, other: "ModelParameters") -> bool:
        """Bitwise equality of every parameter array."""
        return self.activation == other.activation and all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays(), other.arrays()))


@dataclass(frozen=True, eq=False)
class TrainedModel:
    params: ModelParameters
    loss_trace: tuple[float, ...]
    accuracy: float
    config: TrainConfig
    seed: int

    def predict_proba(self, X) -> np.ndarray:
        return forward(self.params, np.asarray(X, dtype=np.float64))[2]


@dataclass(frozen=True, eq=False)
class Evaluation:
    accuracy: float
    probs: np.ndarray
    confusion: np.ndarray


def init_params(d: int, hidden: int, C: int, rng: np.random.Generator,
                activation: str = "relu") -> ModelParameters:
    """Glorot-uniform weights, zero biases."""
    a1 = np.sqrt(6.0 / (d + hidden))
    a2 = np.sqrt(6.0 / (hidden + C))
    return ModelParameters(rng.uniform(-a1, a1, (d, hidden)), np.zeros(hidden),
                           rng.uniform(-a2, a2, (hidden, C)), np.zeros(C), activation)


def softmax(Z: np.ndarray) -> np.ndarray:
    E = np.exp(Z - Z.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def forward(params: ModelParameters, X: np.ndarray):
    """Returns ``(pre-activation, hidden activation, probabilities)``."""
    Z1 = X @ params.W1 + params.b1
    A = np.maximum(Z1, 0.0) if params.activation == "relu" else np.tanh(Z1)
    return Z1, A, softmax(A @ params.W2 + params.b2)


def weighted_loss(probs, labels, weights, divisor: float | None = None) -> float:
    """``(1/N) * sum_i weights[i] * CE(probs[i], labels[i])`` with a 1e-12 probability floor."""
    P = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if P.ndim != 2 or y.shape != (P.shape[0],) or w.shape != y.shape:
        raise ValueError("shape mismatch between probabilities, labels and weights")
    if np.any(w < 0):
        raise ValueError("negative sample weight")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1")
    ce = -np.log(np.maximum(P[np.arange(y.size), y], PROB_FLOOR))
    return float((w * ce).sum() / (y.size if divisor is None else divisor))


def loss_and_grads(params: ModelParameters, X, y, w, divisor: float | None = None):
    """Weighted objective and its analytic gradients ``(dW1, db1, dW2, db2)``.

    The gradient ignores the probability floor, i.e. it is exact whenever every
    true-class probability exceeds 1e-12.
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0] if divisor is None else divisor
    Z1, A, P = forward(params, X)
    rows = np.arange(X.shape[0])
    loss = float((w * -np.log(np.maximum(P[rows, y], PROB_FLOOR))).sum() / N)
    dZ2 = P
    dZ2[rows, y] -= 1.0
    dZ2 *= (w / N)[:, None]
    dW2 = A.T @ dZ2
    db2 = dZ2.sum(axis=0)
    dA = dZ2 @ params.W2.T
    dZ1 = dA * (Z1 > 0) if params.activation == "relu" else dA * (1.0 - A * A)
    return loss, (X.T @ dZ1, dZ1.sum(axis=0), dW2, db2)


def _weight_vector(data: Dataset, weights) -> np.ndarray:
    if isinstance(weights, Mapping):
        try:
            w = np.array([weights[int(i)] for i in data.ids], dtype=np.float64)
        except KeyError as exc:
            raise DataError(f"no weight for sample id {exc.args[0]}") from None
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (data.n,):
            raise DataError("weights must cover every sample")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise DataError("weights must be finite and non-negative")
    return w


def seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for initialization and batch order."""
    init_ss, order_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(order_ss)


def train(data: Dataset, weights, cfg: TrainConfig = TrainConfig(),
          eval_data: Dataset | None = None) -> TrainedModel:
    """Train on ``data`` with per-sample ``weights`` (id mapping or aligned array).

    ``accuracy`` of the result is measured on ``eval_data`` when given,
    otherwise on the training data.
    """
    if data.n == 0:
        raise DataError("empty dataset")
    w = _weight_vector(data, weights)
    X, y = np.asarray(data.features), np.asarray(data.labels)
    n = data.n
    init_rng, order_rng = seed_streams(cfg.seed)
    p = init_params(data.d, cfg.hidden, data.class_count, init_rng, cfg.activation)
    W1, b1, W2, b2 = (a.copy() for a in p.arrays())
    lr, bs = cfg.learning_rate, cfg.batch_size
    trace = []

    limits = threadpool_limits(1) if cfg.deterministic else nullcontext()
    with limits, np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = order_rng.permutation(n)
            total = 0.0
            for b, start in enumerate(range(0, n, bs)):
                idx = order[start:start + bs]
                wb = w[idx]
                divisor = wb.sum() if cfg.renormalize else idx.size
                if divisor == 0:
                    continue
                cur = ModelParameters(W1, b1, W2, b2, cfg.activation)
                loss, (gW1, gb1, gW2, gb2) = loss_and_grads(cur, X[idx], y[idx], wb, divisor)
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
                W1 -= lr * gW1
                b1 -= lr * gb1
                W2 -= lr * gW2
                b2 -= lr * gb2
                total += loss * idx.size
            trace.append(total / n)
        if not all(np.all(np.isfinite(a)) for a in (W1, b1, W2, b2)):
            raise NumericalError("non-finite model parameters after training")

    params = ModelParameters(W1, b1, W2, b2, cfg.activation)
    for a in params.arrays():
        a.setflags(write=False)
    model = TrainedModel(params, tuple(trace), 0.0, cfg, cfg.seed)
    acc = evaluate(model, eval_data if eval_data is not None else data).accuracy
    object.__setattr__(model, "accuracy", acc)
    return model


def evaluate(model: TrainedModel, data: Dataset) -> Evaluation:
    """Accuracy, probability rows and confusion matrix (rows = true class)."""
    d, _, C = model.params.shape
    if data.d != d:
        raise DataError(f"model expects {d} features, data has {data.d}")
    P = model.predict_proba(data.features)
    pred = P.argmax(axis=1)
    C = max(C, data.class_count)
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (data.labels, pred), 1)
    return Evaluation(float(np.mean(pred == data.labels)), P, confusion)


def save_model(model: TrainedModel, path) -> None:
    """Write a checkpoint; ``.json`` suffix gives JSON, anything else binary ``.npz``."""
    path = Path(path)
    meta = {"version": CHECKPOINT_VERSION, "activation": model.params.activation,
            "config": asdict(model.config), "seed": model.seed,
            "accuracy": model.accuracy, "loss_trace": list(model.loss_trace)}
    if path.suffix == ".json":
        meta["params"] = {k: a.tolist() for k, a in zip(("W1", "b1", "W2", "b2"), model.params.arrays())}
        path.write_text(json.dumps(meta, indent=1), encoding="utf-8")
        return
    with path.open("wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), W1=model.params.W1, b1=model.params.b1,
                 W2=model.params.W2, b2=model.params.b2)


def load_model(path) -> TrainedModel:
    path = Path(path)
    if path.suffix == ".json":
        meta = json.loads(path.read_text(encoding="utf-8"))
        arrays = {k: np.array(v, dtype=np.float64) for k, v in meta.pop("params").items()}
    else:
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in ("W1", "b1", "W2", "b2")}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {meta.get('version')}")
    params = ModelParameters(arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"], meta["activation"])
    return TrainedModel(params, tuple(meta["loss_trace"]), float(meta["accuracy"]),
                        TrainConfig(**meta["config"]), int(meta["seed"]))
