"""Dense ReLU/softmax classifier trained with Nadam, written against NumPy only."""

from __future__ import annotations

import contextlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDataset, IoError, LabelOutOfRange, NonFiniteLoss, SchemaMismatch, ShapeMismatch
from .rng import RngStream, as_stream

log = logging.getLogger(__name__)

MODEL_SCHEMA = 1
PROB_FLOOR = 1e-15


@dataclass
class MLPModel:
    sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    layout_hash: str = ""
    binning_id: str = ""
    bin_edges: np.ndarray | None = None

    def __post_init__(self):
        if len(self.sizes) < 2 or len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeMismatch("layer sizes and parameter lists disagree")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ShapeMismatch(f"layer {i}: W {W.shape}, b {b.shape} vs sizes {self.sizes}")
        if self.bin_edges is not None:
            self.bin_edges = np.asarray(self.bin_edges, dtype=float)
            if self.bin_edges.size != self.sizes[-1] + 1:
                raise ShapeMismatch("bin edges do not match the output layer")

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def midpoints(self) -> np.ndarray:
        e = self.bin_edges
        return (e[:-1] + e[1:]) / 2

    def copy(self) -> "MLPModel":
        return MLPModel(list(self.sizes), [W.copy() for W in self.weights], [b.copy() for b in self.biases],
                        self.layout_hash, self.binning_id, None if self.bin_edges is None else self.bin_edges.copy())


def init_model(sizes: Sequence[int], rng: RngStream | int | None = None, **meta) -> MLPModel:
    """Scaled-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = as_stream(rng)
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MLPModel(list(sizes), Ws, bs, **meta)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(model: MLPModel, X: np.ndarray):
    acts, pre = [X], []
    a = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        pre.append(z)
        a = softmax(z) if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts, pre


def forward(model: MLPModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.sizes[0]:
        raise ShapeMismatch(f"expected {model.sizes[0]} input features, got {x.shape[-1]}")
    single = x.ndim == 1
    acts, _ = _forward_cache(model, x[None, :] if single else x)
    return acts[-1][0] if single else acts[-1]


def loss(probs: np.ndarray, labels) -> float:
    """Mean categorical cross-entropy with a probability floor."""
    probs = np.atleast_2d(probs)
    labels = np.atleast_1d(np.asarray(labels))
    if np.any(labels < 0) or np.any(labels >= probs.shape[1]):
        raise LabelOutOfRange(f"labels must lie in [0, {probs.shape[1]})")
    picked = probs[np.arange(labels.size), labels]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def backward(model: MLPModel, X: np.ndarray, y: np.ndarray) -> tuple[list[np.ndarray], float]:
    """Gradients of the mean cross-entropy, ordered like ``model.params``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ShapeMismatch("empty batch")
    if X.shape[1] != model.sizes[0] or y.shape != (X.shape[0],):
        raise ShapeMismatch(f"batch shapes X {X.shape}, y {y.shape} do not fit sizes {model.sizes}")
    acts, pre = _forward_cache(model, X)
    probs = acts[-1]
    value = loss(probs, y)
    B = X.shape[0]
    delta = probs.copy()
    delta[np.arange(B), y] -= 1.0
    delta /= B
    grads: list[np.ndarray] = []
    for i in range(len(model.weights) - 1, -1, -1):
        gW = acts[i].T @ delta
        gb = delta.sum(axis=0)
        grads = [gW, gb] + grads
        if i > 0:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    return grads, value


@dataclass
class NadamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "NadamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: tuple[int, ...] = (128, 64)
    patience: int = 20
    seed: int = 0
    tolerance: float = 0.01
    strict_deterministic: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be >= 1")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("learning rate and eps must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


# reference configurations of the full-size runs (not meant for a laptop)
PAPER_PRESETS = {
    "2q-outcomes": TrainConfig(epochs=200, batch_size=2048, hidden=(2000,)),
    "3q-outcomes": TrainConfig(epochs=400, batch_size=4096, hidden=(2000,)),
    "4q-outcomes": TrainConfig(epochs=400, batch_size=8192, hidden=(2000,)),
    "5q-outcomes": TrainConfig(epochs=200, batch_size=16384, hidden=(500, 300)),
    "6q-outcomes": TrainConfig(epochs=500, batch_size=16384, hidden=(1500, 1500)),
    "7q-outcomes": TrainConfig(epochs=500, batch_size=16384, hidden=(1000, 400)),
    "8q-outcomes": TrainConfig(epochs=500, batch_size=16384, hidden=(1000, 400)),
    "4q-pauli": TrainConfig(epochs=400, batch_size=8192, hidden=(3000,)),
    "5q-pauli": TrainConfig(epochs=500, batch_size=16384, hidden=(1000, 300)),
    "6q-pauli": TrainConfig(epochs=500, batch_size=16384, hidden=(700, 300)),
}


def nadam_step(state: NadamState, params: list[np.ndarray], grads: list[np.ndarray], config: TrainConfig) -> None:
    """In-place Nesterov-Adam update of ``params``."""
    b1, b2 = config.beta1, config.beta2
    state.t += 1
    t = state.t
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p -= config.learning_rate * (b1 * m_hat + (1.0 - b1) * g / c1) / (np.sqrt(v_hat) + config.eps)


def predict_fidelity(model: MLPModel, X: np.ndarray, weighted: bool = False) -> np.ndarray:
    """Midpoint of the arg-max bin (or the probability-weighted midpoint)."""
    probs = forward(model, X)
    mids = model.midpoints
    if weighted:
        return probs @ mids
    return mids[np.argmax(probs, axis=-1)]


def accuracy_pm(model: MLPModel, X: np.ndarray, f_true: np.ndarray, tol: float = 0.01) -> float:
    """Fraction of records whose predicted bin midpoint lies within ``tol`` of the truth."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    f_true = np.asarray(f_true, dtype=float)
    if f_true.size == 0:
        return float("nan")
    return float(np.mean(np.abs(predict_fidelity(model, X) - f_true) <= tol))


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = -1
    seconds: float = 0.0

    def rows(self):
        for e, l, a in zip(self.epoch, self.loss, self.val_acc):
            yield {"epoch": e, "loss": l, "val_acc_pm1": a}


@contextlib.contextmanager
def _blas_threads(strict: bool):
    if not strict:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    with threadpool_limits(limits=1):
        yield


def train(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    f_val: np.ndarray,
    config: TrainConfig,
    bin_edges: np.ndarray,
    *,
    layout_hash: str = "",
    binning_id: str = "",
) -> tuple[MLPModel, History]:
    """Mini-batch training with early stopping on validation +-tol accuracy."""
    X_train = np.asarray(X_train, dtype=float)
    y_train = np.asarray(y_train, dtype=np.int64)
    if X_train.shape[0] == 0 or len(f_val) == 0:
        raise EmptyDataset("training and validation sets must be nonempty")
    n_out = len(bin_edges) - 1
    if np.any(y_train < 0) or np.any(y_train >= n_out):
        raise LabelOutOfRange("training labels exceed the number of bins")
    root = RngStream(config.seed)
    sizes = [X_train.shape[1], *config.hidden, n_out]
    model = init_model(sizes, root.child(0), layout_hash=layout_hash, binning_id=binning_id, bin_edges=bin_edges)
    state = NadamState.zeros_like(model.params)
    hist = History()
    best, best_acc, stale = model.copy(), -1.0, 0
    start = time.perf_counter()
    N = X_train.shape[0]
    with _blas_threads(config.strict_deterministic):
        for epoch in range(config.epochs):
            order = root.child(1, epoch).permutation(N)
            total = 0.0
            for s in range(0, N, config.batch_size):
                idx = order[s:s + config.batch_size]
                grads, value = backward(model, X_train[idx], y_train[idx])
                if not math.isfinite(value):
                    raise NonFiniteLoss(f"loss became {value} at epoch {epoch}, batch starting {s}")
                params = model.params
                nadam_step(state, params, grads, config)
                total += value * idx.size
            acc = accuracy_pm(model, X_val, f_val, config.tolerance)
            hist.epoch.append(epoch)
            hist.loss.append(total / N)
            hist.val_acc.append(acc)
            if acc > best_acc:
                best, best_acc, stale = model.copy(), acc, 0
                hist.best_epoch = epoch
            else:
                stale += 1
                if stale >= config.patience:
                    break
    hist.seconds = time.perf_counter() - start
    log.info("trained %s in %.1fs, best val acc %.4f at epoch %d", sizes, hist.seconds, best_acc, hist.best_epoch)
    return best, hist


def train_on(dataset, config: TrainConfig) -> tuple[MLPModel, History]:
    """Convenience wrapper taking a :class:`nnfidelity.dataset.Dataset`."""
    tr, va = dataset.train, dataset.val
    spec = dataset.feature_spec
    b = dataset.binning
    return train(tr.X, tr.y, va.X, va.f, config, b.edges, layout_hash=spec.layout_hash, binning_id=b.id)


def model_to_dict(model: MLPModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA,
        "sizes": list(model.sizes),
        "activation": {"hidden": "relu", "output": "softmax"},
        "layout_hash": model.layout_hash,
        "binning_id": model.binning_id,
        "bin_edges": None if model.bin_edges is None else [float(e) for e in model.bin_edges],
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in zip(model.weights, model.biases)],
    }


def model_from_dict(d: dict) -> MLPModel:
    if d.get("schema_version") != MODEL_SCHEMA:
        raise SchemaMismatch(f"unsupported model schema {d.get('schema_version')!r}")
    try:
        Ws = [np.array(layer["W"], dtype=float) for layer in d["layers"]]
        bs = [np.array(layer["b"], dtype=float) for layer in d["layers"]]
        model = MLPModel(list(d["sizes"]), Ws, bs, d.get("layout_hash", ""), d.get("binning_id", ""),
                         d.get("bin_edges"))
    except (KeyError, ValueError, ShapeMismatch) as exc:
        raise SchemaMismatch(f"malformed model document: {exc}") from exc
    if not all(np.all(np.isfinite(p)) for p in model.params):
        raise SchemaMismatch("model contains non-finite parameters")
    return model


def save_model(model: MLPModel, path: str | Path, force: bool = False) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} already exists")
    path.parent.mkdir(parents=True, exist_ok=True)
    # json writes floats with their shortest round-trip repr, so reloads are exact
    path.write_text(json.dumps(model_to_dict(model)), encoding="utf-8")
    return path


def load_model(path: str | Path, expected_layout_hash: str | None = None) -> MLPModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IoError(f"cannot read model {path}: {exc}") from exc
    model = model_from_dict(doc)
    if expected_layout_hash is not None and model.layout_hash != expected_layout_hash:
        raise SchemaMismatch("model was trained on a different feature layout")
    return model


def config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(config.hidden)
    return d
