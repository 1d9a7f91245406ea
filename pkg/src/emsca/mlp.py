"""Dense ReLU network with softmax output, trained by backpropagation.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch flows as
``x @ W + b``. Every layer carries a trainable flag; frozen layers still
pass gradients downward but never receive parameter updates, and
backpropagation stops at the lowest trainable layer.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Scaler, _pack_names, _Reader, fit_scaler
from .errors import ArgumentError, ContractError, DataError, FormatError, ShapeError, TrainingError
from .spectral import SpectralDataset

DEFAULT_HIDDEN = (1400, 800, 500, 200, 100)
DEFAULT_INPUT = 2048

EMNN_MAGIC = b"EMNN"
EMNN_VERSION = 1

_PREDICT_CHUNK = 4096


def default_dims(n_classes: int = 10, input_dim: int = DEFAULT_INPUT) -> list[int]:
    return [input_dim, *DEFAULT_HIDDEN, n_classes]


def layer_param_counts(layer_dims) -> list[int]:
    return [a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:])]


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    trainable: list[bool]
    scaler: Scaler | None = None
    class_names: list[str] = field(default_factory=list)
    seed: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.trainable),
            None if self.scaler is None else Scaler(self.scaler.mean.copy(), self.scaler.std.copy()),
            list(self.class_names),
            self.seed,
        )

    def set_trainable(self, mask) -> None:
        mask = [bool(m) for m in mask]
        if len(mask) != self.n_layers:
            raise ArgumentError(f"mask has {len(mask)} entries for {self.n_layers} layers")
        self.trainable = mask


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    optimizer: str = "adam"
    learning_rate: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        # zero epochs is allowed so a transfer run can be a no-op
        if self.epochs < 0:
            raise ArgumentError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be positive, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ArgumentError(f"unknown optimizer {self.optimizer!r}")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-3 if self.optimizer == "adam" else 1e-2

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "optimizer": self.optimizer, "learning_rate": self.lr,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "seed": self.seed, "shuffle_each_epoch": self.shuffle_each_epoch}


@dataclass
class TrainReport:
    loss: list[float]
    accuracy: list[float]
    val_loss: list[float]
    val_accuracy: list[float]
    wall_time_seconds: float
    trainable_params: int
    total_params: int
    epochs: int
    n_train: int

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "epochs": self.epochs,
            "n_train": self.n_train,
            "trainable_params": self.trainable_params,
            "total_params": self.total_params,
            "loss": self.loss,
            "accuracy": self.accuracy,
            "val_loss": self.val_loss,
            "val_accuracy": self.val_accuracy,
        }
        if include_timing:
            d["wall_time_seconds"] = self.wall_time_seconds
        return d


def he_layer(fan_in: int, fan_out: int, seed: int, index: int, dtype=np.float32):
    """He-normal weights for one layer; each layer has its own seeded stream."""
    rng = np.random.default_rng([seed, index])
    w = rng.standard_normal((fan_in, fan_out), dtype=np.float64) * np.sqrt(2.0 / fan_in)
    return w.astype(dtype), np.zeros(fan_out, dtype=dtype)


def new_model(layer_dims, seed: int = 0, class_names=None, dtype=np.float32) -> MlpModel:
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ArgumentError("a model needs at least input and output dims")
    if any(d <= 0 for d in dims):
        raise ArgumentError(f"all layer dims must be positive, got {dims}")
    ws, bs = [], []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        w, bias = he_layer(a, b, seed, i, dtype)
        ws.append(w)
        bs.append(bias)
    names = list(class_names) if class_names is not None else []
    if names and len(names) != dims[-1]:
        raise ArgumentError(f"{len(names)} class names for output width {dims[-1]}")
    return MlpModel(dims, ws, bs, [True] * len(ws), None, names, seed)


def count_params(model: MlpModel) -> tuple[int, int]:
    counts = layer_param_counts(model.layer_dims)
    trainable = sum(c for c, t in zip(counts, model.trainable) if t)
    return trainable, sum(counts)


# --- numerics ----------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_batch(model: MlpModel, x: np.ndarray, start: int = 0) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[start]:
        raise ShapeError(f"batch shape {x.shape} does not match layer input width "
                         f"{model.layer_dims[start]}")
    if not np.isfinite(x).all():
        raise DataError("non-finite values in input batch")
    return x.astype(model.dtype, copy=False)


def _activations(model: MlpModel, x: np.ndarray, start: int = 0, stop: int | None = None):
    """Inputs to each layer from ``start`` through ``stop`` plus the final output.

    Returns ``acts`` where ``acts[k]`` feeds layer ``start + k`` and the last
    entry holds the raw logits when ``stop`` is the output layer.
    """
    stop = model.n_layers if stop is None else stop
    acts = [x]
    a = x
    for i in range(start, stop):
        z = a @ model.weights[i]
        z += model.biases[i]
        if i < model.n_layers - 1:
            np.maximum(z, 0, out=z)
        acts.append(z)
        a = z
    return acts


def logits(model: MlpModel, x: np.ndarray, start: int = 0) -> np.ndarray:
    return _activations(model, _check_batch(model, x, start), start)[-1]


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities for already-scaled inputs."""
    return softmax(logits(model, x))


def hidden_features(model: MlpModel, x: np.ndarray, layer: int | None = None) -> np.ndarray:
    """Output of the hidden layer ``layer`` (default: the penultimate one)."""
    layer = model.n_layers - 2 if layer is None else layer
    x = _check_batch(model, x)
    return _activations(model, x, 0, layer + 1)[-1]


def _loss_grads(model: MlpModel, x: np.ndarray, y: np.ndarray, start: int):
    acts = _activations(model, x, start)
    out = acts[-1]
    logp = log_softmax(out)
    n = len(y)
    loss = -float(logp[np.arange(n), y].mean())
    pred = out.argmax(axis=1)
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    lowest = min(i for i in range(start, model.n_layers) if model.trainable[i])
    for i in range(model.n_layers - 1, lowest - 1, -1):
        a_in = acts[i - start]
        if model.trainable[i]:
            grads[i] = (a_in.T @ delta, delta.sum(axis=0))
        if i > lowest:
            delta = delta @ model.weights[i].T
            delta *= a_in > 0
    return loss, grads, pred


def loss_and_grads(model: MlpModel, x: np.ndarray, labels: np.ndarray):
    """Mean sparse categorical cross-entropy and gradients of trainable layers.

    Returns ``(loss, grads)`` with ``grads[i] = (dW, db)`` for every layer
    whose trainable flag is set.
    """
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= model.n_outputs):
        raise DataError(f"labels must lie in [0, {model.n_outputs})")
    x = _check_batch(model, x)
    if not any(model.trainable):
        acts = _activations(model, x)
        logp = log_softmax(acts[-1])
        return -float(logp[np.arange(len(y)), y].mean()), {}
    loss, grads, _ = _loss_grads(model, x, y, 0)
    return loss, grads


# --- optimizers --------------------------------------------------------------

class _Adam:
    def __init__(self, model: MlpModel, layers, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {i: (np.zeros_like(model.weights[i]), np.zeros_like(model.biases[i]))
                  for i in layers}
        self.v = {i: (np.zeros_like(model.weights[i]), np.zeros_like(model.biases[i]))
                  for i in layers}

    def step(self, model: MlpModel, grads) -> None:
        c = self.cfg
        self.t += 1
        corr2 = np.sqrt(1.0 - c.beta2 ** self.t)
        step = c.lr * corr2 / (1.0 - c.beta1 ** self.t)
        eps_hat = c.eps * corr2
        for i, gs in grads.items():
            for param, g, m, v in zip((model.weights[i], model.biases[i]), gs,
                                      self.m[i], self.v[i]):
                m *= c.beta1
                m += (1.0 - c.beta1) * g
                v *= c.beta2
                v += (1.0 - c.beta2) * (g * g)
                denom = np.sqrt(v)
                denom += eps_hat
                np.divide(m, denom, out=denom)
                denom *= step
                param -= denom


class _Sgd:
    def __init__(self, model, layers, cfg: TrainConfig):
        self.lr = cfg.lr

    def step(self, model: MlpModel, grads) -> None:
        for i, (gw, gb) in grads.items():
            model.weights[i] -= self.lr * gw
            model.biases[i] -= self.lr * gb


# --- training ----------------------------------------------------------------

def _prepare(model: MlpModel, ds: SpectralDataset) -> np.ndarray:
    if ds.width != model.n_inputs:
        raise ShapeError(f"dataset width {ds.width} != model input width {model.n_inputs}")
    scaler = model.scaler or Scaler.identity(model.n_inputs)
    x = scaler.transform(ds.features).astype(model.dtype, copy=False)
    if not np.isfinite(x).all():
        raise DataError("non-finite feature values after scaling")
    return x


def _check_classes(model: MlpModel, ds: SpectralDataset) -> None:
    if ds.n_classes != model.n_outputs:
        raise ContractError(f"dataset has {ds.n_classes} classes, model outputs {model.n_outputs}")
    if model.class_names and model.class_names != ds.class_names:
        raise ContractError(f"class lists differ: model {model.class_names} "
                            f"vs dataset {ds.class_names}")


def _frozen_prefix(model: MlpModel, x: np.ndarray, lo: int) -> np.ndarray:
    """Push rows through the frozen layers below ``lo`` once, in chunks."""
    if lo == 0:
        return x
    out = np.empty((len(x), model.layer_dims[lo]), dtype=model.dtype)
    for s in range(0, len(x), _PREDICT_CHUNK):
        out[s:s + _PREDICT_CHUNK] = _activations(model, x[s:s + _PREDICT_CHUNK], 0, lo)[-1]
    return out


def _eval_from(model: MlpModel, x: np.ndarray, y: np.ndarray, start: int):
    total, correct = 0.0, 0
    for s in range(0, len(x), _PREDICT_CHUNK):
        out = _activations(model, x[s:s + _PREDICT_CHUNK], start)[-1]
        yb = y[s:s + _PREDICT_CHUNK]
        total += -float(log_softmax(out)[np.arange(len(yb)), yb].sum())
        correct += int((out.argmax(axis=1) == yb).sum())
    return total / len(x), correct / len(x)


def fit(model: MlpModel, train: SpectralDataset, val: SpectralDataset | None = None,
        config: TrainConfig | None = None) -> TrainReport:
    """Train ``model`` in place on ``train``.

    A model without a scaler gets one fitted on ``train``. Rows are pushed
    through the frozen layers below the lowest trainable layer once, up
    front, since those activations never change.
    """
    config = config or TrainConfig()
    t0 = time.perf_counter()
    if train.n_rows == 0:
        raise DataError("training set is empty")
    _check_classes(model, train)
    if not model.class_names:
        model.class_names = list(train.class_names)
    if model.scaler is None:
        if train.width != model.n_inputs:
            raise ShapeError(f"dataset width {train.width} != model input width {model.n_inputs}")
        model.scaler = fit_scaler(train).astype(model.dtype)
    trainable_layers = [i for i, t in enumerate(model.trainable) if t]
    n_train, n_total = count_params(model)
    report = TrainReport([], [], [], [], 0.0, n_train, n_total, config.epochs, train.n_rows)
    if not trainable_layers or config.epochs == 0:
        report.wall_time_seconds = time.perf_counter() - t0
        return report

    lo = trainable_layers[0]
    x = _frozen_prefix(model, _prepare(model, train), lo)
    y = train.labels
    xv = yv = None
    if val is not None and val.n_rows:
        _check_classes(model, val)
        xv = _frozen_prefix(model, _prepare(model, val), lo)
        yv = val.labels

    opt = (_Adam if config.optimizer == "adam" else _Sgd)(model, trainable_layers, config)
    rng = np.random.default_rng(config.seed)
    n = len(x)
    bs = config.batch_size
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle_each_epoch else np.arange(n)
        loss_sum, correct = 0.0, 0
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            # a diverging run overflows before the loss check can report it
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads, pred = _loss_grads(model, x[idx], y[idx], lo)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}")
            opt.step(model, grads)
            loss_sum += loss * len(idx)
            correct += int((pred == y[idx]).sum())
        report.loss.append(loss_sum / n)
        report.accuracy.append(correct / n)
        if xv is not None:
            vl, va = _eval_from(model, xv, yv, lo)
            report.val_loss.append(vl)
            report.val_accuracy.append(va)
    report.wall_time_seconds = time.perf_counter() - t0
    return report


def predict_proba(model: MlpModel, ds: SpectralDataset) -> np.ndarray:
    x = _prepare(model, ds)
    out = np.empty((len(x), model.n_outputs), dtype=model.dtype)
    for s in range(0, len(x), _PREDICT_CHUNK):
        out[s:s + _PREDICT_CHUNK] = softmax(_activations(model, x[s:s + _PREDICT_CHUNK])[-1])
    return out


def predict(model: MlpModel, ds: SpectralDataset) -> np.ndarray:
    x = _prepare(model, ds)
    out = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), _PREDICT_CHUNK):
        out[s:s + _PREDICT_CHUNK] = _activations(model, x[s:s + _PREDICT_CHUNK])[-1].argmax(axis=1)
    return out


# --- EMNN files ----------------------------------------------------------------

def model_to_bytes(model: MlpModel) -> bytes:
    parts = [EMNN_MAGIC, struct.pack("<II", EMNN_VERSION, model.n_layers),
             np.asarray(model.layer_dims, dtype="<u4").tobytes(),
             np.asarray(model.trainable, dtype="u1").tobytes()]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    scaler = model.scaler or Scaler.identity(model.n_inputs)
    parts.append(np.ascontiguousarray(scaler.mean, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(scaler.std, dtype="<f4").tobytes())
    parts.append(struct.pack("<I", len(model.class_names)))
    parts.append(_pack_names(model.class_names))
    return b"".join(parts)


def model_from_bytes(buf: bytes, what: str = "model") -> MlpModel:
    r = _Reader(buf, what)
    if r.take(4) != EMNN_MAGIC:
        raise FormatError(f"{what}: bad magic at offset 0")
    version, n_layers = r.unpack("<II")
    if version != EMNN_VERSION:
        raise FormatError(f"{what}: unsupported version {version} at offset 4")
    if n_layers < 1:
        raise FormatError(f"{what}: n_layers = 0 at offset 8")
    dims = [int(d) for d in r.array("<u4", n_layers + 1)]
    if min(dims) < 1:
        raise FormatError(f"{what}: zero layer width in dims {dims}")
    flags = [bool(f) for f in r.array("u1", n_layers)]
    ws, bs = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        ws.append(r.array("<f4", a * b).reshape(a, b).astype(np.float32))
        bs.append(r.array("<f4", b).astype(np.float32))
    mean = r.array("<f4", dims[0]).astype(np.float32)
    std = r.array("<f4", dims[0]).astype(np.float32)
    (n_names,) = r.unpack("<I")
    names = r.names(n_names)
    r.finish()
    return MlpModel(dims, ws, bs, flags, Scaler(mean, std), names)


def save(model: MlpModel, path: str | os.PathLike) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load(path: str | os.PathLike) -> MlpModel:
    path = Path(path)
    return model_from_bytes(path.read_bytes(), what=str(path))
