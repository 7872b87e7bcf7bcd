"""Small feed-forward classifier: ReLU hidden layers, softmax output, SGD with momentum."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import atomic_write_text
from .core import N_CLASSES, N_FEATURES, ContractError

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "MLPCKPT"
CHECKPOINT_VERSION = 1
DEFAULT_DIMS = (N_FEATURES, 64, 32, N_CLASSES)


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int, last_finite_loss: float | None):
        super().__init__(message)
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss


class CheckpointError(ValueError):
    def __init__(self, message: str, field: str):
        super().__init__(message)
        self.field = field


@dataclass(eq=False)
class MlpParams:
    """Layer ``l`` maps ``dims[l]`` inputs to ``dims[l+1]`` outputs: ``W[l]`` is (out, in)."""

    dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.weights = [np.array(w, dtype=float) for w in self.weights]
        self.biases = [np.array(b, dtype=float) for b in self.biases]
        if len(self.dims) < 2 or len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.weights):
            raise ContractError(f"dims {self.dims} inconsistent with {len(self.weights)} weight tensors")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[l + 1], self.dims[l]) or b.shape != (self.dims[l + 1],):
                raise ContractError(f"layer {l}: W {w.shape}, b {b.shape} do not match dims {self.dims}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ContractError(f"layer {l} has non-finite entries")

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> MlpParams:
        return cls(dims, [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])], [np.zeros(o) for o in dims[1:]])

    @classmethod
    def glorot(cls, dims: Sequence[int], seed: int) -> MlpParams:
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for i, o in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (i + o))
            ws.append(rng.uniform(-limit, limit, (o, i)))
            bs.append(np.zeros(o))
        return cls(dims, ws, bs)

    @classmethod
    def _unchecked(cls, dims: tuple[int, ...], weights: list, biases: list) -> MlpParams:
        # gradients of a diverging run may be non-finite; train() reports that itself
        obj = cls.__new__(cls)
        obj.dims, obj.weights, obj.biases = tuple(dims), weights, biases
        return obj

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> MlpParams:
        return MlpParams(self.dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def equals(self, other: MlpParams) -> bool:
        return self.dims == other.dims and all(np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors()))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.dims[0]:
        raise ContractError(f"input has {x.shape[-1]} features, model expects {params.dims[0]}")
    if not np.all(np.isfinite(x)):
        raise ContractError("input contains non-finite values")
    return x


def forward(params: MlpParams, x) -> np.ndarray:
    """Class probabilities for one vector ``(d,)`` or a batch ``(n, d)``."""
    h = _check_input(params, x)
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if l < last:
            h = np.maximum(h, 0.0)
    return _softmax(h)


def predict(params: MlpParams, x) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class ordinal on ties
    return np.argmax(forward(params, np.atleast_2d(x)), axis=1)


def loss_and_grad(params: MlpParams, x, y) -> tuple[float, MlpParams]:
    """Mean cross-entropy over the batch and its gradient w.r.t. every parameter."""
    x = np.atleast_2d(_check_input(params, x))
    y = np.asarray(y, dtype=int).reshape(-1)
    n = x.shape[0]
    if n == 0 or y.size != n:
        raise ContractError(f"batch needs matching non-empty x/y, got {n} and {y.size}")

    acts = [x]
    last = len(params.weights) - 1
    h = x
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if l < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    logits = acts[-1]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), y]))

    delta = _softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gw: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    for l in range(last, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * (acts[l] > 0)
    return loss, MlpParams._unchecked(params.dims, gw, gb)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 32
    learning_rate: float = 0.01
    fine_tune_lr_scale: float = 0.1
    momentum: float = 0.9
    patience: int = 20
    seed: int = 0
    dims: tuple[int, ...] = DEFAULT_DIMS

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ContractError("epochs >= 0, batch_size >= 1 and patience >= 1 required")
        if not (self.learning_rate > 0 and self.fine_tune_lr_scale > 0):
            raise ContractError("learning rates must be positive")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "fine_tune_lr_scale": self.fine_tune_lr_scale,
            "momentum": self.momentum,
            "patience": self.patience,
            "seed": self.seed,
            "dims": list(self.dims),
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        if "dims" in d:
            d["dims"] = tuple(d["dims"])
        return cls(**d)


@dataclass
class TrainResult:
    params: MlpParams
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    provenance: dict = field(default_factory=dict)


def accuracy(params: MlpParams, x, y) -> float:
    y = np.asarray(y, dtype=int)
    return float(np.mean(predict(params, x) == y)) if y.size else 0.0


def data_fingerprint(x, y) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(x, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(y, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def train(
    x_train,
    y_train,
    x_val,
    y_val,
    config: TrainConfig = TrainConfig(),
    init: MlpParams | None = None,
) -> TrainResult:
    """Mini-batch SGD with momentum; keeps the parameters with the best validation accuracy.

    With ``init`` the run is a fine-tune: all layers start from ``init`` and
    the step size is ``learning_rate * fine_tune_lr_scale``. Epoch 0 (the
    starting point) is a candidate for the best parameters.
    """
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=int)
    x_val = np.asarray(x_val, dtype=float)
    y_val = np.asarray(y_val, dtype=int)
    if len(x_train) == 0 or len(x_val) == 0:
        raise ContractError("training and validation sets must be non-empty")
    for y in (y_train, y_val):
        if y.min() < 0 or y.max() >= config.dims[-1]:
            raise ContractError(f"labels must lie in [0, {config.dims[-1]})")

    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    if init is None:
        params = MlpParams.glorot(config.dims, init_seed)
        lr = config.learning_rate
        regime = "zero_shot"
    else:
        if init.dims != config.dims:
            raise ContractError(f"checkpoint dims {init.dims} != config dims {config.dims}")
        params = init.copy()
        lr = config.learning_rate * config.fine_tune_lr_scale
        regime = "fine_tuned"
    rng = np.random.default_rng(shuffle_seed)

    velocity = [np.zeros_like(t) for t in params.tensors()]
    best = params.copy()
    best_acc = accuracy(params, x_val, y_val)
    best_epoch, stale = 0, 0
    history = [{"epoch": 0, "loss": None, "val_accuracy": best_acc}]
    last_finite = None
    n = len(x_train)
    # overflow during divergence is reported as TrainingError, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                loss, grad = loss_and_grad(params, x_train[idx], y_train[idx])
                if not np.isfinite(loss):
                    raise TrainingError(f"loss diverged at epoch {epoch} (last finite loss {last_finite})", epoch, last_finite)
                last_finite = loss
                total += loss * len(idx)
                for p, v, g in zip(params.tensors(), velocity, grad.tensors()):
                    v *= config.momentum
                    v -= lr * g
                    p += v
            if not all(np.all(np.isfinite(t)) for t in params.tensors()):
                raise TrainingError(f"parameters diverged at epoch {epoch} (last finite loss {last_finite})",
                                    epoch, last_finite)
            val_acc = accuracy(params, x_val, y_val)
            history.append({"epoch": epoch, "loss": total / n, "val_accuracy": val_acc})
            if val_acc > best_acc:
                best, best_acc, best_epoch, stale = params.copy(), val_acc, epoch, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    log.debug("%s training: best val acc %.4f at epoch %d", regime, best_acc, best_epoch)
    provenance = {
        "data_fingerprint": data_fingerprint(x_train, y_train),
        "seed": config.seed,
        "epochs": best_epoch,
        "regime": regime,
    }
    return TrainResult(best, history, best_epoch, best_acc, provenance)


@dataclass
class Checkpoint:
    params: MlpParams
    provenance: dict = field(default_factory=dict)
    format_version: int = CHECKPOINT_VERSION

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return self.params.dims


def format_checkpoint(params: MlpParams, provenance: dict | None = None) -> str:
    lines = [f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}", "dims " + " ".join(str(d) for d in params.dims)]
    for t in params.tensors():
        lines.append(" ".join(format(float(v), ".17g") for v in t.ravel()))
    for line in json.dumps(provenance or {}, indent=2, sort_keys=True).splitlines():
        lines.append("# " + line)
    return "\n".join(lines) + "\n"


def save_checkpoint(params: MlpParams, path: str | os.PathLike, provenance: dict | None = None) -> Path:
    return atomic_write_text(path, format_checkpoint(params, provenance))


def parse_checkpoint(text: str) -> Checkpoint:
    lines = text.splitlines()
    body = [l for l in lines if not l.startswith("#")]
    comment = "\n".join(l[2:] for l in lines if l.startswith("#"))
    if not body:
        raise CheckpointError("empty checkpoint", "header")
    parts = body[0].split()
    if len(parts) != 2 or parts[0] != CHECKPOINT_MAGIC or not parts[1].startswith("v"):
        raise CheckpointError(f"bad header {body[0]!r}", "header")
    try:
        version = int(parts[1][1:])
    except ValueError:
        raise CheckpointError(f"bad version {parts[1]!r}", "format_version") from None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}", "format_version")
    if len(body) < 2 or not body[1].startswith("dims "):
        raise CheckpointError("missing dims line", "dims")
    try:
        dims = tuple(int(d) for d in body[1].split()[1:])
    except ValueError:
        raise CheckpointError(f"bad dims line {body[1]!r}", "dims") from None
    if len(dims) < 2 or min(dims) < 1:
        raise CheckpointError(f"bad dims {dims}", "dims")
    n_layers = len(dims) - 1
    if len(body) - 2 != 2 * n_layers:
        raise CheckpointError(f"expected {2 * n_layers} tensor lines, found {len(body) - 2}", "tensors")
    ws, bs = [], []
    for l in range(n_layers):
        for kind, shape in (("W", (dims[l + 1], dims[l])), ("b", (dims[l + 1],))):
            name = f"{kind}{l}"
            line = body[2 + 2 * l + (kind == "b")]
            try:
                vals = np.array([float(v) for v in line.split()], dtype=float)
            except ValueError:
                raise CheckpointError(f"non-numeric value in {name}", name) from None
            if vals.size != int(np.prod(shape)):
                raise CheckpointError(f"{name} has {vals.size} values, expected {int(np.prod(shape))}", name)
            (ws if kind == "W" else bs).append(vals.reshape(shape))
    try:
        provenance = json.loads(comment) if comment.strip() else {}
    except json.JSONDecodeError:
        raise CheckpointError("provenance block is not valid JSON", "provenance") from None
    try:
        params = MlpParams(dims, ws, bs)
    except ContractError as exc:
        raise CheckpointError(str(exc), "tensors") from exc
    return Checkpoint(params, provenance, version)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    return parse_checkpoint(Path(path).read_text(encoding="utf-8"))
