"""Three-layer MLP quality head, trained with L1 loss and Adam, plus the model file format."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DivergenceError, EmptyInput, ModelFormatError, ShapeError
from .nss import FeatureMode

MODEL_MAGIC = b"CBMH"
MODEL_VERSION = 1
DROPOUT_RATE = 0.2
MIN_HIDDEN = 8


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class MLPModel:
    layer_dims: list[int]
    weights: list[np.ndarray]  # weights[i] has shape (dims[i], dims[i+1])
    biases: list[np.ndarray]
    dropout_rate: float = DROPOUT_RATE
    seed: int = 0
    feature_mode: FeatureMode = FeatureMode.GGD
    backbone_name: str = ""
    train_meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLPModel":
        return MLPModel(list(self.layer_dims), [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.dropout_rate, self.seed,
                        self.feature_mode, self.backbone_name, dict(self.train_meta))


def hidden_dims(input_dim: int) -> list[int]:
    return [input_dim, max(input_dim // 4, MIN_HIDDEN), max(input_dim // 16, MIN_HIDDEN), 1]


def _as_float32_values(a: np.ndarray) -> np.ndarray:
    # weights live in float64 but are kept float32-representable, the storage precision
    return a.astype(np.float32).astype(np.float64)


def mlp_init(input_dim: int, seed: int = 0, feature_mode: FeatureMode = FeatureMode.GGD,
             backbone_name: str = "") -> MLPModel:
    """He-uniform weights, zero biases."""
    if input_dim < 1:
        raise ValueError("input_dim must be positive")
    dims = hidden_dims(input_dim)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(_as_float32_values(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        biases.append(np.zeros(fan_out))
    return MLPModel(dims, weights, biases, DROPOUT_RATE, seed, FeatureMode(feature_mode), backbone_name)


def _check_input(model: MLPModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    X2 = X[None] if squeeze else X
    if X2.ndim != 2 or X2.shape[1] != model.input_dim:
        raise ShapeError(f"expected feature dimension {model.input_dim}, got shape {X.shape}")
    return X2


def _forward(model: MLPModel, X: np.ndarray, masks=None):
    """Returns the output and the cache needed for backprop."""
    acts = [X]
    pre = []
    h = X
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        if i < n_layers - 1:
            h = np.maximum(z, 0.0)
            if masks is not None:
                h = h * masks[i]
        else:
            h = z
        acts.append(h)
    return h[:, 0], (acts, pre)


def _dropout_masks(model: MLPModel, n: int, rng: np.random.Generator):
    keep = 1.0 - model.dropout_rate
    return [(rng.random((n, d)) < keep) / keep for d in model.layer_dims[1:-1]]


def mlp_forward(model: MLPModel, v, training: bool = False, rng: Optional[np.random.Generator] = None):
    """Score one vector (returns float) or a batch (returns array).

    Training mode applies inverted dropout on hidden activations using ``rng``.
    """
    X = _check_input(model, v)
    masks = None
    if training and model.dropout_rate > 0:
        if rng is None:
            raise ValueError("training mode needs an rng")
        masks = _dropout_masks(model, X.shape[0], rng)
    out, _ = _forward(model, X, masks)
    return float(out[0]) if np.ndim(v) == 1 else out


def l1_loss_and_grads(model: MLPModel, X: np.ndarray, y: np.ndarray, masks=None):
    """Mean absolute error over the batch and its gradient; d|r|/dr at r=0 is taken as 0."""
    X = _check_input(model, X)
    y = np.asarray(y, dtype=np.float64)
    out, (acts, pre) = _forward(model, X, masks)
    resid = out - y
    loss = float(np.mean(np.abs(resid)))
    delta = (np.sign(resid) / len(y))[:, None]
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            if masks is not None:
                delta = delta * masks[i - 1]
            delta = delta * (pre[i - 1] > 0)
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads += [gw, gb]
    return loss, grads


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class LabeledFeatureSet:
    features: np.ndarray  # (N, D)
    targets: np.ndarray  # (N,)
    content_ids: list = field(default_factory=list)
    frame_indices: list = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2 or len(self.features) != len(self.targets):
            raise ShapeError("features must be (N, D) with one target per row")
        if not np.all(np.isfinite(self.targets)):
            raise ValueError("targets must be finite")

    def __len__(self) -> int:
        return len(self.targets)


def train(model: MLPModel, data: LabeledFeatureSet, cfg: TrainConfig, history: Optional[list] = None) -> MLPModel:
    """Adam on mini-batch L1 with a fresh seeded shuffle every epoch. Returns a new model.

    ``history``, if given, receives one (epoch, mean batch loss) pair per epoch.
    """
    if len(data) == 0:
        raise EmptyInput("no training rows")
    X = _check_input(model, data.features)
    y = data.targets
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    n = len(y)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            masks = _dropout_masks(model, len(idx), rng) if model.dropout_rate > 0 else None
            loss, grads = l1_loss_and_grads(model, X[idx], y[idx], masks)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise DivergenceError(step, loss)
            opt.step(grads)
            losses.append(loss * len(idx))
            step += 1
        if history is not None:
            history.append((epoch + 1, sum(losses) / n))
    for arr in model.params():
        arr[...] = _as_float32_values(arr)
    final = float(np.mean(np.abs(mlp_forward(model, X) - y)))
    if not math.isfinite(final):
        raise DivergenceError(step, final)
    model.train_meta = {"epochs_run": cfg.epochs, "final_loss": final, "lr": cfg.lr,
                        "batch_size": cfg.batch_size, "steps": step, "seed": cfg.seed}
    return model


def video_score(frame_scores) -> float:
    scores = np.asarray(list(frame_scores), dtype=np.float64)
    if scores.size == 0:
        raise EmptyInput("no frame scores to pool")
    return float(scores.sum() / scores.size)


# ---------------------------------------------------------------------------
# model file
#
# <4s magic><u16 version><u32 D_in><u8 n_dims><u32 x n_dims dims><u8 feature_mode>
# <u16 len><utf8 backbone_name><u64 seed><f32 dropout><u32 len><utf8 JSON train_meta>
# then per layer: f32 weights (row-major, (fan_in, fan_out)), f32 biases.


def save_model(model: MLPModel, path: str) -> None:
    name = model.backbone_name.encode("utf-8")
    meta = json.dumps(model.train_meta, sort_keys=True).encode("utf-8")
    parts = [
        struct.pack("<4sHI", MODEL_MAGIC, MODEL_VERSION, model.input_dim),
        struct.pack("<B", len(model.layer_dims)),
        struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims),
        struct.pack("<BH", int(model.feature_mode), len(name)), name,
        struct.pack("<Qf", model.seed, model.dropout_rate),
        struct.pack("<I", len(meta)), meta,
    ]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise ModelFormatError("model file is truncated")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError("model file is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def load_model(path: str, expected_input_dim: Optional[int] = None,
               expected_mode: Optional[FeatureMode] = None) -> MLPModel:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic, version, d_in = r.take("<4sHI")
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    (n_dims,) = r.take("<B")
    dims = list(r.take(f"<{n_dims}I"))
    if n_dims < 2 or dims[0] != d_in or dims[-1] != 1:
        raise ModelFormatError(f"inconsistent layer dims {dims}")
    mode_raw, name_len = r.take("<BH")
    try:
        mode = FeatureMode(mode_raw)
    except ValueError as exc:
        raise ModelFormatError(f"unknown feature mode {mode_raw}") from exc
    name = r.raw(name_len).decode("utf-8")
    seed, dropout = r.take("<Qf")
    (meta_len,) = r.take("<I")
    try:
        meta = json.loads(r.raw(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError("corrupt training metadata") from exc
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(r.raw(4 * fan_in * fan_out), dtype="<f4").reshape(fan_in, fan_out)
        b = np.frombuffer(r.raw(4 * fan_out), dtype="<f4")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if r.pos != len(r.buf):
        raise ModelFormatError("trailing bytes after weights")
    if expected_input_dim is not None and d_in != expected_input_dim:
        raise ModelFormatError(f"model expects {d_in}-dim features, got {expected_input_dim}")
    if expected_mode is not None and mode != FeatureMode(expected_mode):
        raise ModelFormatError(f"model was trained on {mode.name} features, not {FeatureMode(expected_mode).name}")
    # the f32 header field holds 0.2 inexactly; snap back to the float64 literal
    if np.float32(dropout) == np.float32(DROPOUT_RATE):
        dropout = DROPOUT_RATE
    return MLPModel(dims, weights, biases, float(dropout), seed, mode, name, meta)
