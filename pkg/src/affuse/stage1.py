"""Per-modality emotion regressor trained with the multitask concordance loss.

A small dense network maps a fixed-length feature vector to three scalar
heads (valence, arousal, dominance). Training minimizes the weighted sum of
per-dimension concordance losses over each mini-batch with RMSprop, keeps
the snapshot with the best development loss, and stops early once the
development loss fails to improve for ``patience`` consecutive epochs.

Everything is plain numpy and fully deterministic given (seed, data,
config): weight init, dropout masks, and the optional shuffle all draw from
one seeded generator in a fixed order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    DegenerateInputError,
    DegenerateLabelsError,
    MissingFeatureError,
    ShapeMismatchError,
)
from .metrics import MtlWeights, mtl_loss

_ACTIVATIONS = ("linear", "tanh", "relu")
_MODEL_MAGIC = b"AFM1"


@dataclass(frozen=True)
class NetConfig:
    """Stage-1 network and training hyper-parameters.

    Defaults follow the tuned setup: three 256-unit layers, linear hidden
    activation, tanh output for bounded scores, batch size 8, at most 50
    epochs with patience 10, RMSprop at learning rate 0.001.
    """

    hidden_layers: tuple[int, ...] = (256, 256, 256)
    hidden_activation: str = "linear"
    output_activation: str = "tanh"
    dropout_rate: float = 0.0
    learning_rate: float = 0.001
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    shuffle: bool = False
    normalize_inputs: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if not self.hidden_layers or any(w <= 0 for w in self.hidden_layers):
            raise ValueError("hidden layer widths must be positive")
        if self.hidden_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in ("linear", "tanh"):
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")


@dataclass
class RegressorModel:
    """Dense multitask regressor: hidden stack plus three width-1 heads.

    ``head_w`` stores the three heads as columns of a (hidden, 3) matrix.
    ``input_mean``/``input_std`` hold the train-set standardization applied
    before the first layer (None when normalization is disabled or the
    model was constructed by hand).
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    head_w: np.ndarray
    head_b: np.ndarray
    config: NetConfig
    input_dim: int
    schema_id: str = ""
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None
    training_log: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for w, b in self.layers:
            params.extend([w, b])
        params.extend([self.head_w, self.head_b])
        return params


@dataclass(frozen=True)
class PredictionSet:
    """Ordered per-utterance emotion predictions for one split."""

    ids: tuple[str, ...]
    values: np.ndarray  # (n, 3)
    split_tag: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape != (len(self.ids), 3):
            raise ValueError(
                f"values shape {values.shape} does not match {len(self.ids)} ids"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("predictions contain non-finite values")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("utterance ids must be unique")
        if self.split_tag not in ("dev", "test"):
            raise ValueError(f"split_tag must be 'dev' or 'test', got {self.split_tag!r}")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.ids)

    def by_id(self) -> dict[str, np.ndarray]:
        return {utt: self.values[i] for i, utt in enumerate(self.ids)}


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "linear":
        return np.ones_like(z)
    if name == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(np.float64)


def init_model(input_dim: int, cfg: NetConfig, schema_id: str = "") -> RegressorModel:
    """Glorot-uniform initialized model from a seeded generator."""
    rng = np.random.default_rng(cfg.seed)
    layers = []
    fan_in = input_dim
    for width in cfg.hidden_layers:
        limit = np.sqrt(6.0 / (fan_in + width))
        w = rng.uniform(-limit, limit, size=(fan_in, width))
        b = np.zeros(width)
        layers.append((w, b))
        fan_in = width
    limit = np.sqrt(6.0 / (fan_in + 1))
    head_w = rng.uniform(-limit, limit, size=(fan_in, 3))
    head_b = np.zeros(3)
    return RegressorModel(
        layers=layers,
        head_w=head_w,
        head_b=head_b,
        config=cfg,
        input_dim=input_dim,
        schema_id=schema_id,
    )


def _forward_cached(
    model: RegressorModel,
    x: np.ndarray,
    training: bool,
    rng: np.random.Generator | None,
):
    cfg = model.config
    h = x
    if model.input_mean is not None:
        h = (h - model.input_mean) / model.input_std
    pre_list, act_list, mask_list = [], [h], []
    for w, b in model.layers:
        z = h @ w + b
        h = _activate(cfg.hidden_activation, z)
        if training and cfg.dropout_rate > 0.0:
            keep = 1.0 - cfg.dropout_rate
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
            mask_list.append(mask)
        else:
            mask_list.append(None)
        pre_list.append(z)
        act_list.append(h)
    out_pre = h @ model.head_w + model.head_b
    pred = _activate("tanh", out_pre) if cfg.output_activation == "tanh" else out_pre
    return pred, (pre_list, act_list, mask_list, out_pre)


def forward(model: RegressorModel, batch: np.ndarray) -> np.ndarray:
    """Deterministic inference pass: (n, d) features to (n, 3) predictions.

    Raises:
        ShapeMismatchError: feature dimension differs from the model's.
    """
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise ShapeMismatchError(
            f"model expects {model.input_dim} features, got {x.shape[1]}"
        )
    pred, _ = _forward_cached(model, x, training=False, rng=None)
    return pred


def mtl_grad(pred: np.ndarray, gold: np.ndarray, weights: MtlWeights) -> np.ndarray:
    """Analytic gradient of the weighted concordance loss w.r.t. predictions.

    For one dimension with prediction series x and gold series y,

        d(1 - CCC)/dx_i = -(2 / (n * D)) * ((y_i - mean_y) - CCC * (x_i - mean_y))

    with D the covariance-form denominator. Columns are scaled by their
    multitask weight, so zero-weight dimensions get exactly zero gradient.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gold, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"expected matching (n, 3) arrays, got {p.shape} and {g.shape}")
    n = p.shape[0]
    if n < 2:
        raise ValueError("need batch length >= 2 per dimension")
    w = weights.as_array()
    grad = np.zeros_like(p)
    for k in range(3):
        if w[k] == 0.0:
            continue
        x, y = p[:, k], g[:, k]
        mx, my = x.mean(), y.mean()
        dx, dy = x - mx, y - my
        cov = np.mean(dx * dy)
        denom = np.mean(dx * dx) + np.mean(dy * dy) + (mx - my) ** 2
        if denom == 0.0:
            raise DegenerateInputError(
                "CCC gradient undefined: both series constant with equal means"
            )
        ccc_val = 2.0 * cov / denom
        grad[:, k] = -w[k] * (2.0 / (n * denom)) * (dy - ccc_val * (x - my))
    return grad


def rmsprop_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: list[np.ndarray] | None,
    lr: float,
    decay: float = 0.9,
    eps: float = 1e-7,
) -> list[np.ndarray]:
    """One RMSprop update, in place; returns the running mean-square state.

    theta <- theta - lr * g / sqrt(E[g^2] + eps), with
    E[g^2] <- decay * E[g^2] + (1 - decay) * g^2.
    """
    if state is None:
        state = [np.zeros_like(p) for p in params]
    for p, g, s in zip(params, grads, state):
        if p.shape != g.shape:
            raise ValueError(f"parameter/gradient shape mismatch: {p.shape} vs {g.shape}")
        s *= decay
        s += (1.0 - decay) * g * g
        p -= lr * g / np.sqrt(s + eps)
    return state


def _backward(model, x, gold, weights, rng):
    """Forward + backprop over one batch; returns (loss, grads aligned with parameters())."""
    pred, (pre_list, act_list, mask_list, out_pre) = _forward_cached(
        model, x, training=True, rng=rng
    )
    cfg = model.config
    loss = mtl_loss(pred, gold, weights)
    d_pred = mtl_grad(pred, gold, weights)
    if cfg.output_activation == "tanh":
        d_out = d_pred * (1.0 - pred * pred)
    else:
        d_out = d_pred
    h_last = act_list[-1]
    grad_head_w = h_last.T @ d_out
    grad_head_b = d_out.sum(axis=0)
    dh = d_out @ model.head_w.T
    layer_grads: list[tuple[np.ndarray, np.ndarray]] = []
    for li in range(len(model.layers) - 1, -1, -1):
        w, _ = model.layers[li]
        if mask_list[li] is not None:
            dh = dh * mask_list[li]
        z = pre_list[li]
        a = act_list[li + 1]
        dz = dh * _activate_grad(cfg.hidden_activation, z, a)
        h_prev = act_list[li]
        layer_grads.append((h_prev.T @ dz, dz.sum(axis=0)))
        dh = dz @ w.T
    grads: list[np.ndarray] = []
    for gw, gb in reversed(layer_grads):
        grads.extend([gw, gb])
    grads.extend([grad_head_w, grad_head_b])
    return loss, grads


def _batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    bounds = [(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]
    # A trailing singleton cannot carry a correlation loss; fold it into the
    # previous batch.
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
        last = bounds.pop()
        prev = bounds.pop()
        bounds.append((prev[0], last[1]))
    return bounds


def train(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_dev: np.ndarray,
    y_dev: np.ndarray,
    cfg: NetConfig,
    weights: MtlWeights,
    schema_id: str = "",
) -> RegressorModel:
    """Train a regressor; returns the best-development-loss snapshot.

    Raises:
        DegenerateLabelsError: a development gold dimension is constant.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    x_dev = np.asarray(x_dev, dtype=np.float64)
    y_dev = np.asarray(y_dev, dtype=np.float64)
    if x_train.ndim != 2 or y_train.shape != (x_train.shape[0], 3):
        raise ValueError("x_train must be (n, d) with y_train (n, 3)")
    if x_dev.ndim != 2 or y_dev.shape != (x_dev.shape[0], 3):
        raise ValueError("x_dev must be (m, d) with y_dev (m, 3)")
    if x_train.shape[0] < 2 or x_dev.shape[0] < 2:
        raise DataError("train and dev sets need at least 2 samples each")
    if x_dev.shape[1] != x_train.shape[1]:
        raise ShapeMismatchError("train/dev feature dimensions differ")
    for k, name in enumerate(("valence", "arousal", "dominance")):
        if np.ptp(y_dev[:, k]) == 0.0:
            raise DegenerateLabelsError(f"dev gold {name} is constant; CCC undefined")

    model = init_model(x_train.shape[1], cfg, schema_id)
    if cfg.normalize_inputs:
        mean = x_train.mean(axis=0)
        std = x_train.std(axis=0)
        model.input_mean = mean
        model.input_std = np.where(std < 1e-8, 1.0, std)

    rng = np.random.default_rng(cfg.seed + 1)  # training-time draws (dropout, shuffle)
    params = model.parameters()
    opt_state: list[np.ndarray] | None = None
    n = x_train.shape[0]
    bounds = _batch_bounds(n, cfg.batch_size)

    best_loss = np.inf
    best_params: list[np.ndarray] | None = None
    best_epoch = 0
    since_improvement = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = np.arange(n)
        if cfg.shuffle:
            rng.shuffle(order)
        batch_losses = []
        for start, stop in bounds:
            idx = order[start:stop]
            loss, grads = _backward(model, x_train[idx], y_train[idx], weights, rng)
            opt_state = rmsprop_step(params, grads, opt_state, cfg.learning_rate)
            batch_losses.append(loss)
        dev_loss = mtl_loss(forward(model, x_dev), y_dev, weights)
        model.training_log.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(batch_losses)),
                "dev_loss": float(dev_loss),
            }
        )
        if dev_loss < best_loss:
            best_loss = dev_loss
            best_params = [p.copy() for p in params]
            best_epoch = epoch
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= cfg.patience:
                break

    if best_params is not None:
        for p, bp in zip(params, best_params):
            p[...] = bp
    model.best_epoch = best_epoch
    return model


def predict_set(
    model: RegressorModel,
    ids: Sequence[str],
    features_by_id: Mapping[str, np.ndarray],
    split_tag: str,
) -> PredictionSet:
    """Predict one emotion triple per utterance id, preserving id order.

    Raises:
        DataError: empty id list.
        MissingFeatureError: an id has no feature vector.
    """
    ids = list(ids)
    if not ids:
        raise DataError("cannot predict an empty split")
    rows = []
    for utt in ids:
        if utt not in features_by_id:
            raise MissingFeatureError(utt)
        rows.append(np.asarray(features_by_id[utt], dtype=np.float64))
    preds = forward(model, np.vstack(rows))
    return PredictionSet(ids=tuple(ids), values=preds, split_tag=split_tag)


# --- hashed text features ------------------------------------------------------

_TOKEN_RE = re.compile(r"[\w']+")


@lru_cache(maxsize=65536)
def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, key=struct.pack("<q", seed)
    ).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def hash_text_features(transcript: str, dim: int = 300, seed: int = 0):
    """Deterministic hashed-embedding vector: mean of per-token unit vectors.

    Each token maps to a pseudo-random unit vector derived from a keyed hash
    of the token, so the same (transcript, seed) always produces the same
    vector and token order does not matter. Empty transcripts give the zero
    vector.
    """
    from .dsp import FeatureVector

    if dim <= 0:
        raise ValueError("dim must be positive")
    tokens = _TOKEN_RE.findall(transcript.lower())
    if not tokens:
        return FeatureVector(np.zeros(dim), f"TEXT-{dim}")
    acc = np.zeros(dim)
    for token in tokens:
        acc += _token_vector(token, dim, seed)
    return FeatureVector(acc / len(tokens), f"TEXT-{dim}")


# --- model and prediction file I/O ----------------------------------------------


def save_model(path, model: RegressorModel) -> None:
    """Write the self-describing model container.

    Layout: magic ``AFM1``, little-endian uint32 header length, UTF-8 JSON
    header, then the named weight blobs as little-endian float64 in C order.
    """
    arrays: list[tuple[str, np.ndarray]] = []
    if model.input_mean is not None:
        arrays.append(("input_mean", model.input_mean))
        arrays.append(("input_std", model.input_std))
    for i, (w, b) in enumerate(model.layers):
        arrays.append((f"W{i}", w))
        arrays.append((f"b{i}", b))
    arrays.append(("head_w", model.head_w))
    arrays.append(("head_b", model.head_b))
    header = {
        "format": "affuse-regressor",
        "version": 1,
        "config": asdict(model.config),
        "input_dim": model.input_dim,
        "schema_id": model.schema_id,
        "best_epoch": model.best_epoch,
        "training_log": model.training_log,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path) -> RegressorModel:
    """Read a model container written by :func:`save_model`."""
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
        if magic != _MODEL_MAGIC:
            raise DataError(f"{path}: not an affuse model file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        data: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            data[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    cfg_dict = dict(header["config"])
    cfg_dict["hidden_layers"] = tuple(cfg_dict["hidden_layers"])
    cfg = NetConfig(**cfg_dict)
    layers = []
    for i in range(len(cfg.hidden_layers)):
        layers.append((data[f"W{i}"], data[f"b{i}"]))
    model = RegressorModel(
        layers=layers,
        head_w=data["head_w"],
        head_b=data["head_b"],
        config=cfg,
        input_dim=int(header["input_dim"]),
        schema_id=header.get("schema_id", ""),
        input_mean=data.get("input_mean"),
        input_std=data.get("input_std"),
        training_log=header.get("training_log", []),
        best_epoch=int(header.get("best_epoch", 0)),
    )
    return model


def write_predictions_csv(path, pset: PredictionSet) -> None:
    """Write predictions as utterance_id,valence,arousal,dominance,split_tag."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utterance_id", "valence", "arousal", "dominance", "split_tag"])
        for utt, row in zip(pset.ids, pset.values):
            writer.writerow([utt, repr(row[0]), repr(row[1]), repr(row[2]), pset.split_tag])


def read_predictions_csv(path) -> PredictionSet:
    """Read a prediction CSV written by :func:`write_predictions_csv`."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["utterance_id", "valence", "arousal", "dominance", "split_tag"]
        if header != expected:
            raise DataError(f"{path}: not a prediction CSV (header {header})")
        ids, rows, tags = [], [], set()
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            rows.append([float(row[1]), float(row[2]), float(row[3])])
            tags.add(row[4])
    if not ids:
        raise DataError(f"{path}: empty prediction file")
    if len(tags) != 1:
        raise DataError(f"{path}: mixed split tags {sorted(tags)}")
    return PredictionSet(ids=tuple(ids), values=np.asarray(rows), split_tag=tags.pop())
