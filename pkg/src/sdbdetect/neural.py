"""Fully connected networks trained by minibatch SGD.

One engine serves the two bottleneck autoencoders and the hybrid frame
classifier. Weights are stored ``(fan_in, fan_out)`` so a layer maps a
``(B, fan_in)`` batch with ``x @ W + b``.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .frontend import FeatureMatrix

logger = logging.getLogger(__name__)

ACTIVATIONS = ("sigmoid", "softmax", "linear")
OBJECTIVES = ("mse", "cross_entropy")

# encoder widths after the input layer; the decoder mirrors input + encoder
RM_ENCODER = (32, 16)
ACF_ENCODER = (128, 64, 32, 16)
BOTTLENECK_DIM = 16


class TrainingError(RuntimeError):
    pass


class ModelFileError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str


@dataclass(frozen=True)
class MlpModel:
    layers: tuple[Layer, ...]
    seed: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and i != len(self.layers) - 1:
                raise ValueError("softmax is only allowed on the final layer")
            if layer.W.shape[1] != layer.b.shape[0]:
                raise ValueError(f"layer {i}: weight/bias shapes disagree")
            if i and self.layers[i - 1].W.shape[1] != layer.W.shape[0]:
                raise ValueError(f"layer {i}: input width does not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [l.W.shape[1] for l in self.layers]

    @property
    def n_params(self) -> int:
        return sum(l.W.size + l.b.size for l in self.layers)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 60
    batch_size: int = 256
    objective: str = "mse"
    shuffle_seed: int = 0
    momentum: float = 0.0
    l2: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if not 0 <= self.momentum < 1 or self.l2 < 0:
            raise ValueError("momentum must lie in [0, 1) and l2 must be >= 0")


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)


def autoencoder_dims(input_dim: int, encoder: Sequence[int]) -> list[int]:
    """Full dimension list of a mirrored autoencoder, input included.

    >>> autoencoder_dims(64, (32, 16))
    [64, 32, 16, 16, 32, 64]
    """
    half = [input_dim, *encoder]
    return half + half[::-1]


def classifier_dims(input_dim: int, n_classes: int = 4) -> list[int]:
    """Hybrid classifier: three hidden layers, 96 units per 48 input dims."""
    hidden = 2 * input_dim
    return [input_dim, hidden, hidden, hidden, n_classes]


def init_mlp(dims: Sequence[int], activations: Sequence[str] | str, seed: int = 0) -> MlpModel:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError("need at least an input and an output dimension")
    if any(int(d) != d or d < 1 for d in dims):
        raise ValueError("dimensions must be positive integers")
    n_layers = len(dims) - 1
    if isinstance(activations, str):
        activations = [activations] * n_layers
    if len(activations) != n_layers:
        raise ValueError(f"{len(activations)} activations for {n_layers} layers")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append(Layer(W, np.zeros(fan_out), act))
    return MlpModel(tuple(layers), seed)


def init_autoencoder(input_dim: int, encoder: Sequence[int], seed: int = 0) -> MlpModel:
    return init_mlp(autoencoder_dims(input_dim, encoder), "sigmoid", seed)


def init_classifier(input_dim: int, n_classes: int = 4, seed: int = 0) -> MlpModel:
    dims = classifier_dims(input_dim, n_classes)
    return init_mlp(dims, ["sigmoid"] * 3 + ["softmax"], seed)


# --------------------------------------------------------------------------
# forward / backward


def _sigmoid(z):
    return expit(z)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _activate(z, act):
    if act == "sigmoid":
        return _sigmoid(z)
    if act == "softmax":
        return _softmax(z)
    return z


def forward(model: MlpModel, batch) -> list[np.ndarray]:
    """Activations of every layer; element 0 is the input batch itself."""
    x = np.asarray(batch.data if isinstance(batch, FeatureMatrix) else batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"batch shape {x.shape} does not match input_dim {model.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input batch")
    acts = [x]
    for layer in model.layers:
        acts.append(_activate(acts[-1] @ layer.W + layer.b, layer.activation))
    return acts


def predict(model: MlpModel, batch) -> np.ndarray:
    return forward(model, batch)[-1]


def loss_value(output: np.ndarray, target: np.ndarray, objective: str) -> float:
    """Mean over the batch of ``0.5 * ||y - t||^2`` or of ``-log p(label)``."""
    B = output.shape[0]
    if objective == "mse":
        return 0.5 * float(np.sum((output - target) ** 2)) / B
    p = output[np.arange(B), target]
    return -float(np.sum(np.log(np.maximum(p, 1e-300)))) / B


def _output_delta(model: MlpModel, out: np.ndarray, target, objective: str) -> np.ndarray:
    """Gradient of the loss w.r.t. the final pre-activation."""
    B = out.shape[0]
    act = model.layers[-1].activation
    if objective == "cross_entropy":
        if act != "softmax":
            raise ValueError("cross_entropy needs a softmax output layer")
        d = out.copy()
        d[np.arange(B), target] -= 1.0
        return d / B
    if act == "softmax":
        raise ValueError("mse with a softmax output is not supported")
    d = (out - target) / B
    if act == "sigmoid":
        d = d * out * (1.0 - out)
    return d


def backward(model: MlpModel, acts: list[np.ndarray], target, objective: str):
    """Gradients ``[(dW, db), ...]`` for every layer, given ``forward`` output."""
    delta = _output_delta(model, acts[-1], target, objective)
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i:
            delta = delta @ model.layers[i].W.T
            if model.layers[i - 1].activation == "sigmoid":
                a = acts[i]
                delta = delta * a * (1.0 - a)
    return grads


# --------------------------------------------------------------------------
# training


def _sgd(model: MlpModel, X: np.ndarray, Y, cfg: TrainConfig, history: TrainHistory) -> MlpModel:
    Ws = [l.W.copy() for l in model.layers]
    bs = [l.b.copy() for l in model.layers]
    vW = [np.zeros_like(w) for w in Ws]
    vb = [np.zeros_like(b) for b in bs]
    rng = np.random.default_rng(cfg.shuffle_seed)
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            xb = X[idx]
            yb = Y[idx]
            work = MlpModel(
                tuple(Layer(W, b, l.activation) for W, b, l in zip(Ws, bs, model.layers)),
                model.seed,
            )
            acts = forward(work, xb)
            batch_loss = loss_value(acts[-1], yb, cfg.objective)
            if not np.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {bi}")
            total += batch_loss * len(idx)
            if cfg.objective == "cross_entropy":
                correct += int(np.sum(acts[-1].argmax(axis=1) == yb))
            for i, (gW, gb) in enumerate(backward(work, acts, yb, cfg.objective)):
                if cfg.l2:
                    gW = gW + cfg.l2 * Ws[i]
                if cfg.momentum:
                    vW[i] = cfg.momentum * vW[i] - cfg.learning_rate * gW
                    vb[i] = cfg.momentum * vb[i] - cfg.learning_rate * gb
                    Ws[i] += vW[i]
                    bs[i] += vb[i]
                else:
                    Ws[i] -= cfg.learning_rate * gW
                    bs[i] -= cfg.learning_rate * gb
        history.loss.append(total / n)
        if cfg.objective == "cross_entropy":
            history.accuracy.append(correct / n)
        logger.debug("epoch %d loss %.6g", epoch + 1, history.loss[-1])
    return MlpModel(
        tuple(Layer(W, b, l.activation) for W, b, l in zip(Ws, bs, model.layers)), model.seed
    )


def train_autoencoder(model: MlpModel, data, cfg: TrainConfig) -> tuple[MlpModel, TrainHistory]:
    """Fit the model to reconstruct its input; returns model and per-epoch loss."""
    if cfg.objective != "mse":
        raise ValueError("autoencoders are trained with the mse objective")
    X = np.asarray(data.data if isinstance(data, FeatureMatrix) else data, dtype=np.float64)
    if X.shape[1] != model.input_dim or model.output_dim != model.input_dim:
        raise ValueError("autoencoder input/output widths must match the data")
    if X.size and (X.min() < 0 or X.max() > 1):
        raise ValueError("autoencoder data must be normalised to [0, 1]")
    history = TrainHistory()
    return _sgd(model, X, X, cfg, history), history


def train_classifier(model: MlpModel, features, labels, cfg: TrainConfig) -> tuple[MlpModel, TrainHistory]:
    """Fit a softmax classifier on frame/label pairs."""
    if cfg.objective != "cross_entropy":
        raise ValueError("classifiers are trained with the cross_entropy objective")
    X = np.asarray(features.data if isinstance(features, FeatureMatrix) else features, dtype=np.float64)
    y = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    if len(X) != len(y):
        raise ValueError(f"{len(X)} feature frames but {len(y)} labels")
    if y.size and (y.min() < 0 or y.max() >= model.output_dim):
        raise ValueError("label out of range for the output layer")
    history = TrainHistory()
    return _sgd(model, X, y, cfg, history), history


# --------------------------------------------------------------------------
# bottleneck extraction and posteriors


@dataclass(frozen=True)
class BottleneckExtractor:
    model: MlpModel

    def __post_init__(self):
        if self.model.output_dim != BOTTLENECK_DIM:
            raise ValueError(f"bottleneck width must be {BOTTLENECK_DIM}")

    @property
    def input_dim(self) -> int:
        return self.model.input_dim


def extractor_from_autoencoder(model: MlpModel) -> BottleneckExtractor:
    """Keep the layers up to and including the first bottleneck-width layer."""
    for i, layer in enumerate(model.layers):
        if layer.W.shape[1] == BOTTLENECK_DIM:
            return BottleneckExtractor(MlpModel(model.layers[: i + 1], model.seed))
    raise ValueError("autoencoder has no bottleneck layer")


def encode_bottleneck(extractor: BottleneckExtractor, f: FeatureMatrix) -> FeatureMatrix:
    X = f.data
    if X.shape[1] != extractor.input_dim:
        raise ValueError(f"feature width {X.shape[1]} != extractor input {extractor.input_dim}")
    if X.shape[0] == 0:
        return FeatureMatrix(np.zeros((0, BOTTLENECK_DIM)), f.frame_period, "bottleneck")
    return FeatureMatrix(predict(extractor.model, X), f.frame_period, "bottleneck")


def posteriors(model: MlpModel, features: FeatureMatrix) -> np.ndarray:
    """Class posterior rows (snore, breath, other, silence) for every frame."""
    if model.layers[-1].activation != "softmax":
        raise ValueError("posteriors need a softmax classifier")
    return predict(model, features)


# --------------------------------------------------------------------------
# gradient verification


def _act_delta(z: np.ndarray, dz: np.ndarray, act: str) -> np.ndarray:
    """``act(z + dz) - act(z)`` without subtracting two rounded values."""
    if act == "linear":
        return dz
    if act == "sigmoid":
        # s(u) - s(v) = s(u) * s(-v) * (1 - exp(v - u))
        return expit(z + dz) * expit(-z) * -np.expm1(-dz)
    raise ValueError("softmax deltas are folded into the loss")


def _loss_delta(model: MlpModel, zs, acts, k, units, dz, target, objective) -> np.ndarray:
    """Loss change for each row of perturbations at layer ``k``'s pre-activation.

    Row ``r`` adds ``dz[r, b]`` to unit ``units[r]`` for sample ``b``.
    """
    n, B = dz.shape
    last = len(model.layers) - 1
    if k < last:
        # the perturbed layer changes one unit only; expand it straight
        # into the next layer's pre-activation
        da_unit = _act_delta(zs[k][:, units].T, dz, model.layers[k].activation)
        d = da_unit[:, :, None] * model.layers[k + 1].W[units][:, None, :]
        first = k + 1
    else:
        d = np.zeros((n, B, model.layers[k].W.shape[1]))
        d[np.arange(n), :, units] = dz
        first = k
    for i in range(first, last + 1):
        if i > first:
            # 2-D product keeps this a single BLAS call
            d = (da.reshape(n * B, -1) @ model.layers[i].W).reshape(n, B, -1)
        if i < last or model.layers[i].activation != "softmax":
            da = _act_delta(zs[i], d, model.layers[i].activation)
    y = acts[-1]
    if objective == "mse":
        per_sample = np.sum(da * (y - target + 0.5 * da), axis=2)
    else:
        rows = np.arange(B)
        # -dz[label] + log(sum_k p_k exp(dz_k))
        per_sample = -d[:, rows, target] + np.log1p(np.sum(y * np.expm1(d), axis=2))
    return per_sample.sum(axis=1) / B


def gradient_check(model: MlpModel, batch, target, objective: str, eps: float = 1e-5,
                   chunk: int = 4096) -> float:
    """Largest relative gap between backprop and central finite differences.

    Every parameter is moved by ``+-eps``. The two loss changes are carried
    through the network as differences from the unperturbed pass, so the
    quotient does not lose digits to cancellation when gradients are tiny.
    Returns ``max |g_bp - g_fd| / max(|g_bp|, |g_fd|, 1e-8)``.
    """
    acts = forward(model, batch)
    grads = backward(model, acts, target, objective)
    zs = [a @ l.W + l.b for a, l in zip(acts[:-1], model.layers)]
    target = np.asarray(target)
    B = acts[0].shape[0]
    worst = 0.0
    for k, layer in enumerate(model.layers):
        fan_in, fan_out = layer.W.shape
        # weights first (row-major order), then biases
        units = np.concatenate([np.tile(np.arange(fan_out), fan_in), np.arange(fan_out)])
        inputs = np.concatenate([np.repeat(np.arange(fan_in), fan_out), np.full(fan_out, -1)])
        bp = np.concatenate([grads[k][0].ravel(), grads[k][1]])
        x_ext = np.hstack([acts[k], np.ones((B, 1))])  # column -1 is the bias "input"
        for lo in range(0, units.size, chunk):
            u = units[lo : lo + chunk]
            scale = x_ext[:, inputs[lo : lo + chunk]].T  # (n, B)
            up = _loss_delta(model, zs, acts, k, u, eps * scale, target, objective)
            down = _loss_delta(model, zs, acts, k, u, -eps * scale, target, objective)
            fd = (up - down) / (2 * eps)
            g = bp[lo : lo + chunk]
            err = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)
            worst = max(worst, float(err.max()))
    return worst


# --------------------------------------------------------------------------
# persistence

_MODEL_MAGIC = b"SDBM"
MODEL_VERSION = 1
_ACT_TAGS = {a: i for i, a in enumerate(ACTIVATIONS)}


def model_bytes(model: MlpModel) -> bytes:
    parts = [_MODEL_MAGIC, struct.pack("<HqI", MODEL_VERSION, model.seed, len(model.layers))]
    for l in model.layers:
        rows, cols = l.W.shape
        parts.append(struct.pack("<IIB", rows, cols, _ACT_TAGS[l.activation]))
        parts.append(np.ascontiguousarray(l.W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(l.b, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def model_from_bytes(raw: bytes) -> MlpModel:
    if raw[:4] != _MODEL_MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    if len(raw) >= 6:
        (version,) = struct.unpack("<H", raw[4:6])
        if version > MODEL_VERSION:
            raise ModelFileError(f"model format version {version} is newer than supported {MODEL_VERSION}")
    body, digest = raw[:-32], raw[-32:]
    if len(raw) < 50 or hashlib.sha256(body).digest() != digest:
        raise ModelFileError("corrupt model file (checksum mismatch)")
    version, seed, n_layers = struct.unpack("<HqI", body[4:18])
    pos = 18
    layers = []
    try:
        for _ in range(n_layers):
            rows, cols, tag = struct.unpack("<IIB", body[pos : pos + 9])
            pos += 9
            W = np.frombuffer(body, "<f8", rows * cols, pos).reshape(rows, cols).copy()
            pos += 8 * rows * cols
            b = np.frombuffer(body, "<f8", cols, pos).copy()
            pos += 8 * cols
            layers.append(Layer(W, b, ACTIVATIONS[tag]))
    except (struct.error, ValueError, IndexError) as exc:
        raise ModelFileError(f"corrupt model file ({exc})") from exc
    if pos != len(body):
        raise ModelFileError("corrupt model file (trailing bytes)")
    return MlpModel(tuple(layers), seed)


def save_model(path, model: MlpModel) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(path) -> MlpModel:
    return model_from_bytes(Path(path).read_bytes())
