"""The small convolutional binary classifier.

A single output neuron codes absence/presence of contrast: the sigmoid of
the logit is the predicted probability of class 1. Saliency estimators
differentiate the signed pre-sigmoid logit S_c (S_1 = logit, S_0 = -logit),
which is ranking-equivalent to differentiating the probability.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from .errors import (BadMagicError, BadVersionError, ShapeMismatchError,
                     TrainingError, TruncatedFileError)

MODEL_MAGIC = b"ATTRIBMDL"
MODEL_VERSION = 1


@dataclass
class ModelConfig:
    side: int = 64
    conv_channels: tuple[int, ...] = (8, 16)
    kernel_size: int = 3
    hidden_units: int = 32
    learning_rate: float = 0.01
    epochs: int = 3
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.side <= 0 or self.kernel_size <= 0 or self.hidden_units <= 0:
            raise ValueError("model dimensions must be positive")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("training hyperparameters must be positive")
        if self.side % (2 ** len(self.conv_channels)) != 0:
            raise ValueError("input side must be divisible by 2^(#pool layers)")


@dataclass
class TrainedModel:
    config: ModelConfig
    network: nn.Network
    train_balanced_accuracy: float = float("nan")
    test_balanced_accuracy: float = float("nan")

    @property
    def metadata(self) -> dict:
        return {
            "train_balanced_accuracy": self.train_balanced_accuracy,
            "test_balanced_accuracy": self.test_balanced_accuracy,
            "seed": self.config.seed,
        }


def build_network(config: ModelConfig, rng: np.random.Generator | None = None) -> nn.Network:
    """Construct the layer stack; He-initialized when an rng is given."""
    layers: list[nn.Layer] = []
    in_ch, side = 1, config.side
    for out_ch in config.conv_channels:
        layers.append(nn.Conv2D(in_ch, out_ch, config.kernel_size))
        layers.append(nn.ReLU())
        layers.append(nn.MaxPool2x2())
        in_ch, side = out_ch, side // 2
    flat = in_ch * side * side
    layers.append(nn.Dense(flat, config.hidden_units))
    layers.append(nn.ReLU())
    layers.append(nn.Dense(config.hidden_units, 1))
    layers.append(nn.Sigmoid())
    net = nn.Network(layers, (1, config.side, config.side))
    if rng is not None:
        for layer in net.layers:
            if isinstance(layer, nn.Conv2D):
                fan_in = layer.in_channels * layer.kernel_size ** 2
                layer.params["w"] = rng.normal(
                    0.0, np.sqrt(2.0 / fan_in), layer.params["w"].shape)
            elif isinstance(layer, nn.Dense):
                layer.params["w"] = rng.normal(
                    0.0, np.sqrt(2.0 / layer.in_features), layer.params["w"].shape)
    return net


def _as_batch(images: np.ndarray) -> np.ndarray:
    """Accept (H, W) or (N, H, W) and return (N, 1, H, W) float64."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3:
        raise ShapeMismatchError(f"expected (H, W) or (N, H, W), got {images.shape}")
    return images[:, None, :, :]


def balanced_accuracy(labels: np.ndarray, predictions: np.ndarray) -> float:
    """Mean of per-class accuracies; equals plain accuracy on balanced sets."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    accs = [np.mean(predictions[labels == c] == c)
            for c in (0, 1) if np.any(labels == c)]
    return float(np.mean(accs))


def train(train_images: np.ndarray, train_labels: np.ndarray,
          test_images: np.ndarray, test_labels: np.ndarray,
          config: ModelConfig) -> TrainedModel:
    """SGD with momentum 0.9 on binary cross-entropy; deterministic per seed."""
    train_labels = np.asarray(train_labels, dtype=np.float64)
    test_labels = np.asarray(test_labels, dtype=np.float64)
    if len(np.unique(train_labels)) < 2:
        raise TrainingError("training set must contain both classes")
    x_train = _as_batch(train_images)
    rng = np.random.Generator(np.random.Philox(config.seed))
    net = build_network(config, rng)
    n_logit = len(net.layers) - 1  # differentiate the pre-sigmoid logit

    velocity = {(i, name): np.zeros_like(p) for i, name, p in net.parameters()}
    n = x_train.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x_train[idx], train_labels[idx]
            logit, tape = net.forward(xb, n_layers=n_logit)
            z = logit[:, 0]
            # BCE via logits, numerically stable
            loss = np.mean(np.maximum(z, 0) - z * yb + np.log1p(np.exp(-np.abs(z))))
            epoch_loss += loss * idx.size
            p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
            seed_grad = ((p - yb) / idx.size)[:, None]
            _, grads = nn.backward_with_param_grads(tape, seed_grad)
            for i, entry in enumerate(tape.entries):
                for name, g in grads[i].items():
                    v = velocity[(i, name)]
                    v *= 0.9
                    v -= config.learning_rate * g
                    entry.layer.params[name] += v
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"loss diverged (non-finite) at epoch {epoch}")

    model = TrainedModel(config, net)
    model.train_balanced_accuracy = balanced_accuracy(
        train_labels, predict_class(model, train_images))
    model.test_balanced_accuracy = balanced_accuracy(
        test_labels, predict_class(model, test_images))
    return model


def predict_prob(model: TrainedModel, images: np.ndarray) -> np.ndarray | float:
    """Sigmoid of the logit; scalar for a single (H, W) image."""
    single = np.asarray(images).ndim == 2
    out, _ = model.network.forward(_as_batch(images))
    probs = out[:, 0]
    return float(probs[0]) if single else probs


def predict_class(model: TrainedModel, images: np.ndarray) -> np.ndarray | int:
    """Thresholds the probability at 0.5."""
    p = predict_prob(model, images)
    if np.isscalar(p):
        return int(p > 0.5)
    return (p > 0.5).astype(int)


def class_score(model: TrainedModel, image: np.ndarray, cls: int) -> tuple[float, nn.Tape]:
    """Signed logit S_c plus the forward tape positioned at the logit.

    S_1 is the raw logit, S_0 its negation; estimators differentiate this
    quantity rather than the post-sigmoid probability.
    """
    if cls not in (0, 1):
        raise ValueError(f"class must be 0 or 1, got {cls}")
    out, tape = model.network.forward(_as_batch(image), n_layers=len(model.network.layers) - 1)
    sign = 1.0 if cls == 1 else -1.0
    return float(sign * out[0, 0]), tape


def logit_input_gradients(model: TrainedModel, images: np.ndarray, cls: int,
                          mode: nn.BackwardMode = nn.BackwardMode.STANDARD,
                          chunk: int = 128) -> np.ndarray:
    """d S_c / d x for a batch of images; returns (N, H, W).

    Large batches are processed in fixed-size chunks to bound the tape
    memory footprint.
    """
    if cls not in (0, 1):
        raise ValueError(f"class must be 0 or 1, got {cls}")
    xb = _as_batch(images)
    sign = 1.0 if cls == 1 else -1.0
    n_logit = len(model.network.layers) - 1
    parts = []
    for start in range(0, xb.shape[0], chunk):
        _, tape = model.network.forward(xb[start:start + chunk], n_layers=n_logit)
        seed = np.full(tape.output.shape, sign)
        parts.append(nn.backward(tape, seed, mode)[:, 0, :, :])
    return np.concatenate(parts, axis=0)


def _config_to_dict(config: ModelConfig) -> dict:
    d = asdict(config)
    d["conv_channels"] = list(config.conv_channels)
    return d


def _config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["conv_channels"] = tuple(d["conv_channels"])
    return ModelConfig(**d)


def save_model(model: TrainedModel, path) -> None:
    """Binary format: magic, version, JSON header, little-endian f64 blobs."""
    header = json.dumps({
        "config": _config_to_dict(model.config),
        "metadata": model.metadata,
    }, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<I", MODEL_VERSION))
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for _, _, p in model.network.parameters():
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise BadMagicError(f"{path}: not a model file (bad magic)")
    off = len(MODEL_MAGIC)
    try:
        (version,) = struct.unpack_from("<I", data, off)
    except struct.error:
        raise TruncatedFileError(f"{path}: truncated header") from None
    if version != MODEL_VERSION:
        raise BadVersionError(f"{path}: unsupported model version {version}")
    off += 4
    try:
        (hlen,) = struct.unpack_from("<I", data, off)
    except struct.error:
        raise TruncatedFileError(f"{path}: truncated header") from None
    off += 4
    if off + hlen > len(data):
        raise TruncatedFileError(f"{path}: truncated JSON header")
    header = json.loads(data[off:off + hlen])
    off += hlen
    config = _config_from_dict(header["config"])
    net = build_network(config)
    for i, name, p in net.parameters():
        nbytes = p.size * 8
        if off + nbytes > len(data):
            raise TruncatedFileError(f"{path}: truncated parameter blob")
        net.layers[i].params[name] = np.frombuffer(
            data[off:off + nbytes], dtype="<f8").reshape(p.shape).copy()
        off += nbytes
    meta = header.get("metadata", {})
    return TrainedModel(
        config, net,
        train_balanced_accuracy=meta.get("train_balanced_accuracy", float("nan")),
        test_balanced_accuracy=meta.get("test_balanced_accuracy", float("nan")),
    )
