"""Minimal tape-based reverse-mode differentiation engine.

Supports exactly the layer set needed by the small contrast classifier:
conv2d (stride 1, zero "same" padding), relu, 2x2 maxpool, dense and
sigmoid. Forward passes record a tape (per-layer inputs, outputs and
maxpool switch locations) so that two backward modes can be replayed:

    Standard  - the plain chain rule, d(seed . output)/d(input).
    Deconvnet - identical except that relu is applied to the incoming
                backward signal (instead of gating by the forward sign)
                and pooled signal is routed through the recorded max
                locations.

All arrays are float64 and laid out (N, C, H, W) for image-like data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import LayerConfigError, ShapeMismatchError


class BackwardMode(Enum):
    STANDARD = "standard"
    DECONVNET = "deconvnet"


@dataclass
class TapeEntry:
    layer: "Layer"
    x: np.ndarray
    y: np.ndarray
    aux: object = None


@dataclass
class Tape:
    """Recorded forward pass; immutable by convention after forward()."""

    entries: list[TapeEntry] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.entries[-1].y

    @property
    def input(self) -> np.ndarray:
        return self.entries[0].x


def _sliding_windows(x: np.ndarray, k: int) -> np.ndarray:
    # (N, C, H, W) -> (N, C, H-k+1, W-k+1, k, k)
    return np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))


def _conv_same(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Cross-correlation with zero 'same' padding, stride 1.

    x: (N, C, H, W), w: (O, C, k, k) -> (N, O, H, W).
    """
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _sliding_windows(xp, k)  # (N, C, H, W, k, k)
    return np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)


class Layer:
    """Base layer; params maps name -> float64 ndarray."""

    kind = "base"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, object]:
        raise NotImplementedError

    def backward_input(self, d_out: np.ndarray, entry: TapeEntry,
                       mode: BackwardMode) -> np.ndarray:
        raise NotImplementedError

    def param_grads(self, d_out: np.ndarray, entry: TapeEntry) -> dict[str, np.ndarray]:
        return {}


class Conv2D(Layer):
    """Stride-1 convolution with zero 'same' padding and odd square kernels."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int):
        super().__init__()
        if kernel_size % 2 != 1:
            raise LayerConfigError("conv2d kernel size must be odd")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.params = {
            "w": np.zeros((out_channels, in_channels, kernel_size, kernel_size)),
            "b": np.zeros(out_channels),
        }

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise LayerConfigError(
                f"conv2d expects (N, {self.in_channels}, H, W), got {x.shape}")
        y = _conv_same(x, self.params["w"]) + self.params["b"][:, None, None]
        return y, None

    def backward_input(self, d_out, entry, mode):
        # Adjoint of a stride-1 same-padded correlation: correlate with the
        # spatially flipped kernel, in/out channels swapped. Identical in
        # both modes (the deconvnet applies the transposed convolution).
        w = self.params["w"]
        w_t = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        return _conv_same(d_out, w_t)

    def param_grads(self, d_out, entry):
        k = self.kernel_size
        p = k // 2
        xp = np.pad(entry.x, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = _sliding_windows(xp, k)  # (N, C, H, W, k, k)
        d_w = np.tensordot(d_out, cols, axes=([0, 2, 3], [0, 2, 3]))
        return {"w": d_w, "b": d_out.sum(axis=(0, 2, 3))}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0), None

    def backward_input(self, d_out, entry, mode):
        if mode is BackwardMode.DECONVNET:
            # Rectify the incoming backward signal, ignore the forward sign.
            return np.maximum(d_out, 0.0)
        return np.where(entry.x > 0, d_out, 0.0)


class MaxPool2x2(Layer):
    """2x2 max pooling, stride 2; ties go to the first position in
    row-major window order, and the winning locations are recorded."""

    kind = "maxpool2d"

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise LayerConfigError(f"maxpool2d needs even spatial dims, got {x.shape}")
        win = (x.reshape(n, c, h // 2, 2, w // 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h // 2, w // 2, 4))
        switches = win.argmax(axis=-1)  # first occurrence on ties
        y = np.take_along_axis(win, switches[..., None], axis=-1)[..., 0]
        return y, switches

    def backward_input(self, d_out, entry, mode):
        # Both modes route the signal through the recorded max locations.
        n, c, h, w = entry.x.shape
        flat = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(flat, entry.aux[..., None], d_out[..., None], axis=-1)
        return (flat.reshape(n, c, h // 2, w // 2, 2, 2)
                    .transpose(0, 1, 2, 4, 3, 5)
                    .reshape(n, c, h, w))


class Dense(Layer):
    """Fully connected layer; flattens any trailing input dims."""

    kind = "dense"

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "w": np.zeros((in_features, out_features)),
            "b": np.zeros(out_features),
        }

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise LayerConfigError(
                f"dense expects {self.in_features} features, got {flat.shape[1]}")
        return flat @ self.params["w"] + self.params["b"], None

    def backward_input(self, d_out, entry, mode):
        return (d_out @ self.params["w"].T).reshape(entry.x.shape)

    def param_grads(self, d_out, entry):
        flat = entry.x.reshape(entry.x.shape[0], -1)
        return {"w": flat.T @ d_out, "b": d_out.sum(axis=0)}


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return y, None

    def backward_input(self, d_out, entry, mode):
        return d_out * entry.y * (1.0 - entry.y)


class Network:
    """An ordered stack of layers with a declared input shape (C, H, W)."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int]):
        self.layers = layers
        self.input_shape = tuple(input_shape)

    def parameters(self):
        """Yield (layer_index, name, array) for every parameter tensor."""
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield i, name, layer.params[name]

    def forward(self, x: np.ndarray, n_layers: int | None = None) -> tuple[np.ndarray, Tape]:
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise LayerConfigError(
                f"network expects input (N, {self.input_shape}), got {x.shape}")
        tape = Tape()
        layers = self.layers if n_layers is None else self.layers[:n_layers]
        for i, layer in enumerate(layers):
            try:
                y, aux = layer.forward(x)
            except LayerConfigError as exc:
                raise LayerConfigError(f"layer {i}: {exc}") from None
            tape.entries.append(TapeEntry(layer, x, y, aux))
            x = y
        return x, tape


def backward(tape: Tape, seed: np.ndarray, mode: BackwardMode = BackwardMode.STANDARD) -> np.ndarray:
    """Propagate seed back through a recorded tape; returns d(input)."""
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != tape.output.shape:
        raise ShapeMismatchError(
            f"seed shape {seed.shape} != tape output shape {tape.output.shape}")
    d = seed
    for entry in reversed(tape.entries):
        d = entry.layer.backward_input(d, entry, mode)
    return d


def backward_with_param_grads(tape: Tape, seed: np.ndarray):
    """Standard-mode backward that also returns per-layer parameter grads.

    Returns (d_input, grads) with grads a list aligned to tape.entries,
    each a dict name -> gradient array.
    """
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != tape.output.shape:
        raise ShapeMismatchError(
            f"seed shape {seed.shape} != tape output shape {tape.output.shape}")
    d = seed
    grads: list[dict[str, np.ndarray]] = [None] * len(tape.entries)
    for i in range(len(tape.entries) - 1, -1, -1):
        entry = tape.entries[i]
        grads[i] = entry.layer.param_grads(d, entry)
        d = entry.layer.backward_input(d, entry, BackwardMode.STANDARD)
    return d, grads


def finite_difference_gradient(network: Network, image: np.ndarray,
                               seed: np.ndarray, step: float = 1e-5,
                               n_layers: int | None = None,
                               chunk: int = 256,
                               pixels: np.ndarray | None = None) -> np.ndarray:
    """Central-difference approximation of backward(Standard); test oracle.

    image: (C, H, W) single input. seed: matches the network output for a
    batch of one. Perturbed inputs are batched for speed. When `pixels`
    (flat indices) is given, only those entries of the result are computed
    and the rest are NaN; the returned array always has the input's shape.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    image = np.asarray(image, dtype=np.float64)
    seed = np.asarray(seed, dtype=np.float64)
    flat = image.ravel()
    n = flat.size
    targets = np.arange(n) if pixels is None else np.asarray(pixels)
    grad = np.full(n, np.nan)
    for start in range(0, targets.size, chunk):
        idx = targets[start:start + chunk]
        batch = np.repeat(flat[None, :], 2 * idx.size, axis=0)
        batch[np.arange(idx.size), idx] += step
        batch[idx.size + np.arange(idx.size), idx] -= step
        out, _ = network.forward(batch.reshape(-1, *image.shape), n_layers=n_layers)
        scores = (out.reshape(out.shape[0], -1) * seed.ravel()[None, :]).sum(axis=1)
        grad[idx] = (scores[:idx.size] - scores[idx.size:]) / (2.0 * step)
    return grad.reshape(image.shape)
