"""Pixel-importance estimators and heatmap post-processing.

Seven estimators plus a uniform-random baseline. All of them score the
signed pre-sigmoid logit of the requested class and return a Heatmap with
the same shape as the input image. Path methods (integrated gradients,
its black-and-white variant, and expected gradients) multiply gradients
by the input-minus-reference difference; the others are gradient-only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import (BadMagicError, BadVersionError, ParameterError,
                     TruncatedFileError)
from .model import TrainedModel, logit_input_gradients
from .nn import BackwardMode

HEATMAP_MAGIC = b"ATTRIBHMP"
HEATMAP_VERSION = 1

# Estimators whose sign convention follows the interpolation direction and
# is therefore flipped when the predicted class is 0.
PATH_METHODS = frozenset({"intgrad", "intgrad_bw", "expected_grad"})

ESTIMATOR_NAMES = ("backprop", "deconvolution", "intgrad", "intgrad_bw",
                   "expected_grad", "smoothgrad", "smoothgrad_sq", "random")


@dataclass(frozen=True)
class EstimatorParams:
    ig_steps: int = 25            # m, interpolation steps
    sg_samples: int = 15          # n, noise samples
    sg_sigma: float = 0.15        # noise std, fraction of the [0,1] range
    eg_samples: int = 25          # reference draws for expected gradients
    seed: int = 0

    def __post_init__(self):
        if self.ig_steps < 1 or self.sg_samples < 1 or self.eg_samples < 1:
            raise ParameterError("sample/step counts must be >= 1")
        if self.sg_sigma < 0:
            raise ParameterError("noise sigma must be >= 0")


@dataclass
class Heatmap:
    scores: np.ndarray
    estimator: str
    meta: str = ""
    post: tuple[str, ...] = ()

    @property
    def provenance(self) -> str:
        parts = [self.estimator]
        if self.meta:
            parts.append(self.meta)
        if self.post:
            parts.append("post=" + "+".join(self.post))
        return ";".join(parts)


def _check_finite(scores: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError(f"{name} produced non-finite scores")
    return scores


def backprop_saliency(model: TrainedModel, image: np.ndarray, cls: int) -> Heatmap:
    """Plain gradient of the signed logit with respect to the pixels."""
    g = logit_input_gradients(model, image, cls)[0]
    return Heatmap(_check_finite(g, "backprop"), "backprop", f"class={cls}")


def deconvolution_saliency(model: TrainedModel, image: np.ndarray, cls: int) -> Heatmap:
    """Mirror-network pass: transposed convolutions, relu applied to the
    backpropagated signal, unpooling through recorded max locations."""
    g = logit_input_gradients(model, image, cls, BackwardMode.DECONVNET)[0]
    return Heatmap(_check_finite(g, "deconvolution"), "deconvolution", f"class={cls}")


def _path_gradient_sum(model: TrainedModel, image: np.ndarray, cls: int,
                       reference: np.ndarray, m: int) -> np.ndarray:
    """(x - x') * (1/m) * sum_{k=1..m} grad at x' + (k/m)(x - x')."""
    image = np.asarray(image, dtype=np.float64)
    diff = image - reference
    ks = np.arange(1, m + 1) / m
    points = reference[None] + ks[:, None, None] * diff[None]
    grads = logit_input_gradients(model, points, cls)
    return diff * grads.mean(axis=0)


def integrated_gradients(model: TrainedModel, image: np.ndarray, cls: int,
                         params: EstimatorParams = EstimatorParams(),
                         reference: str = "black") -> Heatmap:
    """Riemann right-endpoint path integral from a reference image.

    reference 'black' uses the all-zero image; 'black_white' computes the
    map for both the all-zero and all-one references and averages them.
    """
    image = np.asarray(image, dtype=np.float64)
    if reference == "black":
        scores = _path_gradient_sum(model, image, cls,
                                    np.zeros_like(image), params.ig_steps)
        name = "intgrad"
    elif reference == "black_white":
        black = _path_gradient_sum(model, image, cls,
                                   np.zeros_like(image), params.ig_steps)
        white = _path_gradient_sum(model, image, cls,
                                   np.ones_like(image), params.ig_steps)
        scores = 0.5 * (black + white)
        name = "intgrad_bw"
    else:
        raise ParameterError(f"unknown reference policy {reference!r}")
    return Heatmap(_check_finite(scores, name), name,
                   f"class={cls};m={params.ig_steps}")


def expected_gradients(model: TrainedModel, image: np.ndarray, cls: int,
                       params: EstimatorParams,
                       reference_pool: np.ndarray) -> Heatmap:
    """Monte-Carlo path attribution with training images as references and
    uniformly random interpolation coefficients."""
    pool = np.asarray(reference_pool, dtype=np.float64)
    if pool.ndim == 2:
        pool = pool[None]
    if pool.shape[0] == 0:
        raise ParameterError("reference pool must be nonempty")
    image = np.asarray(image, dtype=np.float64)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(params.seed)))
    picks = rng.integers(0, pool.shape[0], size=params.eg_samples)
    alphas = rng.uniform(size=params.eg_samples)
    refs = pool[picks]
    diffs = image[None] - refs
    points = refs + alphas[:, None, None] * diffs
    grads = logit_input_gradients(model, points, cls)
    scores = (diffs * grads).mean(axis=0)
    return Heatmap(_check_finite(scores, "expected_grad"), "expected_grad",
                   f"class={cls};samples={params.eg_samples};seed={params.seed}")


def smoothgrad(model: TrainedModel, image: np.ndarray, cls: int,
               params: EstimatorParams = EstimatorParams(),
               squared: bool = False) -> Heatmap:
    """Average of plain gradients under Gaussian input noise; the squared
    variant squares each sample gradient before averaging (nonnegative)."""
    image = np.asarray(image, dtype=np.float64)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(params.seed)))
    noise = rng.normal(0.0, params.sg_sigma, size=(params.sg_samples,) + image.shape)
    grads = logit_input_gradients(model, image[None] + noise, cls)
    if squared:
        grads = grads ** 2
    name = "smoothgrad_sq" if squared else "smoothgrad"
    return Heatmap(_check_finite(grads.mean(axis=0), name), name,
                   f"class={cls};n={params.sg_samples};sigma={params.sg_sigma};"
                   f"seed={params.seed}")


def random_baseline(shape: tuple[int, int], seed: int = 0) -> Heatmap:
    """I.i.d. Uniform(0, 1) scores; the null estimator."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    return Heatmap(rng.uniform(size=shape), "random", f"seed={seed}")


# ---------------------------------------------------------------------------
# Post-processing

POST_OPS = ("sign_invert_if_class0", "absolute", "minmax_normalize")


def postprocess(heatmap: Heatmap, ops: tuple[str, ...],
                predicted_class: int | None = None) -> Heatmap:
    """Apply post-processing flags in the listed canonical order.

    sign_invert_if_class0 negates path-method heatmaps when the model
    predicted class 0, so that positive scores always support the
    prediction; it needs predicted_class and only affects PATH_METHODS.
    """
    for op in ops:
        if op not in POST_OPS:
            raise ParameterError(f"unknown post-processing op {op!r}")
    scores = heatmap.scores
    applied = list(heatmap.post)
    for op in POST_OPS:  # canonical order regardless of input order
        if op not in ops:
            continue
        if op == "sign_invert_if_class0":
            if heatmap.estimator in PATH_METHODS:
                if predicted_class is None:
                    raise ParameterError(
                        "sign_invert_if_class0 needs the predicted class")
                if predicted_class == 0:
                    scores = -scores
        elif op == "absolute":
            scores = np.abs(scores)
        elif op == "minmax_normalize":
            lo, hi = scores.min(), scores.max()
            if hi > lo:
                scores = (scores - lo) / (hi - lo)
            else:
                scores = np.zeros_like(scores)
        applied.append(op)
    return replace(heatmap, scores=scores, post=tuple(applied))


# ---------------------------------------------------------------------------
# Heatmap file format: magic, version, provenance string, dims, f64 grid.

def write_heatmap(heatmap: Heatmap, path) -> None:
    prov = heatmap.provenance.encode()
    h, w = heatmap.scores.shape
    with open(path, "wb") as fh:
        fh.write(HEATMAP_MAGIC)
        fh.write(struct.pack("<I", HEATMAP_VERSION))
        fh.write(struct.pack("<I", len(prov)))
        fh.write(prov)
        fh.write(struct.pack("<II", h, w))
        fh.write(np.ascontiguousarray(heatmap.scores, dtype="<f8").tobytes())


def read_heatmap(path) -> Heatmap:
    with open(path, "rb") as fh:
        payload = fh.read()
    if payload[:len(HEATMAP_MAGIC)] != HEATMAP_MAGIC:
        raise BadMagicError(f"{path}: not a heatmap file (bad magic)")
    off = len(HEATMAP_MAGIC)
    try:
        (version,) = struct.unpack_from("<I", payload, off)
        off += 4
        if version != HEATMAP_VERSION:
            raise BadVersionError(f"{path}: unsupported heatmap version {version}")
        (plen,) = struct.unpack_from("<I", payload, off)
        off += 4
        if off + plen > len(payload):
            raise TruncatedFileError(f"{path}: truncated provenance")
        prov = payload[off:off + plen].decode()
        off += plen
        h, w = struct.unpack_from("<II", payload, off)
        off += 8
    except struct.error:
        raise TruncatedFileError(f"{path}: truncated header") from None
    nbytes = h * w * 8
    if off + nbytes > len(payload):
        raise TruncatedFileError(f"{path}: truncated score grid")
    scores = np.frombuffer(payload[off:off + nbytes], dtype="<f8").reshape(h, w).copy()
    parts = prov.split(";")
    estimator = parts[0]
    post = ()
    meta_parts = []
    for part in parts[1:]:
        if part.startswith("post="):
            post = tuple(part[len("post="):].split("+"))
        else:
            meta_parts.append(part)
    return Heatmap(scores, estimator, ";".join(meta_parts), post)


def compute_heatmap(name: str, model: TrainedModel, image: np.ndarray, cls: int,
                    params: EstimatorParams,
                    reference_pool: np.ndarray | None = None) -> Heatmap:
    """Registry entry point used by the pipeline; name must be one of
    ESTIMATOR_NAMES."""
    if name == "backprop":
        return backprop_saliency(model, image, cls)
    if name == "deconvolution":
        return deconvolution_saliency(model, image, cls)
    if name == "intgrad":
        return integrated_gradients(model, image, cls, params, "black")
    if name == "intgrad_bw":
        return integrated_gradients(model, image, cls, params, "black_white")
    if name == "expected_grad":
        if reference_pool is None:
            raise ParameterError("expected_grad needs a reference pool")
        return expected_gradients(model, image, cls, params, reference_pool)
    if name == "smoothgrad":
        return smoothgrad(model, image, cls, params, squared=False)
    if name == "smoothgrad_sq":
        return smoothgrad(model, image, cls, params, squared=True)
    if name == "random":
        return random_baseline(np.asarray(image).shape, params.seed)
    raise ParameterError(f"unknown estimator {name!r}")
