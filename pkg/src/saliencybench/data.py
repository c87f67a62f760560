"""Procedural grayscale "pseudo-CT" scenes with pixel-exact relevance masks.

Each scene is a body ellipse containing two darker lung ellipses and a
handful of bright vessel/heart discs. The binary mask is exactly the union
of those discs; label-1 images add a contrast intensity delta inside the
mask before noise, label-0 images are the identical scene without it. A
paired scene seed therefore yields two images that differ only inside the
mask, which keeps the Bayes-optimal evidence region equal to the mask.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import (BadMagicError, DecodeError, GenerationError,
                     TruncatedFileError)


@dataclass
class SceneParams:
    side: int = 64
    body_axis_range: tuple[float, float] = (0.30, 0.42)   # fraction of side
    lung_axis_range: tuple[float, float] = (0.08, 0.16)   # fraction of side
    vessel_count_range: tuple[int, int] = (2, 5)
    vessel_radius_range: tuple[float, float] = (2.6, 4.5)  # pixels
    contrast_delta: float = 0.35
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.side <= 0:
            raise ValueError("side must be positive")
        if self.contrast_delta <= 3.0 * self.noise_sigma:
            raise ValueError("contrast delta must exceed 3x the noise sigma")


@dataclass
class LabeledSample:
    image: np.ndarray        # (side, side) float64 in [0, 1]
    label: int               # 0 = no contrast, 1 = contrast
    mask: np.ndarray         # (side, side) bool
    scene_seed: int


@dataclass
class Dataset:
    samples: list[LabeledSample]
    split: list[str]         # one of {train, test, eval} per sample
    params: SceneParams = None

    def indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.split) if s == split]

    def images(self, split: str) -> np.ndarray:
        return np.stack([self.samples[i].image for i in self.indices(split)])

    def labels(self, split: str) -> np.ndarray:
        return np.array([self.samples[i].label for i in self.indices(split)])

    def masks(self, split: str) -> np.ndarray:
        return np.stack([self.samples[i].mask for i in self.indices(split)])


# Base intensities; vessel base + delta + a few noise sigmas stays below 1.
_BACKGROUND = 0.05
_BODY = 0.45
_LUNG = 0.15
_VESSEL = 0.55

_COVERAGE_BOUNDS = (0.01, 0.11)
_MAX_ATTEMPTS = 50


def _scene_geometry(params: SceneParams, rng: np.random.Generator):
    """Draw one scene: returns (base image without contrast, mask)."""
    s = params.side
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)

    cx = s / 2 + rng.uniform(-0.03, 0.03) * s
    cy = s / 2 + rng.uniform(-0.03, 0.03) * s
    ax = rng.uniform(*params.body_axis_range) * s
    ay = rng.uniform(*params.body_axis_range) * s

    base = np.full((s, s), _BACKGROUND)
    body = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
    base[body] = _BODY

    for side_sign in (-1.0, 1.0):
        lx = cx + side_sign * 0.42 * ax
        ly = cy + rng.uniform(-0.05, 0.05) * s
        la = rng.uniform(*params.lung_axis_range) * s
        lb = rng.uniform(*params.lung_axis_range) * s * 1.4
        lung = ((xx - lx) / la) ** 2 + ((yy - ly) / lb) ** 2 <= 1.0
        base[lung & body] = _LUNG

    lo, hi = params.vessel_count_range
    count = int(rng.integers(lo, hi + 1))
    mask = np.zeros((s, s), dtype=bool)
    for _ in range(count):
        r = rng.uniform(*params.vessel_radius_range)
        margin_x, margin_y = ax - r - 1.0, ay - r - 1.0
        if margin_x <= 0 or margin_y <= 0:
            raise GenerationError("vessel disc cannot fit inside the body ellipse")
        theta = rng.uniform(0.0, 2.0 * np.pi)
        u = np.sqrt(rng.uniform())
        dx_ = cx + u * margin_x * np.cos(theta)
        dy_ = cy + u * margin_y * np.sin(theta)
        disc = (xx - dx_) ** 2 + (yy - dy_) ** 2 <= r ** 2
        mask |= disc
    base[mask] = _VESSEL
    return base, mask


def generate_sample(params: SceneParams, scene_seed: int, label: int) -> LabeledSample:
    """One sample, fully determined by (params, scene_seed, label).

    Geometry and noise come from the same seeded stream, so the two labels
    of a paired seed differ exactly by the contrast delta inside the mask
    (before clipping).
    """
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence((params.seed, scene_seed))))
    for _ in range(_MAX_ATTEMPTS):
        base, mask = _scene_geometry(params, rng)
        coverage = mask.mean()
        if _COVERAGE_BOUNDS[0] <= coverage <= _COVERAGE_BOUNDS[1]:
            break
    else:
        raise GenerationError(
            f"could not draw a mask with coverage in {_COVERAGE_BOUNDS}")
    image = base.copy()
    if label == 1:
        image[mask] += params.contrast_delta
    if params.noise_sigma > 0:
        image = image + rng.normal(0.0, params.noise_sigma, image.shape)
    return LabeledSample(np.clip(image, 0.0, 1.0), int(label), mask, scene_seed)


def generate_dataset(params: SceneParams, n: int, balance: float = 0.5,
                     n_test: int | None = None, n_eval: int = 100) -> Dataset:
    """Deterministic dataset of n samples, split train/test with an eval
    subset carved out of the test split (always disjoint from train)."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0.0 < balance < 1.0:
        raise ValueError("balance must lie strictly between 0 and 1")
    if n_test is None:
        n_test = max(1, n // 5)
    label_rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence((params.seed, 0xBA1A))))
    labels = (label_rng.uniform(size=n) < balance).astype(int)
    samples = [generate_sample(params, i, labels[i]) for i in range(n)]
    n_train = n - n_test
    split = ["train"] * n_train
    split += ["eval"] * min(n_eval, n_test)
    split += ["test"] * (n_test - min(n_eval, n_test))
    return Dataset(samples, split, params)


# ---------------------------------------------------------------------------
# 16-bit binary PGM I/O (P5). Images use maxval 65535, masks maxval 1.

def write_pgm(array: np.ndarray, path) -> None:
    array = np.asarray(array)
    if array.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {array.shape}")
    if array.dtype == bool or np.issubdtype(array.dtype, np.integer):
        maxval = 1
        data = array.astype(">u2")
        if data.max(initial=0) > 1:
            raise ValueError("mask values must be 0 or 1")
    else:
        if array.min(initial=0.0) < 0.0 or array.max(initial=0.0) > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        maxval = 65535
        data = np.round(array * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{array.shape[1]} {array.shape[0]}\n{maxval}\n".encode())
        fh.write(data.tobytes())


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data):
        if data[pos:pos + 1].isspace():
            pos += 1
        elif data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise TruncatedFileError("PGM header ended early")
    return data[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Returns a float64 image in [0, 1] (maxval 65535) or a bool mask
    (maxval 1)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise BadMagicError(f"{path}: not a binary PGM (P5) file")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval not in (1, 65535):
        raise DecodeError(f"{path}: unsupported maxval {maxval} (want 1 or 65535)")
    pos += 1  # single whitespace byte after maxval
    nbytes = width * height * 2
    if len(data) - pos < nbytes:
        raise TruncatedFileError(f"{path}: pixel payload is truncated")
    raw = np.frombuffer(data[pos:pos + nbytes], dtype=">u2").reshape(height, width)
    if maxval == 1:
        return raw.astype(bool)
    return raw.astype(np.float64) / 65535.0


# ---------------------------------------------------------------------------
# On-disk dataset: PGM files plus one manifest CSV.

MANIFEST_COLUMNS = ["id", "image_path", "mask_path", "label", "split"]


def write_dataset(dataset: Dataset, out_dir) -> str:
    """Write every sample as PGM pairs plus manifest.csv; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.csv")
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for i, (sample, split) in enumerate(zip(dataset.samples, dataset.split)):
            image_rel = f"{i:05d}_image.pgm"
            mask_rel = f"{i:05d}_mask.pgm"
            write_pgm(sample.image, os.path.join(out_dir, image_rel))
            write_pgm(sample.mask, os.path.join(out_dir, mask_rel))
            writer.writerow([i, image_rel, mask_rel, sample.label, split])
    return manifest_path


def load_dataset(manifest_path) -> Dataset:
    base = os.path.dirname(manifest_path)
    samples, split = [], []
    with open(manifest_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_COLUMNS:
            raise DecodeError(f"{manifest_path}: unexpected manifest columns")
        for row in reader:
            image = read_pgm(os.path.join(base, row["image_path"]))
            mask = read_pgm(os.path.join(base, row["mask_path"]))
            samples.append(LabeledSample(image, int(row["label"]), mask,
                                         int(row["id"])))
            split.append(row["split"])
    return Dataset(samples, split)
