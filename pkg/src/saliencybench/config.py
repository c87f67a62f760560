"""Run configuration: flat key-value text with dotted section prefixes.

Every knob has a default; `print-config` emits the merged configuration in
the same format it is parsed from. Stage-level content hashes drive cache
reuse in the pipeline: a stage is skipped when its outputs exist and were
produced from the same relevant config subset.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field

import numpy as np

from .data import SceneParams
from .errors import ConfigError
from .estimators import ESTIMATOR_NAMES, EstimatorParams
from .model import ModelConfig
from .segmentation import FelzParams

VARIANTS = ("original", "absolute")

DEFAULTS: dict[str, str] = {
    "seed": "0",
    "out_dir": "runs/default",
    "jobs": "1",
    "data.side": "64",
    "data.n_train": "2000",
    "data.n_test": "500",
    "data.n_eval": "100",
    "data.balance": "0.5",
    "data.contrast_delta": "0.35",
    "data.noise_sigma": "0.02",
    "model.conv_channels": "8,16",
    "model.kernel_size": "3",
    "model.hidden_units": "32",
    "model.learning_rate": "0.01",
    "model.epochs": "3",
    "model.batch_size": "32",
    "estimators.list": ",".join(ESTIMATOR_NAMES),
    "estimators.ig_steps": "25",
    "estimators.sg_samples": "15",
    "estimators.sg_sigma": "0.15",
    "estimators.eg_samples": "25",
    "estimators.eg_pool_size": "200",
    "variants": "original,absolute",
    "metrics.fraction_step": "0.025",
    "metrics.threshold_count": "101",
    "metrics.percent_grid": "1,2,3,4,5,7.5,10,15,20,30,50",
    "felz.k": "80",
    "felz.min_size": "20",
    "felz.sigma": "0.8",
    # config hook only; "mean" is the sole implemented pooling statistic
    "xrai.region_statistic": "mean",
}

# key subsets whose values feed each stage's content hash
_STAGE_KEYS = {
    "data": ("seed", "data."),
    "train": ("seed", "data.", "model."),
    "attribute": ("seed", "data.", "model.", "estimators.", "variants"),
    "eval": ("seed", "data.", "model.", "estimators.", "variants",
             "metrics.", "felz.", "xrai."),
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


@dataclass
class RunConfig:
    values: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.values) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(DEFAULTS)
        merged.update(self.values)
        self.values = merged
        self._validate()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls(parse_config_text(fh.read()))

    def _validate(self):
        for name in self.estimator_names:
            if name not in ESTIMATOR_NAMES:
                raise ConfigError(
                    f"unknown estimator {name!r}; registered: {ESTIMATOR_NAMES}")
        if not self.variants:
            raise ConfigError("variants must be nonempty")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; choose from {VARIANTS}")
        if self.values["xrai.region_statistic"] != "mean":
            raise ConfigError(
                "only the 'mean' region statistic is implemented "
                "(xrai.region_statistic is a forward-compatibility hook)")
        try:
            self.scene_params()
            self.model_config()
            self.felz_params()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    # typed accessors -------------------------------------------------

    def _int(self, key):
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}") from None

    def _float(self, key):
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self.values[key]!r}") from None

    @property
    def seed(self) -> int:
        return self._int("seed")

    @property
    def out_dir(self) -> str:
        return self.values["out_dir"]

    @property
    def jobs(self) -> int:
        return max(1, self._int("jobs"))

    @property
    def estimator_names(self) -> tuple[str, ...]:
        return tuple(s.strip() for s in self.values["estimators.list"].split(",") if s.strip())

    @property
    def variants(self) -> tuple[str, ...]:
        return tuple(s.strip() for s in self.values["variants"].split(",") if s.strip())

    @property
    def n_train(self) -> int:
        return self._int("data.n_train")

    @property
    def n_test(self) -> int:
        return self._int("data.n_test")

    @property
    def n_eval(self) -> int:
        return self._int("data.n_eval")

    @property
    def balance(self) -> float:
        return self._float("data.balance")

    @property
    def fraction_step(self) -> float:
        return self._float("metrics.fraction_step")

    @property
    def threshold_count(self) -> int:
        return self._int("metrics.threshold_count")

    @property
    def percent_grid(self) -> tuple[float, ...]:
        return tuple(float(s) for s in self.values["metrics.percent_grid"].split(","))

    @property
    def eg_pool_size(self) -> int:
        return self._int("estimators.eg_pool_size")

    def scene_params(self) -> SceneParams:
        return SceneParams(
            side=self._int("data.side"),
            contrast_delta=self._float("data.contrast_delta"),
            noise_sigma=self._float("data.noise_sigma"),
            seed=self.stage_seed("data"),
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            side=self._int("data.side"),
            conv_channels=tuple(int(s) for s in self.values["model.conv_channels"].split(",")),
            kernel_size=self._int("model.kernel_size"),
            hidden_units=self._int("model.hidden_units"),
            learning_rate=self._float("model.learning_rate"),
            epochs=self._int("model.epochs"),
            batch_size=self._int("model.batch_size"),
            seed=self.stage_seed("train"),
        )

    def estimator_params(self, seed: int) -> EstimatorParams:
        return EstimatorParams(
            ig_steps=self._int("estimators.ig_steps"),
            sg_samples=self._int("estimators.sg_samples"),
            sg_sigma=self._float("estimators.sg_sigma"),
            eg_samples=self._int("estimators.eg_samples"),
            seed=seed,
        )

    def felz_params(self) -> FelzParams:
        return FelzParams(
            k=self._float("felz.k"),
            min_size=self._int("felz.min_size"),
            sigma=self._float("felz.sigma"),
        )

    # hashing and seeds -----------------------------------------------

    def to_text(self) -> str:
        lines = [f"{key} = {self.values[key]}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def stage_hash(self, stage: str) -> str:
        prefixes = _STAGE_KEYS[stage]
        keys = sorted(k for k in self.values
                      if any(k == p or k.startswith(p) for p in prefixes))
        text = "\n".join(f"{k} = {self.values[k]}" for k in keys)
        return hashlib.sha256(text.encode()).hexdigest()

    def stage_seed(self, label: str) -> int:
        """Per-stage seed derived from the master seed by labeled hashing."""
        seq = np.random.SeedSequence((self.seed, zlib.crc32(label.encode())))
        return int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)
