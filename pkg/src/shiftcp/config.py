"""Run configuration: one flat key = value file format plus CLI overrides.

Keys use dotted section prefixes (``tta.lr = 0.00025``); '#' starts a
comment, blank lines are ignored, and an empty value means "unset" (fall
back to the default). Every key maps onto one RunConfig field, so a config
file, CLI flags, and the dataclass are three views of the same record.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .model import TrainConfig
from .scaling import UNCERTAINTY_MEASURES, ScalingSpec
from .shiftsim import CORRUPTION_KINDS, SCHEDULE_MODES, ShiftSchedule, SyntheticSpec
from .tta import PARAMETER_SUBSETS, QUANTILE_MODES, TTA_METHODS, TTAConfig

METHODS = ("naive", "splitcp", "eta_splitcp", "ecp", "eacp", "aci")


@dataclass
class RunConfig:
    # headline protocol
    alpha: float = 0.1
    method: str = "splitcp"
    order: float = 1.0
    beta: float | None = None  # None: 1 - alpha
    measure: str = "entropy"
    window: int = 128
    seeds: tuple[int, ...] = (0,)
    gamma: float = 0.005
    temperature: float = 3.0
    quantile_mode: str = "running"
    quantile_window: int = 1024
    # training of the built-in model
    train_epochs: int = 25
    train_lr: float = 0.1
    train_momentum: float = 0.9
    train_batch_size: int = 64
    architecture: str = "mlp"
    hidden_units: int = 32
    # synthetic data shape
    n_classes: int = 8
    n_features: int = 16
    n_train: int = 2000
    n_cal: int = 2000
    n_test: int = 2000
    separation: float = 2.5
    stddev: float = 1.0
    # stationary shift
    corruption: str = "additive_noise"
    severity: int = 3
    # stream
    schedule_mode: str = "sudden"
    segment_length: int = 500
    pool: tuple[str, ...] = CORRUPTION_KINDS
    total_points: int = 4000
    # adaptation
    tta_method: str = "eta"
    tta_lr: float = 0.00025
    tta_momentum: float = 0.9
    tta_batch_size: int = 64
    entropy_margin: float | None = None
    epsilon: float = 0.05
    param_subset: str = "final_layer"
    # external data
    table_path: str | None = None
    table_cal_path: str | None = None
    table_test_path: str | None = None
    table_orientation: str = "probabilities"
    table_split: float = 0.5
    checkpoint: str | None = None
    # output
    out_dir: str = "results"
    dataset_name: str | None = None
    per_point: bool = False
    plot_data: bool = True

    # ------------------------------------------------------------------
    # derived objects

    def effective_beta(self) -> float:
        return 1.0 - self.alpha if self.beta is None else self.beta

    def scaling_spec(self) -> ScalingSpec:
        return ScalingSpec(measure=self.measure, order=self.order, beta=self.effective_beta())

    def tta_config(self) -> TTAConfig:
        return TTAConfig(
            method=self.tta_method,
            learning_rate=self.tta_lr,
            momentum=self.tta_momentum,
            batch_size=self.tta_batch_size,
            entropy_margin=self.entropy_margin,
            redundancy_epsilon=self.epsilon,
            parameter_subset=self.param_subset,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.train_epochs,
            batch_size=self.train_batch_size,
            learning_rate=self.train_lr,
            momentum=self.train_momentum,
            seed=seed,
            architecture=self.architecture,
            hidden_units=self.hidden_units,
            temperature=1.0,  # temperature is applied at inference
        )

    def synthetic_spec(self, n_samples: int, sample_seed: int, run_seed: int) -> SyntheticSpec:
        return SyntheticSpec(
            n_classes=self.n_classes,
            n_features=self.n_features,
            n_samples=n_samples,
            separation=self.separation,
            stddev=self.stddev,
            seed=sample_seed,
            distribution_seed=run_seed,
        )

    def shift_schedule(self, seed: int) -> ShiftSchedule:
        return ShiftSchedule(
            mode=self.schedule_mode,
            severity=self.severity if self.schedule_mode == "stationary" else 0,
            segment_length=self.segment_length,
            pool=self.pool,
            seed=seed,
        )

    def uses_tables(self) -> bool:
        return self.table_path is not None or self.table_cal_path is not None

    def validate(self, streaming: bool = False) -> None:
        if (self.table_cal_path is None) != (self.table_test_path is None):
            raise ConfigError(
                "pre-split tables need both table.cal_path and table.test_path"
            )
        if self.table_path is not None and self.table_cal_path is not None:
            raise ConfigError(
                "give either one table to split (table.path) or a pre-split "
                "pair (table.cal_path/table.test_path), not both"
            )
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1)")
        if self.beta is not None and not 0.0 < self.beta < 1.0:
            raise ConfigError("beta must be in (0, 1)")
        if self.order < 1.0:
            raise ConfigError("scaling order must be >= 1")
        if self.measure not in UNCERTAINTY_MEASURES:
            raise ConfigError(f"unknown uncertainty measure {self.measure!r}")
        if self.window < 1:
            raise ConfigError("window must be positive")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.method == "aci" and not streaming:
            raise ConfigError(
                "aci is an online method with label feedback; run it via the "
                "stream command"
            )
        if self.uses_tables() and self.method in ("eacp", "eta_splitcp"):
            raise ConfigError(
                f"{self.method} adapts the built-in model and needs covariates; "
                "logit tables carry scores only"
            )
        if self.uses_tables() and streaming:
            raise ConfigError("streaming runs need covariates; logit tables are offline")
        if not 0.0 < self.table_split < 1.0:
            raise ConfigError("table split fraction must be in (0, 1)")
        if self.quantile_mode not in QUANTILE_MODES:
            raise ConfigError(f"unknown quantile mode {self.quantile_mode!r}")
        if self.schedule_mode not in SCHEDULE_MODES:
            raise ConfigError(f"unknown schedule mode {self.schedule_mode!r}")
        if self.corruption not in CORRUPTION_KINDS:
            raise ConfigError(f"unknown corruption kind {self.corruption!r}")
        if not 0 <= self.severity <= 5:
            raise ConfigError("severity must be in 0..5")
        if self.tta_method not in TTA_METHODS:
            raise ConfigError(f"unknown TTA method {self.tta_method!r}")
        if self.param_subset not in PARAMETER_SUBSETS:
            raise ConfigError(f"unknown parameter subset {self.param_subset!r}")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_seeds(text: str) -> tuple[int, ...]:
    parts = text.replace(",", " ").split()
    return tuple(int(p) for p in parts)


def _parse_pool(text: str) -> tuple[str, ...]:
    return tuple(text.replace(",", " ").split())


# file key -> (RunConfig field, parser). None parser means plain string.
CONFIG_KEYS = {
    "alpha": ("alpha", float),
    "method": ("method", None),
    "order": ("order", float),
    "beta": ("beta", float),
    "measure": ("measure", None),
    "window": ("window", int),
    "seeds": ("seeds", _parse_seeds),
    "gamma": ("gamma", float),
    "temperature": ("temperature", float),
    "quantile_mode": ("quantile_mode", None),
    "quantile_window": ("quantile_window", int),
    "train.epochs": ("train_epochs", int),
    "train.lr": ("train_lr", float),
    "train.momentum": ("train_momentum", float),
    "train.batch_size": ("train_batch_size", int),
    "train.architecture": ("architecture", None),
    "train.hidden_units": ("hidden_units", int),
    "data.classes": ("n_classes", int),
    "data.features": ("n_features", int),
    "data.n_train": ("n_train", int),
    "data.n_cal": ("n_cal", int),
    "data.n_test": ("n_test", int),
    "data.separation": ("separation", float),
    "data.stddev": ("stddev", float),
    "shift.kind": ("corruption", None),
    "shift.severity": ("severity", int),
    "schedule.mode": ("schedule_mode", None),
    "schedule.segment_length": ("segment_length", int),
    "schedule.pool": ("pool", _parse_pool),
    "stream.total_points": ("total_points", int),
    "tta.method": ("tta_method", None),
    "tta.lr": ("tta_lr", float),
    "tta.momentum": ("tta_momentum", float),
    "tta.batch_size": ("tta_batch_size", int),
    "tta.entropy_margin": ("entropy_margin", float),
    "tta.epsilon": ("epsilon", float),
    "tta.param_subset": ("param_subset", None),
    "table.path": ("table_path", None),
    "table.cal_path": ("table_cal_path", None),
    "table.test_path": ("table_test_path", None),
    "table.orientation": ("table_orientation", None),
    "table.split": ("table_split", float),
    "checkpoint": ("checkpoint", None),
    "out_dir": ("out_dir", None),
    "dataset_name": ("dataset_name", None),
    "per_point": ("per_point", _parse_bool),
    "plot_data": ("plot_data", _parse_bool),
}


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat ``key = value`` lines into a RunConfig over ``base`` defaults."""
    config = base if base is not None else RunConfig()
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        attr, parser = CONFIG_KEYS[key]
        if value == "":
            continue  # empty: keep the default
        try:
            updates[attr] = value if parser is None else parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return replace(config, **updates)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, base)


def config_to_text(config: RunConfig) -> str:
    """Serialize a RunConfig back to the file format (stable key order)."""
    attr_to_key = {attr: key for key, (attr, _) in CONFIG_KEYS.items()}
    lines = []
    for f in fields(RunConfig):
        key = attr_to_key.get(f.name)
        if key is None:
            continue
        value = getattr(config, f.name)
        if value is None:
            rendered = ""
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, tuple):
            rendered = " ".join(str(v) for v in value)
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"
