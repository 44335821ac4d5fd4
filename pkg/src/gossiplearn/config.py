"""Experiment configuration: defaults, JSON parsing, overrides, validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .crossfeat import SIMILARITY_KINDS
from .graph import TOPOLOGY_KINDS
from .model import ACTIVATIONS, ModelSpec

METHODS = ("dsgdm-n", "qg-dsgdm-n", "ccl")

# axes the grid runner may sweep, besides the seed list
GRID_AXES = ("method", "alpha", "lambda_m", "lambda_d")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    method: str = "qg-dsgdm-n"
    topology: str = "ring"
    n_agents: int = 16

    # model
    input_dim: int = 16
    hidden_dims: list = field(default_factory=lambda: [64, 32])
    num_classes: int = 10
    activation: str = "tanh"

    # data: synthetic blobs by default, or CSV paths when given
    blob_per_class: int = 100
    blob_test_per_class: int = 40
    blob_spread: float = 0.3
    train_csv: str | None = None
    test_csv: str | None = None

    alpha: float = 0.1
    batch_size: int = 32
    epochs: int = 10
    lr: float = 0.1
    momentum: float = 0.9
    gamma: float = 1.0
    nesterov: bool = True
    weight_decay: float = 1e-4
    lr_decay_schedule: list = field(default_factory=lambda: [[0.5, 10.0], [0.75, 10.0]])

    lambda_m: float = 0.1
    lambda_d: float = 0.1
    similarity: str = "mse"
    dv_include_self: bool = True

    seeds: list = field(default_factory=lambda: [1, 2, 3])
    eval_interval: int = 0  # rounds between consensus evaluations; 0 = end only
    workers: int = 1
    output_dir: str = "runs"

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.input_dim, tuple(self.hidden_dims), self.num_classes,
                         self.activation)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check field values, raising ConfigError naming the offending field."""
    checks = [
        (cfg.method in METHODS, "method", f"must be one of {METHODS}, got {cfg.method!r}"),
        (cfg.topology in TOPOLOGY_KINDS, "topology",
         f"must be one of {TOPOLOGY_KINDS}, got {cfg.topology!r}"),
        (cfg.n_agents >= 1, "n_agents", f"must be positive, got {cfg.n_agents}"),
        (cfg.input_dim >= 1, "input_dim", f"must be positive, got {cfg.input_dim}"),
        (len(cfg.hidden_dims) >= 1 and all(isinstance(h, int) and h >= 1 for h in cfg.hidden_dims),
         "hidden_dims", f"must be a nonempty list of positive ints, got {cfg.hidden_dims}"),
        (cfg.num_classes >= 2, "num_classes", f"must be at least 2, got {cfg.num_classes}"),
        (cfg.activation in ACTIVATIONS, "activation",
         f"must be one of {ACTIVATIONS}, got {cfg.activation!r}"),
        (cfg.blob_per_class >= 1, "blob_per_class", "must be positive"),
        (cfg.blob_test_per_class >= 0, "blob_test_per_class", "must be nonnegative"),
        (cfg.blob_spread >= 0, "blob_spread", "must be nonnegative"),
        (cfg.alpha > 0, "alpha", f"must be positive, got {cfg.alpha}"),
        (cfg.batch_size >= 1, "batch_size", f"must be positive, got {cfg.batch_size}"),
        (cfg.epochs >= 1, "epochs", f"must be positive, got {cfg.epochs}"),
        (cfg.lr >= 0, "lr", f"must be nonnegative, got {cfg.lr}"),
        (0 <= cfg.momentum < 1, "momentum", f"must be in [0, 1), got {cfg.momentum}"),
        (0 < cfg.gamma <= 1, "gamma", f"must be in (0, 1], got {cfg.gamma}"),
        (cfg.weight_decay >= 0, "weight_decay", "must be nonnegative"),
        (cfg.lambda_m >= 0, "lambda_m", "must be nonnegative"),
        (cfg.lambda_d >= 0, "lambda_d", "must be nonnegative"),
        (cfg.similarity in SIMILARITY_KINDS, "similarity",
         f"must be one of {SIMILARITY_KINDS}, got {cfg.similarity!r}"),
        (len(cfg.seeds) >= 1 and all(isinstance(s, int) and s >= 0 for s in cfg.seeds),
         "seeds", f"must be a nonempty list of nonnegative ints, got {cfg.seeds}"),
        (cfg.eval_interval >= 0, "eval_interval", "must be nonnegative"),
        (cfg.workers >= 1, "workers", f"must be positive, got {cfg.workers}"),
    ]
    for ok, name, msg in checks:
        if not ok:
            raise ConfigError(f"{name}: {msg}")
    for pair in cfg.lr_decay_schedule:
        if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                or not 0 < pair[0] <= 1 or pair[1] <= 0):
            raise ConfigError(f"lr_decay_schedule: entries must be [fraction, factor] pairs, got {pair}")
    if cfg.test_csv is not None and cfg.train_csv is None:
        raise ConfigError("test_csv: cannot be set without train_csv")
    return cfg


_FIELD_NAMES = {f.name for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value):
    """Nudge JSON-parsed values toward the field's declared type."""
    if name in ("hidden_dims", "seeds"):
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return list(value)
    if name == "lr_decay_schedule":
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list of pairs, got {value!r}")
        return [list(p) for p in value]
    current = getattr(ExperimentConfig(), name)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if current is None or isinstance(current, str):
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    return value


def _parse_grid(raw) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"grid: expected an object mapping axis to list, got {raw!r}")
    grid = {}
    for key, values in raw.items():
        if key not in GRID_AXES:
            raise ConfigError(f"grid.{key}: unknown grid axis, expected one of {GRID_AXES}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{key}: expected a nonempty list, got {values!r}")
        grid[key] = [_coerce(key, v) for v in values]
    return grid


def parse_config(path: str | None = None, overrides: list[str] | None = None
                 ) -> tuple[ExperimentConfig, dict]:
    """Build a validated config from a JSON file plus key=value overrides.

    An empty or missing file means all defaults. Returns the config and the
    optional grid axes ({} when the file declares none). Unknown keys are
    rejected by name.
    """
    data = {}
    if path is not None:
        with open(path) as fh:
            text = fh.read().strip()
        if text:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")

    grid = _parse_grid(data.pop("grid")) if "grid" in data else {}
    cfg = ExperimentConfig()
    for key, value in data.items():
        if key not in _FIELD_NAMES:
            raise ConfigError(f"{key}: unknown config key")
        setattr(cfg, key, _coerce(key, value))

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        if key not in _FIELD_NAMES:
            raise ConfigError(f"{key}: unknown config key")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings like method=ccl
        setattr(cfg, key, _coerce(key, value))

    return validate(cfg), grid


def config_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
