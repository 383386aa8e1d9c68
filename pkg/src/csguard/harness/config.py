"""Experiment configuration: frozen defaults, file loading, validation."""
from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULTS_VERSION = "desk-1"

MODES = (
    "benign",
    "forge",
    "informed_forge",
    "ablate_cs",
    "ablate_proj",
    "ablate_steps",
    "ablate_observation",
    "distortion_sweep",
    "fpr_calibration",
    "timing",
)
RATE_MODES = frozenset(MODES) - {"timing"}
SCHEMES = ("csguard", "plain")
OBSERVATION_MODES = ("trajectory_intrinsic", "random")

# grid used by each sweep mode when the config does not give one
DEFAULT_GRIDS = {
    "ablate_cs": (0.2, 0.5, 0.8),
    "ablate_proj": (0.1, 0.4, 0.8),
    "ablate_steps": (10, 25, 50),
    "ablate_observation": ("trajectory_intrinsic", "random"),
    "distortion_sweep": (0.0, 0.1, 0.5, 2.0),
    "fpr_calibration": (1.0, 1e-2, 1e-6, 1e-10),
}
SWEEP_AXES = {
    "ablate_cs": "cs_ratio",
    "ablate_proj": "proj_ratio",
    "ablate_steps": "T",
    "ablate_observation": "observation_mode",
    "distortion_sweep": "distortion_sigma",
    "fpr_calibration": "fpr",
}
MIN_RATE_TRIALS = 32
MIN_TIMING_PAIRS = 10


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` maps field name to message."""

    def __init__(self, problems: dict[str, str]):
        self.problems = dict(problems)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.problems.items()))


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 1024
    L: int = 64
    K: int = 8
    T: int = 50
    cs_ratio: float = 0.8
    proj_ratio: float = 0.4
    fpr: float = 1e-10
    component_std: float = 0.5
    mean_range: float = 2.0
    train_steps: int = 1000
    trials: int = 100
    seed_base: int = 0
    mode: str = "benign"
    scheme: str = "csguard"
    observation_mode: str = "trajectory_intrinsic"
    inversion_iters: int = 5
    recompute_noise: bool = False
    model_seed: int = 1
    matrix_seed: int = 3
    attacker_seed: int = 99
    # attacker means sit this many component stds (per coordinate) off the victim's
    attacker_mismatch: float = 0.7
    attacker_steps: int = 0
    matrix_similarity: float = 0.0
    distortion_sigma: float = 0.0
    null_trials: int = 10000
    grid: tuple = ()
    allow_few_trials: bool = field(default=False, compare=False)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["grid"] = list(self.grid)
        out.pop("allow_few_trials")
        return out

    @property
    def effective_grid(self) -> tuple:
        return tuple(self.grid) if self.grid else DEFAULT_GRIDS.get(self.mode, ())

    @property
    def effective_attacker_steps(self) -> int:
        return self.attacker_steps or self.T


_INT_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig) if f.type == "int"}
_FLOAT_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig) if f.type == "float"}
_BOOL_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig) if f.type == "bool"}


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    p: dict[str, str] = {}
    for name in _INT_FIELDS:
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, int):
            p[name] = f"expected an integer, got {v!r}"
    for name in _FLOAT_FIELDS:
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            p[name] = f"expected a number, got {v!r}"
    if p:
        raise ConfigError(p)
    if cfg.mode not in MODES:
        p["mode"] = f"unknown mode {cfg.mode!r}; expected one of {', '.join(MODES)}"
    if cfg.scheme not in SCHEMES:
        p["scheme"] = f"expected one of {SCHEMES}, got {cfg.scheme!r}"
    if cfg.observation_mode not in OBSERVATION_MODES:
        p["observation_mode"] = f"expected one of {OBSERVATION_MODES}, got {cfg.observation_mode!r}"
    if cfg.trials < 1:
        p["trials"] = "must be >= 1"
    elif cfg.mode in RATE_MODES and cfg.trials < MIN_RATE_TRIALS and not cfg.allow_few_trials:
        p["trials"] = f"rate-reporting modes need >= {MIN_RATE_TRIALS} trials"
    if cfg.L < 1 or cfg.n < 2 or cfg.n % cfg.L:
        p["L"] = f"payload length must divide n ({cfg.n})"
    if cfg.K < 2:
        p["K"] = "need at least two mixture components"
    if cfg.T < 1:
        p["T"] = "must be >= 1"
    if cfg.train_steps < cfg.T:
        p["train_steps"] = "must be >= T"
    if not 0.0 < cfg.cs_ratio <= 1.0 or int(cfg.cs_ratio * cfg.n) < 1:
        p["cs_ratio"] = "must lie in (0, 1] with floor(cs_ratio * n) >= 1"
    if not 0.0 <= cfg.proj_ratio < 1.0:
        p["proj_ratio"] = "must lie in [0, 1)"
    if not 0.0 < cfg.fpr <= 1.0:
        p["fpr"] = "must lie in (0, 1]"
    if cfg.component_std <= 0:
        p["component_std"] = "must be positive"
    if cfg.mean_range <= 0:
        p["mean_range"] = "must be positive"
    if cfg.inversion_iters < 0:
        p["inversion_iters"] = "must be >= 0"
    if cfg.attacker_mismatch < 0:
        p["attacker_mismatch"] = "must be >= 0"
    if cfg.attacker_steps < 0:
        p["attacker_steps"] = "must be >= 0 (0 means T)"
    if not 0.0 <= cfg.matrix_similarity <= 1.0:
        p["matrix_similarity"] = "must lie in [0, 1]"
    if cfg.distortion_sigma < 0:
        p["distortion_sigma"] = "must be >= 0"
    if cfg.null_trials < 1:
        p["null_trials"] = "must be >= 1"
    if cfg.mode == "timing" and cfg.trials < MIN_TIMING_PAIRS:
        p["trials"] = f"timing needs >= {MIN_TIMING_PAIRS} matched pairs"
    if cfg.seed_base < 0 or cfg.seed_base >= 2**64:
        p["seed_base"] = "must be a 64-bit unsigned integer"
    if cfg.mode in SWEEP_AXES and not p.get("mode"):
        p.update(_grid_problems(cfg))
    if p:
        raise ConfigError(p)
    return cfg


def _grid_problems(cfg: ExperimentConfig) -> dict[str, str]:
    grid = cfg.effective_grid
    if not grid:
        return {"grid": "sweep needs at least one value"}
    axis = SWEEP_AXES[cfg.mode]
    for v in grid:
        try:
            validate(cfg.replace(mode="benign", grid=(), allow_few_trials=True, **{axis: v}))
        except ConfigError as exc:
            return {"grid": f"value {v!r} invalid for {axis}: {exc}"}
    return {}


def _coerce(name: str, value: Any) -> Any:
    if name == "grid":
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        return tuple(_coerce_scalar(v) for v in value)
    if isinstance(value, str):
        if name in _INT_FIELDS:
            return int(value, 0)
        if name in _FLOAT_FIELDS:
            return float(value)
        if name in _BOOL_FIELDS:
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError(f"not a boolean: {value!r}")
            return value.lower() in ("true", "1")
    if name in _FLOAT_FIELDS and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _coerce_scalar(v):
    if not isinstance(v, str):
        return v
    v = v.strip()
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def from_mapping(data: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError({k: "unknown field" for k in unknown})
    changes, problems = {}, {}
    for k, v in data.items():
        try:
            changes[k] = _coerce(k, v)
        except (TypeError, ValueError) as exc:
            problems[k] = str(exc)
    if problems:
        raise ConfigError(problems)
    return validate((base or ExperimentConfig()).replace(**changes))


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a TOML or JSON config (by extension) and apply ``overrides`` on top."""
    path = Path(path)
    try:
        if path.suffix == ".json":
            data = json.loads(path.read_text())
        else:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError({"<file>": f"{path}: {exc}"}) from exc
    if not isinstance(data, dict):
        raise ConfigError({"<file>": "top level must be a table"})
    data = dict(data.get("experiment", data))
    data.update(overrides or {})
    return from_mapping(data)
