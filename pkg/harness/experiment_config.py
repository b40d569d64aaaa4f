import logging
import typing
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values

from config import (
    OUTPUT_DIR, PRESETS, EXPERIMENTS, GD_STEP_SIZE, NEWTON_TOL, NEWTON_TRUST_CONSTANT, RANDOM_PROBES,
    STABILITY_EPSILONS, OVERLAP_GRID, WELL_OUTLIER_COUNT, K_N_CALIBRATION_N, K_N_CALIBRATION_SAMPLES,
)

logger = logging.getLogger(__name__)

FOLLOW_MODES = ["planted", "spinglass", "verification"]
ALGORITHMS = ["gd", "hessian"]


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)"""


@dataclass
class ExperimentConfig:
    experiment: str = "optimize"
    preset: Optional[str] = None
    N: int = 80
    p: int = 3
    K: int = 10
    epsilon: float = 0.01
    gamma: float = 0.5
    delta: float = 0.05
    d: int = 0
    iota: float = 0.05
    eta: float = GD_STEP_SIZE
    I: Optional[int] = None
    tol: float = NEWTON_TOL
    trust_c: float = NEWTON_TRUST_CONSTANT
    seed: int = 0
    replicas: int = 10
    jobs: int = 1
    out: str = OUTPUT_DIR
    mu: float = 2.0
    mode: str = "planted"
    algorithm: str = "gd"
    well_gamma: float = 0.02
    k: int = WELL_OUTLIER_COUNT
    C: Optional[float] = None
    check_bounded: bool = False
    n_probes: int = RANDOM_PROBES
    epsilons: List[float] = field(default_factory=lambda: list(STABILITY_EPSILONS))
    q_grid: List[float] = field(default_factory=lambda: list(OVERLAP_GRID))
    stab_delta_factor: float = 1.0
    spectrum_point: str = "random"
    calibration_N: int = K_N_CALIBRATION_N
    calibration_samples: int = K_N_CALIBRATION_SAMPLES
    save_tensors: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"Unknown experiment '{self.experiment}', expected one of {EXPERIMENTS}")
        if self.N < 2 or self.p < 2:
            raise ConfigError(f"Need N >= 2 and p >= 2, got N={self.N}, p={self.p}")
        if self.K < 1 or self.replicas < 1 or self.jobs < 1:
            raise ConfigError("K, replicas and jobs must all be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        for name in ("gamma", "delta", "iota", "eta", "tol", "trust_c", "well_gamma"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d < 0:
            raise ConfigError(f"d must be nonnegative, got {self.d}")
        if self.mode not in FOLLOW_MODES:
            raise ConfigError(f"Unknown follow mode '{self.mode}', expected one of {FOLLOW_MODES}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"Unknown algorithm '{self.algorithm}', expected one of {ALGORITHMS}")
        if self.spectrum_point not in ("random", "optimized"):
            raise ConfigError(f"spectrum_point must be 'random' or 'optimized', got '{self.spectrum_point}'")
        if any(not 0.0 < e <= 1.0 for e in self.epsilons):
            raise ConfigError(f"Stability epsilons must lie in (0, 1], got {self.epsilons}")
        if any(not 0.0 <= q <= 1.0 for q in self.q_grid):
            raise ConfigError(f"Overlap grid must lie in [0, 1], got {self.q_grid}")
        if self.preset == "paper-regime":
            self.check_parameter_order()
        return self

    def check_parameter_order(self):
        """gamma >> iota >> delta >> epsilon >> 1/K"""
        chain = [("gamma", self.gamma), ("iota", self.iota), ("delta", self.delta),
                 ("epsilon", self.epsilon), ("1/K", 1.0 / self.K)]
        for (big_name, big), (small_name, small) in zip(chain, chain[1:]):
            if not big > small:
                raise ConfigError(f"paper-regime requires {big_name} > {small_name}, got {big} <= {small}")

    def snapshot(self) -> Dict[str, Any]:
        return asdict(self)


def _coerce(name: str, raw: Any, annotation) -> Any:
    if raw is None:
        return None
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union and type(None) in args:
        if isinstance(raw, str) and raw.strip().lower() in ("", "none", "null"):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(name, raw, inner)
    if origin in (list, List):
        item_type = args[0] if args else float
        if isinstance(raw, str):
            items = [x for x in raw.strip().strip("[]").split(",") if x.strip()]
        else:
            items = list(raw)
        return [_coerce(name, x, item_type) for x in items]
    try:
        if annotation is bool:
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if annotation is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(float(raw)) if isinstance(raw, str) and "e" in raw.lower() else int(raw)
        if annotation is float:
            return float(raw)
        if isinstance(raw, str):
            return raw.strip().strip('"').strip("'")
        return raw
    except (TypeError, ValueError):
        raise ConfigError(f"Cannot read '{name}' = {raw!r} as {getattr(annotation, '__name__', annotation)}")


def _apply(values: Dict[str, Any], target: Dict[str, Any], source: str):
    hints = typing.get_type_hints(ExperimentConfig)
    for key, raw in values.items():
        if key not in hints:
            raise ConfigError(f"Unknown config key '{key}' in {source}")
        target[key] = _coerce(key, raw, hints[key])


def load_config(path: Optional[str] = None, preset: Optional[str] = None,
                overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """defaults < preset < config file < CLI overrides"""
    values: Dict[str, Any] = {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    file_values: Dict[str, Any] = {}
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"Config file not found: {path}")
        try:
            file_values = dict(dotenv_values(path))
        except (OSError, UnicodeDecodeError) as e:
            raise ConfigError(f"Cannot read config file {path}: {e}")
    preset = overrides.get("preset") or file_values.get("preset") or preset
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"Unknown preset '{preset}', expected one of {list(PRESETS)}")
        preset_values = dict(PRESETS[preset])
        if "max_iters" in preset_values:
            preset_values["I"] = preset_values.pop("max_iters")
        _apply(preset_values, values, f"preset {preset}")
        values["preset"] = preset
    _apply(file_values, values, path or "config file")
    _apply(overrides, values, "command line")

    config = ExperimentConfig(**values)
    logger.debug(f"Loaded config: {config.snapshot()}")
    return config.validate()


def config_fields() -> List[str]:
    return [f.name for f in fields(ExperimentConfig)]
