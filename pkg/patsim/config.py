"""
Run configuration: built-in defaults, environment overrides and flag parsing helpers
"""

import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

from .cohort import DEFAULT_HORIZON
from .evaluation import DEFAULT_INNER_K
from .imputation import DEFAULT_LAMBDAS, DEFAULT_RANKS
from .model import DEFAULT_C_GRID
from .similarity import DISTANCE_VARIANTS

logger = logging.getLogger(__name__)

METHODS = ("snapshot", "global", "prefix", "suffix", "subsequence")
DEFAULT_CACHE_DIR = ".patsim_cache"

# Fields that only affect how a run executes, never what it computes
RUNTIME_FIELDS = ("jobs", "cache_dir", "out_dir")


class ConfigError(ValueError):
    """Raised for malformed environment values or flag lists"""


def parse_float_list(text: str, name: str = "value") -> Tuple[float, ...]:
    """Parse "0.01,0.1,1" into a tuple of positive floats"""
    try:
        values = tuple(float(item) for item in text.split(",") if item.strip())
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of numbers, got {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise ConfigError(f"{name} must list positive numbers, got {text!r}")
    return values


def parse_int_list(text: str, name: str = "value") -> Tuple[int, ...]:
    try:
        values = tuple(int(item) for item in text.split(",") if item.strip())
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise ConfigError(f"{name} must list positive integers, got {text!r}")
    return values


def parse_methods(text: str) -> Tuple[str, ...]:
    methods = tuple(item.strip() for item in text.split(",") if item.strip())
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise ConfigError(f"Unknown method(s) {', '.join(unknown) or text!r}; expected {', '.join(METHODS)}")
    if len(set(methods)) != len(methods):
        raise ConfigError(f"Duplicate methods in {text!r}")
    return methods


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one evaluate run"""

    cohort_path: Optional[str] = None
    out_dir: Optional[str] = None
    methods: Tuple[str, ...] = METHODS
    modalities: Tuple[str, ...] = ()
    horizon: int = DEFAULT_HORIZON
    seed: int = 0
    jobs: int = 1
    grid_c: Tuple[float, ...] = DEFAULT_C_GRID
    grid_rank: Tuple[int, ...] = DEFAULT_RANKS
    grid_lambda: Tuple[float, ...] = DEFAULT_LAMBDAS
    inner_k: int = DEFAULT_INNER_K
    cache_dir: Optional[str] = None
    command: str = field(default="evaluate")

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ConfigError(f"Unknown method(s): {', '.join(unknown) or '(none)'}")
        if self.horizon <= 0:
            raise ConfigError(f"Horizon must be positive, got {self.horizon}")
        if self.inner_k < 2:
            raise ConfigError(f"Inner fold count must be at least 2, got {self.inner_k}")
        if self.jobs == 0:
            raise ConfigError("jobs must be non-zero (-1 uses every core)")

    @classmethod
    def from_env(cls, **overrides) -> "RunConfig":
        """Defaults overridden by PATSIM_* environment variables, then by explicit arguments"""
        values: Dict = {
            "horizon": _env_int("PATSIM_HORIZON", DEFAULT_HORIZON),
            "seed": _env_int("PATSIM_SEED", 0),
            "jobs": _env_int("PATSIM_JOBS", os.cpu_count() or 1),
            "inner_k": _env_int("PATSIM_INNER_K", DEFAULT_INNER_K),
            "cache_dir": os.getenv("PATSIM_CACHE_DIR", DEFAULT_CACHE_DIR) or None,
        }
        if os.getenv("PATSIM_GRID_C"):
            values["grid_c"] = parse_float_list(os.environ["PATSIM_GRID_C"], "PATSIM_GRID_C")
        if os.getenv("PATSIM_GRID_RANK"):
            values["grid_rank"] = parse_int_list(os.environ["PATSIM_GRID_RANK"], "PATSIM_GRID_RANK")
        if os.getenv("PATSIM_GRID_LAMBDA"):
            values["grid_lambda"] = parse_float_list(os.environ["PATSIM_GRID_LAMBDA"], "PATSIM_GRID_LAMBDA")
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    def with_overrides(self, **overrides) -> "RunConfig":
        return replace(self, **{key: value for key, value in overrides.items() if value is not None})

    def to_record(self) -> Dict:
        """Config as written to machine-readable output (runtime-only fields left out)"""
        record = asdict(self)
        for name in RUNTIME_FIELDS:
            record.pop(name, None)
        return {key: list(value) if isinstance(value, tuple) else value for key, value in record.items()}

    def describe(self) -> Dict:
        """Every field, runtime ones included, for the human-readable report"""
        return {key: list(value) if isinstance(value, tuple) else value for key, value in asdict(self).items()}


def log_level() -> str:
    return os.getenv("PATSIM_LOG_LEVEL", "INFO").upper()


def check_variant(variant: str) -> str:
    if variant not in DISTANCE_VARIANTS:
        raise ConfigError(f"Unknown variant {variant!r}; expected one of {', '.join(DISTANCE_VARIANTS)}")
    return variant


def methods_for_variant(variant: str, methods: Optional[Sequence[str]] = None) -> Tuple[str, ...]:
    """--variant X is shorthand for comparing X against the snapshot baseline; with explicit methods it adds X"""
    check_variant(variant)
    if methods:
        methods = tuple(methods)
        return methods if variant in methods else methods + (variant,)
    return ("snapshot",) if variant == "snapshot" else ("snapshot", variant)
