"""Run configuration: a flat TOML-style key=value file plus flag overrides.

Flags always win over the file; the file wins over built-in defaults.  The
format is deliberately flat (``key = value`` per line, ``#`` comments,
quoted or bare strings) so a run's configuration can live next to its
outputs as a single committed artifact.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .boosting import GbdtParams
from .errors import ConfigError


@dataclass
class CliConfig:
    data_root: Path = Path("data")
    cameras_file: Optional[Path] = None  # default: <data_root>/cameras.jsonl
    weather_mode: str = "fixture"  # fixture | live
    fixture_dir: Optional[Path] = None  # default: <data_root>/raw/fixtures
    theta: float = 0.5
    grayness_threshold: float = 0.40
    k_folds: int = 5
    seed: int = 0
    include_meta: bool = True
    num_trees: int = 200
    learning_rate: float = 0.1
    max_leaves: int = 31
    min_child_weight: float = 1.0
    min_child_samples: int = 20
    lambda_l2: float = 1.0
    gamma_min_gain: float = 0.0
    max_bins: int = 255

    def __post_init__(self):
        self.data_root = Path(self.data_root)
        if self.weather_mode not in ("fixture", "live"):
            raise ConfigError(f"weather_mode must be fixture|live, got {self.weather_mode!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"theta out of (0,1]: {self.theta}")
        if not 0.0 < self.grayness_threshold <= 1.0:
            raise ConfigError(f"grayness_threshold out of (0,1]: {self.grayness_threshold}")

    def gbdt_params(self) -> GbdtParams:
        try:
            return GbdtParams(
                num_trees=self.num_trees,
                learning_rate=self.learning_rate,
                max_leaves=self.max_leaves,
                min_child_weight=self.min_child_weight,
                min_child_samples=self.min_child_samples,
                lambda_l2=self.lambda_l2,
                gamma_min_gain=self.gamma_min_gain,
                max_bins=self.max_bins,
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def fixtures(self) -> Path:
        return Path(self.fixture_dir) if self.fixture_dir else self.data_root / "raw" / "fixtures"


_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False}


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    low = raw.lower()
    if low in _BOOL_WORDS:
        return _BOOL_WORDS[low]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def load_config_file(path: Path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = line.split("=", 1)
            values[key.strip()] = _parse_value(raw)
    return values


def build_config(config_file: Optional[Path], overrides: dict) -> CliConfig:
    """defaults < file < non-None overrides."""
    values = {}
    if config_file is not None:
        file_values = load_config_file(Path(config_file))
        known = {f.name for f in fields(CliConfig)}
        unknown = set(file_values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    try:
        return CliConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
