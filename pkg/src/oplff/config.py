"""YAML experiment files: parsing, validation and the effective-config echo.

Every dataclass in the configuration tree maps to a YAML mapping with the
same field names. Missing keys take the dataclass defaults, unknown keys
are errors, and :func:`dump` writes every field back out, so the echo of
a parsed file re-parses to an equal configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass
import difflib
from importlib import resources
import types
import typing
from pathlib import Path

import yaml

from .engine import ChainConfig, DriftProfile
from .noise import NoiseConfig, ToneSpec


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class SimulateSettings:
    duration: float = 0.25
    rbw: float = 500.0
    span: float = 5e6
    tones: tuple[ToneSpec, ...] = (ToneSpec(2e6, 0.05),)


@dataclass(frozen=True)
class SweepSettings:
    start: float = 10e3
    stop: float = 10e6
    points: int = 13
    frequencies: tuple[float, ...] | None = None
    beta: float = 0.1
    rbw: float = 100.0
    duration: float | None = None
    workers: int = 1
    min_suppression_db: float = 30.0

    def grid(self) -> tuple[float, ...]:
        if self.frequencies is not None:
            return tuple(float(f) for f in self.frequencies)
        r = (self.stop / self.start) ** (1.0 / max(self.points - 1, 1))
        return tuple(float(self.start * r**k) for k in range(self.points))


@dataclass(frozen=True)
class CheckpointGrid:
    start: float = 0.0
    stop: float = 240.0
    count: int = 13

    def times(self) -> tuple[float, ...]:
        if self.count == 1:
            return (self.start,)
        step = (self.stop - self.start) / (self.count - 1)
        return tuple(self.start + k * step for k in range(self.count))


@dataclass(frozen=True)
class DriftSettings:
    profiles: tuple[DriftProfile, ...] = (
        DriftProfile("beat_power_db", (0.0, 60.0, 120.0, 180.0, 240.0), (0.0, 1.0, 0.0, -1.0, 0.0)),
        DriftProfile("lo2_phase", (0.0, 120.0, 240.0), (0.0, 0.2, 0.0)),
    )
    checkpoints: CheckpointGrid = field(default_factory=CheckpointGrid)
    tone_frequency: float = 1e6
    beta: float = 0.1
    window: float = 20e-3
    rbw: float = 500.0
    min_suppression_db: float = 39.0


@dataclass(frozen=True)
class CalibrationSettings:
    tone_frequency: float = 2e6
    beta: float = 0.1
    window: float = 10e-3
    fine_step: float = 0.3e-9
    fiber_lengths: tuple[int, ...] = tuple(range(1, 16))
    rounds: int = 3
    min_suppression_db: float = 50.0


@dataclass(frozen=True)
class OracleSettings:
    g_ff: float = 1.0
    delta_tau: float = 0.0
    theta_e: float = 0.0
    frequency: float = 2e6
    use_chain_response: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "results"
    chain: ChainConfig = field(default_factory=ChainConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    simulate: SimulateSettings = field(default_factory=SimulateSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    drift: DriftSettings = field(default_factory=DriftSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    oracle: OracleSettings = field(default_factory=OracleSettings)


# --- building dataclasses from plain data ----------------------------------

def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if is_dataclass(tp):
        return build(tp, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(path, f"expected {len(args)} items, got {len(value)}")
        return tuple(_convert(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is float:
        if not _is_number(value):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if not _is_number(value) or not float(value).is_integer():
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def build(cls, data, path: str = ""):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = [f.name for f in fields(cls) if f.init]
    for key in data:
        if key not in names:
            lower = {n.lower(): n for n in names}
            close = difflib.get_close_matches(str(key).lower(), list(lower), n=1, cutoff=0.4)
            hint = f"; did you mean {lower[close[0]]!r}?" if close else ""
            raise ConfigError(f"{path}.{key}" if path else str(key), f"unknown key{hint}")
    kwargs = {
        k: _convert(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()
    }
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(path or cls.__name__, str(err)) from None


def to_plain(obj):
    """Dataclass tree -> YAML-safe dicts, lists and scalars."""
    if is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in fields(obj) if f.init}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj


# --- files ----------------------------------------------------------------

def default_config_text() -> str:
    return resources.files("oplff").joinpath("data/defaults.yaml").read_text(encoding="utf-8")


def parse_text(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError("", f"{source}: not valid YAML ({err})") from None
    return build(ExperimentConfig, data)


def parse_config(path=None) -> ExperimentConfig:
    """Read and validate an experiment file (default: the shipped defaults)."""
    if path is None:
        return parse_text(default_config_text(), "defaults.yaml")
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError("", f"cannot read {p}: {err.strerror}") from None
    return parse_text(text, str(p))


def dump(cfg) -> str:
    """Effective-config echo: every field, defaults included."""
    return yaml.safe_dump(to_plain(cfg), sort_keys=False, default_flow_style=None, width=100)
