"""Declarative run configuration: INI sections mapped onto the stage settings."""
import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field
from typing import Optional

from .audiofeatures import FeatureConfig
from .errors import ConfigError
from .pipeline import CellConfig
from .separability import SearchConfig


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 960.0
    seed: int = 0
    pitches_hz: tuple = (100.0, 160.0)
    relative_gain_db: float = -2.4
    peak: float = 0.9


@dataclass(frozen=True)
class ReduceConfig:
    enabled: bool = True
    target_dim: int = 2
    neighborhoods: int = 40
    n_global: int = 6
    overlap: float = 3.0
    max_residual: float = 0.15
    seed: int = 0


@dataclass(frozen=True)
class LinearityConfig:
    enabled: bool = True
    threshold: float = 0.05
    factorization_threshold: float = 0.05
    gradient_smoothing: float = 30.0


@dataclass(frozen=True)
class RuntimeConfig:
    threads: int = 1


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run; each section is optional."""

    synth: SynthConfig = field(default_factory=SynthConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    reduce: ReduceConfig = field(default_factory=ReduceConfig)
    cells: CellConfig = field(default_factory=CellConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    linearity: LinearityConfig = field(default_factory=LinearityConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)


SECTIONS = tuple(f.name for f in dataclasses.fields(RunConfig))


def _parse_value(text, hint, where):
    text = text.strip()
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if text.lower() in ("none", ""):
            return None
        return _parse_value(text, args[0], where)
    try:
        if hint is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is tuple or origin is tuple:
            return tuple(float(p) for p in text.replace(" ", "").split(",") if p)
        return text
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _apply(cfg, section, key, text, where):
    if section not in SECTIONS:
        raise ConfigError(f"{where}: unknown section [{section}]")
    current = getattr(cfg, section)
    hints = typing.get_type_hints(type(current))
    if key not in hints:
        raise ConfigError(f"{where}: unknown key {section}.{key}")
    value = _parse_value(text, hints[key], where)
    try:
        updated = dataclasses.replace(current, **{key: value})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return dataclasses.replace(cfg, **{section: updated})


def parse_config(text="", overrides=(), source="<config>"):
    """Build a :class:`RunConfig` from INI ``text`` and ``section.key=value`` overrides.

    Raises
    ------
    ConfigError
        Unknown section or key, or a value of the wrong type.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig()
    for section in parser.sections():
        for key, value in parser.items(section):
            cfg = _apply(cfg, section, key, value, f"{source} [{section}]")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        cfg = _apply(cfg, section, key, value, f"--set {item}")
    return cfg


def load_config(path=None, overrides=()):
    text = ""
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_config(text, overrides, source=str(path) if path else "<defaults>")


def dump_config(cfg, runtime=True):
    """Full INI text of ``cfg``; parsing it back gives an equal config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section in SECTIONS:
        if section == "runtime" and not runtime:
            continue
        obj = getattr(cfg, section)
        parser[section] = {f.name: _format_value(getattr(obj, f.name))
                           for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def thread_count(cfg, cli_threads: Optional[int] = None):
    n = cli_threads if cli_threads is not None else cfg.runtime.threads
    return max(1, int(n))
