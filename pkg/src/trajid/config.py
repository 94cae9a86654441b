"""Experiment configuration: strict INI files over dataclass defaults.

Every section maps onto a dataclass whose field defaults are the documented
defaults. Unknown sections or keys are errors, so a typo never silently falls
back to a default. ``to_ini`` writes the fully resolved configuration, which
``load_config`` reads back to the same object.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .dynamics import PlantParams
from .evaluation import EvalConfig
from .estimators import ESTIMATORS
from .excitation import ExcitationSpec, HiddenModelSpec
from .identification import EsConfig, OptimizerConfig, SegmentationConfig


MODEL_CHOICES = tuple(ESTIMATORS)


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to the usage exit code."""


@dataclass(frozen=True)
class DataSection:
    train_duration: float = 40.0
    test_duration: float = 10.0
    dt: float = 0.002


@dataclass(frozen=True)
class ExcitationSection:
    num_modes_range: tuple = (3, 8)
    amplitude_range: tuple = (0.2, 2.0)
    frequency_range: tuple = (0.5, 15.0)
    phase_range: tuple = (0.0, 6.283185307179586)
    qdot_max: float = 6.0


@dataclass(frozen=True)
class ModelSection:
    kind: str = "trajid-param"
    init: str = "random"          # "random" (seeded) or "default"
    hidden_sizes: tuple = (32, 32)
    bench_hidden_sizes: tuple = (128, 64)


@dataclass(frozen=True)
class WeightsSection:
    alpha: float = 1.0            # W = diag(alpha, 1 - alpha)


@dataclass(frozen=True)
class StandSection:
    n_duties: int = 21
    n_speeds: int = 60
    load_fraction: float = 0.75
    torque_noise: float = 0.01
    epochs: int = 2000
    batch_size: int = 256
    pwm_kp: float = 1.228         # firmware PWM gains used by Bench-Sup; the defaults
    pwm_kd: float = 0.092         # are the hidden servo's own


@dataclass(frozen=True)
class AblationSection:
    alphas: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    horizons: tuple = (1, 2, 3, 4)
    runs: int = 25
    epochs: int = 3000


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    plant: PlantParams = field(default_factory=PlantParams)
    excitation: ExcitationSection = field(default_factory=ExcitationSection)
    hidden: HiddenModelSpec = field(default_factory=HiddenModelSpec)
    model: ModelSection = field(default_factory=ModelSection)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    weights: WeightsSection = field(default_factory=WeightsSection)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    es: EsConfig = field(default_factory=EsConfig)
    stand: StandSection = field(default_factory=StandSection)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationSection = field(default_factory=AblationSection)

    def excitation_spec(self, duration: float, seed: int) -> ExcitationSpec:
        return ExcitationSpec(duration=duration, dt=self.data.dt, seed=seed,
                              **dataclasses.asdict(self.excitation))

    def replace(self, **changes) -> "ExperimentConfig":
        """Section-level update, e.g. ``replace(optimizer={"max_epochs": 10})``."""
        updated = {}
        for name, value in changes.items():
            if name == "seed":
                updated[name] = int(value)
            elif isinstance(value, dict):
                updated[name] = _build(name, getattr(self, name), value)
            else:
                updated[name] = value
        return dataclasses.replace(self, **updated)


# Sections whose seed is owned by the global seed rather than set per section.
_SEED_OWNED = {"optimizer", "es"}
_SECTIONS = [f.name for f in fields(ExperimentConfig) if f.name != "seed"]


def _section_keys(name, obj):
    return [f.name for f in fields(obj) if not (name in _SEED_OWNED and f.name == "seed")]


def _parse_value(raw: str, default, section: str, key: str):
    where = f"[{section}] {key}"
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError
            return low in ("true", "yes", "1")
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = int if default and all(isinstance(d, int) for d in default) else float
            return tuple(kind(s) for s in items)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, str):
            return raw
        if default is None:
            if raw.lower() == "none":
                return None
            return int(raw) if raw.lstrip("-").isdigit() else float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None
    raise ConfigError(f"{where}: unsupported value type")


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


def _build(name, default_obj, values: dict):
    allowed = _section_keys(name, default_obj)
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in section [{name}]; "
                          f"allowed: {', '.join(allowed)}")
    parsed = {}
    for key, raw in values.items():
        default = getattr(default_obj, key)
        parsed[key] = _parse_value(raw, default, name, key) if isinstance(raw, str) else raw
    try:
        return dataclasses.replace(default_obj, **parsed)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = base or ExperimentConfig()
    changes = {}
    for section in parser.sections():
        values = dict(parser.items(section))
        if section == "run":
            unknown = sorted(set(values) - {"seed"})
            if unknown:
                raise ConfigError(f"unknown key {unknown[0]!r} in section [run]; allowed: seed")
            if "seed" in values:
                changes["seed"] = _parse_value(values["seed"], 0, "run", "seed")
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]; allowed: run, {', '.join(_SECTIONS)}")
        changes[section] = _build(section, getattr(cfg, section), values)
    cfg = dataclasses.replace(cfg, **changes)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def validate(cfg: ExperimentConfig):
    try:
        cfg.plant.validate()
        cfg.excitation_spec(cfg.data.train_duration, cfg.seed)
        cfg.excitation_spec(cfg.data.test_duration, cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0.0 <= cfg.weights.alpha <= 1.0:
        raise ConfigError("[weights] alpha must lie in [0, 1]")
    if any(not 0.0 <= a <= 1.0 for a in cfg.ablation.alphas):
        raise ConfigError("[ablation] alphas must lie in [0, 1]")
    if any(h < 1 for h in cfg.ablation.horizons):
        raise ConfigError("[ablation] horizons must be >= 1")
    if cfg.ablation.runs < 2:
        raise ConfigError("[ablation] runs must be >= 2")
    if cfg.model.init not in ("random", "default"):
        raise ConfigError("[model] init must be 'random' or 'default'")
    if cfg.model.kind not in MODEL_CHOICES:
        raise ConfigError(f"[model] kind must be one of {', '.join(MODEL_CHOICES)}")
    if cfg.stand.n_duties < 2 or cfg.stand.n_speeds < 2:
        raise ConfigError("[stand] n_duties and n_speeds must be >= 2")


def to_ini(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    parser["run"] = {"seed": str(cfg.seed)}
    for name in _SECTIONS:
        obj = getattr(cfg, name)
        parser[name] = {k: _format_value(getattr(obj, k)) for k in _section_keys(name, obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "to_ini",
           "validate"]
