#!/usr/bin/env python3
"""
Experiment configuration for the IAB lab.

A YAML mapping whose sections mirror the parameter dataclasses. Omitted keys
take their defaults, unknown keys are rejected, and every diagnostic names the
dotted key it is about.
"""

import hashlib
import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Any, Dict, Mapping, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import yaml

from hric_iab_lab.agent.ddpg import AgentConfig, AgentError
from hric_iab_lab.channel.channel import ChannelError
from hric_iab_lab.guidance.client import GuidanceError
from hric_iab_lab.topology.topology import NetworkConfig, TopologyError
from hric_iab_lab.trainer.trainer import METHODS, GuidanceSettings, PhaseSchedule, TrainerContractError, TrainingConfig

logger = logging.getLogger(__name__)

DEFAULT_METHODS = ("hric", "dln", "dcn", "epa")
DEFAULT_ALPHA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

# values a profile contributes when the file does not set them
PROFILES: Dict[str, Dict[str, Any]] = {
    "desk": {"epochs": 200, "seeds": (1, 2, 3, 4, 5), "drops": 20, "hidden_width": 128, "batch_size": 64},
    "paper": {"epochs": 500, "seeds": (1, 2, 3, 4, 5), "drops": 50, "hidden_width": 256, "batch_size": 256},
}

_PHASE_KEYS = ("phase1_epochs", "phase2_epochs", "phase3_epochs")
_DOMAIN_ERRORS = (ChannelError, TopologyError, AgentError, GuidanceError, TrainerContractError)


class ConfigError(Exception):
    """Custom exception for configuration-related errors."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
        self.message = message


@dataclass(frozen=True)
class TrainingSettings:
    methods: Tuple[str, ...] = DEFAULT_METHODS
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5)
    epochs: int = 200
    redraw_topology: bool = True

    def __post_init__(self):
        if not self.methods:
            raise TrainerContractError("methods must name at least one method")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise TrainerContractError(f"methods has unknown entries {unknown}; expected a subset of {list(METHODS)}")
        if not self.seeds:
            raise TrainerContractError("seeds must list at least one seed")
        if self.epochs < 1:
            raise TrainerContractError(f"epochs must be >= 1, got {self.epochs}")


@dataclass(frozen=True)
class EvaluationSettings:
    """
    Test-drop evaluation and latency bench sizes.

    Attributes:
        drops: Independent topology drops per (alpha, method, seed) cell
        alphas: Backhaul fraction grid for the sweep, each inside (0, 1)
        bench_samples: Timed calls per latency bench
    """
    drops: int = 20
    alphas: Tuple[float, ...] = DEFAULT_ALPHA_GRID
    bench_samples: int = 500

    def __post_init__(self):
        if self.drops < 1:
            raise TrainerContractError(f"drops must be >= 1, got {self.drops}")
        if not self.alphas:
            raise TrainerContractError("alphas must list at least one value")
        for alpha in self.alphas:
            if not 0.0 < alpha < 1.0:
                raise TrainerContractError(f"alphas entries must be within (0, 1), got {alpha}")
        if self.bench_samples < 1:
            raise TrainerContractError(f"bench_samples must be >= 1, got {self.bench_samples}")


@dataclass(frozen=True)
class ExperimentConfig:
    profile: str = "desk"
    scenario: NetworkConfig = field(default_factory=NetworkConfig)
    agent: AgentConfig = field(default_factory=lambda: AgentConfig(hidden_width=128, batch_size=64))
    schedule: PhaseSchedule = field(default_factory=lambda: PhaseSchedule.from_total(200))
    training: TrainingSettings = field(default_factory=TrainingSettings)
    guidance: GuidanceSettings = field(default_factory=GuidanceSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    output_dir: str = "results"

    @property
    def methods(self) -> Tuple[str, ...]:
        return self.training.methods

    @property
    def seeds(self) -> Tuple[int, ...]:
        return self.training.seeds

    @property
    def epochs(self) -> int:
        return self.training.epochs

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(network=self.scenario, agent=self.agent, schedule=self.schedule,
                              guidance=self.guidance, redraw_topology=self.training.redraw_topology)

    def with_overrides(self, epochs: Optional[int] = None, **training) -> "ExperimentConfig":
        """Replace training keys, rescaling the phase schedule when the epoch count changes."""
        try:
            config = self
            if training:
                config = replace(config, training=replace(config.training, **training))
            if epochs is not None and epochs != config.epochs:
                schedule = _scaled_schedule(config.schedule, epochs)
                config = replace(config, schedule=schedule, training=replace(config.training, epochs=epochs))
            return config
        except _DOMAIN_ERRORS as e:
            raise ConfigError("training", str(e)) from e


def _scaled_schedule(schedule: PhaseSchedule, epochs: int) -> PhaseSchedule:
    endpoints = {f.name: getattr(schedule, f.name) for f in fields(PhaseSchedule) if f.name not in _PHASE_KEYS}
    return PhaseSchedule.from_total(epochs, **endpoints)


def _join(path: str, name: str) -> str:
    return f"{path}.{name}" if path else name


def _blame(path: str, names, message: str) -> str:
    # the dataclass validators lead their messages with the offending field name
    for name in sorted(names, key=len, reverse=True):
        if message.startswith(name) or f" {name} " in f" {message} ":
            return _join(path, name)
    return path


def _coerce(tp, value, key: str):
    if is_dataclass(tp):
        return _build(tp, value, key)
    origin = get_origin(tp)
    if origin is Union:
        inner = [a for a in get_args(tp) if a is not type(None)]
        return None if value is None else _coerce(inner[0], value, key)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {type(value).__name__}")
        item_type = get_args(tp)[0]
        return tuple(_coerce(item_type, v, f"{key}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot ("1e-4") as strings
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(key, f"expected a number, got {value!r}")
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    return value


def _section(data: Optional[Mapping], key: str) -> Dict[str, Any]:
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(key, f"expected a mapping, got {type(data).__name__}")
    return dict(data)


def _build(cls, data, path: str, defaults: Optional[Mapping[str, Any]] = None):
    data = _section(data, path)
    hints = get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(_join(path, unknown[0]), f"unknown key; expected one of {sorted(names)}")
    kwargs = dict(defaults or {})
    for name, value in data.items():
        kwargs[name] = _coerce(hints[name], value, _join(path, name))
    try:
        return cls(**kwargs)
    except _DOMAIN_ERRORS as e:
        raise ConfigError(_blame(path, names, str(e)), str(e)) from e


def config_from_mapping(data: Optional[Mapping]) -> ExperimentConfig:
    """
    Build an ExperimentConfig from a parsed YAML document.

    Args:
        data: Top-level mapping, or None for an empty document

    Returns:
        ExperimentConfig with the profile's values under every omitted key

    Raises:
        ConfigError: On unknown keys, wrong types or values outside their bounds
    """
    data = _section(data, "")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(unknown[0], f"unknown key; expected one of {sorted(known)}")

    profile_name = data.get("profile", "desk")
    if profile_name not in PROFILES:
        raise ConfigError("profile", f"unknown profile {profile_name!r}; expected one of {sorted(PROFILES)}")
    profile = PROFILES[profile_name]

    output_dir = _coerce(str, data.get("output_dir", "results"), "output_dir")
    scenario = _build(NetworkConfig, data.get("scenario"), "scenario")
    agent = _build(AgentConfig, data.get("agent"), "agent",
                   defaults={"hidden_width": profile["hidden_width"], "batch_size": profile["batch_size"]})
    training_data = _section(data.get("training"), "training")
    training = _build(TrainingSettings, training_data, "training",
                      defaults={"epochs": profile["epochs"], "seeds": profile["seeds"]})
    guidance = _build(GuidanceSettings, data.get("guidance"), "guidance")
    evaluation = _build(EvaluationSettings, data.get("evaluation"), "evaluation",
                        defaults={"drops": profile["drops"]})

    schedule_data = _section(data.get("schedule"), "schedule")
    if any(k in schedule_data for k in _PHASE_KEYS):
        schedule = _build(PhaseSchedule, schedule_data, "schedule")
        if "epochs" in training_data and training.epochs != schedule.total_epochs:
            raise ConfigError("training.epochs", f"{training.epochs} disagrees with the schedule's "
                                                 f"{schedule.total_epochs} phase epochs")
        training = replace(training, epochs=schedule.total_epochs)
    else:
        phases = PhaseSchedule.from_total(training.epochs)
        schedule = _build(PhaseSchedule, schedule_data, "schedule",
                          defaults={k: getattr(phases, k) for k in _PHASE_KEYS})

    return ExperimentConfig(profile=profile_name, scenario=scenario, agent=agent, schedule=schedule,
                            training=training, guidance=guidance, evaluation=evaluation, output_dir=output_dir)


def parse_config(text: str, profile: Optional[str] = None) -> ExperimentConfig:
    """Parse YAML text; `profile` replaces the file's profile before defaults are applied."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError("", f"invalid YAML: {e}") from e
    if profile is not None:
        data = dict(_section(data, ""), profile=profile)
    return config_from_mapping(data)


def load_config(path: Optional[str], profile: Optional[str] = None) -> ExperimentConfig:
    """
    Load an experiment file; None yields the default config of the profile.

    Raises:
        ConfigError: If the file is missing, unreadable or invalid
    """
    if path is None:
        return parse_config("", profile)
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError("", f"cannot read config file {path}: {e}") from e
    config = parse_config(text, profile)
    logger.info(f"Loaded config {path} (profile={config.profile}, epochs={config.epochs}, "
                f"methods={','.join(config.methods)})")
    return config


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_mapping(config: ExperimentConfig) -> Dict[str, Any]:
    return {
        "profile": config.profile,
        "output_dir": config.output_dir,
        "scenario": _plain(asdict(config.scenario)),
        "agent": _plain(asdict(config.agent)),
        "schedule": _plain(asdict(config.schedule)),
        "training": _plain(asdict(config.training)),
        "guidance": _plain(asdict(config.guidance)),
        "evaluation": _plain(asdict(config.evaluation)),
    }


def dump_config(config: ExperimentConfig) -> str:
    """Render every key explicitly, so parse_config(dump_config(c)) == c."""
    return yaml.safe_dump(config_to_mapping(config), sort_keys=False, default_flow_style=False)


def config_sha256(config: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()
