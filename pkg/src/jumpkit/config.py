"""Run configuration: a nested YAML file mapped onto the dataclasses.

Angles are written in degrees in the file and held in radians in memory.
Every section is optional; missing keys take the dataclass defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace, is_dataclass
import math

import numpy as np
import yaml

from .actuation import ActuatorParams, FilterParams
from .batchsim import Rates
from .curriculum import CurriculumConfig
from .env import EnvConfig
from .geometry import LegGeometry
from .io import atomic_write_text
from .observations import NoiseConfig
from .ppo import JUMPING_WIDTHS, PPOConfig
from .rewards import DEFAULT_SIGMA, DEFAULT_WEIGHTS, HORIZONTAL, VERTICAL, RewardConfig, TerminationLimits
from .sim import BodyParams, ContactParams, SimParams

DEG = math.pi / 180.0


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` holds one "section.field: message" string per problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class TrainingOptions:
    eval_every: int = 50
    eval_episodes: int = 4
    eval_points: int = 9
    stop_success: float | None = None
    stop_mae: float | None = None
    time_budget: float | None = None
    widths: tuple = JUMPING_WIDTHS

    def validation_errors(self) -> list[str]:
        errors = []
        if self.eval_every < 0:
            errors.append("training.eval_every: must be >= 0")
        if self.eval_episodes < 1 or self.eval_points < 1:
            errors.append("training.eval_episodes/eval_points: must be >= 1")
        if len(self.widths) < 1 or any(int(w) < 1 for w in self.widths):
            errors.append("training.widths: need positive layer widths")
        return errors


@dataclass
class RunConfig:
    task: str = VERTICAL
    seed: int = 0
    out: str = "runs/default"
    deterministic: bool = False
    geometry: LegGeometry = field(default_factory=LegGeometry)
    body: BodyParams = field(default_factory=BodyParams)
    contact: ContactParams = field(default_factory=ContactParams)
    actuator: ActuatorParams = field(default_factory=ActuatorParams)
    filter: FilterParams = field(default_factory=FilterParams)
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    training: TrainingOptions = field(default_factory=TrainingOptions)

    def sim_params(self) -> SimParams:
        return SimParams.from_parts(self.geometry, self.body, self.contact, self.actuator)

    def env_kwargs(self) -> dict:
        return {"geometry": self.geometry, "sim": self.sim_params(), "actuator": self.actuator, "filt": self.filter}

    def validation_errors(self) -> list[str]:
        errors = []
        if self.task not in (VERTICAL, HORIZONTAL):
            errors.append(f"task: must be '{VERTICAL}' or '{HORIZONTAL}'")
        errors += [f"geometry.{e}" for e in self.geometry.validation_errors()]
        errors += [f"actuator.{e}" for e in self.actuator.validation_errors()]
        errors += [f"filter.{e}" for e in self.filter.validation_errors()]
        if not self.body.mass > 0 or not self.body.pitch_inertia > 0:
            errors.append("body.mass/pitch_inertia: must be > 0")
        if not self.contact.stiffness > 0 or self.contact.damping < 0:
            errors.append("contact.stiffness: must be > 0, damping >= 0")
        if not 0 < self.contact.mu_dynamic <= self.contact.mu_static:
            errors.append("contact.mu_dynamic: need 0 < mu_dynamic <= mu_static")
        errors += self.env.validation_errors()
        errors += self.ppo.validation_errors()
        errors += self.training.validation_errors()
        return errors

    def validate(self) -> "RunConfig":
        errors = self.validation_errors()
        if errors:
            raise ConfigError(errors)
        return self


# fields stored in degrees on disk, per section
ANGLE_FIELDS = {
    "geometry": {"joint_limits_min", "joint_limits_max", "transversal_sum_bounds", "lateral_default"},
    "filter": {"max_overshoot", "sum_bounds"},
    "rewards": {"flight_joint_target", "landed_joint_target", "stand_joint_target", "moving_joint_target",
                "lateral_target"},
    "termination": {"max_pitch", "joint_crash_margin"},
    "curriculum": {"pitch_spread", "forward_pitch"},
}

# flat sections: name -> (owner attribute path, class)
_SECTIONS = {
    "geometry": (("geometry",), LegGeometry),
    "body": (("body",), BodyParams),
    "contact": (("contact",), ContactParams),
    "actuator": (("actuator",), ActuatorParams),
    "filter": (("filter",), FilterParams),
    "env": (("env",), EnvConfig),
    "rates": (("env", "rates"), Rates),
    "noise": (("env", "noise"), NoiseConfig),
    "rewards": (("env", "rewards"), RewardConfig),
    "termination": (("env", "termination"), TerminationLimits),
    "curriculum": (("env", "curriculum"), CurriculumConfig),
    "ppo": (("ppo",), PPOConfig),
    "training": (("training",), TrainingOptions),
}
_TOP = ("task", "seed", "out", "deterministic")
_NESTED_ENV = {"rates", "noise", "rewards", "termination", "curriculum"}


def _to_file(value, angle: bool):
    if isinstance(value, (tuple, list, np.ndarray)):
        return [_to_file(v, angle) for v in value]
    if isinstance(value, (bool, str)) or value is None:
        return value
    if isinstance(value, dict):
        return {k: _to_file(v, False) for k, v in value.items()}
    if isinstance(value, (int, np.integer)) and not angle:
        return int(value)
    v = float(value)
    return v / DEG if angle else v


def _from_file(value, default, angle: bool, where: str, errors: list):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            errors.append(f"{where}: expected true/false")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            errors.append(f"{where}: expected a string")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            errors.append(f"{where}: expected a mapping")
            return default
        return dict(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            errors.append(f"{where}: expected a list")
            return default
        out = []
        for i, v in enumerate(value):
            d = default[i] if i < len(default) else (default[0] if default else 0.0)
            out.append(_from_file(v, d, angle, f"{where}[{i}]", errors))
        return tuple(out)
    if default is None or isinstance(default, (int, float)):
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{where}: expected a number")
            return default
        if isinstance(default, int) and not isinstance(default, bool) and not angle:
            if float(value) != int(value):
                errors.append(f"{where}: expected an integer")
            return int(value)
        return float(value) * DEG if angle else float(value)
    return value


def _section_dict(name: str, obj) -> dict:
    angles = ANGLE_FIELDS.get(name, set())
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if is_dataclass(v):
            continue
        out[f.name] = _to_file(v, f.name in angles)
    return out


def to_dict(cfg: RunConfig) -> dict:
    d = {k: getattr(cfg, k) for k in _TOP}
    for name, (path, _) in _SECTIONS.items():
        obj = cfg
        for p in path:
            obj = getattr(obj, p)
        d[name] = _section_dict(name, obj)
    d["env"].pop("num_envs", None)   # ppo.num_envs is authoritative
    return d


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def save_config(path: str, cfg: RunConfig) -> None:
    atomic_write_text(path, dump_config(cfg))


def _build_section(name: str, cls, raw, errors: list, nested: dict | None = None):
    default = cls()
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append(f"{name}: expected a mapping")
        raw = {}
    angles = ANGLE_FIELDS.get(name, set())
    known = {f.name: f for f in fields(cls)}
    kw = {}
    for key, value in raw.items():
        if key not in known or is_dataclass(getattr(default, key)):
            errors.append(f"{name}.{key}: unknown field")
            continue
        kw[key] = _from_file(value, getattr(default, key), key in angles, f"{name}.{key}", errors)
    if name == "rewards":
        if "sigma" in kw:
            for k in kw["sigma"]:
                if k not in DEFAULT_SIGMA:
                    errors.append(f"rewards.sigma.{k}: unknown kernel width")
        if "weights" in kw:
            kw["weights"] = {**DEFAULT_WEIGHTS, **kw["weights"]}
    kw.update(nested or {})
    if cls is LegGeometry:
        return default if _geometry_bad(kw, errors) else LegGeometry(**kw)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        errors.append(f"{name}: {e}")
        return default


def _geometry_bad(kw, errors) -> bool:
    probe = object.__new__(LegGeometry)
    for f in fields(LegGeometry):
        object.__setattr__(probe, f.name, kw.get(f.name, getattr(LegGeometry(), f.name)))
    bad = probe.validation_errors()
    errors += [f"geometry.{e}" for e in bad]
    return bool(bad)


def from_dict(data: dict | None) -> RunConfig:
    """Build and validate a RunConfig; raises ConfigError listing every bad field."""
    data = {} if data is None else data
    errors = []
    if not isinstance(data, dict):
        raise ConfigError(["<root>: expected a mapping"])
    for key in data:
        if key not in _TOP and key not in _SECTIONS:
            errors.append(f"{key}: unknown section")
    top = {}
    defaults = RunConfig()
    for key in _TOP:
        if key in data:
            top[key] = _from_file(data[key], getattr(defaults, key), False, key, errors)
    built = {name: _build_section(name, cls, data.get(name), errors)
             for name, (path, cls) in _SECTIONS.items() if len(path) == 1 or name not in _NESTED_ENV}
    env_nested = {name: _build_section(name, _SECTIONS[name][1], data.get(name), errors) for name in _NESTED_ENV}
    env_raw = dict(data.get("env") or {}) if isinstance(data.get("env"), dict) else data.get("env")
    built["env"] = _build_section("env", EnvConfig, env_raw, errors, nested=env_nested)
    if errors:
        raise ConfigError(errors)
    cfg = RunConfig(**top, **built)
    cfg.env.task = cfg.task
    cfg.env.num_envs = cfg.ppo.num_envs
    cfg.ppo.seed = cfg.seed
    return cfg.validate()


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError([f"<yaml>: {e}"]) from None
    return from_dict(data)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return from_dict({})
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError([f"<file>: cannot read {path}: {e.strerror}"]) from None
    return parse_config(text)


def apply_overrides(cfg: RunConfig, *, seed=None, out=None, envs=None, task=None, deterministic=None) -> RunConfig:
    """Command-line flags supersede file values."""
    cfg = replace(cfg, env=replace(cfg.env), ppo=replace(cfg.ppo))
    if seed is not None:
        cfg.seed = int(seed)
    if out is not None:
        cfg.out = out
    if envs is not None:
        cfg.ppo.num_envs = int(envs)
    if task is not None:
        cfg.task = task
    if deterministic is not None:
        cfg.deterministic = bool(deterministic)
    cfg.ppo.seed = cfg.seed
    cfg.env.task = cfg.task
    cfg.env.num_envs = cfg.ppo.num_envs
    return cfg.validate()
