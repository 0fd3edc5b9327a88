"""Experiment configuration: dataclasses, YAML round trip and named presets."""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from platoon_frl.ddpg import AgentConfig
from platoon_frl.dynamics import (
    EpisodeSpec,
    LeaderInputModel,
    RewardCoeffs,
    VehicleParams,
)
from platoon_frl.fedserver import FRLSchedule, Topology


class ConfigError(ValueError):
    """Invalid experiment configuration. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class ScheduleConfig:
    update_delay: float = 0.1
    cutoff_ratio: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "nofrl-2veh"
    topology: str = "none"
    intra_mode: str = "directional"
    aggregation: str = "none"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    platoons: int = 1
    followers: int = 2
    episodes: int = 2000
    train_seed: int = 1
    eval_seed: int = 6
    divergence_limit: float = 50.0
    episode: EpisodeSpec = field(default_factory=EpisodeSpec)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    vehicle_overrides: dict = field(default_factory=dict)
    leader_input: LeaderInputModel = field(default_factory=LeaderInputModel)
    reward: RewardCoeffs = field(default_factory=RewardCoeffs)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.topology == "none":
            if self.aggregation != "none":
                raise ConfigError("aggregation must be 'none' when topology is 'none'")
        elif self.aggregation not in ("weights", "gradients"):
            raise ConfigError("aggregation must be 'weights' or 'gradients' for FRL topologies")
        if self.topology == "intra" and self.platoons != 1:
            raise ConfigError("intra topology runs on a single platoon")
        self.topology_obj()
        self.frl_schedule()
        for idx in self.vehicle_overrides:
            if not 0 <= int(idx) <= self.followers:
                raise ConfigError(f"vehicle override index {idx} outside 0..{self.followers}")
        if abs(self.agent.u_max - self.vehicle.u_max) > 0:
            raise ConfigError("agent.u_max must equal vehicle.u_max")

    def topology_obj(self) -> Topology:
        try:
            return Topology(self.topology, self.platoons, self.followers, self.intra_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def frl_schedule(self) -> FRLSchedule:
        try:
            return FRLSchedule(self.schedule.update_delay, self.schedule.cutoff_ratio,
                               self.episode.step_time, self.episodes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def vehicle_params(self) -> list[VehicleParams]:
        """Leader first, then followers 1..n, overrides applied."""
        out = []
        for i in range(self.followers + 1):
            over = self.vehicle_overrides.get(i, {})
            out.append(dataclasses.replace(self.vehicle, **over))
        return out

    @property
    def federated(self) -> bool:
        return self.topology != "none"

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_NESTED = {
    "schedule": ScheduleConfig,
    "episode": EpisodeSpec,
    "vehicle": VehicleParams,
    "leader_input": LeaderInputModel,
    "reward": RewardCoeffs,
    "agent": AgentConfig,
}


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _NESTED:
            out[f.name] = {g.name: _plain(getattr(value, g.name)) for g in dataclasses.fields(value)}
        elif f.name == "vehicle_overrides":
            out[f.name] = {int(k): dict(v) for k, v in sorted(value.items())}
        else:
            out[f.name] = value
    return out


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def _coerce(cls, fname: str, value, line: int | None):
    ftype = {f.name: f for f in dataclasses.fields(cls)}[fname]
    default = ftype.default if ftype.default is not dataclasses.MISSING else ftype.default_factory()
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, tuple):
            return tuple(int(v) for v in value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{fname}: cannot use {value!r} here", line) from None
    return value


def _with_lines(node, path=(), lines=None):
    """Plain Python value of a YAML node plus a ``key path -> line`` map."""
    if lines is None:
        lines = {}
    if isinstance(node, yaml.MappingNode):
        out = {}
        for knode, vnode in node.value:
            key = knode.value
            lines[path + (key,)] = knode.start_mark.line + 1
            out[key] = _with_lines(vnode, path + (key,), lines)[0]
        return out, lines
    return yaml.safe_load(yaml.serialize(node)), lines


def _build(cls, data: dict, where: str, lines: dict, fallback_line: int | None):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping", fallback_line)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        line = lines.get((where, key), fallback_line)
        if key not in known:
            raise ConfigError(f"unknown key {where}.{key}", line)
        kwargs[key] = _coerce(cls, key, value, line)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}", lines.get((where,), fallback_line)) from None


def from_dict(data: dict, lines: dict | None = None) -> ExperimentConfig:
    """Resolve a config mapping (optionally naming a ``preset`` to start from)."""
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping", 1)
    data = dict(data)
    base: dict[str, Any] = to_dict(ExperimentConfig())
    if "preset" in data:
        name = data.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}", lines.get(("preset",)))
        base = to_dict(PRESETS[name])
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key {key}", lines.get((key,)))
    merged = dict(base)
    for key, value in data.items():
        if key in _NESTED and isinstance(value, dict):
            merged[key] = {**base[key], **value}
        else:
            merged[key] = value

    kwargs: dict[str, Any] = {}
    for key, value in merged.items():
        line = lines.get((key,))
        if key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value, key, lines, line)
        elif key == "vehicle_overrides":
            value = value or {}
            if not isinstance(value, dict):
                raise ConfigError("vehicle_overrides must be a mapping", line)
            vfields = {f.name for f in dataclasses.fields(VehicleParams)}
            overrides = {}
            for idx, over in value.items():
                if not isinstance(over, dict) or set(over) - vfields:
                    raise ConfigError(f"bad override for vehicle {idx}", line)
                overrides[int(idx)] = {k: float(v) for k, v in over.items()}
            kwargs[key] = overrides
        else:
            kwargs[key] = _coerce(ExperimentConfig, key, value, line)
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc.args[0]) if exc.line is None else str(exc), exc.line or 1) from None
    except ValueError as exc:
        raise ConfigError(str(exc), 1) from None


def loads(text: str) -> ExperimentConfig:
    try:
        node = yaml.compose(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", line) from None
    if node is None:
        return ExperimentConfig()
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("config must be a mapping", node.start_mark.line + 1)
    data, lines = _with_lines(node)
    return from_dict(data, lines)


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


def save(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")


def _frl(name, topology, aggregation, delay, cutoff, platoons, followers):
    return ExperimentConfig(
        name=name,
        topology=topology,
        aggregation=aggregation,
        schedule=ScheduleConfig(delay, cutoff),
        platoons=platoons,
        followers=followers,
    )


def _baseline(name, platoons, followers):
    return ExperimentConfig(name=name, schedule=ScheduleConfig(0.1, 0.0), platoons=platoons,
                            followers=followers)


PRESETS: dict[str, ExperimentConfig] = {
    "nofrl-2veh": _baseline("nofrl-2veh", 1, 2),
    "nofrl-inter": _baseline("nofrl-inter", 2, 2),
    "inter-gradients": _frl("inter-gradients", "inter", "gradients", 0.1, 0.8, 2, 2),
    "inter-weights": _frl("inter-weights", "inter", "weights", 30.0, 1.0, 2, 2),
    "intra-gradients": _frl("intra-gradients", "intra", "gradients", 0.4, 0.5, 1, 2),
    "intra-weights": _frl("intra-weights", "intra", "weights", 0.1, 1.0, 1, 2),
}
for _n in (3, 4, 5):
    PRESETS[f"nofrl-{_n}veh"] = _baseline(f"nofrl-{_n}veh", 1, _n)
    PRESETS[f"intra-weights-{_n}veh"] = _frl(f"intra-weights-{_n}veh", "intra", "weights", 0.1, 1.0, 1, _n)

FRL_PRESETS = ("inter-gradients", "inter-weights", "intra-gradients", "intra-weights")


def preset(name: str) -> ExperimentConfig:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
