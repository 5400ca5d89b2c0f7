"""
config.py - Experiment configuration

Experiment documents are YAML. Every block maps to a dataclass that fills defaults and
rejects unknown keys with the dotted path of the offending field.
"""

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from subnet_bne.compression import B_ORIENTATIONS
from subnet_bne.engine import STEPSIZE_KINDS, SURPLUS_INIT_ALIASES, SURPLUS_INITS, EngineConfig, StepSizePolicy
from subnet_bne.errors import ConfigError, SubnetBNEError
from subnet_bne.game import BUILTIN_GAMES, NAMED_COST_FAMILIES, GameSpec, named_game
from subnet_bne.network import NetworkSchedule, paper_style_schedule

SCHEDULE_KINDS = ("generated", "frames")
LOG_LEVELS = ("debug", "info", "warning", "error")


class UniqueKeyLoader(yaml.SafeLoader):
    """SafeLoader that refuses duplicate mapping keys"""

    def construct_mapping(self, node, deep=False):
        seen = set()
        for key_node, _ in node.value:
            key = self.construct_object(key_node, deep=deep)
            if key in seen:
                raise ConfigError("", f"duplicate key {key!r} at line {key_node.start_mark.line + 1}")
            seen.add(key)
        return super().construct_mapping(node, deep=deep)


def _join(path: str, key: Any) -> str:
    return f"{path}.{key}" if path else str(key)


def _mapping(data: Any, path: str, allowed) -> Dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    unknown = sorted(set(data) - set(allowed), key=str)
    if unknown:
        raise ConfigError(_join(path, unknown[0]), "unknown key")
    return data


def _number(value: Any, path: str, kind=float, low=None, high=None, low_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if kind is int and (not float(value).is_integer()):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    value = kind(value)
    if low is not None and (value <= low if low_open else value < low):
        raise ConfigError(path, f"must be {'>' if low_open else '>='} {low}")
    if high is not None and value > high:
        raise ConfigError(path, f"must be <= {high}")
    return value


def _pair(value: Any, path: str, kind=float, **bounds) -> Tuple:
    items = value if isinstance(value, (list, tuple)) else [value, value]
    if len(items) != 2:
        raise ConfigError(path, "expected a scalar or a pair")
    return tuple(_number(v, f"{path}[{i}]", kind, **bounds) for i, v in enumerate(items))


def _choice(value: Any, path: str, options) -> str:
    if value not in options:
        raise ConfigError(path, f"{value!r} is not one of {', '.join(options)}")
    return value


def _surplus_init(value: Any, path: str) -> str:
    return SURPLUS_INIT_ALIASES.get(_choice(value, path, SURPLUS_INITS + tuple(SURPLUS_INIT_ALIASES)), value)


def _block_fields(cls):
    return [f.name for f in fields(cls)]


@dataclass
class GameConfig:
    name: Optional[str] = "rent_seeking"
    costs: Optional[str] = None
    action_box: Optional[List] = None
    type_interval: Optional[List] = None
    density: str = "independent_uniform"

    @classmethod
    def from_dict(cls, data: Any, path: str = "game") -> "GameConfig":
        if isinstance(data, str):
            data = {"name": data}
        data = _mapping(data, path, _block_fields(cls))
        if "costs" in data:
            if "name" in data:
                raise ConfigError(path, "give either name or costs, not both")
            for key in ("action_box", "type_interval"):
                if key not in data:
                    raise ConfigError(_join(path, key), "required by a declarative game block")
            return cls(
                name=None,
                costs=_choice(data["costs"], _join(path, "costs"), tuple(NAMED_COST_FAMILIES)),
                action_box=data["action_box"],
                type_interval=data["type_interval"],
                density=_choice(data.get("density", "independent_uniform"), _join(path, "density"), ("independent_uniform",)),
            )
        return cls(name=_choice(data.get("name", "rent_seeking"), _join(path, "name"), tuple(BUILTIN_GAMES)))

    def build(self) -> GameSpec:
        try:
            if self.name is not None:
                return BUILTIN_GAMES[self.name]()
            return named_game(self.costs, self.action_box, self.type_interval, self.density)
        except (SubnetBNEError, ValueError, TypeError, IndexError) as exc:
            raise ConfigError("game", str(exc)) from exc

    def to_dict(self) -> Dict:
        if self.name is not None:
            return {"name": self.name}
        return {
            "costs": self.costs,
            "action_box": copy.deepcopy(self.action_box),
            "type_interval": copy.deepcopy(self.type_interval),
            "density": self.density,
        }


@dataclass
class ScheduleConfig:
    kind: str = "generated"
    seed: int = 0
    R0: int = 2
    S0: int = 2
    frames: Optional[List] = None

    @classmethod
    def from_dict(cls, data: Any, path: str = "schedule") -> "ScheduleConfig":
        data = _mapping(data, path, _block_fields(cls))
        kind = _choice(data.get("kind", "generated"), _join(path, "kind"), SCHEDULE_KINDS)
        cfg = cls(
            kind=kind,
            seed=_number(data.get("seed", 0), _join(path, "seed"), int),
            R0=_number(data.get("R0", 2), _join(path, "R0"), int, low=2 if kind == "generated" else 1),
            S0=_number(data.get("S0", 2), _join(path, "S0"), int, low=1),
        )
        if kind == "frames":
            frames = data.get("frames")
            if not isinstance(frames, list) or not frames:
                raise ConfigError(_join(path, "frames"), "expected a non-empty list of frames")
            for f, frame in enumerate(frames):
                _mapping(frame, f"{path}.frames[{f}]", ("within_1", "within_2", "cross_12", "cross_21"))
            cfg.frames = frames
        elif "frames" in data:
            raise ConfigError(_join(path, "frames"), "only valid with kind: frames")
        return cfg

    def build(self, n: Tuple[int, int]) -> NetworkSchedule:
        if self.kind == "generated":
            return paper_style_schedule(n[0], n[1], self.seed, self.R0, self.S0)
        try:
            return NetworkSchedule.from_dict(n, {"R0": self.R0, "S0": self.S0, "frames": self.frames})
        except (SubnetBNEError, ValueError, TypeError) as exc:
            raise ConfigError("schedule.frames", str(exc)) from exc

    def to_dict(self) -> Dict:
        out = {"kind": self.kind, "seed": self.seed, "R0": self.R0, "S0": self.S0}
        if self.kind == "frames":
            out["frames"] = copy.deepcopy(self.frames)
        return out


@dataclass
class EngineSettings:
    T: int = 1000
    eta: float = 1e-2
    E: Tuple[float, float] = (2.0, 2.0)
    seed: int = 0
    surplus_init: str = "zero"
    stepsize: StepSizePolicy = field(default_factory=StepSizePolicy)
    init: Optional[Tuple[List[float], List[float]]] = None
    b_orientation: str = "column"
    validate_eta: bool = False
    wall_clock_budget: Optional[float] = None

    @classmethod
    def from_dict(cls, data: Any, path: str = "engine") -> "EngineSettings":
        data = _mapping(data, path, _block_fields(cls))
        step_path = _join(path, "stepsize")
        step = _mapping(data.get("stepsize"), step_path, ("kind", "a", "q0", "p"))
        kind = _choice(step.get("kind", "square_summable"), _join(step_path, "kind"), STEPSIZE_KINDS)
        p = _number(step.get("p", 0.75), _join(step_path, "p"), low=0.5, high=1.0, low_open=True)
        stepsize = StepSizePolicy(
            kind,
            _number(step.get("a", 1.0), _join(step_path, "a"), low=0.0, low_open=True),
            _number(step.get("q0", 1.0), _join(step_path, "q0"), low=0.0, low_open=True),
            p,
        )
        init = data.get("init")
        if init is not None:
            if not isinstance(init, list) or len(init) != 2:
                raise ConfigError(_join(path, "init"), "expected [x10, x20]")
            init = tuple(
                [_number(v, f"{path}.init[{s}][{k}]") for k, v in enumerate(side if isinstance(side, list) else [side])]
                for s, side in enumerate(init)
            )
        budget = data.get("wall_clock_budget")
        validate_eta = data.get("validate_eta", False)
        if not isinstance(validate_eta, bool):
            raise ConfigError(_join(path, "validate_eta"), "expected true or false")
        return cls(
            T=_number(data.get("T", 1000), _join(path, "T"), int, low=0),
            eta=_number(data.get("eta", 1e-2), _join(path, "eta"), low=0.0),
            E=_pair(data.get("E", 2.0), _join(path, "E"), low=0.0, low_open=True),
            seed=_number(data.get("seed", 0), _join(path, "seed"), int),
            surplus_init=_surplus_init(data.get("surplus_init", "zero"), _join(path, "surplus_init")),
            stepsize=stepsize,
            init=init,
            b_orientation=_choice(data.get("b_orientation", "column"), _join(path, "b_orientation"), B_ORIENTATIONS),
            validate_eta=validate_eta,
            wall_clock_budget=None if budget is None else _number(budget, _join(path, "wall_clock_budget"), low=0.0, low_open=True),
        )

    def to_dict(self) -> Dict:
        return {
            "T": self.T,
            "eta": self.eta,
            "E": list(self.E),
            "seed": self.seed,
            "surplus_init": self.surplus_init,
            "stepsize": {"kind": self.stepsize.kind, "a": self.stepsize.a, "q0": self.stepsize.q0, "p": self.stepsize.p},
            "init": None if self.init is None else [list(side) for side in self.init],
            "b_orientation": self.b_orientation,
            "validate_eta": self.validate_eta,
            "wall_clock_budget": self.wall_clock_budget,
        }


@dataclass
class OracleConfig:
    enabled: bool = True
    tol: float = 1e-6
    max_iters: int = 100_000
    grid_res: int = 101

    @classmethod
    def from_dict(cls, data: Any, path: str = "oracle") -> "OracleConfig":
        data = _mapping(data, path, _block_fields(cls))
        enabled = data.get("enabled", True)
        if not isinstance(enabled, bool):
            raise ConfigError(_join(path, "enabled"), "expected true or false")
        return cls(
            enabled=enabled,
            tol=_number(data.get("tol", 1e-6), _join(path, "tol"), low=0.0, low_open=True),
            max_iters=_number(data.get("max_iters", 100_000), _join(path, "max_iters"), int, low=1),
            grid_res=_number(data.get("grid_res", 101), _join(path, "grid_res"), int, low=2),
        )

    def to_dict(self) -> Dict:
        return {"enabled": self.enabled, "tol": self.tol, "max_iters": self.max_iters, "grid_res": self.grid_res}


@dataclass
class OutputsConfig:
    directory: str = "results"
    metrics: str = "metrics.csv"
    summary: str = "summary.yml"
    strategies: str = "strategies.csv"
    trace: str = "packets.log"
    packet_trace: bool = False
    sample_stride: int = 1
    trajectories: str = "trajectories.csv"
    trajectory_types: List[float] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: Any, path: str = "outputs") -> "OutputsConfig":
        data = _mapping(data, path, _block_fields(cls))
        values = {}
        for name in ("directory", "metrics", "summary", "strategies", "trace", "trajectories"):
            value = data.get(name, getattr(cls, name))
            if not isinstance(value, str) or not value:
                raise ConfigError(_join(path, name), "expected a non-empty path")
            values[name] = value
        trace = data.get("packet_trace", False)
        if not isinstance(trace, bool):
            raise ConfigError(_join(path, "packet_trace"), "expected true or false")
        types = data.get("trajectory_types", [])
        if not isinstance(types, list):
            raise ConfigError(_join(path, "trajectory_types"), "expected a list of type values")
        return cls(
            packet_trace=trace,
            trajectory_types=[_number(v, f"{path}.trajectory_types[{i}]") for i, v in enumerate(types)],
            sample_stride=_number(data.get("sample_stride", 1), _join(path, "sample_stride"), int, low=1),
            **values,
        )

    def to_dict(self) -> Dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def path(self, name: str) -> Path:
        return Path(self.directory) / getattr(self, name)


@dataclass
class LogConfig:
    level: str = "info"

    @classmethod
    def from_dict(cls, data: Any, path: str = "log") -> "LogConfig":
        data = _mapping(data, path, ("level",))
        return cls(_choice(str(data.get("level", "info")).lower(), _join(path, "level"), LOG_LEVELS))

    def to_dict(self) -> Dict:
        return {"level": self.level}


def derive_d(rho: Tuple[float, float], N: Tuple[int, int], m: Tuple[int, int]) -> Tuple[int, int]:
    """d_l = round(rho_l N_l m_l), clamped to [1, N_l m_l]"""
    return tuple(min(max(int(math.floor(rho[s] * N[s] * m[s] + 0.5)), 1), N[s] * m[s]) for s in range(2))


@dataclass
class ExperimentConfig:
    game: GameConfig = field(default_factory=GameConfig)
    N: Tuple[int, int] = (20, 20)
    rho: Tuple[float, float] = (1.0, 1.0)
    quad_res: int = 64
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    engine: EngineSettings = field(default_factory=EngineSettings)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    outputs: OutputsConfig = field(default_factory=OutputsConfig)
    log: LogConfig = field(default_factory=LogConfig)
    game_spec: Optional[GameSpec] = field(default=None, repr=False, compare=False)

    @property
    def spec(self) -> GameSpec:
        if self.game_spec is None:
            self.game_spec = self.game.build()
        return self.game_spec

    @property
    def d(self) -> Tuple[int, int]:
        return derive_d(self.rho, self.N, self.spec.m)

    def engine_config(self) -> EngineConfig:
        e = self.engine
        return EngineConfig(
            d=self.d,
            E=e.E,
            eta=e.eta,
            stepsize=e.stepsize,
            T=e.T,
            init=None if e.init is None else tuple(tuple(side) for side in e.init),
            surplus_init=e.surplus_init,
            b_orientation=e.b_orientation,
            validate_eta=e.validate_eta,
            wall_clock_budget=e.wall_clock_budget,
            sample_stride=self.outputs.sample_stride,
            packet_trace=self.outputs.packet_trace,
            trajectory_types=tuple(self.outputs.trajectory_types),
        )

    def to_dict(self) -> Dict:
        return {
            "game": self.game.to_dict(),
            "N": list(self.N),
            "rho": list(self.rho),
            "quad_res": self.quad_res,
            "schedule": self.schedule.to_dict(),
            "engine": self.engine.to_dict(),
            "oracle": self.oracle.to_dict(),
            "outputs": self.outputs.to_dict(),
            "log": self.log.to_dict(),
        }


TOP_LEVEL = ("game", "N", "rho", "quad_res", "schedule", "engine", "oracle", "outputs", "log")


def from_mapping(data: Any) -> ExperimentConfig:
    data = _mapping(data, "", TOP_LEVEL)
    cfg = ExperimentConfig(
        game=GameConfig.from_dict(data.get("game", {"name": "rent_seeking"})),
        N=_pair(data.get("N", 20), "N", int, low=1),
        rho=_pair(data.get("rho", 1.0), "rho", low=0.0, high=1.0, low_open=True),
        quad_res=_number(data.get("quad_res", 64), "quad_res", int, low=64),
        schedule=ScheduleConfig.from_dict(data.get("schedule")),
        engine=EngineSettings.from_dict(data.get("engine")),
        oracle=OracleConfig.from_dict(data.get("oracle")),
        outputs=OutputsConfig.from_dict(data.get("outputs")),
        log=LogConfig.from_dict(data.get("log")),
    )
    m = cfg.spec.m
    if cfg.engine.init is not None:
        for s, side in enumerate(cfg.engine.init):
            if len(side) != m[s]:
                raise ConfigError(f"engine.init[{s}]", f"expected {m[s]} values")
    for i, theta in enumerate(cfg.outputs.trajectory_types):
        for lo, hi in cfg.spec.type_interval:
            if not lo <= theta <= hi:
                raise ConfigError(f"outputs.trajectory_types[{i}]", f"{theta} is outside the type interval [{lo}, {hi}]")
    cfg.schedule.build(cfg.spec.n)
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    """Validated config from a YAML document"""
    try:
        data = yaml.load(text, Loader=UniqueKeyLoader)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"malformed document: {exc}") from exc
    return from_mapping(data)


def load_config(path: Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from exc
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def config_digest(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON of the fully-defaulted document"""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def with_overrides(cfg: ExperimentConfig, assignments: Dict[str, Any]) -> ExperimentConfig:
    """Copy of cfg with top-level or dotted keys replaced, revalidated"""
    data = cfg.to_dict()
    for dotted, value in assignments.items():
        target = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(target.get(part), dict):
                raise ConfigError(dotted, "not a configurable field")
            target = target[part]
        if parts[-1] not in target:
            raise ConfigError(dotted, "not a configurable field")
        target[parts[-1]] = value
    return from_mapping(data)
