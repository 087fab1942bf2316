"""Experiment configuration: nested dataclasses loaded from JSON."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass
from pathlib import Path

from .gan import GanHyper, LatentOptConfig
from .lstm import LstmHyper
from .model import GridSpec, ModelParams
from .nn import FfnHyper
from .seirs import SolverSettings


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    nx: int = 10
    ny: int = 10
    nz: int = 1
    domain_length: float = 1.0e5
    region_map: tuple[int, ...] | None = None


@dataclass(frozen=True)
class ModelConfig:
    sigma: float = ModelParams.sigma
    T_D: tuple[float, float] = ModelParams.T_D
    R0: tuple[float, float] = ModelParams.R0
    xi: tuple[float, float] | None = None
    mu: tuple[float, float] | None = None
    nu: tuple[tuple[float, float], ...] | None = None
    k_transient: float | None = None
    k_eigen_factor: float = 0.05
    Lambda_HH_region2: float | None = None
    r_ratio: float = 25.65
    epsilon: float = 1e-10
    T_one_day: float = 86400.0
    eigen_home_region: int = 2
    length_scale: float = 1.0e5
    home_diffusion: bool = False


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1000.0
    n_steps: int = 3880
    picard_tol: float = SolverSettings.picard_tol
    picard_max: int = SolverSettings.picard_max
    fbgs_tol: float = SolverSettings.fbgs_tol
    fbgs_max: int = SolverSettings.fbgs_max
    block_tol: float = SolverSettings.block_tol
    block_max: int = SolverSettings.block_max
    eigen_tol: float = SolverSettings.eigen_tol
    eigen_max: int = SolverSettings.eigen_max


@dataclass(frozen=True)
class RomConfig:
    M: int = 15
    stride: int = 10
    lstm_normalization: str = "compartment"
    gan_normalization: str = "none"


@dataclass(frozen=True)
class RolloutConfig:
    start_level: int = 9
    second_start_level: int = 200
    horizon: int | None = None  # None: run to the end of the series
    probe_cell: tuple[int, int] = (5, 4)


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig = GridConfig()
    model: ModelConfig = ModelConfig()
    solver: SolverConfig = SolverConfig()
    rom: RomConfig = RomConfig()
    lstm: LstmHyper = LstmHyper()
    ffn: FfnHyper = FfnHyper()
    gan: GanHyper = GanHyper()
    latent_opt: LatentOptConfig = LatentOptConfig()
    rollout: RolloutConfig = RolloutConfig()
    seed: int = 0
    profile: str = "paper"

    # -- derived objects
    def grid_spec(self) -> GridSpec:
        g = self.grid
        return GridSpec(g.nx, g.ny, g.nz, g.domain_length, g.region_map)

    def model_params(self) -> ModelParams:
        kw = dataclasses.asdict(self.model)
        return ModelParams(**kw, dt=self.solver.dt, n_steps=self.solver.n_steps)

    def solver_settings(self) -> SolverSettings:
        s = dataclasses.asdict(self.solver)
        del s["dt"], s["n_steps"]
        return SolverSettings(**s)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


CI_OVERRIDES = {
    "lstm": {"epochs": 50},
    "ffn": {"epochs": 50},
    "gan": {"epochs": 500},
    "latent_opt": {"max_steps": 200, "restarts": 2},
    "rollout": {"horizon": 100},
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return from_dict(tp, value, path)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    raise ConfigError(f"{path}: unsupported type {tp}")


def from_dict(cls, data: dict, path: str = ""):
    """Build dataclass ``cls`` from a JSON object, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key {(path + '.' if path else '') + key!r}")
    kw = {k: _coerce(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, dict) else v
    return out


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    checks = [
        ("solver.dt", cfg.solver.dt > 0, "must be positive"),
        ("solver.n_steps", cfg.solver.n_steps >= 1, "must be >= 1"),
        ("rom.M", cfg.rom.M >= 1, "must be >= 1"),
        ("rom.stride", cfg.rom.stride >= 1, "must be >= 1"),
        ("rom.lstm_normalization", cfg.rom.lstm_normalization in ("compartment", "none"), "unknown mode"),
        ("rom.gan_normalization", cfg.rom.gan_normalization in ("compartment", "none"), "unknown mode"),
        ("lstm.epochs", cfg.lstm.epochs >= 1, "must be >= 1"),
        ("lstm.window", cfg.lstm.window >= 1, "must be >= 1"),
        ("gan.epochs", cfg.gan.epochs >= 1, "must be >= 1"),
        ("rollout.start_level", cfg.rollout.start_level >= cfg.lstm.window, "must leave room for a window"),
        ("rollout.horizon", cfg.rollout.horizon is None or cfg.rollout.horizon >= 0, "must be >= 0"),
        ("seed", cfg.seed >= 0, "must be >= 0"),
        ("profile", cfg.profile in ("paper", "ci"), "must be 'paper' or 'ci'"),
    ]
    for key, ok, msg in checks:
        if not ok:
            raise ConfigError(f"{key}: {msg}")
    try:
        cfg.grid_spec()
        cfg.model_params()
    except ValueError as exc:
        raise ConfigError(f"grid/model: {exc}") from exc
    return cfg


def parse_config(text: str, source: str = "<config>", profile: str | None = None,
                 seed: int | None = None) -> ExperimentConfig:
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    if profile is not None:
        data["profile"] = profile
    if seed is not None:
        data["seed"] = seed
    if data.get("profile") == "ci":
        data = _merge(CI_OVERRIDES, data)
    return validate(from_dict(ExperimentConfig, data))


def load_config(path=None, profile: str | None = None, seed: int | None = None) -> ExperimentConfig:
    if path is None:
        return parse_config("{}", profile=profile, seed=seed)
    return parse_config(Path(path).read_text(), str(path), profile, seed)


def dump_config(cfg: ExperimentConfig, path) -> None:
    """Write the fully resolved configuration; reloading it gives ``cfg`` back."""
    data = cfg.to_dict()
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def hyper_dict(obj) -> dict:
    return _plain(dataclasses.asdict(obj))


def hyper_from(cls, data: dict):
    return from_dict(cls, data)

