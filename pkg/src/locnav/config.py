"""Run configuration: TOML file plus command-line overrides, and resolved snapshots."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import PPOConfig
from .baselines import DwaParams
from .env import EnvParams
from .localization import AmclParams
from .observation import Variant
from .reward import RewardParams
from .sensors import BeamModelParams, OdomNoiseParams

VARIANTS = [v.value for v in Variant] + ["dwa"]
CONFIG_DIR = Path(__file__).parent / "configs"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SensorConfig:
    z_hit: float = 0.98
    z_short: float = 0.0
    z_max: float = 0.01
    z_rand: float = 0.01
    sigma_hit: float = 0.02
    lambda_short: float = 1.0
    max_range: float = 12.0
    odom_spread: float = 0.01          # the N(1, spread) gain noise on executed velocities
    odom_interpret: str = "variance"   # whether `odom_spread` is a variance or a std

    def beam(self) -> BeamModelParams:
        return BeamModelParams(self.z_hit, self.z_short, self.z_max, self.z_rand, self.sigma_hit,
                               self.max_range, self.lambda_short)

    def odom(self) -> OdomNoiseParams:
        return OdomNoiseParams.from_spread(self.odom_spread, self.odom_interpret)


@dataclass(frozen=True)
class AmclConfig:
    min_particles: int = 500
    max_particles: int = 2000
    kld_err: float = 0.05
    kld_delta: float = 0.99
    beam_stride: int = 12
    z_hit: float = 0.95
    z_max: float = 0.025
    z_rand: float = 0.025
    sigma_hit: float = 0.1
    jitter: tuple = (0.02, 0.02, 0.01)
    init_spread: tuple = (0.1, 0.1, 0.05)

    def params(self, odom: OdomNoiseParams, max_range: float) -> AmclParams:
        lik = BeamModelParams(self.z_hit, 0.0, self.z_max, self.z_rand, self.sigma_hit, max_range)
        return AmclParams(self.min_particles, self.max_particles, self.kld_err, self.kld_delta,
                          jitter=tuple(self.jitter), odom=odom, likelihood=lik,
                          beam_stride=self.beam_stride, init_spread=tuple(self.init_spread))


@dataclass(frozen=True)
class RunConfig:
    seed: int
    scenario: str = "hybrid"
    variant: str = "lndrl"
    out: str = "runs/default"
    workers: int = 1
    sensors: SensorConfig = field(default_factory=SensorConfig)
    amcl: AmclConfig = field(default_factory=AmclConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    dwa: DwaParams = field(default_factory=DwaParams)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def env_params(self, arrival_from: str = "estimate") -> EnvParams:
        s = self.sensors
        odom = s.odom()
        return EnvParams(beam=s.beam(), odom=odom, amcl=self.amcl.params(odom, s.max_range),
                         reward=self.reward, arrival_from=arrival_from)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return _tomlable(d)


_SECTIONS = {"sensors": SensorConfig, "amcl": AmclConfig, "reward": RewardParams,
             "ppo": PPOConfig, "dwa": DwaParams}


def _tomlable(x):
    if isinstance(x, dict):
        return {k: _tomlable(v) for k, v in x.items() if v is not None}
    if isinstance(x, (list, tuple)):
        return [_tomlable(v) for v in x]
    return x


def _coerce(cls, key: str, value, where: str):
    f = {f.name: f for f in fields(cls)}
    if key not in f:
        raise ConfigError(f"{where}: unknown key {key!r} (valid: {', '.join(sorted(f))})")
    default = f[key].default
    if default is dataclasses.MISSING and f[key].default_factory is not dataclasses.MISSING:
        default = f[key].default_factory()
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                return value.lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, int) and not isinstance(value, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("expected an integer")
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [float(v) for v in value.split(",")]
            return tuple(value)
        if default is None and isinstance(value, str):
            return None if value.lower() in ("none", "") else float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from None
    return value


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    kw = {k: _coerce(cls, k, v, where) for k, v in data.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig; `overrides` maps 'key' or 'section.key' to values and wins over `data`."""
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            sec, k = key.split(".", 1)
            if sec not in _SECTIONS:
                raise ConfigError(f"unknown section {sec!r} in override {key!r}")
            data.setdefault(sec, {})[k] = value
        else:
            data[key] = value
    if "seed" not in data:
        raise ConfigError("seed is required (set it in the config or pass --seed)")
    top = {}
    for k, v in data.items():
        if k in _SECTIONS:
            top[k] = _build(_SECTIONS[k], v, k)
        elif k in ("seed", "workers"):
            top[k] = _coerce(RunConfig, k, v, "config") if k == "workers" else int(v)
        elif k in ("scenario", "variant", "out"):
            top[k] = str(v)
        else:
            raise ConfigError(f"config: unknown key {k!r}")
    try:
        return RunConfig(**top)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def resolve_config_path(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.is_file():
        return p
    shipped = CONFIG_DIR / f"{name_or_path}.toml"
    if shipped.is_file():
        return shipped
    raise FileNotFoundError(f"config file not found: {name_or_path}")


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = resolve_config_path(path)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, overrides)


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def write_snapshot(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(dump_config(cfg))
    return path
