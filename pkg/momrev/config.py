# momrev/config.py
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional

import yaml

from .errors import ConfigError

__all__ = [
    "Config",
    "CubicConfig",
    "GlobalConfig",
    "LinearConfig",
    "ListaConfig",
    "MemcheckConfig",
    "OdeConfig",
    "RingsConfig",
    "config_from_dict",
    "load_config",
    "resolve_env_template",
]

_TEMPLATE = re.compile(r"\$\{\s*([A-Z0-9_]+)\s*:-\s*([^}]*)\s*\}")


def resolve_env_template(val: Any) -> Any:
    """Resolve '${NAME:-default}' against the environment; other values pass through."""
    if not isinstance(val, str):
        return val
    m = _TEMPLATE.fullmatch(val)
    if not m:
        return val
    return os.getenv(m.group(1), m.group(2))


@dataclass
class GlobalConfig:
    seed: int = 0
    out_dir: str = "./artifacts"
    gamma: str = "9/10"
    frac_bits: int = 32
    threads: int = 1
    ledger: str = "runs.jsonl"


@dataclass
class RingsConfig:
    n_per_ring: int = 50
    radii: List[float] = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0])
    noise: float = 0.0
    hidden: int = 16
    depth: int = 15
    iterations: int = 5000
    batch_size: int = 200
    learning_rate: float = 0.05
    optimizer: str = "momentum"
    mode: str = "exact"
    eval_every: int = 100


@dataclass
class CubicConfig:
    n_train: int = 200
    n_test: int = 200
    low: float = -1.0
    high: float = 1.0
    hidden: int = 16
    depth: int = 15
    iterations: int = 3000
    batch_size: int = 100
    learning_rate: float = 0.05
    optimizer: str = "sgd"
    mode: str = "exact"
    eval_every: int = 500


@dataclass
class ListaConfig:
    d: int = 16
    p: int = 32
    lasso_lambda: float = 0.1
    n_train: int = 2000
    n_test: int = 1000
    depths: List[int] = field(default_factory=lambda: [2, 5, 10, 20, 30])
    iterations: int = 2000
    batch_size: int = 256
    learning_rate: float = 1e-3
    optimizer: str = "sgd"
    mode: str = "float"
    eval_every: int = 500
    # momentum LISTA only; heavy ball with this gamma at the ISTA initialization
    gamma: str = "1/2"


@dataclass
class MemcheckConfig:
    depths: List[int] = field(default_factory=lambda: [10, 100, 1000])
    gammas: List[str] = field(default_factory=lambda: ["1/2", "3/4", "9/10", "99/100"])
    dim: int = 4
    hidden: int = 8
    batch: int = 1
    slack_bits: int = 4


@dataclass
class LinearConfig:
    eps_grid: List[float] = field(default_factory=lambda: [0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0])
    battery_eps: List[float] = field(default_factory=lambda: [0.0, 1.0])
    battery_values: List[float] = field(default_factory=lambda: [-2.0, -1.0, -0.5, -0.1, 0.5, 1.0, 2.0])
    revnet_pairs: int = 1000
    revnet_dims: List[int] = field(default_factory=lambda: [2, 5, 10])


@dataclass
class OdeConfig:
    h: float = 1e-4
    eps_to_zero: List[float] = field(default_factory=lambda: [0.1, 0.05, 0.01])
    eps_to_infty: List[float] = field(default_factory=lambda: [1.0, 10.0, 100.0])
    closed_form_eps: List[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    crossing_steps: int = 100_000


@dataclass
class Config:
    global_: GlobalConfig = field(default_factory=GlobalConfig)
    rings: RingsConfig = field(default_factory=RingsConfig)
    cubic: CubicConfig = field(default_factory=CubicConfig)
    lista: ListaConfig = field(default_factory=ListaConfig)
    memcheck: MemcheckConfig = field(default_factory=MemcheckConfig)
    analyze_linear: LinearConfig = field(default_factory=LinearConfig)
    odecheck: OdeConfig = field(default_factory=OdeConfig)

    def section(self, name: str):
        return getattr(self, "global_" if name == "global" else name)


def _coerce(default: Any, value: Any, where: str, key: str) -> Any:
    # environment templates resolve to strings
    if isinstance(value, str) and isinstance(default, (int, float)) and not isinstance(default, bool):
        try:
            return type(default)(value)
        except ValueError as e:
            raise ConfigError(f"{where}.{key}: cannot read {value!r} as {type(default).__name__}") from e
    return value


def _build(cls, raw: Optional[Dict[str, Any]], where: str):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {unknown}")
    defaults = cls()
    return cls(**{k: _coerce(getattr(defaults, k), resolve_env_template(v), where, k) for k, v in raw.items()})


def config_from_dict(cfg: Optional[Dict[str, Any]]) -> Config:
    cfg = cfg or {}
    sections = {"global": GlobalConfig, "rings": RingsConfig, "cubic": CubicConfig, "lista": ListaConfig,
                "memcheck": MemcheckConfig, "analyze_linear": LinearConfig, "odecheck": OdeConfig}
    unknown = sorted(set(cfg) - set(sections))
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    built = {("global_" if k == "global" else k): _build(cls, cfg.get(k), k) for k, cls in sections.items()}
    return Config(**built)


def load_config(path: Optional[str]) -> Config:
    """Read YAML into Config; a missing path yields the defaults."""
    if not path or not os.path.exists(path):
        return Config()
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return config_from_dict(cfg)
