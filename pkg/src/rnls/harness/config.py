"""Experiment configuration: TOML file plus command-line overrides."""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("ground_state", "verify_identities", "evolve", "classify", "sweep", "gn_sweep")
METHODS = ("gradient_flow", "petviashvili", "shooting")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "ground_state"
    backend: str = "radial"
    grid_n: int = 4096
    r_max: float = 50.0
    cart_n: int = 16
    half_width: float = 10.0
    omegas: tuple = (1.0,)
    amplitudes: tuple = (0.8,)
    method: str = "gradient_flow"
    t_end: float = 1.0
    dt: float = 1e-3
    stride: int = 10
    adaptive: bool = False
    tol: float = 1e-6
    tol_res: float = 1e-7
    drift_mass: float = 1e-8
    drift_energy: float = 1e-6
    n_random: int = 200
    sweep_evolve: bool = False
    seed: int = 0
    out: Optional[str] = None
    cache: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.backend not in ("radial", "cartesian"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        object.__setattr__(self, "omegas", tuple(float(w) for w in self.omegas))
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        if not self.omegas or any(not (w > 0 and math.isfinite(w)) for w in self.omegas):
            raise ConfigError("omega list must be nonempty and positive")
        if self.kind in ("evolve", "classify", "sweep") and not self.amplitudes:
            raise ConfigError("amplitude list is empty")
        if any(not (a > 0 and math.isfinite(a)) for a in self.amplitudes):
            raise ConfigError("amplitudes must be positive")
        for name in ("tol", "tol_res", "drift_mass", "drift_energy", "dt", "t_end", "r_max", "half_width"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        for name in ("grid_n", "cart_n", "stride", "n_random"):
            if not (isinstance(getattr(self, name), int) and getattr(self, name) > 0):
                raise ConfigError(f"{name} must be a positive integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["omegas"] = list(self.omegas)
        d["amplitudes"] = list(self.amplitudes)
        return d


_FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a TOML file (flat table, or an [experiment] table) and apply overrides.

    Overrides whose value is None are ignored, so unset CLI flags never clobber the file.
    """
    data: dict = {}
    if path is not None:
        p = Path(path)
        try:
            raw = tomllib.loads(p.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {p}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        data = dict(raw.get("experiment", raw))
    for k, v in overrides.items():
        if v is not None and v != ():
            data[k] = v
    unknown = set(data) - _FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for k in ("omegas", "amplitudes"):
        if k in data and not isinstance(data[k], (list, tuple)):
            data[k] = (data[k],)
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
