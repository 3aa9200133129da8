"""Run configuration: strict JSON, validated defaults and seeded random streams."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .abm import SimConfig
from .grid import DensityField, Grid
from .kernels import KERNELS, check_gamma
from .pde import SchemeConfig

STREAMS = ("abm", "fuzz", "init")


class ConfigError(ValueError):
    pass


@dataclass
class GridSection:
    w_max: float = 20.0
    n_cells: int = 400


@dataclass
class AbmSection:
    n_agents: int = 10_000
    dt: float = 0.01
    T: float = 5.0
    record_every: int = 10
    initial: str = "equal"
    n_seeds: int = 1


@dataclass
class PdeSection:
    dt: float | str = "auto"
    T: float = 5.0
    safety: float = 0.5
    snapshot_every: int = 50


@dataclass
class DensitySection:
    kind: str = "exponential"  # exponential | uniform | bump | csv
    a: float = 0.0
    b: float = 2.0
    center: float = 1.0
    width: float = 0.1
    path: str | None = None


@dataclass
class FuzzSection:
    n_trials: int = 100
    n_paths: int = 20


@dataclass
class RunConfig:
    model: str = "yard-sale"
    gamma: float = 0.1
    seed: int = 0
    outputs: str = "out"
    grid: GridSection = field(default_factory=GridSection)
    abm: AbmSection = field(default_factory=AbmSection)
    pde: PdeSection = field(default_factory=PdeSection)
    initial_density: DensitySection = field(default_factory=DensitySection)
    fuzz: FuzzSection = field(default_factory=FuzzSection)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    # module configs -----------------------------------------------------

    def make_grid(self) -> Grid:
        return Grid(self.grid.w_max, self.grid.n_cells)

    def sim_config(self, seed: int | None = None) -> SimConfig:
        a = self.abm
        return SimConfig(
            n_agents=a.n_agents, gamma=self.gamma, dt=a.dt, T=a.T,
            seed=self.seed if seed is None else seed,
            record_every=a.record_every, initial=a.initial,
        )

    def scheme_config(self) -> SchemeConfig:
        p = self.pde
        return SchemeConfig(dt=p.dt, T=p.T, gamma=self.gamma, safety=p.safety,
                            snapshot_every=p.snapshot_every)

    def initial(self) -> DensityField:
        d = self.initial_density
        if d.kind == "csv":
            return DensityField.from_csv(d.path)
        grid = self.make_grid()
        if d.kind == "exponential":
            return DensityField.exponential(grid)
        if d.kind == "uniform":
            return DensityField.uniform(grid, d.a, d.b)
        if d.kind == "bump":
            return DensityField.bump(grid, d.center, d.width)
        raise ConfigError(f"initial_density.kind: unknown kind {d.kind!r}")

    def validate(self) -> None:
        def guard(name: str, fn) -> None:
            try:
                fn()
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{name}: {exc}") from None

        if self.model not in KERNELS:
            raise ConfigError(f"model: unknown kernel {self.model!r}; available: {sorted(KERNELS)}")
        guard("gamma", lambda: check_gamma(float(self.gamma)))
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {self.seed!r}")
        guard("grid", self.make_grid)
        if self.grid.n_cells < 4:
            raise ConfigError(f"grid.n_cells: need at least 4 nodes for the stencils, got {self.grid.n_cells}")
        guard("abm", self.sim_config)
        if int(self.abm.n_seeds) != self.abm.n_seeds or self.abm.n_seeds < 1:
            raise ConfigError("abm.n_seeds: must be a positive integer")
        guard("pde", self.scheme_config)
        d = self.initial_density
        if d.kind not in ("exponential", "uniform", "bump", "csv"):
            raise ConfigError(f"initial_density.kind: unknown kind {d.kind!r}")
        if d.kind == "csv":
            if not d.path:
                raise ConfigError("initial_density.path: required when kind is 'csv'")
            if not Path(d.path).is_file():
                raise FileNotFoundError(f"initial_density.path: no such file: {d.path}")
        for name in ("n_trials", "n_paths"):
            if getattr(self.fuzz, name) < 1:
                raise ConfigError(f"fuzz.{name}: must be >= 1")


_SECTIONS = {
    "grid": GridSection,
    "abm": AbmSection,
    "pde": PdeSection,
    "initial_density": DensitySection,
    "fuzz": FuzzSection,
}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(known)}")
    kwargs = {}
    for key, value in data.items():
        if cls is RunConfig and key in _SECTIONS:
            value = _build(_SECTIONS[key], value, key)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    cfg = _build(RunConfig, data, "config")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a JSON config; unknown keys are errors."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for the named purpose, derived from the run seed."""
    if name not in STREAMS:
        raise ValueError(f"unknown stream {name!r}; expected one of {STREAMS}")
    key = [int(seed), zlib.crc32(name.encode()), *map(int, extra)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
