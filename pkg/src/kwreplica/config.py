"""Run configuration: a TOML file with a versioned schema.

The grammar is documented in docs/config.md.  Unknown sections or keys are
errors; every run writes the fully resolved config next to its results.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import tomlkit

from .lattice import Boundary, GeometryError, ReplicaLatticeSpec, Variant

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "KWREPLICA_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "kwreplica-out"


class ConfigError(ValueError):
    pass


@dataclass
class GeometryConfig:
    dimension: int = 2
    n_replicas: int = 2
    extents: list = field(default_factory=lambda: [3, 3])
    cut_offset: int = 0
    variant: str = "standard_cut"
    boundaries: list | None = None
    cut_slice: int | None = None


@dataclass
class PhysicsConfig:
    beta: list = field(default_factory=list)
    n_tau_c: int | None = None
    l: list = field(default_factory=lambda: [0])


@dataclass
class ProtocolConfig:
    n_steps: int = 64
    sweeps_per_step: int = 1
    equilibration_sweeps: int | None = None
    n_trajectories: int = 10_000
    master_seed: int = 0
    directions: list = field(default_factory=lambda: ["forward", "reverse"])
    n_bootstrap: int = 1000


@dataclass
class AnalysisConfig:
    ansatz_window: list = field(default_factory=lambda: [0.84, math.inf])
    powerlaw_window: list = field(default_factory=lambda: [0.0, 1.26])
    fits: list = field(default_factory=lambda: ["ansatz", "powerlaw"])
    c2_cft: float | None = None
    mg_table: str | None = None
    mg_over_tc: float | None = None
    min_volumes: int = 3


@dataclass
class IOConfig:
    output_dir: str | None = None
    checkpoint_interval: int = 1000
    workers: int = 1


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    io: IOConfig = field(default_factory=IOConfig)
    schema_version: int = SCHEMA_VERSION

    def spec(self, slab_length: int) -> ReplicaLatticeSpec:
        g = self.geometry
        bnd = None if g.boundaries is None else tuple(Boundary(b) for b in g.boundaries)
        return ReplicaLatticeSpec(g.dimension, g.n_replicas, tuple(g.extents), int(slab_length),
                                  cut_offset=g.cut_offset, variant=Variant(g.variant), boundaries=bnd,
                                  cut_slice=g.cut_slice)

    def betas(self) -> list:
        from .analysis import scale_lookup

        if self.physics.n_tau_c is not None:
            return [scale_lookup(self.physics.n_tau_c)[0]]
        return [float(b) for b in self.physics.beta]

    def output_dir(self) -> Path:
        return Path(self.io.output_dir or os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR)

    def to_dict(self) -> dict:
        d = {"schema_version": self.schema_version}
        for name in SECTIONS:
            d[name] = {k: v for k, v in asdict(getattr(self, name)).items() if v is not None}
        return d

    def to_toml(self) -> str:
        return tomlkit.dumps(self.to_dict())


SECTIONS = {"geometry": GeometryConfig, "physics": PhysicsConfig, "protocol": ProtocolConfig,
            "analysis": AnalysisConfig, "io": IOConfig}

_INT = {"dimension", "n_replicas", "cut_offset", "cut_slice", "n_tau_c", "n_steps", "sweeps_per_step",
        "equilibration_sweeps", "n_trajectories", "master_seed", "n_bootstrap", "min_volumes",
        "checkpoint_interval", "workers"}
_FLOAT = {"c2_cft", "mg_over_tc"}
_STR = {"variant", "mg_table", "output_dir"}
_INT_LIST = {"extents", "l"}
_FLOAT_LIST = {"beta", "ansatz_window", "powerlaw_window"}
_STR_LIST = {"boundaries", "directions", "fits"}


def _coerce(section: str, key: str, v):
    where = f"[{section}].{key}"
    if key in _INT:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where} must be an integer, got {v!r}")
        return int(v)
    if key in _FLOAT:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where} must be a number, got {v!r}")
        return float(v)
    if key in _STR:
        if not isinstance(v, str):
            raise ConfigError(f"{where} must be a string, got {v!r}")
        return v
    if not isinstance(v, list):
        raise ConfigError(f"{where} must be a list, got {v!r}")
    if key in _INT_LIST:
        if not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
            raise ConfigError(f"{where} must be a list of integers")
        return [int(x) for x in v]
    if key in _FLOAT_LIST:
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise ConfigError(f"{where} must be a list of numbers")
        return [float(x) for x in v]
    if not all(isinstance(x, str) for x in v):
        raise ConfigError(f"{where} must be a list of strings")
    return list(v)


def config_from_dict(d: dict) -> RunConfig:
    d = dict(d)
    if "schema_version" not in d:
        raise ConfigError("missing schema_version (current schema is 1)")
    version = d.pop("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (this version reads {SCHEMA_VERSION})")
    parts = {}
    for name, body in d.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}] (allowed: {', '.join(SECTIONS)})")
        if not isinstance(body, dict):
            raise ConfigError(f"{name} must be a [section]")
        cls = SECTIONS[name]
        known = cls.__dataclass_fields__
        kw = {}
        for k, v in body.items():
            if k not in known:
                raise ConfigError(f"unknown key [{name}].{k} (allowed: {', '.join(known)})")
            kw[k] = _coerce(name, k, v)
        parts[name] = cls(**kw)
    cfg = RunConfig(**parts)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    p, pr, an, io = cfg.physics, cfg.protocol, cfg.analysis, cfg.io
    if p.n_tau_c is not None and p.beta:
        raise ConfigError("set either [physics].beta or [physics].n_tau_c, not both")
    try:
        betas = cfg.betas()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if not betas:
        raise ConfigError("[physics] needs beta = [...] or n_tau_c")
    if any(b < 0 for b in betas):
        raise ConfigError("[physics].beta must be >= 0")
    if not p.l or any(x < 0 for x in p.l):
        raise ConfigError("[physics].l must be a non-empty list of slab lengths >= 0")
    try:
        Variant(cfg.geometry.variant)
        for b in cfg.geometry.boundaries or []:
            Boundary(b)
        if cfg.geometry.variant == "standard_cut":
            for x in p.l:
                cfg.spec(x + 1)
        else:
            cfg.spec(max(p.l))
    except (GeometryError, ValueError) as e:
        raise ConfigError(f"[geometry]: {e}") from None
    if pr.n_steps < 1 or pr.sweeps_per_step < 1 or pr.n_trajectories < 0:
        raise ConfigError("[protocol]: n_steps, sweeps_per_step >= 1 and n_trajectories >= 0")
    if pr.equilibration_sweeps is not None and pr.equilibration_sweeps < 0:
        raise ConfigError("[protocol].equilibration_sweeps must be >= 0")
    if not pr.directions or any(d not in ("forward", "reverse") for d in pr.directions) \
            or len(set(pr.directions)) != len(pr.directions):
        raise ConfigError("[protocol].directions: a subset of ['forward', 'reverse']")
    if pr.n_bootstrap < 1000:
        raise ConfigError("[protocol].n_bootstrap must be >= 1000")
    for key in ("ansatz_window", "powerlaw_window"):
        w = getattr(an, key)
        if len(w) != 2 or not w[0] < w[1]:
            raise ConfigError(f"[analysis].{key} must be [lo, hi] with lo < hi")
    if any(f not in ("ansatz", "powerlaw") for f in an.fits):
        raise ConfigError("[analysis].fits: a subset of ['ansatz', 'powerlaw']")
    if an.c2_cft is not None and not an.c2_cft > 0:
        raise ConfigError("[analysis].c2_cft must be > 0")
    if an.min_volumes < 2:
        raise ConfigError("[analysis].min_volumes must be >= 2")
    if io.checkpoint_interval < 1 or io.workers < 1:
        raise ConfigError("[io]: checkpoint_interval and workers must be >= 1")


def parse_config(text: str) -> RunConfig:
    try:
        d = tomlkit.parse(text).unwrap()
    except tomlkit.exceptions.ParseError as e:
        raise ConfigError(f"config is not valid TOML: {e}") from None
    return config_from_dict(d)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)


def write_frozen(cfg: RunConfig, out_dir: Path) -> Path:
    path = Path(out_dir) / "config.frozen.toml"
    path.write_text(cfg.to_toml())
    return path
