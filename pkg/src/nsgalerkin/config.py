"""Scenario configuration: TOML schema, defaults and validation."""

from __future__ import annotations

import hashlib
import json
import math
import sys
import warnings
from dataclasses import MISSING, asdict, dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError

SCHEMA_VERSION = 1
SCENARIOS = ("heat_only", "nse_unforced", "picard_contraction", "feasibility_sweep",
             "decay_constant", "horizon_bound", "stochastic_barrier", "cornwall_gap")


@dataclass
class ParamsSection:
    nu: float = 0.1
    r: float = 1.0
    rho: float = 1.0
    delta: float = 0.25
    mu: float = 10.0
    Delta0: float = 0.1
    l: float = 1.0
    D: int = 3


@dataclass
class DataSection:
    profile: str = "envelope"        # "envelope" or "taylor_green"
    constant: float = 1.0
    order: float = 5.0
    amplitude: float = 1.0
    truncation: int = 8


@dataclass
class RunSection:
    T: float = 0.1
    dt: float = 1e-3
    record_every: int = 10
    project: bool = True
    controlled: bool = False
    max_order: int = 5
    ceiling_factor: float = 1e6
    checkpoint_every: int = 0


@dataclass
class PicardSection:
    Delta: float = 1.0
    tol: float = 1e-10
    kmax: int = 50
    m: int = 2
    n_nodes: int = 9
    C0: float = 1.0
    rho_rule: str = "fixed_point"    # "fixed_point" or "given"


@dataclass
class SweepSection:
    delta: list = field(default_factory=lambda: [0.2, 0.3, 0.4])
    mu: list = field(default_factory=lambda: [8.0, 12.0])
    Delta0: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    norm_L2: float = 1.0
    L_m: float = 1.0


@dataclass
class DecaySection:
    truncations: list = field(default_factory=lambda: [8, 16])
    c: float = 0.0                   # 0: computed by convolution_decay_constant
    margin: float = 0.01


@dataclass
class NoiseSection:
    n_terms: int = 16
    amplitude: float = 3.0
    seeds: int = 50


@dataclass
class CornwallSection:
    p: int = 8
    refine: int = 2
    perturbation: float = 1e-3


@dataclass
class ScenarioConfig:
    scenario: str
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    params: ParamsSection = field(default_factory=ParamsSection)
    data: DataSection = field(default_factory=DataSection)
    run: RunSection = field(default_factory=RunSection)
    picard: PicardSection = field(default_factory=PicardSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    decay: DecaySection = field(default_factory=DecaySection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    cornwall: CornwallSection = field(default_factory=CornwallSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


SECTIONS = {f.name: f.default_factory for f in fields(ScenarioConfig) if f.default_factory is not MISSING}


def _coerce(section: str, name: str, value, default):
    where = f"{section}.{name}" if section else name
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(where, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(where, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(where, "must be finite")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list) or not value:
            raise ConfigError(where, "expected a nonempty list")
        return list(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(where, f"expected a string, got {value!r}")
        return value
    return value


def _build_section(name: str, raw) -> object:
    cls_default = SECTIONS[name]()
    if raw is None:
        return cls_default
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a table")
    known = {f.name for f in fields(cls_default)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
    values = {k: _coerce(name, k, v, getattr(cls_default, k)) for k, v in raw.items()}
    return type(cls_default)(**{**asdict(cls_default), **values})


def from_dict(raw: dict) -> ScenarioConfig:
    if "scenario" not in raw:
        raise ConfigError("scenario", "missing required field")
    top = {"scenario", "seed", "schema_version"} | set(SECTIONS)
    for key in raw:
        if key not in top:
            raise ConfigError(key, "unknown field")
    scenario = _coerce("", "scenario", raw["scenario"], "")
    seed = _coerce("", "seed", raw.get("seed", 0), 0)
    version = _coerce("", "schema_version", raw.get("schema_version", SCHEMA_VERSION), 0)
    sections = {name: _build_section(name, raw.get(name)) for name in SECTIONS}
    cfg = ScenarioConfig(scenario=scenario, seed=seed, schema_version=version, **sections)
    validate(cfg)
    return cfg


def load(path) -> ScenarioConfig:
    """Parse and validate; OSError propagates unchanged so callers can tell I/O from schema errors."""
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("file", f"not valid TOML: {exc}") from exc
    return from_dict(raw)


def _positive(where, value):
    if not value > 0:
        raise ConfigError(where, f"must be positive, got {value}")


def validate(cfg: ScenarioConfig) -> list:
    """Raise ConfigError on the first violation; return advisory warnings."""
    notes = []
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {cfg.schema_version}")
    if cfg.scenario not in SCENARIOS:
        raise ConfigError("scenario", f"must be one of {', '.join(SCENARIOS)}")
    if cfg.seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    p = cfg.params
    for name in ("nu", "r", "rho", "mu", "Delta0", "l"):
        _positive(f"params.{name}", getattr(p, name))
    if not 0 < p.delta < 1:
        raise ConfigError("params.delta", f"must lie in (0, 1), got {p.delta}")
    if p.D not in (2, 3):
        raise ConfigError("params.D", "must be 2 or 3")
    d = cfg.data
    if d.profile not in ("envelope", "taylor_green"):
        raise ConfigError("data.profile", "must be 'envelope' or 'taylor_green'")
    if d.truncation < 1:
        raise ConfigError("data.truncation", "must be >= 1")
    if d.profile == "taylor_green" and p.D != 3:
        raise ConfigError("data.profile", "taylor_green needs params.D = 3")
    _positive("data.constant", d.constant)
    _positive("data.order", d.order)
    r = cfg.run
    _positive("run.dt", r.dt)
    if r.T < 0:
        raise ConfigError("run.T", "must be nonnegative")
    steps = r.T / r.dt
    if abs(steps - round(steps)) > 1e-9:
        raise ConfigError("run.T", f"T/dt = {steps!r} is not an integer")
    if r.record_every < 1:
        raise ConfigError("run.record_every", "must be >= 1")
    if r.max_order < 0:
        raise ConfigError("run.max_order", "must be >= 0")
    if cfg.scenario == "horizon_bound" and r.max_order < p.D + 2:
        raise ConfigError("run.max_order", f"horizon_bound needs max_order >= D + 2 = {p.D + 2}")
    pc = cfg.picard
    _positive("picard.Delta", pc.Delta)
    _positive("picard.tol", pc.tol)
    _positive("picard.C0", pc.C0)
    if pc.rho_rule not in ("fixed_point", "given"):
        raise ConfigError("picard.rho_rule", "must be 'fixed_point' or 'given'")
    if pc.n_nodes < 2:
        raise ConfigError("picard.n_nodes", "must be >= 2")
    sw = cfg.sweep
    for name in ("delta", "mu", "Delta0"):
        for v in getattr(sw, name):
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                raise ConfigError(f"sweep.{name}", f"entries must be positive numbers, got {v!r}")
    if any(not v < 1 for v in sw.delta):
        raise ConfigError("sweep.delta", "entries must lie in (0, 1)")
    if cfg.scenario == "feasibility_sweep":
        for dl in sw.delta:
            for mu in sw.mu:
                if mu <= (2 + dl) / dl:
                    notes.append(f"sweep: mu={mu} is below the threshold (2+delta)/delta at delta={dl}")
    if cfg.scenario == "decay_constant":
        if any(not isinstance(m, int) or m < 4 for m in cfg.decay.truncations):
            raise ConfigError("decay.truncations", "entries must be integers >= 4")
    if cfg.noise.seeds < 1:
        raise ConfigError("noise.seeds", "must be >= 1")
    if cfg.noise.n_terms < 1:
        raise ConfigError("noise.n_terms", "must be >= 1")
    if cfg.cornwall.p < 4:
        raise ConfigError("cornwall.p", "must be >= 4")
    if cfg.cornwall.refine < 2:
        raise ConfigError("cornwall.refine", "must be >= 2")
    for note in notes:
        warnings.warn(note, UserWarning, stacklevel=2)
    return notes
