"""Experiment configuration: TOML in, validated frozen dataclasses out."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import tomli

from ..estimation import Aggregation
from ..model import ChainGeometrySpec, Dissipation, DipoleOrientation, NNDisorder, SweepKind, SystemParams


class ConfigError(ValueError):
    pass


class ExperimentKind(str, enum.Enum):
    SPECTRUM = "spectrum"
    TRAPPING_SWEEP = "trapping_sweep"
    SNAPSHOTS = "snapshots"
    FISHER_SWEEP = "fisher_sweep"
    DISORDER_ENSEMBLE = "disorder_ensemble"
    TWO_ATOM_ORACLE = "two_atom_oracle"


@dataclass(frozen=True)
class SystemSection:
    detuning: float = 0.2  # omega - omega0
    omega0: float = 0.0
    kappa: float | tuple[float, ...] = 0.2
    orientation: str | float = "pi"
    dissipation: str = "none"
    kappa_sigma: float = 0.0


@dataclass(frozen=True)
class GeometrySection:
    n_atoms: int = 8
    spacing: float = 1.0
    sigma: float = 0.0
    min_separation: float = 1e-2
    nn_disorder: str = "positional"


@dataclass(frozen=True)
class SweepSection:
    kind: str = "coupling"
    start: float = 0.0
    stop: float = 0.5
    points: int = 501


@dataclass(frozen=True)
class DynamicsSection:
    horizon: float = 1e4
    site: int = 1  # 1-based
    times: tuple[float, ...] = (0.0, 10.0, 100.0, 1000.0, 10000.0)
    resonance: float | None = None  # None: first detected crossing
    off_resonance: float | None = None  # None: resonance + 0.05
    k0_phase: float = 1.0


@dataclass(frozen=True)
class EnsembleSection:
    sigmas: tuple[float, ...] = (0.0, 0.1, 0.2, 0.4)
    realizations: int = 50
    aggregation: str = "per_realization"


@dataclass(frozen=True)
class TwoAtomSection:
    w1: float = 0.0
    w2: float = 0.0
    w: float = 0.2
    kappa_a: float = 0.2
    kappa_b: float = 0.2


@dataclass(frozen=True)
class ExperimentConfig:
    kind: ExperimentKind = ExperimentKind.SPECTRUM
    label: str = "experiment"
    seed: int = 0
    normalize: bool = False
    system: SystemSection = field(default_factory=SystemSection)
    geometry: GeometrySection = field(default_factory=GeometrySection)
    sweep: SweepSection = field(default_factory=SweepSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    two_atom: TwoAtomSection = field(default_factory=TwoAtomSection)

    # derived objects -------------------------------------------------

    def system_params(self) -> SystemParams:
        s, n = self.system, self.geometry.n_atoms
        return SystemParams.uniform(n, s.detuning, s.kappa, s.omega0, s.dissipation)

    def geometry_spec(self, sigma: float | None = None) -> ChainGeometrySpec:
        g = self.geometry
        return ChainGeometrySpec(g.n_atoms, g.spacing, g.sigma if sigma is None else sigma, g.min_separation)

    def orientation(self) -> DipoleOrientation:
        return DipoleOrientation.parse(self.system.orientation)

    def to_dict(self) -> dict[str, Any]:
        def plain(obj):
            if dataclasses.is_dataclass(obj):
                return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, enum.Enum):
                return obj.value
            if isinstance(obj, tuple):
                return [plain(x) for x in obj]
            return obj

        return plain(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the resolved config."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


_SECTIONS = {
    "system": SystemSection,
    "geometry": GeometrySection,
    "sweep": SweepSection,
    "dynamics": DynamicsSection,
    "ensemble": EnsembleSection,
    "two_atom": TwoAtomSection,
}


def _number(path: str, value, integer: bool = False, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if integer:
        if float(value) != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite")
    return float(value)


def _coerce(path: str, annotation: str, value):
    if annotation == "float":
        return _number(path, value)
    if annotation == "int":
        return _number(path, value, integer=True)
    if annotation == "float | None":
        return _number(path, value, allow_none=True)
    if annotation == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if annotation == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false, got {value!r}")
        return value
    if annotation == "tuple[float, ...]":
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{path}: expected a non-empty list of numbers")
        return tuple(_number(f"{path}[{i}]", v) for i, v in enumerate(value))
    if annotation == "float | tuple[float, ...]":
        if isinstance(value, list):
            return _coerce(path, "tuple[float, ...]", value)
        return _number(path, value)
    if annotation == "str | float":
        if isinstance(value, str):
            return value
        return _number(path, value)
    raise AssertionError(f"unhandled annotation {annotation}")


def _build_section(name: str, cls, raw) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(unknown)}")
    values = {k: _coerce(f"{name}.{k}", known[k].type, v) for k, v in raw.items()}
    return cls(**values)


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    top_fields = {"kind", "label", "seed", "normalize"}
    unknown = sorted(set(raw) - top_fields - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    if "kind" in raw:
        try:
            kwargs["kind"] = ExperimentKind(raw["kind"])
        except ValueError:
            choices = ", ".join(k.value for k in ExperimentKind)
            raise ConfigError(f"kind: {raw['kind']!r} is not one of {choices}") from None
    if "label" in raw:
        kwargs["label"] = _coerce("label", "str", raw["label"])
    if "seed" in raw:
        kwargs["seed"] = _coerce("seed", "int", raw["seed"])
    if "normalize" in raw:
        kwargs["normalize"] = _coerce("normalize", "bool", raw["normalize"])
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build_section(name, cls, raw[name])
    config = ExperimentConfig(**kwargs)
    validate(config)
    return config


def validate(config: ExperimentConfig) -> None:
    """Check every referenced parameter before anything is computed."""
    g, s, sw, d, e = config.geometry, config.system, config.sweep, config.dynamics, config.ensemble

    def check(cond, msg):
        if not cond:
            raise ConfigError(msg)

    check(config.seed >= 0, "seed: must be non-negative")
    check(config.label and all(c.isalnum() or c in "-_." for c in config.label), "label: use letters, digits, '-', '_' or '.'")
    try:
        spec = config.geometry_spec()
        for sigma in e.sigmas:
            config.geometry_spec(sigma)
    except ValueError as exc:
        raise ConfigError(f"geometry: {exc}") from None
    check(spec.n_atoms <= 64, "geometry.n_atoms: at most 64 atoms are supported")
    if isinstance(s.kappa, tuple):
        check(len(s.kappa) == g.n_atoms, f"system.kappa: expected {g.n_atoms} values, got {len(s.kappa)}")
    check(s.kappa_sigma >= 0, "system.kappa_sigma: must be non-negative")
    try:
        Dissipation(s.dissipation)
    except ValueError:
        raise ConfigError("system.dissipation: use 'none' or 'collective'") from None
    try:
        DipoleOrientation.parse(s.orientation)
    except ValueError as exc:
        raise ConfigError(f"system.orientation: {exc}") from None
    try:
        NNDisorder(g.nn_disorder)
    except ValueError:
        raise ConfigError("geometry.nn_disorder: use 'positional' or 'direct'") from None
    try:
        kind = SweepKind(sw.kind)
    except ValueError:
        raise ConfigError("sweep.kind: use 'coupling' or 'spacing'") from None
    check(sw.points >= 2, "sweep.points: need at least 2")
    check(sw.stop > sw.start, "sweep.stop: must exceed sweep.start")
    if kind is SweepKind.SPACING:
        check(sw.start > 0, "sweep.start: spacing sweeps need positive k0*R")
    check(d.horizon > 0, "dynamics.horizon: must be positive")
    check(1 <= d.site <= g.n_atoms, f"dynamics.site: must lie in 1..{g.n_atoms}")
    check(all(t >= 0 for t in d.times), "dynamics.times: must be non-negative")
    check(list(d.times) == sorted(d.times), "dynamics.times: must be increasing")
    check(e.realizations >= 1, "ensemble.realizations: must be at least 1")
    check(all(x >= 0 for x in e.sigmas), "ensemble.sigmas: must be non-negative")
    try:
        Aggregation(e.aggregation)
    except ValueError:
        raise ConfigError("ensemble.aggregation: use 'per_realization' or 'ensemble_average'") from None
    if config.kind is ExperimentKind.TWO_ATOM_ORACLE:
        check(kind is SweepKind.COUPLING, "sweep.kind: the two-atom oracle sweeps the coupling M")


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    try:
        return config_from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def bank_names() -> list[str]:
    root = resources.files("pimate.configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def bank_text(name: str) -> str:
    return resources.files("pimate.configs").joinpath(f"{name}.toml").read_text()


def load_config(path_or_name: str | Path) -> ExperimentConfig:
    """Read a TOML file, or a bundled config by name (e.g. ``fig2a``)."""
    path = Path(path_or_name)
    if path.is_file():
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return parse_config(text, str(path))
    name = str(path_or_name)
    if name in bank_names():
        return parse_config(bank_text(name), f"bank:{name}")
    raise ConfigError(f"{path_or_name}: no such file or bundled config")
