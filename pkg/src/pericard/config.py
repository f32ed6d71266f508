"""Validated simulation configuration with unit handling and presets.

Configs are YAML (or JSON) mappings. Quantities may be bare SI numbers or
strings with units (``"0.2 kPa/mm"``); everything is stored in SI after
validation, and :func:`dump_config` writes plain SI numbers back, so a
dumped config reads back to an identical object. Unknown keys are errors.

A ``preset`` key names a parameter set that the rest of the file is
merged over (see :data:`PRESETS`).
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Annotated, Literal

import yaml
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, model_validator

from .activation import ActivationParams, sigma0_for_peak
from .materials import MaterialParams
from .units import to_si
from .windkessel import AtrialPressureCurve, WindkesselParams, WindkesselState


def _q(dim):
    return Annotated[float, BeforeValidator(lambda v: to_si(v, dim))]


Length = _q("length")
Time = _q("time")
Rate = _q("rate")
Pressure = _q("pressure")
Stiffness = _q("stiffness")
Damping = _q("damping")
Viscosity = _q("viscosity")
Density = _q("density")
Volume = _q("volume")
Flow = _q("flow")
Inertance = _q("inertance")
Compliance = _q("compliance")
Resistance = _q("resistance")


class _Base(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometryConfig(_Base):
    kind: Literal["half_ellipsoid", "closed_ellipsoid", "gmsh"] = "half_ellipsoid"
    r_endo: tuple[Length, Length, Length] = (7e-3, 7e-3, 17e-3)
    r_epi: tuple[Length, Length, Length] = (10e-3, 10e-3, 20e-3)
    resolution: Length = 4e-3
    n_transmural: int | None = None
    file: str | None = None
    name_map: dict[str, str] | None = None
    scale: float = 1e-3
    apex_radius: Length = 10e-3

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "gmsh" and not self.file:
            raise ValueError("geometry.file is required for kind 'gmsh'")
        return self


class MaterialConfig(_Base):
    model: Literal["holzapfel", "mooney", "neohooke"] = "holzapfel"
    a: Pressure = 0.0
    b: float = 0.0
    a_f: Pressure = 0.0
    b_f: float = 0.0
    a_s: Pressure = 0.0
    b_s: float = 0.0
    a_fs: Pressure = 0.0
    b_fs: float = 0.0
    C1: Pressure = 0.0
    C2: Pressure = 0.0
    mu: Pressure = 0.0
    kappa: Pressure = 1.0e6
    eta: Viscosity = 0.0
    rho: Density = 1.0e3
    holzapfel_form: Literal["standard_ho2009", "as_printed"] = "standard_ho2009"
    tension_only: bool = True

    def params(self) -> MaterialParams:
        return MaterialParams(**self.model_dump())


class FiberConfig(_Base):
    kind: Literal["analytic", "rule", "uniform"] = "analytic"
    alpha_endo: float = 60.0
    alpha_epi: float = -60.0


class ActivationConfig(_Base):
    """``sigma0`` is the ODE contractility; ``peak_stress`` instead fixes the
    cycle maximum of ``tau`` and derives ``sigma0`` from it."""

    sigma0: Pressure | None = None
    peak_stress: Pressure | None = None
    alpha_max: Rate = 5.0
    alpha_min: Rate = -30.0
    t_sys: Time = 0.170
    t_dias: Time = 0.484
    gamma_s: Time = 0.005
    regions: list[int | str] | None = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.sigma0 is None) == (self.peak_stress is None):
            raise ValueError("give exactly one of sigma0 and peak_stress")
        return self

    def params(self) -> ActivationParams:
        base = ActivationParams(sigma0=1.0, alpha_max=self.alpha_max, alpha_min=self.alpha_min, t_sys=self.t_sys, t_dias=self.t_dias, gamma_s=self.gamma_s)
        if self.sigma0 is not None:
            return base.with_(sigma0=self.sigma0)
        return base.with_(sigma0=sigma0_for_peak(base, self.peak_stress))


class AtrialPressureConfig(_Base):
    """Constant ``baseline`` plus an optional ``sin^2`` bump on ``[t_on, t_off]``."""

    baseline: Pressure
    amplitude: Pressure = 0.0
    t_on: Time = 0.070
    t_off: Time = 0.140
    period: Time = 1.0

    def curve(self) -> AtrialPressureCurve:
        if self.amplitude == 0.0:
            return AtrialPressureCurve.constant(self.baseline)
        return AtrialPressureCurve.default(self.baseline, self.amplitude, self.t_on, self.t_off, self.period)


class WindkesselStateConfig(_Base):
    p_v: Pressure
    p_p: Pressure
    p_d: Pressure
    q_p: Flow


class WindkesselConfig(_Base):
    L_p: Inertance = 1.3e5
    C_p: Compliance = 7.7e-9
    C_d: Compliance = 8.7e-9
    R_p: Resistance = 7.3e6
    R_d: Resistance = 1.0e8
    p_ref: Pressure = 0.0
    R_min: Resistance = 1.0e6
    R_max: Resistance = 1.0e13
    k_valve: Pressure = 1.0e-3
    initial: WindkesselStateConfig
    p_at: AtrialPressureConfig
    walls: list[str]

    def params(self) -> WindkesselParams:
        keys = ("L_p", "C_p", "C_d", "R_p", "R_d", "p_ref", "R_min", "R_max", "k_valve")
        return WindkesselParams(**{k: getattr(self, k) for k in keys})

    def state(self) -> WindkesselState:
        return WindkesselState(**self.initial.model_dump())


class BoundaryConfig(_Base):
    surface: str
    kind: Literal["pericardial_reference_normal", "pericardial_projection", "omni_spring"]
    k: Stiffness = 0.0
    c: Damping = 0.0


class PrestressConfig(_Base):
    pressures: dict[str, Pressure] = Field(default_factory=dict)
    steps: int = Field(4, ge=1)
    update: Literal["full", "stretch"] = "full"


class TimeConfig(_Base):
    dt: Time = 1e-3
    t_end: Time = 0.6
    beta: float = 0.25
    gamma: float = 0.5
    alpha_f: float = 0.5
    alpha_m: float = 0.5
    theta: float = 1.0


class NewtonConfig(_Base):
    rtol: float = 1e-6
    atol: float = 1e-8
    atol_0d: float = 1e-12
    max_iter: int = 25
    max_halvings: int = 8


class ContourConfig(_Base):
    """Reference contours to compare against, one file per slice."""

    files: list[str]
    cavity_surfaces: list[str]
    slices: list[int] | None = None


class OutputConfig(_Base):
    directory: str = "output"
    vtu_every: int = Field(0, ge=0)
    vtu_format: Literal["ascii", "appended"] = "appended"
    contours: ContourConfig | None = None


class SweepConfig(_Base):
    values: list[Stiffness]
    damping: Damping | None = None
    recalibrate: bool = False

    @model_validator(mode="after")
    def _nonempty(self):
        if not self.values:
            raise ValueError("sweep.values must not be empty")
        return self


class CalibrationConfig(_Base):
    target_esv: Volume
    tol: Volume = 0.5e-6
    bracket: tuple[float, float] = (0.25, 4.0)
    max_iter: int = 20
    group: str = "ventricles"


SCENARIOS = ("custom", "apex", "normal", "ellipsoid-free", "ellipsoid-normal", "ellipsoid-contact", "ellipsoid-benchmark")


class SimulationConfig(_Base):
    name: str = "run"
    scenario: Literal[SCENARIOS] = "custom"
    geometry: GeometryConfig = GeometryConfig()
    materials: dict[str, MaterialConfig]
    fibers: FiberConfig = FiberConfig()
    activation: dict[str, ActivationConfig] = Field(default_factory=dict)
    windkessels: dict[str, WindkesselConfig] = Field(default_factory=dict)
    boundary: list[BoundaryConfig] = Field(default_factory=list)
    prestress: PrestressConfig = PrestressConfig()
    time: TimeConfig = TimeConfig()
    newton: NewtonConfig = NewtonConfig()
    output: OutputConfig = OutputConfig()
    sweep: SweepConfig | None = None
    calibration: CalibrationConfig | None = None

    def with_(self, **kw) -> "SimulationConfig":
        return self.model_copy(update=kw)


# -- presets ---------------------------------------------------------------------------------

_LEFT_WK = {
    "initial": {"p_v": "8.0 mmHg", "p_p": "61.8 mmHg", "p_d": "59.7 mmHg", "q_p": "38.3 ml/s"},
    "p_at": {"baseline": "6.0 mmHg"},
    "walls": ["endocardium_left"],
}
_RIGHT_WK = {
    "initial": {"p_v": "6.0 mmHg", "p_p": "24.0 mmHg", "p_d": "23.2 mmHg", "q_p": "14.9 ml/s"},
    "p_at": {"baseline": "4.0 mmHg"},
    "walls": ["endocardium_right"],
}

#: Named parameter sets. ``paper-table-1`` holds the four-chamber tissue,
#: activation, windkessel and integration constants (a geometry must be
#: supplied); ``ellipsoid-table-5`` is the complete ellipsoid benchmark.
PRESETS = {
    "paper-table-1": {
        "materials": {
            "ventricles": {
                "model": "holzapfel",
                "a": "0.059 kPa", "b": 8.023, "a_f": "18.472 kPa", "b_f": 16.026,
                "a_s": "2.481 kPa", "b_s": 11.120, "a_fs": "0.216 kPa", "b_fs": 11.436,
                "kappa": "1e3 kPa", "eta": "0.1 kPa*s", "rho": 1000.0,
            },
            "atria": {
                "model": "holzapfel",
                "a": "0.059 kPa", "b": 8.023, "a_f": "18.472 kPa", "b_f": 16.026,
                "a_s": "2.481 kPa", "b_s": 11.120, "a_fs": "0.216 kPa", "b_fs": 11.436,
                "kappa": "1e3 kPa", "eta": "0.1 kPa*s", "rho": 1000.0,
            },
            "vessels": {"model": "mooney", "C1": "5.0 kPa", "C2": "0.04 kPa", "kappa": "1e3 kPa", "eta": "0.1 kPa*s", "rho": 1000.0},
            "adipose": {"model": "neohooke", "mu": "1.0 kPa", "kappa": "1e3 kPa", "eta": "0.1 kPa*s", "rho": 1000.0},
        },
        "activation": {
            "ventricles": {"peak_stress": "90.7 kPa", "alpha_max": "5 1/s", "alpha_min": "-30 1/s", "t_sys": "170 ms", "t_dias": "484 ms", "regions": ["ventricles"]},
            "atria": {"peak_stress": "9.72 kPa", "alpha_max": "5 1/s", "alpha_min": "-30 1/s", "t_sys": "70 ms", "t_dias": "140 ms", "regions": ["atria"]},
        },
        "windkessels": {"left": _LEFT_WK, "right": _RIGHT_WK},
        "boundary": [
            {"surface": "vessels", "kind": "omni_spring", "k": "2e3 kPa/mm", "c": "1e-2 kPa*s/mm"},
            {"surface": "epicardium", "kind": "pericardial_reference_normal", "k": "0.2 kPa/mm", "c": "5e-3 kPa*s/mm"},
        ],
        "prestress": {"pressures": {"left": "8.0 mmHg", "right": "6.0 mmHg"}},
        "time": {"dt": "1 ms", "t_end": "1000 ms", "beta": 0.25, "gamma": 0.5, "alpha_f": 0.5, "alpha_m": 0.5, "theta": 1.0},
    },
    "ellipsoid-table-5": {
        "scenario": "ellipsoid-normal",
        "geometry": {"kind": "half_ellipsoid", "r_endo": ["7 mm", "7 mm", "17 mm"], "r_epi": ["10 mm", "10 mm", "20 mm"], "resolution": "4 mm", "n_transmural": 2},
        "materials": {"default": {"model": "mooney", "C1": "10 kPa", "C2": "40 Pa", "kappa": "1e4 kPa", "eta": "10 Pa*s", "rho": 1000.0}},
        "fibers": {"kind": "analytic", "alpha_endo": 60.0, "alpha_epi": -60.0},
        "activation": {"ventricles": {"peak_stress": "185 kPa", "t_sys": "50 ms", "t_dias": "350 ms"}},
        "windkessels": {"left": _LEFT_WK},
        "boundary": [
            {"surface": "base", "kind": "omni_spring", "k": "1 kPa/mm", "c": 0.0},
            {"surface": "epicardium", "kind": "pericardial_reference_normal", "k": "20 kPa/mm", "c": "5e-3 kPa*s/mm"},
        ],
        "prestress": {"pressures": {"left": "8.0 mmHg"}, "steps": 4},
        "time": {"dt": "2 ms", "t_end": "400 ms"},
    },
}


def deep_merge(base, over):
    """Recursive dict merge; lists and scalars in ``over`` replace those in ``base``."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def expand_presets(raw: dict) -> dict:
    raw = dict(raw)
    name = raw.pop("preset", None)
    if name is None:
        return raw
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return deep_merge(PRESETS[name], raw)


class ConfigError(ValueError):
    pass


def config_from_dict(raw: dict) -> SimulationConfig:
    try:
        raw = expand_presets(raw)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    try:
        return SimulationConfig.model_validate(raw)
    except ValidationError as err:
        lines = []
        for e in err.errors():
            path = ".".join(str(p) for p in e["loc"]) or "<root>"
            lines.append(f"{path}: {e['msg']}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines)) from None


def parse_config(path) -> SimulationConfig:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: not valid YAML ({err})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def preset_config(name: str, /, **overrides) -> SimulationConfig:
    return config_from_dict({"preset": name, **overrides})


def dump_config(cfg: SimulationConfig, path=None) -> str:
    """YAML text of ``cfg`` in SI numbers; also written to ``path`` when given."""
    text = yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
