"""Runnable experiments: model assembly from a config, the time loop with
metric recording, boundary-condition cases, the ellipsoid benchmark, the
pericardial-stiffness sweep and contractility calibration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from dataclasses import replace as dc_replace
from pathlib import Path

import numpy as np

from . import metrics
from .boundary import BoundarySpec, OmniSpring, ProjectionSpring, ReferenceNormalSpring, apex_patch, build_condition
from .config import BoundaryConfig, SimulationConfig, dump_config, preset_config
from .fibers import analytic_ellipsoid_fibers, build_fibers, uniform_fibers
from .mechanics import SolidModel
from .mesh import Mesh, MeshError, cavity_volume, generate_ellipsoid_shell, generate_half_ellipsoid, load_gmsh
from .output import TimeSeriesWriter, write_pvd, write_vtu
from .solver import ConvergenceLog, CoupledModel, NewtonOptions, TimeIntegrationParams, prestress, run_transient
from .windkessel import ML, MMHG, Windkessel

log = logging.getLogger(__name__)

KPA = 1e3
KPA_PER_MM = 1e6  # Pa/m
KPA_S_PER_MM = 1e6  # Pa s/m

#: boundary-condition constants of the four-chamber cases
APEX_K = 1.0e3 * KPA_PER_MM
APEX_C = 1.0e-2 * KPA_S_PER_MM
NORMAL_K = 0.2 * KPA_PER_MM
NORMAL_C = 5.0e-3 * KPA_S_PER_MM
ELLIPSOID_K = 20.0 * KPA_PER_MM

#: stiffness grid of the sweep, kPa/mm
SWEEP_KP = tuple(np.round(np.r_[np.arange(1, 11) * 0.1, np.arange(3, 11) * 0.5], 10))

PERICARDIAL_KINDS = ("pericardial_reference_normal", "pericardial_projection")


@dataclass
class Scenario:
    name: str
    config: SimulationConfig


# -- model assembly ---------------------------------------------------------------------------


def build_mesh(cfg: SimulationConfig) -> Mesh:
    g = cfg.geometry
    if g.kind == "half_ellipsoid":
        mesh = generate_half_ellipsoid(g.r_endo, g.r_epi, g.resolution, n_transmural=g.n_transmural)
    elif g.kind == "closed_ellipsoid":
        mesh = generate_ellipsoid_shell(g.r_endo, g.r_epi, g.resolution, np.pi, n_transmural=g.n_transmural)
    else:
        mesh = load_gmsh(g.file, g.name_map, scale=g.scale)
    wanted = {b.surface for b in cfg.boundary}
    if "apex" in wanted and "apex" not in mesh.surfaces:
        mesh = apex_patch(mesh, g.apex_radius)
    missing = sorted(s for s in wanted if s not in mesh.surfaces)
    for wk in cfg.windkessels.values():
        missing += [s for s in wk.walls if s not in mesh.surfaces]
    if missing:
        raise MeshError(f"config refers to surfaces missing from the geometry: {missing}")
    return mesh


def _region_ids(mesh: Mesh, key):
    if isinstance(key, int) or (isinstance(key, str) and key.lstrip("-").isdigit()):
        return [int(key)]
    by_name = {}
    for rid, name in mesh.region_names.items():
        by_name.setdefault(name, []).append(int(rid))
    if key not in by_name:
        raise MeshError(f"unknown region {key!r}; mesh regions are {sorted(by_name) or sorted(set(mesh.regions.tolist()))}")
    return by_name[key]


def _materials(mesh: Mesh, cfg: SimulationConfig):
    out = {}
    default = cfg.materials.get("default")
    for key, mc in cfg.materials.items():
        if key == "default":
            continue
        for r in _region_ids(mesh, key):
            out[r] = mc.params()
    for r in np.unique(mesh.regions):
        if int(r) not in out:
            if default is None:
                raise MeshError(f"no material for region {int(r)} and no 'default' material block")
            out[int(r)] = default.params()
    return out


def _fibers(mesh: Mesh, cfg: SimulationConfig):
    f = cfg.fibers
    if f.kind == "analytic":
        return analytic_ellipsoid_fibers(mesh, f.alpha_endo, f.alpha_epi)
    if f.kind == "rule":
        return build_fibers(mesh, f.alpha_endo, f.alpha_epi)
    return uniform_fibers(mesh)


@dataclass
class Simulation:
    """Everything a run needs, built from one config."""

    config: SimulationConfig
    mesh: Mesh
    solid: SolidModel
    model: CoupledModel
    springs: dict  # surface -> condition
    activation_groups: dict  # group name -> (ActivationParams, region ids)

    def prestress(self):
        loads = self.config.prestress.pressures
        return prestress(self.solid, loads, steps=self.config.prestress.steps, opts=self.model.newton, update=self.config.prestress.update)


def build_simulation(cfg: SimulationConfig) -> Simulation:
    mesh = build_mesh(cfg)
    materials = _materials(mesh, cfg)
    fibers = _fibers(mesh, cfg)
    springs = {}
    for b in cfg.boundary:
        if b.k == 0.0 and b.c == 0.0:
            continue  # traction-free
        springs[b.surface] = build_condition(mesh, BoundarySpec(b.surface, b.kind, b.k, b.c))
    pressures = {cav: list(wk.walls) for cav, wk in cfg.windkessels.items()}
    for cav in cfg.prestress.pressures:
        if cav not in pressures:
            raise ValueError(f"prestress cavity {cav!r} has no windkessel (and hence no loaded wall)")

    groups = {}
    active = set()
    for name, ac in cfg.activation.items():
        regions = sorted({r for key in ac.regions for r in _region_ids(mesh, key)}) if ac.regions else sorted(int(r) for r in np.unique(mesh.regions))
        groups[name] = (ac.params(), regions)
        active.update(regions)
    solid = SolidModel(mesh, materials, fibers, list(springs.values()), pressures, active_regions=sorted(active) if active else [])
    act = {r: params for params, regions in groups.values() for r in regions}
    wks = {cav: Windkessel(cav, w.params(), w.p_at.curve(), w.state()) for cav, w in cfg.windkessels.items()}
    t = cfg.time
    model = CoupledModel(
        solid,
        wks,
        act or None,
        time=TimeIntegrationParams(dt=t.dt, beta=t.beta, gamma=t.gamma, alpha_f=t.alpha_f, alpha_m=t.alpha_m, theta=t.theta),
        newton=NewtonOptions(**cfg.newton.model_dump()),
    )
    return Simulation(cfg, mesh, solid, model, springs, groups)


# -- recording ---------------------------------------------------------------------------------


def _heart_cavity(mesh: Mesh):
    """Closed outer surface (epicardium, base and valve closures) as an extra cavity, if it exists."""
    outer = [s for s in ("epicardium", "apex", "base") if s in mesh.surfaces]
    if "epicardium" not in outer:
        return None
    parts = tuple((s, 1) for s in outer) + tuple((c, 1) for c in sorted(mesh.closures))
    m = dc_replace(mesh, cavities={**mesh.cavities, "pericardium": parts})
    try:
        cavity_volume(m, "pericardium")
    except MeshError:
        return None
    return m


class Recorder:
    """Computes one time-series row per accepted state."""

    def __init__(self, sim: Simulation, contours=None):
        self.sim = sim
        mesh = sim.mesh
        self.cavities = sorted(sim.model.windkessels)
        axis = np.asarray(mesh.metadata.get("long_axis", [0.0, 0.0, 1.0]), dtype=float)
        self.axis = axis / np.linalg.norm(axis)
        solid_nodes = mesh.solid_nodes
        self.valve_nodes = {}
        for cav in self.cavities:
            closures = [s for s, _ in mesh.cavities.get(cav, ()) if s in mesh.closures]
            if closures:
                rim = np.intersect1d(np.unique(np.concatenate([mesh.surface_nodes(c) for c in closures])), solid_nodes)
                if len(rim):
                    self.valve_nodes[cav] = rim
        self.heart = _heart_cavity(mesh)
        self.frame = None
        if mesh.metadata.get("kind") == "half_ellipsoid":
            epi = [s for s in ("epicardium", "apex") if s in mesh.surfaces]
            self.frame = metrics.EllipsoidFrame.from_mesh(mesh, epi=epi)
        self.contours = contours  # (reference dict, surfaces, slices)
        self.columns = self._columns()
        self.rows = []
        self.min_volume = np.inf
        self.end_systole = None
        self.max_tau = 0.0

    def _columns(self):
        cols = ["step", "t"]
        for c in self.cavities:
            cols += [f"V_{c}_ml", f"p_v_{c}_mmHg", f"p_p_{c}_mmHg", f"p_d_{c}_mmHg", f"q_p_{c}_ml_s", f"p_at_{c}_mmHg"]
            if c in self.valve_nodes:
                cols.append(f"avpd_{c}_mm")
        for s, cond in self.sim.springs.items():
            if isinstance(cond, OmniSpring):
                cols += [f"tmean_{s}_x_kPa", f"tmean_{s}_y_kPa", f"tmean_{s}_z_kPa", f"tmean_{s}_kPa"]
            else:
                cols.append(f"tmean_{s}_kPa")
        if self.heart is not None:
            cols.append("V_heart_ml")
        if self.frame is not None:
            cols += ["apex_translation_mm", "shortening_mm", "twist_deg"]
        if self.contours is not None:
            cols.append("dice_error")
        cols += ["tau_max_kPa", "d_max_mm"]
        return cols

    def __call__(self, state, report=None):
        sim = self.sim
        mesh = sim.mesh
        d3 = state.d.reshape(-1, 3)
        v3 = state.v.reshape(-1, 3)
        row = {"step": state.step, "t": state.t}
        for c in self.cavities:
            p = state.wk[c]
            row[f"V_{c}_ml"] = state.volumes[c] / ML
            row[f"p_v_{c}_mmHg"] = p[0] / MMHG
            row[f"p_p_{c}_mmHg"] = p[1] / MMHG
            row[f"p_d_{c}_mmHg"] = p[2] / MMHG
            row[f"q_p_{c}_ml_s"] = p[3] / ML
            row[f"p_at_{c}_mmHg"] = float(sim.model.windkessels[c].p_at(state.t)) / MMHG
            if c in self.valve_nodes:
                row[f"avpd_{c}_mm"] = metrics.avpd(self.valve_nodes[c], d3, self.axis)
        for s, cond in sim.springs.items():
            if isinstance(cond, OmniSpring):
                t = metrics.mean_apical_stress(cond, d3, v3) / KPA
                row[f"tmean_{s}_x_kPa"], row[f"tmean_{s}_y_kPa"], row[f"tmean_{s}_z_kPa"] = (float(x) for x in t)
                row[f"tmean_{s}_kPa"] = float(np.linalg.norm(t))
            else:
                row[f"tmean_{s}_kPa"] = metrics.mean_pericardial_stress(cond, d3, v3) / KPA
        if self.heart is not None:
            row["V_heart_ml"] = cavity_volume(self.heart, "pericardium", state.d) / ML
        if self.frame is not None:
            X = mesh.nodes
            row["apex_translation_mm"] = 1e3 * metrics.apex_translation(self.frame, d3)
            row["shortening_mm"] = 1e3 * metrics.base_apex_shortening(self.frame, X, d3)
            row["twist_deg"] = float(np.degrees(metrics.epicardial_twist(self.frame, X, d3)))
        if self.contours is not None:
            ref, surfaces, slices = self.contours
            sim_c = {s: metrics.slice_simulation(mesh, d3, ref[s].origin, ref[s].normal, surfaces, s) for s in slices}
            row["dice_error"] = metrics.dice_error(ref, sim_c, slices)
        tau_max = float(state.tau.max()) if state.tau.size else 0.0
        row["tau_max_kPa"] = tau_max / KPA
        row["d_max_mm"] = 1e3 * float(np.abs(d3).max())
        self.max_tau = max(self.max_tau, tau_max)
        if self.cavities:
            vol = state.volumes[self.cavities[0]]
            if vol < self.min_volume:
                self.min_volume = vol
                self.end_systole = state.copy()
        self.rows.append(row)
        return row

    def series(self):
        return {c: np.array([r[c] for r in self.rows], dtype=float) for c in self.columns}


@dataclass
class RunResult:
    name: str
    series: dict
    final: object
    end_systole: object
    max_tau: float
    prestress: object
    simulation: Simulation
    convergence: ConvergenceLog
    sigma0: dict = field(default_factory=dict)

    @property
    def esv(self):
        """End-systolic (minimum) volume of the first cavity [m^3]."""
        cav = sorted(self.simulation.model.windkessels)[0]
        return float(self.series[f"V_{cav}_ml"].min()) * ML


def _load_contours(cfg: SimulationConfig):
    cc = cfg.output.contours
    if cc is None:
        return None
    ref = {}
    for f in cc.files:
        c = metrics.read_contour(f)
        ref[c.slice_id] = c
    slices = cc.slices or sorted(ref)
    return ref, list(cc.cavity_surfaces), slices


def run_scenario(scenario: Scenario, outdir=None) -> RunResult:
    """Prestress, then integrate to ``time.t_end`` recording metrics.

    With ``outdir`` the run writes ``timeseries.csv``, ``convergence.csv``,
    the resolved ``config.yaml`` and, if ``output.vtu_every > 0``, VTU
    snapshots with a ``snapshots.pvd`` index.
    """
    cfg = scenario.config
    sim = build_simulation(cfg)
    pre = sim.prestress()
    state = sim.model.initial_state()
    rec = Recorder(sim, _load_contours(cfg))
    conv = ConvergenceLog()
    writer = None
    snaps = []
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, outdir / "config.yaml")
        writer = TimeSeriesWriter(outdir / "timeseries.csv", rec.columns)
        if cfg.output.vtu_every:
            (outdir / "snapshots").mkdir(exist_ok=True)

    def record(st):
        row = rec(st)
        if writer is not None:
            writer.write(row)
            every = cfg.output.vtu_every
            if every and st.step % every == 0:
                name = f"snapshots/state_{st.step:05d}.vtu"
                write_snapshot(outdir / name, sim, st, cfg.output.vtu_format)
                snaps.append((st.t, name))

    try:
        final = run_transient(sim.model, state, cfg.time.t_end, record=record, conv_log=conv)
    finally:
        if writer is not None:
            writer.close()
            conv.write(outdir / "convergence.csv")
            if snaps:
                write_pvd(outdir / "snapshots.pvd", snaps)
    sigma0 = {name: params.sigma0 for name, (params, _) in sim.activation_groups.items()}
    return RunResult(scenario.name, rec.series(), final, rec.end_systole, rec.max_tau, pre, sim, conv, sigma0)


def write_snapshot(path, sim: Simulation, state, fmt="appended"):
    """Displacement, velocity, spring forces (point data), mean ``tau`` and region (cell data)."""
    mesh = sim.mesh
    d = mesh.expand(state.d)
    point = {"velocity": mesh.expand(state.v)}
    d3, v3 = state.d.reshape(-1, 3), state.v.reshape(-1, 3)
    for s, cond in sim.springs.items():
        c = cond.contribution(d3, v3, tangent=False)
        f = np.zeros(3 * mesh.n_nodes)
        np.add.at(f, c.dofs.ravel(), -c.force.ravel())
        point[f"boundary_force_{s}"] = f.reshape(-1, 3)
    cell = {"tau": state.tau.mean(axis=1), "region": mesh.regions.astype(np.int64)}
    write_vtu(path, mesh, point, cell, fmt=fmt, displacement=d)


# -- cases ---------------------------------------------------------------------------------------


def _without_epicardial(boundary, surfaces=("epicardium", "apex")):
    return [b for b in boundary if b.surface not in surfaces]


def case_apex(cfg: SimulationConfig, k=APEX_K, c=APEX_C) -> Scenario:
    """Omni-directional springs on the apical patch, free epicardium elsewhere."""
    bcs = _without_epicardial(cfg.boundary) + [BoundaryConfig(surface="apex", kind="omni_spring", k=k, c=c)]
    return Scenario("apex", cfg.with_(boundary=bcs, scenario="apex"))


def case_normal(cfg: SimulationConfig, k=NORMAL_K, c=NORMAL_C) -> Scenario:
    """Pericardial springs along the reference normal on the whole epicardium."""
    bcs = _without_epicardial(cfg.boundary) + [BoundaryConfig(surface="epicardium", kind="pericardial_reference_normal", k=k, c=c)]
    return Scenario("normal", cfg.with_(boundary=bcs, scenario="normal"))


def ellipsoid_case(kind: str, cfg: SimulationConfig | None = None) -> Scenario:
    """One of the ellipsoid cases ``free``, ``normal`` or ``contact``."""
    cfg = cfg or preset_config("ellipsoid-table-5")
    epi = next((b for b in cfg.boundary if b.surface == "epicardium"), None)
    k = epi.k if epi is not None and epi.k > 0 else ELLIPSOID_K
    c = epi.c if epi is not None else 0.0
    rest = _without_epicardial(cfg.boundary)
    if kind == "free":
        bcs = rest
    elif kind == "normal":
        bcs = rest + [BoundaryConfig(surface="epicardium", kind="pericardial_reference_normal", k=k, c=c)]
    elif kind == "contact":
        bcs = rest + [BoundaryConfig(surface="epicardium", kind="pericardial_projection", k=k, c=c)]
    else:
        raise ValueError(f"unknown ellipsoid case {kind!r}")
    return Scenario(kind.upper(), cfg.with_(boundary=bcs, scenario=f"ellipsoid-{kind}", name=kind.upper()))


def ellipsoid_benchmark(cfg: SimulationConfig | None = None):
    """FREE, NORMAL and CONTACT with shared material and contractility."""
    return [ellipsoid_case(k, cfg) for k in ("free", "normal", "contact")]


def sweep_kp(base: Scenario, values=None, damping=None) -> list:
    """One scenario per pericardial stiffness [Pa/m] on the epicardium."""
    values = [v * KPA_PER_MM for v in SWEEP_KP] if values is None else list(values)
    if not values:
        raise ValueError("sweep needs at least one stiffness value")
    cfg = base.config
    epi = [b for b in cfg.boundary if b.surface == "epicardium" and b.kind in PERICARDIAL_KINDS]
    kind = epi[0].kind if epi else "pericardial_reference_normal"
    c = damping if damping is not None else (epi[0].c if epi else NORMAL_C)
    out = []
    for k in values:
        bcs = _without_epicardial(cfg.boundary, ("epicardium",)) + [BoundaryConfig(surface="epicardium", kind=kind, k=k, c=c)]
        name = f"{base.name}_kp{k / KPA_PER_MM:g}"
        out.append(Scenario(name, cfg.with_(boundary=bcs, name=name)))
    return out


def sweep_summary(result: RunResult, k):
    """Summary quantities of one sweep member."""
    s = result.series
    stress = s.get("tmean_epicardium_kPa")
    heart = s.get("V_heart_ml")
    return {
        "k_p_kPa_mm": k / KPA_PER_MM,
        "sigma0_kPa": max(result.sigma0.values(), default=0.0) / KPA,
        "max_tau_kPa": result.max_tau / KPA,
        "max_mean_contact_stress_kPa": float(stress.max()) if stress is not None else 0.0,
        "pericardial_volume_change_ml": float(heart.max() - heart.min()) if heart is not None else 0.0,
        "esv_ml": result.esv / ML,
    }


# -- contractility calibration --------------------------------------------------------------------


class CalibrationError(RuntimeError):
    pass


@dataclass
class CalibrationResult:
    sigma0: float
    max_tau: float
    esv: float
    iterations: int
    samples: list  # (scale, esv) in evaluation order
    result: RunResult | None = None


def scale_contractility(cfg: SimulationConfig, group: str, factor: float) -> SimulationConfig:
    ac = cfg.activation[group]
    upd = {"sigma0": ac.sigma0 * factor} if ac.sigma0 is not None else {"peak_stress": ac.peak_stress * factor}
    return cfg.with_(activation={**cfg.activation, group: ac.model_copy(update=upd)})


def calibrate_contractility(scenario: Scenario, target_esv, tol=0.5e-6, bracket=(0.25, 4.0), max_iter=20, group=None, evaluate=None) -> CalibrationResult:
    """Scale the contractility of ``group`` until the end-systolic volume hits ``target_esv``.

    The end-systolic volume falls with contractility. The search starts at
    the configured value, brackets the target with the scale factors in
    ``bracket`` and refines by regula falsi with a bisection safeguard.
    Every new sample is checked against monotonicity.

    ``evaluate(config) -> (esv, max_tau, sigma0, result)`` defaults to a full
    run; tests pass cheap surrogates.
    """
    cfg = scenario.config
    group = group or next(iter(cfg.activation))
    if evaluate is None:

        def evaluate(c):
            r = run_scenario(Scenario(scenario.name, c))
            return r.esv, r.max_tau, r.sigma0[group], r

    samples = []
    cache = {}

    def f(scale):
        if scale not in cache:
            cache[scale] = evaluate(scale_contractility(cfg, group, scale))
            samples.append((scale, cache[scale][0]))
            ordered = sorted(samples)
            vols = [v for _, v in ordered]
            if any(b > a + 1e-3 * tol for a, b in zip(vols, vols[1:])):
                raise CalibrationError(f"end-systolic volume is not monotone in contractility: samples {ordered}")
        return cache[scale]

    def done(scale, it):
        esv, tau, s0, res = f(scale)
        return CalibrationResult(s0, tau, esv, it, list(samples), res)

    v1 = f(1.0)[0]
    if abs(v1 - target_esv) < tol:
        return done(1.0, 0)
    lo_s, hi_s = bracket
    lo_s, hi_s = (lo_s, 1.0) if v1 < target_esv else (1.0, hi_s)
    v_lo, v_hi = f(lo_s)[0], f(hi_s)[0]
    if not (v_hi <= target_esv <= v_lo):
        raise CalibrationError(
            f"target {target_esv / ML:.3f} ml outside the bracket: scale {lo_s:g} -> {v_lo / ML:.3f} ml, scale {hi_s:g} -> {v_hi / ML:.3f} ml"
        )
    it = 0
    side = 0
    while it < max_iter:
        it += 1
        # regula falsi (Illinois) on V(s) - target
        g_lo, g_hi = v_lo - target_esv, v_hi - target_esv
        s = hi_s - g_hi * (hi_s - lo_s) / (g_hi - g_lo) if g_hi != g_lo else 0.5 * (lo_s + hi_s)
        if not lo_s < s < hi_s:
            s = 0.5 * (lo_s + hi_s)
        v = f(s)[0]
        if abs(v - target_esv) < tol:
            return done(s, it)
        if v > target_esv:
            lo_s, v_lo = s, v
            if side == -1:
                v_hi = target_esv + 0.5 * (v_hi - target_esv)
            side = -1
        else:
            hi_s, v_hi = s, v
            if side == 1:
                v_lo = target_esv + 0.5 * (v_lo - target_esv)
            side = 1
    raise CalibrationError(f"no calibration within {max_iter} iterations; samples {sorted(samples)}")
