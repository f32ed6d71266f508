import numpy as np
import pytest

from pericard.boundary import OmniSpring, ProjectionSpring, ReferenceNormalSpring
from pericard.config import preset_config
from pericard.output import read_time_series
from pericard.scenarios import (
    APEX_K,
    NORMAL_K,
    SWEEP_KP,
    CalibrationError,
    Scenario,
    build_simulation,
    calibrate_contractility,
    case_apex,
    case_normal,
    ellipsoid_benchmark,
    ellipsoid_case,
    run_scenario,
    scale_contractility,
    sweep_kp,
)
from pericard.windkessel import ML


@pytest.fixture(scope="module")
def cfg():
    return preset_config("ellipsoid-table-5", geometry={"n_transmural": 1})


def _kinds(scn):
    return {b.surface: (b.kind, b.k, b.c) for b in scn.config.boundary}


def test_ellipsoid_cases_share_everything_but_the_epicardium(cfg):
    free, normal, contact = ellipsoid_benchmark(cfg)
    assert "epicardium" not in _kinds(free)
    assert _kinds(normal)["epicardium"][0] == "pericardial_reference_normal"
    assert _kinds(contact)["epicardium"][0] == "pericardial_projection"
    assert _kinds(normal)["epicardium"][1:] == _kinds(contact)["epicardium"][1:]
    for s in (free, normal, contact):
        assert _kinds(s)["base"] == ("omni_spring", 1e6, 0.0)
        assert s.config.materials == cfg.materials
        assert s.config.activation == cfg.activation
    with pytest.raises(ValueError):
        ellipsoid_case("loose", cfg)


def test_case_apex_and_normal(cfg):
    a = case_apex(cfg)
    assert _kinds(a)["apex"][:2] == ("omni_spring", APEX_K)
    assert "epicardium" not in _kinds(a)
    n = case_normal(cfg)
    assert _kinds(n)["epicardium"][:2] == ("pericardial_reference_normal", NORMAL_K)
    sim = build_simulation(a.config)
    assert isinstance(sim.springs["apex"], OmniSpring)
    assert len(sim.mesh.surface("apex")) > 0


def test_build_simulation_wires_conditions(cfg):
    sim = build_simulation(ellipsoid_case("contact", cfg).config)
    assert isinstance(sim.springs["epicardium"], ProjectionSpring)
    assert sim.model.cavities == ["left"]
    assert set(sim.solid.pressure_loads) == {"left"}
    sim = build_simulation(ellipsoid_case("normal", cfg).config)
    assert isinstance(sim.springs["epicardium"], ReferenceNormalSpring)


def test_sweep_members(cfg):
    base = ellipsoid_case("normal", cfg)
    members = sweep_kp(base)
    assert len(members) == len(SWEEP_KP) == 18
    ks = [_kinds(m)["epicardium"][1] for m in members]
    np.testing.assert_allclose(ks, np.array(SWEEP_KP) * 1e6)
    assert SWEEP_KP[0] == 0.1 and SWEEP_KP[-1] == 5.0
    # damping is held at the base value
    assert {_kinds(m)["epicardium"][2] for m in members} == {_kinds(base)["epicardium"][2]}
    assert len({m.name for m in members}) == 18
    with pytest.raises(ValueError):
        sweep_kp(base, [])


def test_scale_contractility(cfg):
    s = scale_contractility(cfg, "ventricles", 2.0)
    assert s.activation["ventricles"].params().sigma0 == pytest.approx(2 * cfg.activation["ventricles"].params().sigma0)


def _surrogate(v0=60 * ML, slope=30 * ML):
    """ESV falls linearly-then-saturating with the contractility scale."""
    calls = []

    def evaluate(c):
        s0 = c.activation["ventricles"].params().sigma0
        x = s0 / 243.35e3
        calls.append(x)
        esv = v0 - slope * np.tanh(x)
        return esv, 0.76 * s0, s0, None

    return evaluate, calls


def test_calibration_on_target_needs_no_iteration(cfg):
    ev, calls = _surrogate()
    target = 60 * ML - 30 * ML * np.tanh(1.0)
    res = calibrate_contractility(Scenario("s", cfg), target, tol=1e-3 * ML, evaluate=ev)
    assert res.iterations == 0 and len(calls) == 1


def test_calibration_converges(cfg):
    ev, _ = _surrogate()
    target = 60 * ML - 30 * ML * np.tanh(1.7)
    res = calibrate_contractility(Scenario("s", cfg), target, tol=1e-4 * ML, evaluate=ev)
    assert abs(res.esv - target) < 1e-4 * ML
    assert res.sigma0 / 243.35e3 == pytest.approx(1.7, rel=1e-2)
    # samples ordered by scale are non-increasing in ESV
    v = [e for _, e in sorted(res.samples)]
    assert all(b <= a for a, b in zip(v, v[1:]))


def test_calibration_errors(cfg):
    ev, _ = _surrogate()
    with pytest.raises(CalibrationError, match="outside the bracket"):
        calibrate_contractility(Scenario("s", cfg), 1 * ML, evaluate=ev)

    def bumpy(c):
        x = c.activation["ventricles"].params().sigma0 / 243.35e3
        return (50 + 5 * np.sin(5 * x)) * ML, 0.0, 0.0, None

    with pytest.raises(CalibrationError, match="not monotone"):
        calibrate_contractility(Scenario("s", cfg), 40 * ML, evaluate=bumpy)


def test_short_run_writes_outputs(tmp_path, cfg):
    c = cfg.with_(time=cfg.time.model_copy(update={"t_end": 0.006}), output=cfg.output.model_copy(update={"vtu_every": 2}))
    res = run_scenario(ellipsoid_case("normal", c), tmp_path)
    ts = read_time_series(tmp_path / "timeseries.csv")
    assert len(ts["t"]) == 4
    np.testing.assert_allclose(ts["t"], [0, 0.002, 0.004, 0.006], atol=1e-15)
    for col in ("V_left_ml", "p_v_left_mmHg", "tmean_epicardium_kPa", "V_heart_ml", "twist_deg"):
        assert col in ts
    assert ts["p_v_left_mmHg"][0] == pytest.approx(8.0)
    assert (tmp_path / "convergence.csv").exists() and (tmp_path / "config.yaml").exists()
    assert (tmp_path / "snapshots.pvd").exists() and len(list((tmp_path / "snapshots").glob("*.vtu"))) == 2
    assert res.prestress.residual <= res.prestress.tolerance
    # the prestressed state is at rest: the first steps barely move
    assert ts["d_max_mm"][1] < 0.05
