import numpy as np
import pytest

from _oracles import sdof_newmark
from pericard.boundary import OmniSpring, ReferenceNormalSpring
from pericard.config import preset_config
from pericard.fibers import analytic_ellipsoid_fibers
from pericard.materials import MaterialParams
from pericard.mechanics import SolidModel
from pericard.elements import MASS_TET_RULE
from pericard.mesh import generate_box, generate_ellipsoid_shell, volume_geometry
from pericard.scenarios import build_simulation
from pericard.solver import (
    ConvergenceError,
    ConvergenceLog,
    CoupledModel,
    NewtonOptions,
    TimeIntegrationParams,
    generalized_alpha_combine,
    load_checkpoint,
    newmark_update,
    prestress,
    run_transient,
    save_checkpoint,
    static_solve,
)
from pericard.windkessel import MMHG

MOONEY = MaterialParams("mooney", C1=10e3, C2=40.0, kappa=1e7, rho=1000.0, eta=10.0)


# -- time stepping on a scalar oscillator -------------------------------------------------------


def sdof_package(omega, dt, n_steps, beta=0.25, gamma=0.5, alpha_m=0.5, alpha_f=0.5):
    """Scalar oscillator stepped with the package's Newmark and alpha helpers.

    The residual is linear in the new displacement, so two evaluations
    give the exact root.
    """
    x, v = 1.0, 0.0
    a = -(omega**2) * x
    out = [(x, v)]

    def residual(x1):
        _, a1 = newmark_update(x1, x, v, a, dt, beta, gamma)
        return float(generalized_alpha_combine(a1, a, alpha_m) + omega**2 * generalized_alpha_combine(x1, x, alpha_f))

    for _ in range(n_steps):
        r0, r1 = residual(0.0), residual(1.0)
        x1 = -r0 / (r1 - r0)
        v1, a1 = newmark_update(x1, x, v, a, dt, beta, gamma)
        x, v, a = x1, float(v1), float(a1)
        out.append((x, v))
    return np.array(out)


def _period(xs, dt):
    """Mean period from linearly interpolated upward zero crossings."""
    i = np.nonzero((xs[:-1] < 0) & (xs[1:] >= 0))[0]
    tc = (i + xs[i] / (xs[i] - xs[i + 1])) * dt
    return float(np.mean(np.diff(tc)))


def test_sdof_matches_independent_oscillator():
    omega, dt = 2 * np.pi, 0.01
    xv = sdof_package(omega, dt, 500)
    np.testing.assert_allclose(xv[:, 0], sdof_newmark(omega, dt, 500), atol=1e-12)


def test_sdof_energy_conserved_over_100_cycles():
    omega = 2 * np.pi
    dt = 1 / 40
    xv = sdof_package(omega, dt, 100 * 40)
    energy = 0.5 * xv[:, 1] ** 2 + 0.5 * omega**2 * xv[:, 0] ** 2
    assert np.abs(energy / energy[0] - 1).max() < 1e-6


def test_sdof_period_error_second_order():
    omega = 2 * np.pi
    errs = []
    dts = [1 / 20, 1 / 40, 1 / 80]
    for dt in dts:
        xv = sdof_package(omega, dt, int(round(100 / dt)))
        errs.append(abs(_period(xv[:, 0], dt) - 1.0))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders > 1.9), orders
    # the trapezoidal rule's discrete frequency
    dt = dts[-1]
    exact = 2 * np.pi / (2 * np.arctan(omega * dt / 2) / dt)
    xv = sdof_package(omega, dt, int(round(100 / dt)))
    assert _period(xv[:, 0], dt) == pytest.approx(exact, rel=1e-6)


def test_newmark_update_exact_for_quadratic_motion():
    # d = t^2 has v = 2t, a = 2 for any beta, gamma
    dt, t0 = 0.1, 0.3
    for beta, gamma in [(0.25, 0.5), (0.3, 0.6)]:
        v1, a1 = newmark_update((t0 + dt) ** 2, t0**2, 2 * t0, 2.0, dt, beta, gamma)
        assert v1 == pytest.approx(2 * (t0 + dt), rel=1e-12)
        assert a1 == pytest.approx(2.0, rel=1e-10)


def test_alpha_combine():
    q1, q0 = np.array([1.0, 4.0]), np.array([3.0, 0.0])
    np.testing.assert_allclose(generalized_alpha_combine(q1, q0, 0.5), [2.0, 2.0])
    np.testing.assert_allclose(generalized_alpha_combine(q1, q0, 0.0), q1)


def test_time_params_validation():
    with pytest.raises(ValueError):
        TimeIntegrationParams(beta=0.0)
    with pytest.raises(ValueError):
        TimeIntegrationParams(alpha_f=1.0)
    with pytest.raises(ValueError):
        TimeIntegrationParams(dt=-1.0)


# -- solid model ------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def solid(ellipsoid_mesh):
    m = ellipsoid_mesh
    springs = [OmniSpring(m, "base", 1e6, 0.0), ReferenceNormalSpring(m, "epicardium", 2e7, 5e3)]
    return SolidModel(m, MOONEY, analytic_ellipsoid_fibers(m, 60, -60), springs, {"left": ["endocardium_left"]})


def test_mass_matrix_total_mass(solid):
    M = solid.mass_matrix()
    ones = np.zeros(solid.n_dof)
    ones[0::3] = 1.0
    # curved elements: compare with the volume under the mass rule
    vol = volume_geometry(solid.mesh, MASS_TET_RULE).dV.sum()
    assert ones @ (M @ ones) == pytest.approx(1000.0 * vol, rel=1e-12)
    assert solid.kinetic_energy(ones) == pytest.approx(500.0 * vol, rel=1e-12)


def test_assembled_tangent_matches_fd(solid, rng):
    n = solid.n_dof
    d = 2e-5 * rng.normal(size=n)
    v = 1e-2 * rng.normal(size=n)
    tau = 1e4 * rng.uniform(size=solid.geo.dV.shape)
    p = {"left": 1e3}
    w = 1e-5 * rng.normal(size=n)
    h = 1e-3
    for cK, cD in [(1.0, 0.0), (0.0, 1.0)]:
        asm = solid.assemble(d, v, tau, p, cK=cK, cD=cD)
        A = solid._csr(asm.tangent)
        if cD == 0.0:
            fp = solid.assemble(d + h * w, v, tau, p, tangent=False).force
            fm = solid.assemble(d - h * w, v, tau, p, tangent=False).force
        else:
            fp = solid.assemble(d, v + h * w, tau, p, tangent=False).force
            fm = solid.assemble(d, v - h * w, tau, p, tangent=False).force
        fd = (fp - fm) / (2 * h)
        assert np.linalg.norm(A @ w - fd) / np.linalg.norm(fd) < 1e-6


def test_pressure_column_matches_fd(solid, rng):
    d = 2e-5 * rng.normal(size=solid.n_dof)
    col = solid.assemble(d, 0 * d, None, {"left": 0.0}, tangent=False).dforce_dp["left"]
    f1 = solid.assemble(d, 0 * d, None, {"left": 10.0}, tangent=False).force
    f0 = solid.assemble(d, 0 * d, None, {"left": 0.0}, tangent=False).force
    np.testing.assert_allclose((f1 - f0) / 10.0, col, atol=1e-9 * np.abs(col).max())


def _rates(res):
    r = np.asarray(res)
    return np.log(r[2:] / r[1:-1]) / np.log(r[1:-1] / r[:-2])


def test_newton_converges_quadratically_on_inflation(solid):
    solid.set_prestress(None)
    d, rep = static_solve(solid, {"left": 8 * MMHG}, opts=NewtonOptions(rtol=1e-12, atol=1e-12))
    res = [h[1] for h in rep.history]
    # the last three residuals decrease at (at least) a quadratic rate
    assert _rates(res[-3:])[-1] > 1.8, res
    assert d.reshape(-1, 3)[:, 2].min() < 0  # the long axis stretches toward the apex


def test_static_solve_zero_load_needs_no_iteration(solid):
    solid.set_prestress(None)
    d, rep = static_solve(solid, {"left": 0.0})
    assert rep.iterations == 1 and not np.any(d)


def test_convergence_error_reports_history(solid):
    solid.set_prestress(None)
    with pytest.raises(ConvergenceError) as err:
        static_solve(solid, {"left": 8 * MMHG}, opts=NewtonOptions(rtol=1e-30, atol=0.0, max_iter=2))
    assert len(err.value.history) == 3


# -- thick sphere ---------------------------------------------------------------------------------------


def _lame_ur(r, p, a, b, mu, kappa):
    A = p * a**3 / (3 * kappa * (b**3 - a**3))
    B = p * a**3 * b**3 / (4 * mu * (b**3 - a**3))
    return A * r + B / r**2


@pytest.fixture(scope="module")
def sphere_solid():
    a, b = 1.0, 1.5
    m = generate_ellipsoid_shell((a,) * 3, (b,) * 3, 0.5, np.pi, n_transmural=2)
    mat = MaterialParams("neohooke", mu=1e3, kappa=1e4)
    # a negligible spring removes the rigid-body modes
    return SolidModel(m, mat, None, [OmniSpring(m, "epicardium", 1e-3, 0.0)], {"left": ["endocardium_left"]})


def _radial(solid, d):
    X = solid.mesh.nodes
    r = np.linalg.norm(X, axis=1)
    return r, np.sum(d.reshape(-1, 3) * X, axis=1) / r


def test_thick_sphere_matches_lame(sphere_solid):
    sphere_solid.set_prestress(None)
    p = 1.0
    d, _ = static_solve(sphere_solid, {"left": p})
    r, ur = _radial(sphere_solid, d)
    exact = _lame_ur(r, p, 1.0, 1.5, 1e3, 1e4)
    assert np.abs(ur - exact).max() / exact.max() < 0.05


def test_prestress_balances_load_at_zero_displacement(sphere_solid):
    s = sphere_solid
    s.springs[0].u_pre[:] = 0.0
    s.set_prestress(None)
    p = 1.0
    res = prestress(s, {"left": p}, steps=2)
    zero = np.zeros(s.n_dof)
    r = s.assemble(zero, zero, None, {"left": p}, tangent=False).force
    r[s.fixed] = 0.0
    assert np.linalg.norm(r) <= res.tolerance
    assert res.residual <= res.tolerance
    # unloading the imaged state recovers the Lame displacement with opposite sign
    d, _ = static_solve(s, {"left": 0.0}, ref=res.tolerance / 1e-6)
    r_, ur = _radial(s, -d)
    exact = _lame_ur(r_, p, 1.0, 1.5, 1e3, 1e4)
    assert np.abs(ur - exact).max() / exact.max() < 0.05
    s.set_prestress(None)
    s.springs[0].u_pre[:] = 0.0


def test_prestress_stretch_variant_and_errors(sphere_solid):
    s = sphere_solid
    s.set_prestress(None)
    res = prestress(s, {"left": 1.0}, steps=1, update="stretch")
    assert res.residual <= res.tolerance
    F = res.F_pre
    # one stretch is symmetric; the small correction products are nearly so
    np.testing.assert_allclose(F, np.swapaxes(F, -1, -2), atol=1e-9)
    s.set_prestress(None)
    s.springs[0].u_pre[:] = 0.0
    with pytest.raises(ValueError):
        prestress(s, {"left": 1.0}, update="twist")
    with pytest.raises(ValueError):
        prestress(s, {"left": 1.0}, steps=0)


# -- coupled model --------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ellipsoid_sim():
    cfg = preset_config("ellipsoid-table-5", geometry={"n_transmural": 1}, time={"dt": "2 ms", "t_end": "20 ms"})
    return build_simulation(cfg)


def test_bordered_blocks_match_fd(ellipsoid_sim, rng):
    model = ellipsoid_sim.model
    st = model.initial_state()
    n = model.solid.n_dof
    d1 = 1e-5 * rng.normal(size=n)
    d1[model.solid.fixed] = 0.0
    p1 = {"left": st.wk["left"] * np.array([1.5, 1.0, 1.0, 1.0])}
    t1 = st.t + model.time.dt
    tau1 = model.advance_tau(st.tau, st.t, t1)
    lin, _ = model.linearize(st, d1, p1, tau1, t1)

    # d R_S / d p_v
    h = 1.0
    cols = []
    for sgn in (1, -1):
        pp = {"left": p1["left"] + sgn * h * np.eye(4)[0]}
        cols.append(model.linearize(st, d1, pp, tau1, t1, tangent=False)[0].rS)
    fdB = (cols[0] - cols[1]) / (2 * h)
    assert np.linalg.norm(fdB - lin.B[:, 0]) / np.linalg.norm(lin.B[:, 0]) < 1e-5
    np.testing.assert_array_equal(lin.B[:, 1:], 0.0)

    # d R_0D / d d
    w = rng.normal(size=n) * 1e-6
    w[model.solid.fixed] = 0.0
    hd = 1e-2
    rp = model.linearize(st, d1 + hd * w, p1, tau1, t1, tangent=False)[0].r0
    rm = model.linearize(st, d1 - hd * w, p1, tau1, t1, tangent=False)[0].r0
    fdC = (rp - rm) / (2 * hd)
    assert np.linalg.norm(fdC - lin.C @ w) / np.linalg.norm(lin.C @ w) < 1e-5


def _quiescent_model(mesh):
    springs = [OmniSpring(mesh, "zmin", 1e6, 1e3)]
    solid = SolidModel(mesh, MOONEY, None, springs)
    return CoupledModel(solid, time=TimeIntegrationParams(dt=1e-3))


def test_quiescent_model_stays_at_rest():
    model = _quiescent_model(generate_box((1e-2, 1e-2, 1e-2), (1, 1, 1)))
    st = model.initial_state()
    log = ConvergenceLog()
    final = run_transient(model, st, 10e-3, conv_log=log)
    assert final.step == 10
    assert not np.any(final.d)
    assert all(r[2] == 1 for r in log.rows)


def test_energy_balance_without_damping():
    mesh = generate_box((1e-2, 1e-2, 1e-2), (1, 1, 1))
    springs = [OmniSpring(mesh, "zmin", 1e7, 0.0)]
    solid = SolidModel(mesh, MOONEY.with_(eta=0.0), None, springs)
    model = CoupledModel(solid, time=TimeIntegrationParams(dt=2e-4))
    st = model.initial_state()
    rng = np.random.default_rng(0)
    st.v = 1e-3 * rng.normal(size=solid.n_dof)
    E0 = solid.kinetic_energy(st.v)
    energies = []
    run_transient(model, st, 20e-3, record=lambda s: energies.append(solid.kinetic_energy(s.v) + solid.strain_energy(s.d) + solid.spring_energy(s.d)))
    drift = np.abs(np.array(energies) / E0 - 1).max()
    assert drift < 1e-3


def test_checkpoint_round_trip(tmp_path, ellipsoid_sim):
    model = ellipsoid_sim.model
    st = model.initial_state()
    st.d = np.arange(model.solid.n_dof, dtype=float) * 1e-9
    st.step, st.t = 7, 0.014
    springs = list(ellipsoid_sim.springs.values())
    springs[0].u_pre[:] = 1e-6
    path = tmp_path / "state.npz"
    save_checkpoint(path, st, springs)
    springs[0].u_pre[:] = 0.0
    back = load_checkpoint(path, springs)
    assert back.t == st.t and back.step == 7
    np.testing.assert_array_equal(back.d, st.d)
    np.testing.assert_array_equal(back.wk["left"], st.wk["left"])
    assert back.volumes == st.volumes
    assert np.all(springs[0].u_pre == 1e-6)
    springs[0].u_pre[:] = 0.0


def test_checkpoint_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, header=np.array("something-else 3"))
    with pytest.raises(ValueError, match="unsupported checkpoint"):
        load_checkpoint(path)


def test_convergence_log_csv(tmp_path):
    model = _quiescent_model(generate_box((1e-2, 1e-2, 1e-2), (1, 1, 1)))
    log = ConvergenceLog()
    run_transient(model, model.initial_state(), 3e-3, conv_log=log)
    log.write(tmp_path / "conv.csv")
    lines = (tmp_path / "conv.csv").read_text().splitlines()
    assert lines[0] == "step,t,iterations,res_struct,res_0d,halvings"
    assert len(lines) == 4
    # every logged step met its tolerance
    assert all(float(row.split(",")[3]) <= NewtonOptions().atol for row in lines[1:])
