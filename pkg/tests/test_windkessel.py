import numpy as np
import pytest

from pericard.windkessel import (
    INITIAL_LEFT,
    MMHG,
    P_AT0_LEFT,
    AtrialPressureCurve,
    WindkesselParams,
    smooth_step,
    solve_step,
    valve_resistance,
    windkessel_jacobian,
    windkessel_residual,
)

WP = WindkesselParams()


def test_params_validation():
    with pytest.raises(ValueError):
        WindkesselParams(R_min=1e13, R_max=1e6)
    with pytest.raises(ValueError):
        WindkesselParams(C_p=0.0)


def test_valve_resistance():
    assert valve_resistance(0.0, WP) == WP.R_min + 0.5 * (WP.R_max - WP.R_min)
    assert abs(valve_resistance(-10 * WP.k_valve, WP) - WP.R_min) < 1e-8 * WP.R_max
    dp = np.linspace(-5, 5, 1001) * WP.k_valve
    assert np.all(np.diff(valve_resistance(dp, WP)) >= 0.0)


def test_equilibrium_residual_is_exactly_zero():
    p_ref = 3.0 * MMHG
    params = WP.with_(p_ref=p_ref)
    p = np.array([p_ref, p_ref, p_ref, 0.0])
    r = windkessel_residual(p, p, p_ref, 0.0, 1e-3, 1.0, params)
    assert np.all(r == 0.0)


def test_initial_state_regression():
    p0 = INITIAL_LEFT.as_array()
    r = windkessel_residual(p0, p0, P_AT0_LEFT, 0.0, 1e-3, 1.0, WP)
    assert np.all(np.isfinite(r))
    # both valves closed: leak flows only, then the inertance and distal balances
    q_av = 2 * MMHG / valve_resistance(2 * MMHG, WP)
    q_sl = -53.8 * MMHG / valve_resistance(53.8 * MMHG, WP)
    expect = [
        q_av + q_sl,
        38.3e-6 - q_sl,
        38.3e-6 + (59.7 - 61.8) * MMHG / WP.R_p,
        59.7 * MMHG / WP.R_d - 38.3e-6,
    ]
    np.testing.assert_allclose(r, expect, rtol=1e-10)


def _fd_jacobian(p1, p0, p_at, Vdot, dt, theta, params, steps):
    Jfd = np.zeros((4, 4))
    for j in range(4):
        e = np.zeros(4)
        e[j] = steps[j]
        rp = windkessel_residual(p1 + e, p0, p_at, Vdot, dt, theta, params)
        rm = windkessel_residual(p1 - e, p0, p_at, Vdot, dt, theta, params)
        Jfd[:, j] = (rp - rm) / (2 * steps[j])
    return Jfd


@pytest.mark.parametrize("theta", [1.0, 0.5])
def test_jacobian_matches_central_differences(theta, rng):
    # a softer valve lets the samples sit inside the switching region with
    # finite-difference steps far above round-off
    params = WP.with_(k_valve=1.0 * MMHG)
    steps = [1e-4 * params.k_valve] * 3 + [1e-12]
    for _ in range(20):
        p1 = np.array([rng.uniform(0, 120), 0.0, rng.uniform(0, 120), 0.0]) * MMHG
        p1[1] = p1[0] + rng.uniform(-3, 3) * params.k_valve
        p1[3] = rng.uniform(-50e-6, 200e-6)
        p0 = p1 * (1 + 0.01 * rng.normal(size=4))
        p_at = p1[0] + rng.uniform(-3, 3) * params.k_valve
        Vdot = rng.uniform(-1e-4, 1e-4)
        J, dv = windkessel_jacobian(p1, p0, p_at, Vdot, 1e-3, theta, params)
        Jfd = _fd_jacobian(p1, p0, p_at, Vdot, 1e-3, theta, params, steps)
        assert np.abs(J - Jfd).max() <= 1e-7 * np.abs(J).max()
        assert dv[0] == 1.0 and np.all(dv[1:] == 0.0)


def test_jacobian_default_valves_saturated(rng):
    for _ in range(10):
        p1 = np.array([rng.uniform(5, 120), rng.uniform(5, 120), rng.uniform(0, 120), 0.0]) * MMHG
        p1[3] = rng.uniform(-50e-6, 200e-6)
        p0 = p1 * 0.99
        p_at = rng.uniform(0, 10) * MMHG
        J, _ = windkessel_jacobian(p1, p0, p_at, 0.0, 1e-3, 1.0, WP)
        Jfd = _fd_jacobian(p1, p0, p_at, 0.0, 1e-3, 1.0, WP, [1e-3 * MMHG] * 3 + [1e-12])
        assert np.abs(J - Jfd).max() <= 1e-7 * np.abs(J).max()


def test_saturated_valve_derivative_vanishes():
    _, ds = smooth_step(50 * WP.k_valve, WP.k_valve)
    assert ds * WP.k_valve < 1e-40


def _manufactured(t):
    """Smooth pressures [Pa] and flow [m^3/s] with their time derivatives."""
    w = 2 * np.pi
    p = np.array([
        (10 + 2 * np.sin(w * t)) * MMHG,
        (60 + 5 * np.cos(w * t)) * MMHG,
        (55 + 3 * np.sin(w * t + 0.3)) * MMHG,
        (40 + 10 * np.sin(w * t)) * 1e-6,
    ])
    dp = np.array([
        2 * w * np.cos(w * t) * MMHG,
        -5 * w * np.sin(w * t) * MMHG,
        3 * w * np.cos(w * t + 0.3) * MMHG,
        10 * w * np.cos(w * t) * 1e-6,
    ])
    return p, dp


def _continuous_lhs(t, p_at, params):
    p, dp = _manufactured(t)
    # the instantaneous equations equal the residual with the exact rate and theta = 1 at p
    tiny = 1e-9
    return windkessel_residual(p, p - tiny * dp, p_at, 0.0, tiny, 1.0, params)


def test_manufactured_solution_residual_first_order():
    # forcing makes the analytic trajectory an exact solution of the ODEs
    p_at = 8 * MMHG
    params = WP.with_(k_valve=5 * MMHG)  # soft valves keep the flows smooth
    errs = []
    for dt in (4e-3, 2e-3, 1e-3, 5e-4):
        worst = 0.0
        for t0 in np.arange(0.0, 0.2, dt):
            t1 = t0 + dt
            f = -_continuous_lhs(t1, p_at, params)
            r = windkessel_residual(_manufactured(t1)[0], _manufactured(t0)[0], p_at, 0.0, dt, 1.0, params, forcing=f)
            worst = max(worst, np.abs(r / np.array([1e-6, 1e-6, 1e-6, 1e-6])).max())
        errs.append(worst)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 1.0) < 0.1), orders


def test_manufactured_solution_global_error_first_order():
    p_at = 8 * MMHG
    params = WP.with_(k_valve=5 * MMHG)
    errs = []
    for n in (50, 100, 200):
        dt = 0.2 / n
        p = _manufactured(0.0)[0]
        for k in range(n):
            f = -_continuous_lhs((k + 1) * dt, p_at, params)
            p = solve_step(p, p_at, 0.0, dt, 1.0, params, forcing=f)
        errs.append(np.abs((p - _manufactured(0.2)[0]) / np.array([MMHG, MMHG, MMHG, 1e-6])).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 0.9), orders


def test_proximal_node_flow_balance():
    rng = np.random.default_rng(3)
    p1 = np.array([20, 70, 60, 0]) * MMHG + rng.normal(size=4)
    p1[3] = 5e-5
    p0 = p1 - rng.normal(size=4)
    dt = 1e-3
    r = windkessel_residual(p1, p0, 5 * MMHG, 0.0, dt, 1.0, WP)
    q_valve = (p1[0] - p1[1]) / valve_resistance(p1[1] - p1[0], WP)
    assert np.isclose(r[1], p1[3] + WP.C_p * (p1[1] - p0[1]) / dt - q_valve, rtol=1e-12, atol=1e-20)


def test_closed_valve_leak_bound():
    # Both valves closed, no wall motion: compare one cycle against a run whose
    # valves are (practically) leak-free. The difference is the leak effect.
    T, dt, p_at = 1.0, 1e-3, 6 * MMHG
    p0 = INITIAL_LEFT.as_array()

    def run(params):
        p, pv_hist = p0.copy(), []
        for _ in range(int(T / dt)):
            p = solve_step(p, p_at, 0.0, dt, 1.0, params)
            pv_hist.append(p.copy())
        return np.array(pv_hist)

    leaky = run(WP)
    tight = run(WP.with_(R_max=1e30))
    max_av = np.abs(leaky[:, 0] - p_at).max()
    max_sl = np.abs(leaky[:, 1] - leaky[:, 0]).max()
    bound = (max_av + max_sl) * T / (WP.R_max * WP.C_p)
    assert np.abs(leaky[:, 1:3] - tight[:, 1:3]).max() < bound
    # closed valves throughout
    assert np.all(leaky[:, 0] > p_at) and np.all(leaky[:, 1] > leaky[:, 0])


def test_atrial_pressure_curve():
    c = AtrialPressureCurve.default(6 * MMHG, 4 * MMHG)
    assert np.isclose(c(0.0), 6 * MMHG)
    assert np.isclose(c(0.105), 10 * MMHG, rtol=1e-3)
    assert np.isclose(c(1.105), c(0.105))
    t = np.linspace(0, 2, 4001)
    assert np.abs(np.diff(c(t))).max() < 0.1 * MMHG
    assert AtrialPressureCurve.constant(5.0)(123.0) == 5.0
    with pytest.raises(ValueError):
        AtrialPressureCurve([0.0, 0.0], [1.0, 2.0])
