"""Four-element windkessel with smooth valve diodes, one per ventricle.

Unknowns ``p = [p_v, p_p, p_d, q_p]``: ventricular, proximal and distal
pressure and the flow through the proximal inertance. The cavity volume
rate ``Vdot`` comes from the solid model. Equations, with
``R_av = R(p_v - p_at)`` and ``R_sl = R(p_p - p_v)``::

    (p_v - p_at)/R_av + (p_v - p_p)/R_sl + Vdot = 0
    q_p - (p_v - p_p)/R_sl + C_p dp_p/dt       = 0
    q_p + (p_d - p_p)/R_p + L_p/R_p dq_p/dt     = 0
    (p_d - p_ref)/R_d - q_p + C_d dp_d/dt       = 0

discretised with the one-step-theta rule and evaluated at ``n + theta``.
SI units throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

MMHG = 133.322387415  # Pa
ML = 1e-6  # m^3


@dataclass(frozen=True)
class WindkesselParams:
    L_p: float = 1.3e5
    C_p: float = 7.7e-9
    C_d: float = 8.7e-9
    R_p: float = 7.3e6
    R_d: float = 1.0e8
    p_ref: float = 0.0
    R_min: float = 1.0e6
    R_max: float = 1.0e13
    k_valve: float = 1.0e-3

    def __post_init__(self):
        if not self.R_max > self.R_min > 0.0:
            raise ValueError("valve resistances need R_max > R_min > 0")
        for k in ("L_p", "C_p", "C_d", "R_p", "R_d", "k_valve"):
            if getattr(self, k) <= 0.0:
                raise ValueError(f"windkessel parameter {k} must be positive")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class WindkesselState:
    p_v: float
    p_p: float
    p_d: float
    q_p: float

    def as_array(self):
        return np.array([self.p_v, self.p_p, self.p_d, self.q_p])

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in a))


#: initial conditions of the reference four-chamber model, left and right
INITIAL_LEFT = WindkesselState(8.0 * MMHG, 61.8 * MMHG, 59.7 * MMHG, 38.3e-6)
INITIAL_RIGHT = WindkesselState(6.0 * MMHG, 24.0 * MMHG, 23.2 * MMHG, 14.9e-6)
P_AT0_LEFT = 6.0 * MMHG
P_AT0_RIGHT = 4.0 * MMHG


class AtrialPressureCurve:
    """Periodic piecewise-linear prescribed atrial pressure."""

    def __init__(self, times, values, period=None):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape or len(self.times) < 1:
            raise ValueError("atrial pressure curve needs matching 1D time and value arrays")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("atrial pressure times must increase strictly")
        self.period = period

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.period:
            t = np.mod(t - self.times[0], self.period) + self.times[0]
            if len(self.times) > 1 and self.times[-1] < self.times[0] + self.period:
                tt = np.append(self.times, self.times[0] + self.period)
                vv = np.append(self.values, self.values[0])
                return np.interp(t, tt, vv)
        return np.interp(t, self.times, self.values)

    @classmethod
    def constant(cls, p):
        return cls([0.0], [p])

    @classmethod
    def default(cls, p0, amplitude, t_on=0.070, t_off=0.140, period=1.0, dt=1e-3):
        """Baseline ``p0`` plus a ``sin^2`` bump of height ``amplitude`` on ``[t_on, t_off]``.

        A stand-in shape for atrial systole, sampled every ``dt``.
        """
        t = np.arange(0.0, period, dt)
        s = np.clip((t - t_on) / (t_off - t_on), 0.0, 1.0)
        return cls(t, p0 + amplitude * np.sin(np.pi * s) ** 2, period)


def smooth_step(dp, k):
    """``S+(dp) = (1 + tanh(dp/k)) / 2`` and its derivative."""
    th = np.tanh(np.asarray(dp, dtype=float) / k)
    return 0.5 * (1.0 + th), 0.5 * (1.0 - th * th) / k


def valve_resistance(dp, params: WindkesselParams):
    """Diode resistance, open (``R_min``) for negative ``dp`` and closed (``R_max``) for positive."""
    s, _ = smooth_step(dp, params.k_valve)
    return params.R_min + (params.R_max - params.R_min) * s


def _flow(dp, params):
    """Flow ``dp / R(dp)`` and its derivative in ``dp``."""
    s, ds = smooth_step(dp, params.k_valve)
    R = params.R_min + (params.R_max - params.R_min) * s
    dR = (params.R_max - params.R_min) * ds
    return dp / R, 1.0 / R - dp * dR / (R * R)


def windkessel_residual(p1, p0, p_at, Vdot, dt, theta, params: WindkesselParams, forcing=None, *, jacobian=False):
    """One-step-theta residual of the four windkessel equations.

    Parameters
    ----------
    p1, p0 : (4,) arrays
        Unknowns at ``n+1`` and ``n``.
    p_at : float
        Atrial pressure at ``t_{n+theta}``.
    Vdot : float
        Cavity volume rate ``(V_{n+1} - V_n) / dt``.
    forcing : (4,) array, optional
        Extra source added to each equation (manufactured solutions).
    jacobian : bool
        Also return ``dR/dp1`` (4x4) and ``dR/dVdot`` (4,).
    """
    p1 = np.asarray(p1, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    pt = theta * p1 + (1.0 - theta) * p0
    pv, pp, pd, q = pt
    rate = (p1 - p0) / dt
    q_av, dq_av = _flow(pv - p_at, params)
    # the semilunar valve resistance depends on p_p - p_v, the flow is (p_v - p_p)/R_sl
    q_sl_neg, dq_sl = _flow(pp - pv, params)
    q_sl = -q_sl_neg
    P = params
    r = np.array(
        [
            q_av + q_sl + Vdot,
            q - q_sl + P.C_p * rate[1],
            q + (pd - pp) / P.R_p + P.L_p / P.R_p * rate[3],
            (pd - P.p_ref) / P.R_d - q + P.C_d * rate[2],
        ]
    )
    if forcing is not None:
        r = r + np.asarray(forcing, dtype=float)
    if not jacobian:
        return r
    # derivatives with respect to the theta-point values
    A = np.zeros((4, 4))
    A[0, 0] = dq_av + dq_sl
    A[0, 1] = -dq_sl
    A[1, 0] = -dq_sl
    A[1, 1] = dq_sl
    A[1, 3] = 1.0
    A[2, 1] = -1.0 / P.R_p
    A[2, 2] = 1.0 / P.R_p
    A[2, 3] = 1.0
    A[3, 2] = 1.0 / P.R_d
    A[3, 3] = -1.0
    B = np.zeros((4, 4))
    B[1, 1] = P.C_p
    B[2, 3] = P.L_p / P.R_p
    B[3, 2] = P.C_d
    Jac = theta * A + B / dt
    dVdot = np.array([1.0, 0.0, 0.0, 0.0])
    return r, Jac, dVdot


def windkessel_jacobian(p1, p0, p_at, Vdot, dt, theta, params: WindkesselParams):
    """Return ``(dR/dp1, dR/dVdot)``."""
    _, J, dv = windkessel_residual(p1, p0, p_at, Vdot, dt, theta, params, jacobian=True)
    return J, dv


def solve_step(p0, p_at, Vdot, dt, theta, params, forcing=None, tol=1e-12, maxiter=50):
    """Newton solve of one windkessel step for a given volume rate."""
    p = np.array(p0, dtype=float)
    for _ in range(maxiter):
        r, J, _ = windkessel_residual(p, p0, p_at, Vdot, dt, theta, params, forcing, jacobian=True)
        scale = np.abs(J).max(axis=1)
        if np.all(np.abs(r) <= tol * np.maximum(scale * (np.abs(p) + MMHG), 1e-30)):
            return p
        p = p - np.linalg.solve(J, r)
    raise RuntimeError("windkessel step did not converge")


@dataclass(frozen=True)
class Windkessel:
    """A windkessel instance bound to its cavity and atrial pressure."""

    cavity: str
    params: WindkesselParams
    p_at: AtrialPressureCurve
    initial: WindkesselState
