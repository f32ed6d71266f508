"""Time-dependent active fiber stress.

The fiber stress obeys ``dtau/dt = -|a(t)| tau + sigma0 |a(t)|_+`` where
the activation rate ``a`` switches between ``alpha_min`` (relaxation) and
``alpha_max`` (contraction) through a smooth systolic indicator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class ActivationParams:
    """Activation constants in SI units (Pa, 1/s, s)."""

    sigma0: float
    alpha_max: float = 5.0
    alpha_min: float = -30.0
    t_sys: float = 0.170
    t_dias: float = 0.484
    gamma_s: float = 0.005

    def __post_init__(self):
        if not self.alpha_max > 0.0 > self.alpha_min:
            raise ValueError("activation rates need alpha_max > 0 > alpha_min")
        if self.t_dias <= self.t_sys:
            raise ValueError("t_dias must be later than t_sys")
        if self.gamma_s <= 0.0:
            raise ValueError("sigmoid steepness gamma_s must be positive")
        if self.sigma0 < 0.0:
            raise ValueError("sigma0 must be >= 0")

    def with_(self, **kw) -> "ActivationParams":
        return replace(self, **kw)


def sigmoid_pair(dt, gamma_s):
    """Return ``(S+, S-)`` with ``S+- = (1 +- tanh(dt / gamma_s)) / 2``."""
    th = np.tanh(np.asarray(dt, dtype=float) / gamma_s)
    return 0.5 * (1.0 + th), 0.5 * (1.0 - th)


def indicator_f(t, p: ActivationParams):
    """Systolic indicator ``S+(t - t_sys) S-(t - t_dias)`` in (0, 1)."""
    up, _ = sigmoid_pair(np.asarray(t, dtype=float) - p.t_sys, p.gamma_s)
    _, down = sigmoid_pair(np.asarray(t, dtype=float) - p.t_dias, p.gamma_s)
    return up * down


def activation_a(t, p: ActivationParams):
    f = indicator_f(t, p)
    return p.alpha_max * f + p.alpha_min * (1.0 - f)


def step_tau_const(tau, a, dt, sigma0):
    """Exact update of the fiber-stress ODE over ``dt`` with ``a`` held constant."""
    tau = np.asarray(tau, dtype=float)
    rate = abs(a)
    if rate * dt < 1e-12:
        # |a| -> 0 limit of the exponential step
        return tau + dt * (-rate * tau + sigma0 * max(a, 0.0))
    decay = np.exp(-rate * dt)
    source = sigma0 * max(a, 0.0) / rate
    return tau * decay - source * np.expm1(-rate * dt)


def step_tau(tau_n, t_n, t_np1, p: ActivationParams):
    """Advance ``tau`` from ``t_n`` to ``t_np1`` with ``a`` frozen at the midpoint."""
    a = float(activation_a(0.5 * (t_n + t_np1), p))
    return step_tau_const(tau_n, a, t_np1 - t_n, p.sigma0)


def active_pk2(tau, f0):
    """Active stress ``tau f0 (x) f0``; ``tau`` broadcasts against ``f0[..., 0]``."""
    f0 = np.asarray(f0, dtype=float)
    return np.asarray(tau, dtype=float)[..., None, None] * np.einsum("...i,...j->...ij", f0, f0)


def tau_history(p: ActivationParams, t_end, dt, tau0=0.0, t0=0.0):
    """Fiber stress sampled at ``t0, t0 + dt, ...`` up to ``t_end``."""
    n = int(round((t_end - t0) / dt))
    ts = t0 + dt * np.arange(n + 1)
    out = np.empty(n + 1)
    out[0] = tau0
    for k in range(n):
        out[k + 1] = step_tau(out[k], ts[k], ts[k + 1], p)
    return ts, out


def peak_tau(p: ActivationParams, t_end=None, dt=1e-3):
    """Maximum of ``tau`` over one activation cycle starting from rest."""
    t_end = p.t_dias + 0.2 if t_end is None else t_end
    return float(tau_history(p, t_end, dt)[1].max())


def sigma0_for_peak(p: ActivationParams, peak, t_end=None, dt=1e-3):
    """Contractility whose cycle maximum of ``tau`` equals ``peak``.

    ``tau`` is linear in ``sigma0`` for a fixed activation rate history, so a
    single unit-contractility run gives the scale.
    """
    unit = peak_tau(p.with_(sigma0=1.0), t_end, dt)
    if unit <= 0.0:
        raise ValueError("activation never reaches a positive fiber stress in the given window")
    return peak / unit
