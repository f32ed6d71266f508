"""Time integration, monolithic Newton solve and prestressing.

The structural residual is

    R_S = M a_{n+1-alpha_m} + (1 - alpha_f) F(d, v, tau, p)_{n+1} + alpha_f F_n

with Newmark velocities and accelerations. Each cavity bound to a
windkessel adds four 0D unknowns whose residual is evaluated at
``n + theta``. The bordered Newton system is solved through a Schur
complement on the 0D block so the structural matrix is factored once per
iteration.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .activation import ActivationParams, activation_a, step_tau_const
from .materials import ElementInversionError
from .mechanics import SolidModel
from .mesh import cavity_volume_and_gradient
from .windkessel import MMHG, Windkessel, windkessel_residual

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TimeIntegrationParams:
    dt: float = 1e-3
    beta: float = 0.25
    gamma: float = 0.5
    alpha_f: float = 0.5
    alpha_m: float = 0.5
    theta: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.beta <= 0.5:
            raise ValueError("Newmark beta must lie in (0, 0.5]")
        for k in ("gamma", "alpha_f", "alpha_m", "theta"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                raise ValueError(f"{k} must lie in [0, 1]")
        if self.alpha_f == 1.0:
            raise ValueError("alpha_f = 1 leaves the new state out of the residual")
        if self.dt <= 0.0:
            raise ValueError("time step must be positive")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class NewtonOptions:
    rtol: float = 1e-6
    atol: float = 1e-8  # N
    atol_0d: float = 1e-12  # m^3/s
    max_iter: int = 25
    max_halvings: int = 8


def newmark_update(d1, d0, v0, a0, dt, beta=0.25, gamma=0.5):
    """Newmark velocity and acceleration at ``n+1`` from the displacement."""
    d1, d0, v0, a0 = (np.asarray(x, dtype=float) for x in (d1, d0, v0, a0))
    a1 = (d1 - d0) / (beta * dt * dt) - v0 / (beta * dt) - (1.0 - 2.0 * beta) / (2.0 * beta) * a0
    v1 = gamma / (beta * dt) * (d1 - d0) - (gamma - beta) / beta * v0 - (gamma - 2.0 * beta) / (2.0 * beta) * dt * a0
    return v1, a1


def generalized_alpha_combine(q1, q0, alpha):
    """``(1 - alpha) q_{n+1} + alpha q_n``."""
    return (1.0 - alpha) * np.asarray(q1, dtype=float) + alpha * np.asarray(q0, dtype=float)


class ConvergenceError(RuntimeError):
    """A Newton solve failed; ``history`` holds ``(iteration, |R_S|, |R_0D|)`` rows."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


# -- linear algebra --------------------------------------------------------------------


class SparseLU:
    """Direct solver with symmetric diagonal scaling.

    Tries a symmetric-mode SuperLU ordering first, which is much faster on
    the nearly symmetric FE matrices, and falls back to COLAMD with partial
    pivoting when the solution residual is poor.
    """

    def __init__(self, A: sp.spmatrix, check_tol=1e-8):
        A = sp.csc_matrix(A)
        diag = np.abs(A.diagonal())
        scale = np.where(diag > 0.0, diag, np.maximum(abs(A).max(axis=1).toarray().ravel(), 1.0))
        self.s = 1.0 / np.sqrt(scale)
        D = sp.diags(self.s)
        self.A = (D @ A @ D).tocsc()
        self.check_tol = check_tol
        self.lu = splu(self.A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=1e-3, options=dict(SymmetricMode=True))
        self.fallback = False

    def _refactor(self):
        log.debug("switching to COLAMD ordering with partial pivoting")
        self.lu = splu(self.A, permc_spec="COLAMD")
        self.fallback = True

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        bs = b * (self.s[:, None] if b.ndim == 2 else self.s)
        x = self.lu.solve(bs)
        res = np.linalg.norm(self.A @ x - bs)
        if not self.fallback and res > self.check_tol * max(np.linalg.norm(bs), 1e-300):
            self._refactor()
            x = self.lu.solve(bs)
        return x * (self.s[:, None] if b.ndim == 2 else self.s)


@dataclass
class Linearization:
    """Bordered system ``[[A, B], [C, J]] [dd, dp] = -[rS, r0]``."""

    rS: np.ndarray
    A: sp.csr_matrix | None
    r0: np.ndarray
    B: np.ndarray
    C: np.ndarray
    J: np.ndarray
    p_scale: np.ndarray


def solve_bordered(lin: Linearization):
    lu = SparseLU(lin.A)
    m = len(lin.r0)
    if m == 0:
        return -lu.solve(lin.rS), np.zeros(0)
    Y = lu.solve(np.column_stack([lin.rS, lin.B]))
    y0, Yb = Y[:, 0], Y[:, 1:]
    S = lin.J - lin.C @ Yb
    rhs = -lin.r0 + lin.C @ y0
    # scale pressures to mmHg-like units and equilibrate rows
    S = S * lin.p_scale[None, :]
    rs = np.abs(S).max(axis=1)
    rs[rs == 0.0] = 1.0
    dp = np.linalg.solve(S / rs[:, None], rhs / rs) * lin.p_scale
    dd = -y0 - Yb @ dp
    return dd, dp


# -- state -------------------------------------------------------------------------------


@dataclass
class SystemState:
    """Everything that defines the model at one time level."""

    t: float
    d: np.ndarray
    v: np.ndarray
    a: np.ndarray
    tau: np.ndarray  # (E, Q)
    wk: dict  # cavity -> (4,) [p_v, p_p, p_d, q_p]
    volumes: dict  # cavity -> V
    force: np.ndarray  # F(d, v, tau, p) at this level
    F_pre: np.ndarray | None = None
    step: int = 0

    def pressures(self):
        return {c: float(p[0]) for c, p in self.wk.items()}

    def copy(self):
        return replace(
            self,
            d=self.d.copy(),
            v=self.v.copy(),
            a=self.a.copy(),
            tau=self.tau.copy(),
            wk={c: p.copy() for c, p in self.wk.items()},
            volumes=dict(self.volumes),
            force=self.force.copy(),
        )


def save_checkpoint(path, state: SystemState, springs=()):
    """Write a state to ``.npz`` with a versioned header."""
    arrays = dict(
        header=np.array(f"pericard-checkpoint {CHECKPOINT_VERSION}"),
        t=np.array(state.t),
        step=np.array(state.step),
        d=state.d,
        v=state.v,
        a=state.a,
        tau=state.tau,
        force=state.force,
        cavities=np.array(sorted(state.wk), dtype=str),
    )
    for c in sorted(state.wk):
        arrays[f"wk_{c}"] = state.wk[c]
    for c in sorted(state.volumes):
        arrays[f"vol_{c}"] = np.array(state.volumes[c])
    if state.F_pre is not None:
        arrays["F_pre"] = state.F_pre
    for i, s in enumerate(springs):
        for name in ("u_pre", "g_pre"):
            if hasattr(s, name):
                arrays[f"spring{i}_{name}"] = getattr(s, name)
    np.savez(path, **arrays)


def load_checkpoint(path, springs=()):
    with np.load(path, allow_pickle=False) as z:
        header = str(z["header"])
        name, _, version = header.partition(" ")
        if name != "pericard-checkpoint" or int(version) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint header {header!r}")
        cav = [str(c) for c in z["cavities"]]
        vols = {k[4:]: float(z[k]) for k in z.files if k.startswith("vol_")}
        state = SystemState(
            t=float(z["t"]),
            d=z["d"].copy(),
            v=z["v"].copy(),
            a=z["a"].copy(),
            tau=z["tau"].copy(),
            wk={c: z[f"wk_{c}"].copy() for c in cav},
            volumes=vols,
            force=z["force"].copy(),
            F_pre=z["F_pre"].copy() if "F_pre" in z.files else None,
            step=int(z["step"]),
        )
        for i, s in enumerate(springs):
            for name in ("u_pre", "g_pre"):
                key = f"spring{i}_{name}"
                if key in z.files:
                    setattr(s, name, z[key].copy())
    return state


# -- coupled model -------------------------------------------------------------------------


@dataclass
class StepReport:
    step: int
    t: float
    iterations: int
    res_struct: float
    res_0d: float
    halvings: int
    history: list = field(default_factory=list)


class CoupledModel:
    """Solid model, activation and windkessels advanced together in time.

    Parameters
    ----------
    solid : SolidModel
    windkessels : dict
        ``{cavity: Windkessel}``; each cavity must carry follower pressure.
    activation : ActivationParams or dict, optional
        One parameter set for all active regions or ``{region: params}``.
    prescribed : dict, optional
        ``{cavity: callable(t) -> pressure}`` for loaded cavities without a
        windkessel; unlisted ones default to zero pressure.
    """

    def __init__(self, solid: SolidModel, windkessels=None, activation=None, prescribed=None, time: TimeIntegrationParams | None = None, newton: NewtonOptions | None = None):
        self.solid = solid
        self.windkessels = dict(windkessels or {})
        self.prescribed = dict(prescribed or {})
        for cav in list(self.windkessels) + list(self.prescribed):
            if cav not in solid.pressure_loads:
                raise ValueError(f"cavity {cav!r} has no pressure-loaded wall in the solid model")
        both = set(self.windkessels) & set(self.prescribed)
        if both:
            raise ValueError(f"cavities {sorted(both)} have both a windkessel and a prescribed pressure")
        self.time = time or TimeIntegrationParams()
        self.newton = newton or NewtonOptions()
        self.cavities = sorted(self.windkessels)
        self._act_groups = self._activation_groups(activation)

    def _activation_groups(self, activation):
        mesh = self.solid.mesh
        if activation is None:
            return []
        if isinstance(activation, ActivationParams):
            regions = np.unique(mesh.regions[self.solid.active])
            activation = {int(r): activation for r in regions}
        groups = []
        for r, params in sorted(activation.items()):
            els = np.nonzero((mesh.regions == r) & self.solid.active)[0]
            if len(els):
                groups.append((params, els))
        return groups

    # -- states ----------------------------------------------------------------

    def loaded_pressures(self, t, wk):
        p = {c: float(f(t)) for c, f in self.prescribed.items()}
        p.update({c: float(v[0]) for c, v in wk.items()})
        return p

    def initial_state(self, t0=0.0, wk=None) -> SystemState:
        s = self.solid
        n = s.n_dof
        wk = {c: np.asarray((wk or {}).get(c, self.windkessels[c].initial.as_array()), dtype=float).copy() for c in self.cavities}
        d = np.zeros(n)
        tau = np.zeros(s.geo.dV.shape)
        vols = {c: cavity_volume_and_gradient(s.mesh, c, d, gradient=False)[0] for c in self.cavities}
        force = s.assemble(d, d, tau, self.loaded_pressures(t0, wk), tangent=False).force
        return SystemState(t0, d, d.copy(), d.copy(), tau, wk, vols, force, s.F_pre)

    def advance_tau(self, tau, t0, t1):
        tau = np.array(tau, dtype=float)
        for params, els in self._act_groups:
            a = float(activation_a(0.5 * (t0 + t1), params))
            tau[els] = step_tau_const(tau[els], a, t1 - t0, params.sigma0)
        return tau

    # -- residual ---------------------------------------------------------------

    def linearize(self, state: SystemState, d1, p1, tau1, t1, tangent=True):
        """Residuals and bordered Jacobian of the step ``state -> t1``."""
        ti = self.time
        s = self.solid
        dt = t1 - state.t
        v1, a1 = newmark_update(d1, state.d, state.v, state.a, dt, ti.beta, ti.gamma)
        am = generalized_alpha_combine(a1, state.a, ti.alpha_m)
        cK = 1.0 - ti.alpha_f
        cD = cK * ti.gamma / (ti.beta * dt)
        cM = (1.0 - ti.alpha_m) / (ti.beta * dt * dt)
        pressures = self.loaded_pressures(t1, p1)
        asm = s.assemble(d1, v1, tau1, pressures, cK=cK, cD=cD, tangent=tangent)
        M = s.mass_matrix()
        rS = M @ am + cK * asm.force + ti.alpha_f * state.force
        rS[s.fixed] = 0.0
        A = None
        if tangent:
            data = asm.tangent + cM * s.mass_data
            A = s._csr(s.apply_constraints(data))

        m = 4 * len(self.cavities)
        r0 = np.zeros(m)
        B = np.zeros((s.n_dof, m))
        C = np.zeros((m, s.n_dof))
        J = np.zeros((m, m))
        vols = {}
        for i, c in enumerate(self.cavities):
            wk: Windkessel = self.windkessels[c]
            V1, gV = cavity_volume_and_gradient(s.mesh, c, d1, gradient=tangent)
            vols[c] = V1
            Vdot = (V1 - state.volumes[c]) / dt
            p_at = float(wk.p_at(state.t + ti.theta * dt))
            sl = slice(4 * i, 4 * i + 4)
            if tangent:
                r, Jc, dv = windkessel_residual(p1[c], state.wk[c], p_at, Vdot, dt, ti.theta, wk.params, jacobian=True)
                J[sl, sl] = Jc
                g = gV.ravel().copy()
                g[s.fixed] = 0.0
                C[sl] = np.outer(dv, g) / dt
                col = cK * asm.dforce_dp[c]
                col[s.fixed] = 0.0
                B[:, 4 * i] = col
            else:
                r = windkessel_residual(p1[c], state.wk[c], p_at, Vdot, dt, ti.theta, wk.params)
            r0[sl] = r
        p_scale = np.full(m, MMHG)
        p_scale[3::4] = 1e-6  # q_p in ml/s
        lin = Linearization(rS, A, r0, B, C, J, p_scale)
        return lin, dict(v=v1, a=a1, force=asm.force, volumes=vols)

    def step(self, state: SystemState, dt=None) -> tuple[SystemState, StepReport]:
        dt = self.time.dt if dt is None else dt
        t1 = state.t + dt
        tau1 = self.advance_tau(state.tau, state.t, t1)
        d1 = state.d.copy()
        p1 = {c: state.wk[c].copy() for c in self.cavities}

        def evaluate(d, p, tangent=True):
            return self.linearize(state, d, p, tau1, t1, tangent)

        d1, p1, extra, rep = newton_solve(evaluate, d1, p1, self.cavities, self.newton, context=f"step {state.step + 1} (t = {t1:.4f} s)")
        new = SystemState(t1, d1, extra["v"], extra["a"], tau1, p1, {**state.volumes, **extra["volumes"]}, extra["force"], state.F_pre, state.step + 1)
        rep.step, rep.t = new.step, t1
        return new, rep


def _norms(lin):
    return float(np.linalg.norm(lin.rS)), float(np.linalg.norm(lin.r0))


def _split(dp, cavities):
    return {c: dp[4 * i : 4 * i + 4] for i, c in enumerate(cavities)}


def newton_solve(evaluate, d, p, cavities, opts: NewtonOptions, context="", ref=0.0):
    """Damped Newton iteration on a bordered system.

    ``evaluate(d, p, tangent)`` returns ``(Linearization, extra)``.
    Convergence requires ``|R_S| < max(rtol |R_S,0|, atol)`` and the same
    for the 0D part; ``ref`` raises the structural reference norm when
    the initial residual is not representative (a nearly balanced start).
    Returns ``(d, p, extra, StepReport)``.
    """
    history = []
    lin, extra = evaluate(d, p)
    nS, n0 = _norms(lin)
    tolS = max(opts.rtol * max(nS, ref), opts.atol)
    tol0 = max(opts.rtol * n0, opts.atol_0d)
    halv_total = 0

    def merit(a, b):
        return a / tolS + b / tol0

    for it in range(1, opts.max_iter + 1):
        history.append((it, nS, n0))
        if nS <= tolS and n0 <= tol0:
            return d, p, extra, StepReport(0, 0.0, it, nS, n0, halv_total, history)
        dd, dp = solve_bordered(lin)
        dps = _split(dp, cavities)
        m_old = merit(nS, n0)
        s_old = abs(float(dd @ lin.rS))
        lam = 1.0
        for h in range(opts.max_halvings + 1):
            d_try = d + lam * dd
            p_try = {c: p[c] + lam * dps[c] for c in cavities}
            try:
                lin_t, extra_t = evaluate(d_try, p_try)
            except ElementInversionError:
                lin_t = None
            if lin_t is not None:
                nS_t, n0_t = _norms(lin_t)
                # accept on residual decrease or on a drop of the directional
                # derivative dd . R_S, which tolerates the non-monotone
                # residual history of nearly incompressible solids
                if merit(nS_t, n0_t) < m_old or abs(float(dd @ lin_t.rS)) <= 0.9 * s_old:
                    break
            if h == opts.max_halvings:
                raise ConvergenceError(f"{context}: line search failed after {h} halvings", history)
            lam *= 0.5
            halv_total += 1
        d, p, lin, extra, nS, n0 = d_try, p_try, lin_t, extra_t, nS_t, n0_t
    history.append((opts.max_iter + 1, nS, n0))
    if nS <= tolS and n0 <= tol0:
        return d, p, extra, StepReport(0, 0.0, opts.max_iter + 1, nS, n0, halv_total, history)
    raise ConvergenceError(f"{context}: no convergence in {opts.max_iter} iterations (|R_S| = {nS:.3e}, |R_0D| = {n0:.3e})", history)


# -- prestress -------------------------------------------------------------------------------


@dataclass
class PrestressResult:
    F_pre: np.ndarray
    residual: float
    tolerance: float
    increments: int
    extra_iterations: int


def _static_evaluate(solid: SolidModel, pressures):
    zero = np.zeros(solid.n_dof)

    def evaluate(d, p, tangent=True):
        asm = solid.assemble(d, zero, None, pressures, cK=1.0, cD=0.0, tangent=tangent)
        rS = asm.force.copy()
        rS[solid.fixed] = 0.0
        A = solid._csr(solid.apply_constraints(asm.tangent)) if tangent else None
        e = np.zeros(0)
        return Linearization(rS, A, e, np.zeros((solid.n_dof, 0)), np.zeros((0, solid.n_dof)), np.zeros((0, 0)), e), {}

    return evaluate


def pressure_load_norm(solid: SolidModel, pressures):
    """Norm of the bare pressure load at ``d = 0``, a scale for static residuals."""
    zero = np.zeros(solid.n_dof)
    ref = 0.0
    for c, p in pressures.items():
        col = solid.assemble(zero, zero, None, {c: 1.0}, tangent=False).dforce_dp.get(c)
        if col is not None:
            col = col.copy()
            col[solid.fixed] = 0.0
            ref += abs(p) * np.linalg.norm(col)
    return ref


def static_solve(solid: SolidModel, pressures, d0=None, opts: NewtonOptions | None = None, ref=None):
    """Quasi-static equilibrium under fixed cavity pressures."""
    d0 = np.zeros(solid.n_dof) if d0 is None else np.asarray(d0, dtype=float)
    ref = pressure_load_norm(solid, pressures) if ref is None else ref
    d, _, _, rep = newton_solve(_static_evaluate(solid, pressures), d0, {}, [], opts or NewtonOptions(), "static solve", ref)
    return d, rep


def right_stretch(F):
    """Right stretch tensor ``U`` of the polar decomposition ``F = R U``."""
    W, s, Vt = np.linalg.svd(F)
    return np.einsum("...ki,...k,...kj->...ij", Vt, s, Vt)


def prestress(solid: SolidModel, pressures, steps=5, max_extra=40, opts: NewtonOptions | None = None, update="full", anderson=5) -> PrestressResult:
    """Build ``F_pre`` so that the imaged geometry balances ``pressures`` at ``d = 0``.

    Pressures are ramped linearly over ``steps`` increments. Each increment
    solves the static problem, multiplies the incremental deformation
    gradient into ``F_pre``, hands the displacement to the springs and
    resets it to zero. Extra increments at the target pressure continue
    until the residual at ``d = 0`` is below the Newton tolerance, measured
    relative to the bare pressure load.

    ``update="full"`` multiplies the whole incremental deformation gradient
    into ``F_pre``; ``update="stretch"`` keeps only its right stretch, so
    increment rotations do not rotate the stored stress. Both share the
    fixed point ``d = 0``. ``anderson`` is the mixing history length of the
    correction phase (0 gives the plain fixed-point iteration).
    """
    if update not in ("stretch", "full"):
        raise ValueError("prestress update must be 'stretch' or 'full'")
    opts = opts or NewtonOptions()
    if steps < 1:
        raise ValueError("prestress needs at least one increment")
    E, Q = solid.geo.dV.shape
    F_pre = np.broadcast_to(np.eye(3), (E, Q, 3, 3)).copy() if solid.F_pre is None else solid.F_pre.copy()
    solid.set_prestress(F_pre)
    zero = np.zeros(solid.n_dof)

    def residual_at_zero(p):
        r = solid.assemble(zero, zero, None, p, tangent=False).force
        r[solid.fixed] = 0.0
        return float(np.linalg.norm(r))

    load = {c: float(v) for c, v in pressures.items()}
    if not any(load.values()):
        return PrestressResult(F_pre, residual_at_zero(load), opts.atol, 0, 0)
    ref = pressure_load_norm(solid, load)
    tol = max(opts.rtol * ref, opts.atol)

    length = float(np.ptp(solid.mesh.nodes, axis=0).max())
    offsets = [(sp_, name) for sp_ in solid.springs for name in ("u_pre", "g_pre") if hasattr(sp_, name)]

    def pack():
        parts = [solid.F_pre.ravel()] + [np.ravel(getattr(sp_, n)) / length for sp_, n in offsets]
        return np.concatenate(parts)

    def unpack(x):
        n = solid.F_pre.size
        solid.set_prestress(x[:n].reshape(solid.F_pre.shape))
        for sp_, name in offsets:
            cur = getattr(sp_, name)
            setattr(sp_, name, x[n : n + cur.size].reshape(cur.shape) * length)
            n += cur.size

    def increment(p):
        try:
            d, _ = static_solve(solid, p, opts=opts, ref=ref)
        except ConvergenceError as err:
            raise ConvergenceError(f"prestress increment did not converge; try more ramp steps ({err})", err.history) from None
        F_inc = solid.deformation_gradient(d)
        if update == "stretch":
            F_inc = right_stretch(F_inc)
        solid.set_prestress(F_inc @ solid.F_pre)
        d3 = d.reshape(-1, 3)
        for s in solid.springs:
            if hasattr(s, "absorb_prestress"):
                s.absorb_prestress(d3)
        return d

    for k in range(1, steps + 1):
        increment({c: p * k / steps for c, p in load.items()})
    # Corrections at the target load form a fixed-point iteration that can
    # be slow or unstable in weakly supported modes (twist about the long
    # axis); Anderson mixing over a short history stabilises it.
    extra = 0
    res = residual_at_zero(load)
    X, G = [], []
    while res > tol:
        if extra >= max_extra:
            raise ConvergenceError(f"prestress residual {res:.3e} still above {tol:.3e} after {extra} extra iterations")
        x = pack()
        d = increment(load)
        g = pack()
        X.append(x)
        G.append(g)
        X, G = X[-anderson - 1 :], G[-anderson - 1 :]
        if len(X) > 1:
            Fk = [gi - xi for gi, xi in zip(G, X)]
            dF = np.column_stack([Fk[i + 1] - Fk[i] for i in range(len(Fk) - 1)])
            dG = np.column_stack([G[i + 1] - G[i] for i in range(len(G) - 1)])
            gam = np.linalg.lstsq(dF, Fk[-1], rcond=None)[0]
            unpack(g - dG @ gam)
        extra += 1
        res = residual_at_zero(load)
        log.debug("prestress correction %d: |d| = %.3e, residual %.3e", extra, np.abs(d).max(), res)
    log.info("prestress: %d increments + %d corrections, residual %.3e (tol %.3e)", steps, extra, res, tol)
    return PrestressResult(solid.F_pre, res, tol, steps, extra)


# -- driver ------------------------------------------------------------------------------------


class ConvergenceLog:
    """Per-step Newton statistics, written as CSV."""

    columns = ("step", "t", "iterations", "res_struct", "res_0d", "halvings")

    def __init__(self):
        self.rows = []

    def add(self, rep: StepReport):
        self.rows.append((rep.step, rep.t, rep.iterations, rep.res_struct, rep.res_0d, rep.halvings))

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([r[0], repr(float(r[1])), r[2], repr(float(r[3])), repr(float(r[4])), r[5]])


def run_transient(model: CoupledModel, state: SystemState, t_end, record=None, conv_log: ConvergenceLog | None = None):
    """Advance ``state`` to ``t_end`` with fixed steps.

    ``record(state)`` is called after every accepted step (and once for the
    initial state). Returns the final state.
    """
    dt = model.time.dt
    n = int(round((t_end - state.t) / dt))
    if n < 0:
        raise ValueError("t_end lies before the current time")
    if record is not None:
        record(state)
    for _ in range(n):
        try:
            state, rep = model.step(state, dt)
        except ConvergenceError as err:
            log.error("step rejected at t = %.4f s: %s", state.t + dt, err)
            for row in err.history:
                log.error("  iteration %d: |R_S| = %.3e, |R_0D| = %.3e", *row)
            raise
        if conv_log is not None:
            conv_log.add(rep)
        log.debug("step %d t=%.4f iters=%d", rep.step, rep.t, rep.iterations)
        if record is not None:
            record(state)
    return state
