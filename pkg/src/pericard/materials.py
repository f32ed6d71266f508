"""Kinematics and constitutive laws.

Strain energies are written in terms of invariants of the right
Cauchy-Green tensor ``C``. Every invariant is carried as a small
"jet" holding its value, first derivative ``dI/dC`` and second derivative
``d2I/dC2``, so that stress ``S = 2 dpsi/dC`` and tangent
``dS/dE = 4 d2psi/dC2`` follow mechanically from the chain rule.

All arrays are batched over leading axes: tensors are ``(..., 3, 3)``,
fourth-order tangents ``(..., 3, 3, 3, 3)``. Units are SI (Pa, Pa s).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

HOLZAPFEL_FORMS = ("standard_ho2009", "as_printed")
MODELS = ("holzapfel", "mooney", "neohooke")

_I3x3 = np.eye(3)
# symmetric fourth-order identity 1/2 (d_ik d_jl + d_il d_jk)
_ISYM = 0.5 * (np.einsum("ik,jl->ijkl", _I3x3, _I3x3) + np.einsum("il,jk->ijkl", _I3x3, _I3x3))
_IxI = np.einsum("ij,kl->ijkl", _I3x3, _I3x3)


class ElementInversionError(RuntimeError):
    """Raised when det F <= 0 somewhere in the mesh."""

    def __init__(self, elements):
        self.elements = np.unique(np.asarray(elements))
        super().__init__(f"inverted element(s) (det F <= 0): {self.elements[:10].tolist()}")


@dataclass(frozen=True)
class Kinematics:
    F: np.ndarray
    C: np.ndarray
    E: np.ndarray
    J: np.ndarray
    Edot: np.ndarray | None = None
    Fdot: np.ndarray | None = None


def kinematics(dNdX, d_e, v_e=None, *, element_ids=None) -> Kinematics:
    """Deformation measures at quadrature points.

    Parameters
    ----------
    dNdX : (E, Q, n, 3) array
        Shape-function gradients in the reference configuration.
    d_e, v_e : (E, n, 3) arrays
        Element nodal displacements and (optionally) velocities.
    element_ids : array, optional
        Global ids used in the inversion error message.
    """
    F = np.einsum("eai,eqaj->eqij", d_e, dNdX) + _I3x3
    J = np.linalg.det(F)
    if np.any(J <= 0.0):
        bad = np.nonzero((J <= 0.0).any(axis=1))[0]
        raise ElementInversionError(bad if element_ids is None else np.asarray(element_ids)[bad])
    C = np.einsum("...ki,...kj->...ij", F, F)
    E = 0.5 * (C - _I3x3)
    Edot = Fdot = None
    if v_e is not None:
        Fdot = np.einsum("eai,eqaj->eqij", v_e, dNdX)
        FtFd = np.einsum("...ki,...kj->...ij", F, Fdot)
        Edot = 0.5 * (FtFd + np.swapaxes(FtFd, -1, -2))
    return Kinematics(F, C, E, J, Edot, Fdot)


# -- invariant jets -------------------------------------------------------------


def _outer(A, B):
    return np.einsum("...ij,...kl->...ijkl", A, B)


def _sym_outer(A, B):
    """Sym-sym outer product A(x)B + B(x)A."""
    AB = _outer(A, B)
    return AB + _outer(B, A)


class _Jet:
    """Scalar function of C with its first and second C-derivatives.

    ``G`` and ``H`` may be ``None`` for identically zero derivatives.
    """

    __slots__ = ("v", "G", "H")

    def __init__(self, v, G, H=None):
        self.v, self.G, self.H = v, G, H

    def apply(self, f, df, d2f):
        v = self.v
        G = df(v)[..., None, None] * self.G
        H = d2f(v)[..., None, None, None, None] * _outer(self.G, self.G)
        if self.H is not None:
            H = H + df(v)[..., None, None, None, None] * self.H
        return _Jet(f(v), G, H)

    def power(self, p):
        return self.apply(lambda x: x**p, lambda x: p * x ** (p - 1), lambda x: p * (p - 1) * x ** (p - 2))

    def __mul__(self, o):
        v = self.v * o.v
        G = self.v[..., None, None] * o.G + o.v[..., None, None] * self.G
        H = _sym_outer(self.G, o.G)
        if o.H is not None:
            H = H + self.v[..., None, None, None, None] * o.H
        if self.H is not None:
            H = H + o.v[..., None, None, None, None] * self.H
        return _Jet(v, G, H)


def _i1(C):
    return _Jet(np.trace(C, axis1=-2, axis2=-1), np.broadcast_to(_I3x3, C.shape), None)


def _i2(C):
    I1 = np.trace(C, axis1=-2, axis2=-1)
    CC = np.einsum("...ij,...jk->...ik", C, C)
    v = 0.5 * (I1**2 - np.trace(CC, axis1=-2, axis2=-1))
    G = I1[..., None, None] * _I3x3 - C
    H = np.broadcast_to(_IxI - _ISYM, C.shape + (3, 3))
    return _Jet(v, G, H)


def _i3(C):
    I3 = np.linalg.det(C)
    Ci = np.linalg.inv(C)
    G = I3[..., None, None] * Ci
    CixCi = _outer(Ci, Ci)
    CiOCi = 0.5 * (np.einsum("...ik,...jl->...ijkl", Ci, Ci) + np.einsum("...il,...jk->...ijkl", Ci, Ci))
    H = I3[..., None, None, None, None] * (CixCi - CiOCi)
    return _Jet(I3, G, H)


def _linear(C, A):
    """Invariant ``A : C`` for a constant symmetric structural tensor ``A``."""
    A = np.broadcast_to(A, C.shape)
    return _Jet(np.einsum("...ij,...ij->...", A, C), A, None)


def _structural(f0, s0=None):
    if s0 is None:
        return np.einsum("...i,...j->...ij", f0, f0)
    fs = np.einsum("...i,...j->...ij", f0, s0)
    return 0.5 * (fs + np.swapaxes(fs, -1, -2))


@dataclass(frozen=True)
class InvariantSet:
    I1: np.ndarray
    I2: np.ndarray
    I1bar: np.ndarray
    I2bar: np.ndarray
    I4f: np.ndarray | None
    I4s: np.ndarray | None
    I8fs: np.ndarray | None
    J: np.ndarray


def invariants(C, f0=None, s0=None) -> InvariantSet:
    """Isotropic and fiber invariants of ``C``."""
    C = np.asarray(C, dtype=float)
    I1 = np.trace(C, axis1=-2, axis2=-1)
    I2 = 0.5 * (I1**2 - np.einsum("...ij,...ji->...", C, C))
    J = np.sqrt(np.linalg.det(C))
    I4f = I4s = I8 = None
    if f0 is not None:
        I4f = np.einsum("...i,...ij,...j->...", f0, C, f0)
    if s0 is not None:
        I4s = np.einsum("...i,...ij,...j->...", s0, C, s0)
    if f0 is not None and s0 is not None:
        I8 = np.einsum("...i,...ij,...j->...", f0, C, s0)
    return InvariantSet(I1, I2, J ** (-2 / 3) * I1, J ** (-4 / 3) * I2, I4f, I4s, I8, J)


# -- parameters -------------------------------------------------------------


@dataclass(frozen=True)
class MaterialParams:
    """Passive material constants in SI units.

    ``model`` selects the hyperelastic family: ``holzapfel`` (exponential
    orthotropic), ``mooney`` (Mooney-Rivlin) or ``neohooke``. The volumetric
    penalty ``kappa`` and the viscosity ``eta`` apply to every family.
    """

    model: str = "holzapfel"
    a: float = 0.0
    b: float = 0.0
    a_f: float = 0.0
    b_f: float = 0.0
    a_s: float = 0.0
    b_s: float = 0.0
    a_fs: float = 0.0
    b_fs: float = 0.0
    C1: float = 0.0
    C2: float = 0.0
    mu: float = 0.0
    kappa: float = 1.0e6
    eta: float = 0.0
    rho: float = 1.0e3
    holzapfel_form: str = "standard_ho2009"
    tension_only: bool = True
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown material model {self.model!r}; choose from {MODELS}")
        if self.holzapfel_form not in HOLZAPFEL_FORMS:
            raise ValueError(f"unknown holzapfel_form {self.holzapfel_form!r}")
        for k in ("a", "b", "a_f", "b_f", "a_s", "b_s", "a_fs", "b_fs", "C1", "C2", "mu", "eta", "rho"):
            if getattr(self, k) < 0:
                raise ValueError(f"material parameter {k} must be >= 0")
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")

    def with_(self, **kw) -> "MaterialParams":
        return replace(self, **kw)


def _exp_term(x: _Jet, a, b):
    """``a/(2b) (exp(b x) - 1)`` with the ``b -> 0`` limit ``a x / 2``."""
    if a == 0.0:
        return None
    if b == 0.0:
        return x.apply(lambda v: 0.5 * a * v, lambda v: np.full_like(v, 0.5 * a), np.zeros_like)
    return x.apply(
        lambda v: a / (2 * b) * np.expm1(b * v),
        lambda v: 0.5 * a * np.exp(b * v),
        lambda v: 0.5 * a * b * np.exp(b * v),
    )


def _sq_exp_term(x: _Jet, a, b, shift, tension_only):
    """``a/(2b) (exp(b <x - shift>^2) - 1)``; ``<.>`` is the ramp when ``tension_only``."""
    if a == 0.0:
        return None

    def r(v):
        d = v - shift
        return np.maximum(d, 0.0) if tension_only else d

    def on(v):
        return ((v - shift) > 0.0).astype(float) if tension_only else np.ones_like(v)

    if b == 0.0:
        return x.apply(lambda v: 0.5 * a * r(v) ** 2, lambda v: a * r(v), lambda v: a * on(v))

    def f(v):
        return a / (2 * b) * np.expm1(b * r(v) ** 2)

    def df(v):
        return a * r(v) * np.exp(b * r(v) ** 2)

    def d2f(v):
        e = np.exp(b * r(v) ** 2)
        return a * on(v) * e * (1.0 + 2.0 * b * r(v) ** 2)

    return x.apply(f, df, d2f)


def _isochoric(C):
    I3 = _i3(C)
    return _i1(C) * I3.power(-1.0 / 3.0), I3


def _terms_holzapfel(C, f0, s0, p: MaterialParams):
    I1bar, _ = _isochoric(C)
    terms = [_exp_term(I1bar.apply(lambda v: v - 3.0, np.ones_like, np.zeros_like), p.a, p.b)]
    for (a_i, b_i), vec in (((p.a_f, p.b_f), f0), ((p.a_s, p.b_s), s0)):
        if a_i == 0.0:
            continue
        I4 = _linear(C, _structural(vec))
        if p.holzapfel_form == "as_printed":
            terms.append(_exp_term(I4.apply(lambda v: v - 3.0, np.ones_like, np.zeros_like), a_i, b_i))
        else:
            terms.append(_sq_exp_term(I4, a_i, b_i, 1.0, p.tension_only))
    if p.a_fs:
        I8 = _linear(C, _structural(f0, s0))
        terms.append(_sq_exp_term(I8, p.a_fs, p.b_fs, 0.0, False))
    return [t for t in terms if t is not None]


def _terms_mooney(C, p: MaterialParams):
    I3 = _i3(C)
    out = []
    if p.C1:
        t = _i1(C) * I3.power(-1.0 / 3.0)
        out.append(t.apply(lambda v: p.C1 * (v - 3.0), lambda v: np.full_like(v, p.C1), np.zeros_like))
    if p.C2:
        t = _i2(C) * I3.power(-2.0 / 3.0)
        out.append(t.apply(lambda v: p.C2 * (v - 3.0), lambda v: np.full_like(v, p.C2), np.zeros_like))
    return out


def _terms_neohooke(C, p: MaterialParams):
    t = _i1(C) * _i3(C).power(-1.0 / 3.0)
    h = 0.5 * p.mu
    return [t.apply(lambda v: h * (v - 3.0), lambda v: np.full_like(v, h), np.zeros_like)]


def _terms_volumetric(C, kappa):
    J = _i3(C).power(0.5)
    return [J.apply(lambda v: 0.5 * kappa * (1.0 - v) ** 2, lambda v: kappa * (v - 1.0), lambda v: np.full_like(v, kappa))]


def _collect(terms, C, tangent):
    shape = C.shape[:-2]
    psi = np.zeros(shape)
    S = np.zeros(C.shape)
    Cm = np.zeros(C.shape + (3, 3)) if tangent else None
    for t in terms:
        psi = psi + t.v
        S = S + 2.0 * t.G
        if tangent and t.H is not None:
            Cm = Cm + 4.0 * t.H
    return psi, S, Cm


def _iso_terms(C, f0, s0, p):
    if p.model == "holzapfel":
        return _terms_holzapfel(C, f0, s0, p)
    if p.model == "mooney":
        return _terms_mooney(C, p)
    return _terms_neohooke(C, p)


def _as_C(C):
    return np.asarray(C, dtype=float)


# -- public API -------------------------------------------------------------


def strain_energy(C, f0=None, s0=None, params: MaterialParams | None = None, *, volumetric=True):
    """Hyperelastic strain energy density [Pa] of the selected model."""
    C = _as_C(C)
    terms = _iso_terms(C, f0, s0, params)
    if volumetric:
        terms += _terms_volumetric(C, params.kappa)
    return _collect(terms, C, False)[0]


def pk2_holzapfel(C, f0, s0, params: MaterialParams):
    """Second Piola-Kirchhoff stress of the exponential orthotropic law.

    Uses ``params.holzapfel_form``: ``standard_ho2009`` has fiber terms
    ``exp(b_i <I4_i - 1>^2)`` and vanishes at ``C = I``; ``as_printed``
    has ``exp(b_i (I4_i - 3))`` and leaves ``a_i exp(-2 b_i) f(x)f`` at the
    reference state. The volumetric penalty is not included.
    """
    C = _as_C(C)
    return _collect(_terms_holzapfel(C, f0, s0, params), C, False)[1]


def pk2_mooney(C, params: MaterialParams):
    C = _as_C(C)
    return _collect(_terms_mooney(C, params), C, False)[1]


def pk2_neohooke(C, params: MaterialParams):
    C = _as_C(C)
    return _collect(_terms_neohooke(C, params), C, False)[1]


def pk2_volumetric(C, kappa):
    """Stress of the penalty ``kappa/2 (1 - J)^2``."""
    C = _as_C(C)
    return _collect(_terms_volumetric(C, kappa), C, False)[1]


def volumetric_energy(J, kappa):
    return 0.5 * kappa * (1.0 - np.asarray(J)) ** 2


def viscous_stress(Edot, eta):
    """``S = eta * Edot``, the derivative of ``eta/2 tr(Edot^2)``."""
    return eta * np.asarray(Edot)


def viscous_potential(Edot, eta):
    Edot = np.asarray(Edot)
    return 0.5 * eta * np.einsum("...ij,...ji->...", Edot, Edot)


def stress_and_tangent(C, f0=None, s0=None, params: MaterialParams | None = None, *, tangent=True):
    """Total hyperelastic PK2 stress and ``dS/dE`` (volumetric part included).

    Returns
    -------
    psi : (...) array
    S : (..., 3, 3) array
    CC : (..., 3, 3, 3, 3) array or None
    """
    C = _as_C(C)
    terms = _iso_terms(C, f0, s0, params) + _terms_volumetric(C, params.kappa)
    return _collect(terms, C, tangent)


def material_tangent(C, f0=None, s0=None, params: MaterialParams | None = None):
    """Fourth-order tangent ``dS/dE`` of the hyperelastic stress, volumetric part included."""
    return stress_and_tangent(C, f0, s0, params)[2]


def pk2_total(C, f0=None, s0=None, params: MaterialParams | None = None):
    return stress_and_tangent(C, f0, s0, params, tangent=False)[1]
