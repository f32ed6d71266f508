"""Myofiber, sheet and sheet-normal directions.

The transmural coordinate is either a harmonic function (Laplace solve
with 0 on the endocardium and 1 on the epicardium) or, for generated
ellipsoids, the analytic shell parameter. The helix angle varies linearly
in that coordinate; fibers are the local circumferential direction
rotated by the helix angle about the transmural direction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .elements import DEFAULT_TET_RULE
from .fem import SparsityPattern, scalar_laplacian
from .mesh import Mesh, MeshError, volume_geometry

log = logging.getLogger(__name__)

ENDO_TAGS = ("endocardium_left", "endocardium_right")


@dataclass(frozen=True)
class FiberField:
    """Orthonormal triads at volume quadrature points, arrays shaped ``(E, Q, 3)``."""

    f0: np.ndarray
    s0: np.ndarray
    n0: np.ndarray
    alpha: np.ndarray  # helix angle [deg], (E, Q)
    transmural: np.ndarray  # (E, Q)

    def reshape_points(self):
        return self.f0.reshape(-1, 3), self.s0.reshape(-1, 3), self.n0.reshape(-1, 3)


def harmonic_lift(mesh: Mesh, boundary_values: dict, rule=DEFAULT_TET_RULE) -> np.ndarray:
    """Solve the Laplace equation with Dirichlet data on surface nodes.

    Parameters
    ----------
    boundary_values : dict
        ``{surface tag: value}`` or ``{surface tag: (n_nodes,) array}``.

    Returns
    -------
    (n_nodes,) array; closure-only nodes get ``nan``.
    """
    geo = volume_geometry(mesh, rule)
    K = scalar_laplacian(mesh, geo, SparsityPattern(mesh.n_nodes, [mesh.elements]))
    u = np.full(mesh.n_nodes, np.nan)
    fixed = []
    for tag, val in boundary_values.items():
        nodes = mesh.surface_nodes(tag)
        v = np.broadcast_to(np.asarray(val, dtype=float), (mesh.n_nodes,)) if np.ndim(val) else np.full(mesh.n_nodes, float(val))
        u[nodes] = v[nodes]
        fixed.append(nodes)
    fixed = np.unique(np.concatenate(fixed)) if fixed else np.zeros(0, np.int64)

    solid = mesh.solid_nodes
    ncomp, labels = connected_components(K[solid][:, solid], directed=False)
    lab = np.full(mesh.n_nodes, -1)
    lab[solid] = labels
    have = np.zeros(ncomp, bool)
    have[lab[fixed][lab[fixed] >= 0]] = True
    if not have.all():
        raise MeshError(f"harmonic lift is singular: {int((~have).sum())} connected component(s) carry no Dirichlet data")

    free = np.setdiff1d(solid, fixed)
    if len(free):
        b = -K[free][:, fixed] @ u[fixed]
        u[free] = spsolve(K[free][:, free].tocsc(), b)
    return u


def _unit(v, axis=-1):
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.where(n == 0.0, 1.0, n)


def triads_from_transmural(t, grad_t, alpha_endo, alpha_epi, long_axis):
    """Fiber triads from a transmural coordinate and its gradient.

    Parameters
    ----------
    t : (...,) array
        Transmural coordinate, 0 at endocardium and 1 at epicardium.
    grad_t : (..., 3) array
        Any vector along the outward transmural direction.
    alpha_endo, alpha_epi : float
        Helix angles [deg].
    long_axis : (3,) array
        Base-pointing long axis.
    """
    n0 = _unit(np.asarray(grad_t, dtype=float))
    axis = _unit(np.asarray(long_axis, dtype=float))
    c = np.cross(axis, n0)
    cn = np.linalg.norm(c, axis=-1)
    bad = cn < 1e-8
    if bad.any():
        log.warning("%d point(s) with transmural direction along the long axis; using a fallback circumferential direction", int(bad.sum()))
        helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        c[bad] = np.cross(helper, n0[bad])
    c = _unit(c)
    lng = np.cross(n0, c)
    alpha = alpha_endo + (alpha_epi - alpha_endo) * np.asarray(t, dtype=float)
    a = np.deg2rad(alpha)[..., None]
    f0 = np.cos(a) * c + np.sin(a) * lng
    s0 = np.cross(n0, f0)
    # re-orthonormalise against round-off
    f0 = _unit(f0)
    s0 = _unit(s0 - np.sum(s0 * f0, axis=-1, keepdims=True) * f0)
    n0 = np.cross(f0, s0)
    return f0, s0, n0, alpha


def helix_angle(f0, n0, long_axis):
    """Angle [deg] of ``f0`` to the circumferential direction, measured about ``n0``."""
    axis = _unit(np.asarray(long_axis, dtype=float))
    c = _unit(np.cross(axis, n0))
    lng = np.cross(n0, c)
    return np.rad2deg(np.arctan2(np.sum(f0 * lng, axis=-1), np.sum(f0 * c, axis=-1)))


def build_fibers(mesh: Mesh, alpha_endo=60.0, alpha_epi=-60.0, *, long_axis=None, endo=None, epi="epicardium", rule=DEFAULT_TET_RULE):
    """Rule-based fibers from a harmonic transmural coordinate."""
    if long_axis is None:
        long_axis = mesh.metadata.get("long_axis", [0.0, 0.0, 1.0])
    endo = [t for t in (endo or ENDO_TAGS) if t in mesh.surfaces]
    if not endo or epi not in mesh.surfaces:
        raise MeshError("fiber construction needs endocardial and epicardial surfaces")
    phi = harmonic_lift(mesh, {**{t: 0.0 for t in endo}, epi: 1.0}, rule)
    geo = volume_geometry(mesh, rule)
    pe = phi[mesh.elements]
    t = np.einsum("qa,ea->eq", geo.N, pe)
    g = np.einsum("eqai,ea->eqi", geo.dNdX, pe)
    f0, s0, n0, alpha = triads_from_transmural(t, g, alpha_endo, alpha_epi, long_axis)
    return FiberField(f0, s0, n0, alpha, t)


def ellipsoid_coordinate(X, r_endo, r_epi, iters=60):
    """Shell parameter ``t`` with ``X`` on the ellipsoid of semi-axes ``r_endo + t (r_epi - r_endo)``.

    Solved by bisection, which is robust because the left side of
    ``sum (X_i / r_i(t))^2 = 1`` decreases monotonically in ``t``.
    """
    X = np.asarray(X, dtype=float)
    r0, r1 = np.asarray(r_endo, float), np.asarray(r_epi, float)
    lo = np.full(X.shape[:-1], -0.5)
    hi = np.full(X.shape[:-1], 1.5)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        r = r0 + mid[..., None] * (r1 - r0)
        inside = np.sum((X / r) ** 2, axis=-1) < 1.0
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    return 0.5 * (lo + hi)


def analytic_ellipsoid_fibers(mesh: Mesh, alpha_endo=60.0, alpha_epi=-60.0, rule=DEFAULT_TET_RULE):
    """Fibers from the analytic shell coordinate of a generated ellipsoid."""
    kind = mesh.metadata.get("kind")
    if kind not in ("half_ellipsoid", "closed_ellipsoid"):
        raise MeshError("analytic fibers need a mesh from generate_half_ellipsoid")
    r0 = np.asarray(mesh.metadata["r_endo"])
    r1 = np.asarray(mesh.metadata["r_epi"])
    geo = volume_geometry(mesh, rule)
    t = ellipsoid_coordinate(geo.X, r0, r1)
    r = r0 + t[..., None] * (r1 - r0)
    # gradient of t is along the ellipsoid normal X / r^2
    f0, s0, n0, alpha = triads_from_transmural(np.clip(t, 0.0, 1.0), geo.X / r**2, alpha_endo, alpha_epi, mesh.metadata["long_axis"])
    return FiberField(f0, s0, n0, alpha, t)


def uniform_fibers(mesh: Mesh, f0=(1.0, 0.0, 0.0), s0=(0.0, 1.0, 0.0), rule=DEFAULT_TET_RULE):
    """Spatially constant triad, handy for isotropic materials and tests."""
    geo = volume_geometry(mesh, rule)
    shape = geo.dV.shape + (3,)
    f = np.broadcast_to(_unit(np.asarray(f0, float)), shape).copy()
    s = np.broadcast_to(_unit(np.asarray(s0, float)), shape).copy()
    n = np.cross(f, s)
    return FiberField(f, s, n, np.zeros(geo.dV.shape), np.zeros(geo.dV.shape))
