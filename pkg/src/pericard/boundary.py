"""Boundary tractions and their linearizations.

Pointwise traction laws are plain functions. The ``*Condition`` classes
integrate them over a tagged surface and return element-block residuals
and tangents that the mechanics assembler scatters into the global system.
Block arrays are ``(F, 18)`` for forces and ``(F, 18, 18)`` for tangents,
with dofs ordered node-major (``3 * local_node + component``).

Spring-type conditions integrate over the reference surface ``dA``. Each
keeps an offset (``u_pre`` or ``g_pre``) that prestressing accumulates, so
the spring force present in the imaged state survives the displacement
reset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .elements import tri6_shape, tri6_shape_grad, tri6_shape_hess, tri_rule
from .fem import vector_dofs
from .mesh import Mesh, MeshError, surface_geometry

# -- pointwise laws -------------------------------------------------------------------


def pericardial_traction_reference(u, udot, N, k_p, c_p):
    """``t = N (k_p u.N + c_p udot.N)`` with the reference normal ``N``."""
    un = np.sum(u * N, axis=-1, keepdims=True)
    vn = np.sum(udot * N, axis=-1, keepdims=True)
    return N * (k_p * un + c_p * vn)


def omni_spring_traction(u, udot, k, c):
    return k * np.asarray(u) + c * np.asarray(udot)


def pericardial_traction_projection(x, X_proj, n, udot, k_p, c_p, g_pre=0.0):
    """``t = n (k_p g + c_p gdot)`` with ``g = (x - X_proj).n`` and ``gdot = udot.n``."""
    g = np.sum((x - X_proj) * n, axis=-1, keepdims=True) + np.asarray(g_pre)[..., None]
    gd = np.sum(udot * n, axis=-1, keepdims=True)
    return n * (k_p * g + c_p * gd)


def follower_pressure(p, F, N):
    """Pressure load per unit reference area, ``p J F^-T N`` (Nanson's formula).

    Returned with the sign of the residual: a positive pressure inside a
    cavity pushes the wall along ``-N`` when ``N`` points out of the solid.
    """
    F = np.asarray(F, dtype=float)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise MeshError("inverted element in follower pressure")
    FinvT = np.swapaxes(np.linalg.inv(F), -1, -2)
    return p * J[..., None] * np.einsum("...ij,...j->...i", FinvT, N)


def _skew(v):
    """``[v]x`` such that ``[v]x w = v x w``; shape ``(..., 3, 3)``."""
    z = np.zeros(v.shape[:-1])
    return np.stack(
        [
            np.stack([z, -v[..., 2], v[..., 1]], -1),
            np.stack([v[..., 2], z, -v[..., 0]], -1),
            np.stack([-v[..., 1], v[..., 0], z], -1),
        ],
        -2,
    )


def _expand_nodes(A):
    """``(..., 6, 6)`` node-node scalar to ``(..., 18, 18)`` with identity on components."""
    out = np.einsum("...ab,ij->...aibj", A, np.eye(3))
    return out.reshape(A.shape[:-2] + (18, 18))


def _blocks(A):
    """``(..., 6, 3, 6, 3)`` to ``(..., 18, 18)``."""
    return A.reshape(A.shape[:-4] + (18, 18))


@dataclass
class SurfaceContribution:
    """Face-block residual (and optional tangents) of one condition."""

    dofs: np.ndarray  # (F, 18)
    force: np.ndarray  # (F, 18)
    K: np.ndarray | None = None  # d force / d d
    D: np.ndarray | None = None  # d force / d v
    dp: np.ndarray | None = None  # d force / d pressure, (F, 18)


class _SurfaceCondition:
    kind = ""

    def __init__(self, mesh: Mesh, tag: str, rule="radon7"):
        if tag not in mesh.surfaces:
            raise MeshError(f"boundary condition on unknown surface {tag!r}")
        if tag in mesh.closures:
            raise MeshError(f"surface {tag!r} is a geometry-only closure and cannot carry loads")
        self.mesh = mesh
        self.tag = tag
        self.faces = mesh.surface(tag)
        self.dofs = vector_dofs(self.faces)
        self.rule = tri_rule(rule) if isinstance(rule, str) else rule
        ref = surface_geometry(self.faces, mesh.nodes, self.rule)
        self.N = ref.normals  # (F, q, 3)
        self.dA = ref.area_weights  # (F, q)
        self.Xq = ref.x
        self.shape = tri6_shape(self.rule.points)  # (q, 6)

    def _face_values(self, d):
        return np.asarray(d)[self.faces]  # (F, 6, 3)

    def _at_qp(self, d):
        return np.einsum("qa,fai->fqi", self.shape, self._face_values(d))

    @property
    def area(self):
        return float(self.dA.sum())


class ReferenceNormalSpring(_SurfaceCondition):
    """Pericardial spring-dashpot acting along the reference normal."""

    kind = "pericardial_reference_normal"

    def __init__(self, mesh, tag, k, c, rule="radon7"):
        super().__init__(mesh, tag, rule)
        if k < 0 or c < 0:
            raise ValueError("spring stiffness and damping must be >= 0")
        self.k, self.c = float(k), float(c)
        self.u_pre = np.zeros((mesh.n_nodes, 3))
        # constant face matrix  int N_a N_b (N x N) dA
        self._P = np.einsum("qa,qb,fqi,fqj,fq->faibj", self.shape, self.shape, self.N, self.N, self.dA).reshape(-1, 18, 18)

    def contribution(self, d, v, tangent=True):
        u = (np.asarray(d) + self.u_pre)[self.faces].reshape(-1, 18)
        w = np.asarray(v)[self.faces].reshape(-1, 18)
        f = np.einsum("fij,fj->fi", self._P, self.k * u + self.c * w)
        if not tangent:
            return SurfaceContribution(self.dofs, f)
        return SurfaceContribution(self.dofs, f, self.k * self._P, self.c * self._P)

    def normal_stress(self, d, v):
        """Signed normal stress ``-(k u.N + c udot.N)`` at quadrature points; positive is tension."""
        u = self._at_qp(np.asarray(d) + self.u_pre)
        w = self._at_qp(v)
        return -(self.k * np.sum(u * self.N, -1) + self.c * np.sum(w * self.N, -1))

    def energy(self, d):
        u = self._at_qp(np.asarray(d) + self.u_pre)
        return 0.5 * self.k * float(np.sum(np.sum(u * self.N, -1) ** 2 * self.dA))

    def absorb_prestress(self, d, context=None):
        self.u_pre = self.u_pre + np.asarray(d)


class OmniSpring(_SurfaceCondition):
    """Spring-dashpot acting in all directions."""

    kind = "omni_spring"

    def __init__(self, mesh, tag, k, c, rule="radon7"):
        super().__init__(mesh, tag, rule)
        if k < 0 or c < 0:
            raise ValueError("spring stiffness and damping must be >= 0")
        self.k, self.c = float(k), float(c)
        self.u_pre = np.zeros((mesh.n_nodes, 3))
        self._P = _expand_nodes(np.einsum("qa,qb,fq->fab", self.shape, self.shape, self.dA))

    def contribution(self, d, v, tangent=True):
        u = (np.asarray(d) + self.u_pre)[self.faces].reshape(-1, 18)
        w = np.asarray(v)[self.faces].reshape(-1, 18)
        f = np.einsum("fij,fj->fi", self._P, self.k * u + self.c * w)
        if not tangent:
            return SurfaceContribution(self.dofs, f)
        return SurfaceContribution(self.dofs, f, self.k * self._P, self.c * self._P)

    def traction(self, d, v):
        """Spring traction ``k u + c udot`` at quadrature points, ``(F, q, 3)``."""
        return self.k * self._at_qp(np.asarray(d) + self.u_pre) + self.c * self._at_qp(v)

    def energy(self, d):
        u = self._at_qp(np.asarray(d) + self.u_pre)
        return 0.5 * self.k * float(np.sum(np.sum(u * u, -1) * self.dA))

    def absorb_prestress(self, d, context=None):
        self.u_pre = self.u_pre + np.asarray(d)


class ProjectionError(RuntimeError):
    pass


class ReferenceSurfaceProjector:
    """Closest-point projection onto a fixed quadratic triangle surface."""

    def __init__(self, X, faces, radius=None, candidates=8):
        self.X = np.asarray(X, dtype=float)
        self.faces = np.asarray(faces)
        self.Xe = self.X[self.faces]  # (F, 6, 3)
        cent = self.Xe[:, :3].mean(axis=1)
        self.tree = cKDTree(cent)
        edge = np.linalg.norm(self.Xe[:, [1, 2, 0], :] - self.Xe[:, :3, :], axis=-1)
        self.h = float(edge.max())
        self.radius = 2.0 * self.h if radius is None else float(radius)
        self.k = min(candidates, len(self.faces))
        self.hess = tri6_shape_hess(np.zeros(2))  # constant, (6, 2, 2)

    def _eval(self, face, xi):
        Xe = self.Xe[face]  # (..., 6, 3)
        N = tri6_shape(xi)
        dN = tri6_shape_grad(xi)
        X = np.matmul(N[..., None, :], Xe)[..., 0, :]
        dX = np.matmul(np.swapaxes(Xe, -1, -2), dN)  # (..., 3, 2)
        ddX = np.matmul(np.swapaxes(Xe, -1, -2), self.hess.reshape(6, 4)).reshape(Xe.shape[:-2] + (3, 2, 2))
        return X, dX, ddX

    @staticmethod
    def _clamp(xi):
        xi = np.clip(xi, 0.0, 1.0)
        s = xi.sum(-1, keepdims=True)
        return xi / np.maximum(s, 1.0)

    def project(self, x, iters=12):
        """Return ``(face, xi, X_proj, dX_proj/dx)`` for points ``x`` of shape ``(P, 3)``."""
        x = np.asarray(x, dtype=float)
        _, cand = self.tree.query(x, k=self.k)
        cand = cand.reshape(len(x), -1)
        xs = np.broadcast_to(x[:, None, :], cand.shape + (3,))
        xi = np.full(cand.shape + (2,), 1.0 / 3.0)
        for _ in range(iters):
            X, dX, ddX = self._eval(cand, xi)
            r = X - xs
            g = np.matmul(r[..., None, :], dX)[..., 0, :]
            M = np.matmul(np.swapaxes(dX, -1, -2), dX)
            A = M + np.einsum("...i,...ikl->...kl", r, ddX)
            # fall back to the metric where the Hessian is not positive
            detA = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
            detM = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
            ok = (detA > 1e-12 * detM) & (A[..., 0, 0] > 0)
            A = np.where(ok[..., None, None], A, M)
            det = np.where(ok, detA, detM)
            step = np.stack([A[..., 1, 1] * g[..., 0] - A[..., 0, 1] * g[..., 1], A[..., 0, 0] * g[..., 1] - A[..., 1, 0] * g[..., 0]], -1) / det[..., None]
            new = self._clamp(xi - step)
            moved = np.abs(new - xi).max()
            xi = new
            if moved < 1e-13:
                break
        X, dX, ddX = self._eval(cand, xi)
        dist = np.linalg.norm(X - xs, axis=-1)
        best = np.argmin(dist, axis=1)
        rows = np.arange(len(x))
        if np.any(dist[rows, best] > self.radius):
            bad = int(np.argmax(dist[rows, best] > self.radius))
            raise ProjectionError(
                f"closest-point projection failed for point {bad} at {x[bad].tolist()}: "
                f"distance {dist[bad, best[bad]]:.3e} exceeds search radius {self.radius:.3e}"
            )
        face = cand[rows, best]
        xi = xi[rows, best]
        X = X[rows, best]
        dX = dX[rows, best]
        ddX = ddX[rows, best]
        r = x - X
        A = np.einsum("pik,pil->pkl", dX, dX) - np.einsum("pi,pikl->pkl", r, ddX)
        interior = (xi.min(-1) > 1e-10) & (xi.sum(-1) < 1 - 1e-10)
        # dX_proj/dx = X,a A^-1 X,b^T in the interior; frozen on edges
        dproj = np.einsum("pik,pkl,pjl->pij", dX, np.linalg.inv(A), dX)
        dproj[~interior] = 0.0
        return face, xi, X, dproj


class ProjectionSpring(_SurfaceCondition):
    """Pericardial spring with closest-point gap along the current normal."""

    kind = "pericardial_projection"

    def __init__(self, mesh, tag, k, c, rule="radon7", radius=None):
        super().__init__(mesh, tag, rule)
        if k < 0 or c < 0:
            raise ValueError("spring stiffness and damping must be >= 0")
        self.k, self.c = float(k), float(c)
        self.projector = ReferenceSurfaceProjector(mesh.nodes, self.faces, radius)
        self.dshape = tri6_shape_grad(self.rule.points)  # (q, 6, 2)
        self.g_pre = np.zeros(self.dA.shape)

    def _state(self, d, v):
        x = self.mesh.nodes + np.asarray(d)
        xe = x[self.faces]
        xq = np.einsum("qa,fai->fqi", self.shape, xe)
        g1 = np.einsum("qa,fai->fqi", self.dshape[..., 0], xe)
        g2 = np.einsum("qa,fai->fqi", self.dshape[..., 1], xe)
        a = np.cross(g1, g2)
        na = np.linalg.norm(a, axis=-1, keepdims=True)
        n = a / na
        F, Q = self.dA.shape
        _, _, Xp, dproj = self.projector.project(xq.reshape(-1, 3))
        Xp = Xp.reshape(F, Q, 3)
        dproj = dproj.reshape(F, Q, 3, 3)
        w = np.einsum("qa,fai->fqi", self.shape, np.asarray(v)[self.faces])
        g = np.sum((xq - Xp) * n, -1) + self.g_pre
        gd = np.sum(w * n, -1)
        return dict(xq=xq, g1=g1, g2=g2, n=n, na=na, Xp=Xp, dproj=dproj, w=w, g=g, gd=gd)

    def gap(self, d, v=None):
        v = np.zeros_like(d) if v is None else v
        s = self._state(d, v)
        return s["g"], s["gd"]

    def contribution(self, d, v, tangent=True):
        s = self._state(d, v)
        n, g, gd = s["n"], s["g"], s["gd"]
        lam = self.k * g + self.c * gd  # (F, q)
        Nq = self.shape  # (q, 6)
        f = np.einsum("qa,fq,fqi,fq->fai", Nq, lam, n, self.dA).reshape(-1, 18)
        if not tangent:
            return SurfaceContribution(self.dofs, f)
        # dn/dx_b = P/|a| (-N_b,1 [g2]x + N_b,2 [g1]x),  P = I - n n
        Pn = np.eye(3) - np.einsum("fqi,fqj->fqij", n, n)
        S1 = _skew(s["g1"])
        S2 = _skew(s["g2"])
        da = -np.einsum("qb,fqij->fqbij", self.dshape[..., 0], S2) + np.einsum("qb,fqij->fqbij", self.dshape[..., 1], S1)
        dn = np.einsum("fqik,fqbkj->fqbij", Pn / s["na"][..., None], da)  # (F,q,6,3,3): dn_i/dx_bj
        r = s["xq"] - s["Xp"]
        # dg/dx_b = N_b (I - dproj)^T n + dn^T r ; dgd/dx_b = dn^T w
        Idp = np.eye(3) - s["dproj"]
        dg = np.einsum("qb,fqji,fqj->fqbi", Nq, Idp, n) + np.einsum("fqbji,fqj->fqbi", dn, r)
        dgd = np.einsum("fqbji,fqj->fqbi", dn, s["w"])
        dlam = self.k * dg + self.c * dgd  # (F,q,6,3)
        K = np.einsum("qa,fq,fqi,fqbj->faibj", Nq, self.dA, n, dlam)
        K += np.einsum("qa,fq,fq,fqbij->faibj", Nq, self.dA, lam, dn)
        D = self.c * np.einsum("qa,qb,fq,fqi,fqj->faibj", Nq, Nq, self.dA, n, n)
        return SurfaceContribution(self.dofs, f, _blocks(K), _blocks(D))

    def normal_stress(self, d, v):
        g, gd = self.gap(d, v)
        return -(self.k * g + self.c * gd)

    def absorb_prestress(self, d, context=None):
        self.g_pre = self.gap(d)[0]


class FollowerPressure(_SurfaceCondition):
    """Cavity pressure acting on a wall surface, ``p (x,1 x x,2)`` per parameter area."""

    kind = "follower_pressure"

    def __init__(self, mesh, tag, cavity, rule="radon7"):
        super().__init__(mesh, tag, rule)
        self.cavity = cavity
        self.dshape = tri6_shape_grad(self.rule.points)
        self.w = self.rule.weights

    def contribution(self, d, p, tangent=True):
        x = self.mesh.nodes + np.asarray(d)
        xe = x[self.faces]
        g1 = np.einsum("qa,fai->fqi", self.dshape[..., 0], xe)
        g2 = np.einsum("qa,fai->fqi", self.dshape[..., 1], xe)
        a = np.cross(g1, g2)
        dp = np.einsum("q,qa,fqi->fai", self.w, self.shape, a).reshape(-1, 18)
        if not tangent:
            return SurfaceContribution(self.dofs, p * dp, dp=dp)
        da = -np.einsum("qb,fqij->fqbij", self.dshape[..., 0], _skew(g2)) + np.einsum("qb,fqij->fqbij", self.dshape[..., 1], _skew(g1))
        K = p * np.einsum("q,qa,fqbij->faibj", self.w, self.shape, da)
        return SurfaceContribution(self.dofs, p * dp, _blocks(K), None, dp)

    def load_rate_work(self, d, v, p):
        """Power ``int t . udot`` of the pressure on the wall (residual sign)."""
        c = self.contribution(d, p, tangent=False)
        return float(np.sum(c.force * np.asarray(v)[self.faces].reshape(-1, 18)))


def apex_patch(mesh: Mesh, radius=10e-3, epi="epicardium", apex=None, name="apex"):
    """Epicardial faces whose vertices all lie within ``radius`` of the apex.

    Returns a new :class:`Mesh` with the patch added as surface ``name``
    and removed from ``epi``.
    """
    from dataclasses import replace as dc_replace

    faces = mesh.surface(epi)
    if apex is None:
        if "apex" in mesh.metadata:
            apex = np.asarray(mesh.metadata["apex"])
        else:
            axis = np.asarray(mesh.metadata.get("long_axis", [0, 0, 1.0]))
            nodes = np.unique(faces[:, :3])
            apex = mesh.nodes[nodes[np.argmin(mesh.nodes[nodes] @ axis)]]
    dist = np.linalg.norm(mesh.nodes[faces[:, :3]] - apex, axis=-1).max(axis=1)
    inside = dist <= radius
    if not inside.any():
        raise MeshError(f"no epicardial face within {radius:g} m of the apex")
    surfaces = dict(mesh.surfaces)
    surfaces[name] = faces[inside]
    surfaces[epi] = faces[~inside]
    return dc_replace(mesh, surfaces=surfaces)


@dataclass
class BoundarySpec:
    """Declarative boundary condition used by configs and scenarios."""

    surface: str
    kind: str
    k: float = 0.0
    c: float = 0.0
    extra: dict = field(default_factory=dict)


SPRING_KINDS = {
    "pericardial_reference_normal": ReferenceNormalSpring,
    "pericardial_projection": ProjectionSpring,
    "omni_spring": OmniSpring,
}


def build_condition(mesh: Mesh, spec: BoundarySpec):
    try:
        cls = SPRING_KINDS[spec.kind]
    except KeyError:
        raise ValueError(f"unknown boundary condition kind {spec.kind!r}") from None
    return cls(mesh, spec.surface, spec.k, spec.c, **spec.extra)
