"""Mesh container, surface geometry, cavity volumes and reference normals."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..elements import (
    DEFAULT_TET_RULE,
    TET10_EDGE_NODE,
    TET_FACES,
    QuadratureRule,
    tet10_shape,
    tet10_shape_grad,
    tet_rule,
    tri6_shape,
    tri6_shape_grad,
    tri_rule,
)

log = logging.getLogger(__name__)

#: tri6 node permutation reversing the orientation of a face
TRI6_FLIP = np.array([0, 2, 1, 5, 4, 3])


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Quadratic tetrahedral mesh with named boundary surfaces.

    Parameters
    ----------
    nodes : ndarray, shape (N, 3)
        Reference coordinates in metres.
    elements : ndarray, shape (E, 10)
        Tet10 connectivity, Gmsh node order.
    surfaces : dict of str -> ndarray, shape (F, 6)
        Tri6 faces. Boundary faces are oriented out of the solid, closure
        faces out of the cavity they close.
    closures : frozenset of str
        Names of geometry-only surfaces (no stiffness, no mass). Their nodes
        need not belong to any tetrahedron.
    cavities : dict of str -> tuple of (surface, sign)
        Closed surfaces enclosing a cavity. ``sign`` turns the stored face
        orientation into the cavity-outward orientation.
    """

    nodes: np.ndarray
    elements: np.ndarray
    surfaces: dict = field(default_factory=dict)
    closures: frozenset = frozenset()
    cavities: dict = field(default_factory=dict)
    regions: np.ndarray | None = None
    region_names: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64).reshape(-1, 10)
        surfaces = {k: np.ascontiguousarray(v, dtype=np.int64).reshape(-1, 6) for k, v in self.surfaces.items()}
        regions = np.zeros(len(elements), dtype=np.int64) if self.regions is None else np.asarray(self.regions, dtype=np.int64)
        for arr in (nodes, elements, regions, *surfaces.values()):
            arr.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "surfaces", surfaces)
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "closures", frozenset(self.closures))
        object.__setattr__(self, "cavities", {k: tuple(tuple(s) for s in v) for k, v in self.cavities.items()})
        self._validate_indices()

    # -- basic queries ---------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def _validate_indices(self):
        n = self.n_nodes
        for name, arr in [("elements", self.elements)] + list(self.surfaces.items()):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise MeshError(f"{name}: node index out of range")
        for cav, parts in self.cavities.items():
            for tag, sign in parts:
                if tag not in self.surfaces:
                    raise MeshError(f"cavity {cav!r} references unknown surface {tag!r}")
                if sign not in (-1, 1):
                    raise MeshError(f"cavity {cav!r}: sign must be +-1")

    def surface(self, tag: str) -> np.ndarray:
        try:
            return self.surfaces[tag]
        except KeyError:
            raise MeshError(f"unknown surface {tag!r}; have {sorted(self.surfaces)}") from None

    def surface_nodes(self, tag: str) -> np.ndarray:
        return np.unique(self.surface(tag))

    @property
    def solid_nodes(self) -> np.ndarray:
        """Sorted ids of nodes referenced by tetrahedra."""
        return _cached(self, "_solid_nodes", lambda: np.unique(self.elements))

    @property
    def orphan_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.solid_nodes] = False
        return np.flatnonzero(mask)

    def cavity_parts(self, name: str):
        """``[(faces, sign), ...]`` for a cavity name or a single surface tag."""
        if name in self.cavities:
            return [(self.surfaces[t], s) for t, s in self.cavities[name]]
        faces = self.surface(name)
        sign = 1 if name in self.closures or self.n_elements == 0 else -1
        return [(faces, sign)]

    # -- closure nodes ---------------------------------------------------------

    @property
    def extension(self) -> sp.csr_matrix:
        """Sparse ``(N, N)`` map giving every node's displacement from solid nodes.

        Solid nodes map to themselves. Closure-only nodes follow the
        least-squares affine motion of the solid rim of their closure.
        """
        return _cached(self, "_extension", self._build_extension)

    def _build_extension(self):
        n = self.n_nodes
        solid = np.zeros(n, dtype=bool)
        solid[self.solid_nodes] = True
        if self.n_elements == 0:
            solid[:] = True
        rows, cols, vals = [np.flatnonzero(solid)], [np.flatnonzero(solid)], [np.ones(solid.sum())]
        done = solid.copy()
        for tag in sorted(self.closures):
            ids = np.unique(self.surfaces[tag])
            rim = ids[solid[ids]]
            orph = ids[~done[ids]]
            if len(orph) == 0:
                continue
            if len(rim) < 3:
                raise MeshError(f"closure {tag!r} has fewer than 3 solid rim nodes")
            Xr = np.hstack([self.nodes[rim], np.ones((len(rim), 1))])
            Xo = np.hstack([self.nodes[orph], np.ones((len(orph), 1))])
            W = Xo @ np.linalg.pinv(Xr)
            r, c = np.meshgrid(orph, rim, indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(W.ravel())
            done[orph] = True
        if not done.all():
            bad = np.flatnonzero(~done)[:5]
            raise MeshError(f"nodes {bad.tolist()} belong to no element and no closure")
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    def expand(self, d):
        """Fill closure-only node rows of ``d`` from the solid rim motion; returns ``(N, 3)``."""
        d = np.asarray(d, dtype=float)
        if len(self.orphan_nodes) == 0 or self.n_elements == 0:
            return d.reshape(-1, 3)
        return self.extension @ d.reshape(-1, 3)


def _cached(obj, name, factory):
    try:
        return obj.__dict__[name]
    except KeyError:
        val = factory()
        object.__setattr__(obj, name, val)
        return val


# -- volume geometry ------------------------------------------------------------


@dataclass(frozen=True)
class VolumeGeometry:
    """Reference shape-function gradients and integration weights."""

    rule: QuadratureRule
    N: np.ndarray  # (nq, 10)
    dNdX: np.ndarray  # (E, nq, 10, 3)
    dV: np.ndarray  # (E, nq), detJ * weight
    X: np.ndarray  # (E, nq, 3)


def volume_geometry(mesh: Mesh, rule: QuadratureRule | str = DEFAULT_TET_RULE, nodes=None) -> VolumeGeometry:
    if isinstance(rule, str):
        rule = tet_rule(rule)
    nodes = mesh.nodes if nodes is None else nodes
    Xe = nodes[mesh.elements]  # (E, 10, 3)
    N = tet10_shape(rule.points)
    dN = tet10_shape_grad(rule.points)  # (nq, 10, 3)
    J = np.einsum("eai,qak->eqik", Xe, dN)
    det = np.linalg.det(J)
    if np.any(det <= 0.0):
        e, q = np.argwhere(det <= 0.0)[0]
        raise MeshError(f"non-positive Jacobian in element {e} (quadrature point {q})")
    Jinv = np.linalg.inv(J)
    dNdX = np.einsum("qak,eqki->eqai", dN, Jinv)
    X = np.einsum("qa,eai->eqi", N, Xe)
    return VolumeGeometry(rule, N, dNdX, det * rule.weights, X)


def check_jacobians(mesh: Mesh, rule: str = DEFAULT_TET_RULE, *, raise_on_error=True) -> np.ndarray:
    """Minimum Jacobian determinant per element; raises :class:`MeshError` if any is non-positive."""
    rules = [tet_rule(rule)]
    vert = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    Xe = mesh.nodes[mesh.elements]
    out = np.full(mesh.n_elements, np.inf)
    for pts in [r.points for r in rules] + [vert]:
        J = np.einsum("eai,qak->eqik", Xe, tet10_shape_grad(pts))
        det = np.linalg.det(J)
        out = np.minimum(out, det.min(axis=1))
    if raise_on_error and np.any(out <= 0.0):
        raise MeshError(f"non-positive Jacobian in element {int(np.argmin(out))}")
    return out


# -- surface geometry -------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceGeometry:
    """Tri6 face kinematics at quadrature points.

    ``a = x_,1 x x_,2`` is the (unnormalised) area vector; ``|a| w`` is the
    area weight. With ``x`` current positions, ``a dxi`` equals
    ``J F^-T N dA`` of the parent solid.
    """

    rule: QuadratureRule
    faces: np.ndarray  # (F, 6)
    N: np.ndarray  # (nq, 6)
    dN: np.ndarray  # (nq, 6, 2)
    x: np.ndarray  # (F, nq, 3)
    g1: np.ndarray  # (F, nq, 3)
    g2: np.ndarray  # (F, nq, 3)

    @property
    def a(self):
        return np.cross(self.g1, self.g2)

    @property
    def area_weights(self):
        return np.linalg.norm(self.a, axis=-1) * self.rule.weights

    @property
    def normals(self):
        a = self.a
        return a / np.linalg.norm(a, axis=-1, keepdims=True)


def surface_geometry(faces, x, rule: QuadratureRule | str = "radon7") -> SurfaceGeometry:
    if isinstance(rule, str):
        rule = tri_rule(rule)
    xe = np.asarray(x)[faces]  # (F, 6, 3)
    N = tri6_shape(rule.points)
    dN = tri6_shape_grad(rule.points)
    xq = np.einsum("qa,fai->fqi", N, xe)
    g1 = np.einsum("qa,fai->fqi", dN[..., 0], xe)
    g2 = np.einsum("qa,fai->fqi", dN[..., 1], xe)
    return SurfaceGeometry(rule, np.asarray(faces), N, dN, xq, g1, g2)


@dataclass(frozen=True)
class SurfaceNormalField:
    """Unit outward reference normals and area weights at face quadrature points."""

    tag: str
    normals: np.ndarray  # (F, nq, 3)
    weights: np.ndarray  # (F, nq) [m^2]
    points: np.ndarray  # (F, nq, 3)


def _face_parents(mesh: Mesh):
    return _cached(mesh, "_face_parent_map", lambda: _build_face_parents(mesh))


def _build_face_parents(mesh: Mesh):
    table = {}
    for e, tet in enumerate(mesh.elements):
        for lf, tri in enumerate(TET_FACES):
            key = tuple(sorted(tet[list(tri)]))
            table.setdefault(key, []).append((e, lf))
    return table


def face_parents(mesh: Mesh, faces) -> np.ndarray:
    """Parent element id of each face; raises unless each face bounds exactly one tet."""
    table = _face_parents(mesh)
    out = np.empty(len(faces), dtype=np.int64)
    for i, f in enumerate(faces):
        hits = table.get(tuple(sorted(f[:3])), [])
        if len(hits) != 1:
            raise MeshError(f"surface face {i} {f[:3].tolist()} bounds {len(hits)} tetrahedra (need exactly 1)")
        out[i] = hits[0][0]
    return out


def orient_faces(mesh: Mesh, tag: str, faces) -> np.ndarray:
    """Return ``faces`` re-oriented to point out of their parent tetrahedra."""
    faces = np.array(faces, dtype=np.int64)
    parents = face_parents(mesh, faces)
    tets = mesh.elements[parents, :4]
    X = mesh.nodes
    n = np.cross(X[faces[:, 1]] - X[faces[:, 0]], X[faces[:, 2]] - X[faces[:, 0]])
    opp = np.array([[v for v in t if v not in f[:3]][0] for t, f in zip(tets, faces)])
    bad = np.einsum("fi,fi->f", n, X[faces[:, 0]] - X[opp]) < 0.0
    if bad.any():
        log.warning("surface %s: flipped %d inward-facing faces", tag, int(bad.sum()))
        faces[bad] = faces[bad][:, TRI6_FLIP]
    # mid nodes must sit on the parent's matching edges
    for f, e in zip(faces, parents):
        tet = mesh.elements[e]
        loc = {int(g): i for i, g in enumerate(tet[:4])}
        for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
            expect = tet[TET10_EDGE_NODE[frozenset((loc[int(f[i])], loc[int(f[j])]))]]
            if f[3 + k] != expect:
                raise MeshError(f"surface {tag!r}: face mid-node {int(f[3 + k])} does not match parent element {int(e)}")
    return faces


def reference_normals(mesh: Mesh, tag: str, rule: str = "radon7") -> SurfaceNormalField:
    """Outward unit normals and area weights of a surface in the reference configuration."""
    faces = mesh.surface(tag)
    if tag not in mesh.closures and mesh.n_elements:
        faces = orient_faces(mesh, tag, faces)
    geo = surface_geometry(faces, mesh.nodes, rule)
    return SurfaceNormalField(tag, geo.normals, geo.area_weights, geo.x)


# -- cavity volume ----------------------------------------------------------------


def closed_surface_flux(mesh: Mesh, cavity: str, d=None, rule: str = "radon7"):
    """Return ``(|sum n da|, sum |da|)`` over a cavity's closing surface."""
    x = mesh.nodes if d is None else mesh.nodes + mesh.expand(d)
    total = np.zeros(3)
    area = 0.0
    for faces, sign in mesh.cavity_parts(cavity):
        geo = surface_geometry(faces, x, rule)
        a = geo.a * geo.rule.weights[:, None]
        total += sign * a.sum(axis=(0, 1))
        area += np.linalg.norm(a, axis=-1).sum()
    return float(np.linalg.norm(total)), float(area)


def cavity_volume(mesh: Mesh, cavity: str, d=None, rule: str = "radon7", watertight_tol: float = 1e-8) -> float:
    """Enclosed volume ``(1/3) oint x . n da`` in the current configuration ``X + d``."""
    flux, area = closed_surface_flux(mesh, cavity, d, rule)
    if flux > watertight_tol * area:
        raise MeshError(f"cavity {cavity!r} is not watertight: |oint n da| = {flux:.3e} (area {area:.3e})")
    return cavity_volume_and_gradient(mesh, cavity, d, rule, gradient=False)[0]


def cavity_volume_and_gradient(mesh: Mesh, cavity: str, d=None, rule: str = "radon7", gradient: bool = True):
    """Volume and its exact derivative with respect to nodal displacements.

    The gradient is returned as an ``(N, 3)`` array over all nodes, already
    mapped through :attr:`Mesh.extension` so closure-only nodes carry no
    independent entries.
    """
    x = mesh.nodes if d is None else mesh.nodes + mesh.expand(d)
    vol = 0.0
    grad = np.zeros((mesh.n_nodes, 3)) if gradient else None
    for faces, sign in mesh.cavity_parts(cavity):
        geo = surface_geometry(faces, x, rule)
        w = geo.rule.weights
        a = geo.a
        vol += sign * np.einsum("q,fqi,fqi->", w, geo.x, a) / 3.0
        if gradient:
            # dV/dx_b = 1/3 int [N_b a + W_b x x], W_b = N_b,1 g2 - N_b,2 g1
            Wb = geo.dN[None, :, :, 0, None] * geo.g2[:, :, None, :] - geo.dN[None, :, :, 1, None] * geo.g1[:, :, None, :]
            term = geo.N[None, :, :, None] * a[:, :, None, :] + np.cross(Wb, geo.x[:, :, None, :])
            contrib = sign * np.einsum("q,fqbi->fbi", w, term) / 3.0
            np.add.at(grad, faces, contrib)
    if gradient and mesh.n_elements and len(mesh.orphan_nodes):
        grad = mesh.extension.T @ grad
    return vol, grad
