"""Structured quadratic tetrahedral meshes: ellipsoidal shells and boxes.

Hexahedral lattice cells are cut into six tetrahedra around the main
diagonal (Kuhn split). At the poles of an ellipsoid the lattice collapses;
tetrahedra that degenerate are dropped and the remainder stays conforming.
Edge mid-nodes are placed at the parametric midpoint on the analytic map,
so curved boundaries are represented to second order.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np
from scipy.integrate import quad

from .core import Mesh, MeshError, check_jacobians, orient_faces

_KUHN_PATHS = [p for p in permutations(range(3))]


def _kuhn_tets(shape):
    """Yield lattice-corner 4-tuples for each Kuhn tetrahedron of each cell."""
    ni, nj, nk = shape
    for i in range(ni):
        for j in range(nj):
            for k in range(nk):
                for path in _KUHN_PATHS:
                    c = [i, j, k]
                    corners = [tuple(c)]
                    for ax in path:
                        c[ax] += 1
                        corners.append(tuple(c))
                    yield corners


class _LatticeMesher:
    """Turns an identified lattice plus a parametric map into a Tet10 mesh."""

    def __init__(self, shape, vertex_id, position, midpoint_params):
        self.shape = shape
        self.vertex_id = vertex_id
        self.position = position
        self.midpoint_params = midpoint_params

    def build(self):
        verts = {}
        params = {}
        tets = []
        for corners in _kuhn_tets(self.shape):
            ids = [self.vertex_id(c) for c in corners]
            if len(set(ids)) < 4:
                continue
            for c, v in zip(corners, ids):
                if v not in verts:
                    verts[v] = self.position(*self.lattice_params(c))
                    params[v] = c
            tets.append((ids, corners))

        nv = max(verts) + 1
        nodes = [None] * nv
        for v, x in verts.items():
            nodes[v] = x
        mids = {}
        elements = []
        for ids, corners in tets:
            P = np.array([nodes[v] for v in ids])
            vol = np.dot(np.cross(P[1] - P[0], P[2] - P[0]), P[3] - P[0])
            if vol < 0.0:
                ids = [ids[0], ids[1], ids[3], ids[2]]
                corners = [corners[0], corners[1], corners[3], corners[2]]
            row = list(ids)
            for a, b in ((0, 1), (1, 2), (0, 2), (0, 3), (2, 3), (1, 3)):
                key = (min(ids[a], ids[b]), max(ids[a], ids[b]))
                if key not in mids:
                    mids[key] = (len(nodes), self.position(*self.midpoint_params(corners[a], corners[b])))
                    nodes.append(mids[key][1])
                row.append(mids[key][0])
            elements.append(row)
        return np.array(nodes), np.array(elements, dtype=np.int64), params, mids

    def lattice_params(self, c):
        return self.midpoint_params(c, c)


def _boundary_faces(elements):
    """Boundary tri6 faces (unoriented) from tet10 connectivity."""
    from ..elements import TET10_EDGE_NODE, TET_FACES

    count = {}
    for tet in elements:
        for tri in TET_FACES:
            key = tuple(sorted(tet[list(tri)]))
            if key in count:
                count[key] = None
            else:
                loc = tri
                mids = [tet[TET10_EDGE_NODE[frozenset((loc[i], loc[j]))]] for i, j in ((0, 1), (1, 2), (2, 0))]
                count[key] = [*tet[list(tri)], *mids]
    return [f for f in count.values() if f is not None]


def _meridian_length(a, c, theta_max):
    return quad(lambda th: np.hypot(a * np.cos(th), c * np.sin(th)), 0.0, theta_max)[0]


def generate_ellipsoid_shell(r_endo, r_epi, resolution, theta_max=np.pi / 2, *, n_transmural=None):
    """Hollow ellipsoidal shell, truncated at polar angle ``theta_max``.

    The surfaces are ``X(t, theta, phi) = (a sin th cos ph, b sin th sin ph, -c cos th)``
    with semi-axes interpolated linearly in the transmural coordinate
    ``t`` between endocardium (0) and epicardium (1). The apex sits at
    ``-c`` on the z axis; ``theta_max = pi/2`` cuts at the plane ``z = 0``.

    Parameters
    ----------
    r_endo, r_epi : sequence of 3 floats
        Semi-axes [m].
    resolution : float
        Target edge length [m].
    theta_max : float
        ``pi/2`` for the half ellipsoid, ``pi`` for a closed shell.
    """
    r_endo = np.asarray(r_endo, dtype=float)
    r_epi = np.asarray(r_epi, dtype=float)
    if r_endo.shape != (3,) or r_epi.shape != (3,) or np.any(r_endo <= 0):
        raise MeshError("semi-axes must be three positive numbers")
    if np.any(r_epi <= r_endo):
        raise MeshError(f"degenerate wall: epicardial semi-axes {r_epi} must exceed endocardial {r_endo}")
    if resolution <= 0:
        raise MeshError("resolution must be positive")
    closed = np.isclose(theta_max, np.pi)
    thickness = float(np.min(r_epi - r_endo))
    n_t = n_transmural or int(round(thickness / resolution))
    if n_t < 1:
        raise MeshError(f"resolution {resolution:g} gives fewer than one element through a {thickness:g} wall")
    mid = 0.5 * (r_endo + r_epi)
    n_phi = max(6, int(np.ceil(2 * np.pi * max(mid[0], mid[1]) / resolution)))
    n_th = max(2, int(np.ceil(_meridian_length(max(mid[0], mid[1]), mid[2], theta_max) / resolution)))

    th = np.linspace(0.0, theta_max, n_th + 1)
    tt = np.linspace(0.0, 1.0, n_t + 1)
    dphi = 2 * np.pi / n_phi

    n_ring = n_th - 1 if closed else n_th
    per_layer = 1 + n_ring * n_phi + (1 if closed else 0)

    def vertex_id(c):
        i, j, k = c
        base = i * per_layer
        if j == 0:
            return base
        if closed and j == n_th:
            return base + per_layer - 1
        return base + 1 + (j - 1) * n_phi + (k % n_phi)

    def is_pole(c):
        return c[1] == 0 or (closed and c[1] == n_th)

    def params(ca, cb):
        t = 0.5 * (tt[ca[0]] + tt[cb[0]])
        theta = 0.5 * (th[ca[1]] + th[cb[1]])
        if is_pole(ca) and not is_pole(cb):
            phi = cb[2] * dphi
        elif is_pole(cb) and not is_pole(ca):
            phi = ca[2] * dphi
        else:
            phi = 0.5 * (ca[2] + cb[2]) * dphi
        return t, theta, phi

    def position(t, theta, phi):
        r = r_endo + t * (r_epi - r_endo)
        return np.array([r[0] * np.sin(theta) * np.cos(phi), r[1] * np.sin(theta) * np.sin(phi), -r[2] * np.cos(theta)])

    mesher = _LatticeMesher((n_t, n_th, n_phi), vertex_id, position, params)
    nodes, elements, vparams, mids = mesher.build()

    surfaces = {"endocardium_left": [], "epicardium": [], "base": []}
    for f in _boundary_faces(elements):
        cs = [vparams[v] for v in f[:3]]
        if all(c[0] == 0 for c in cs):
            surfaces["endocardium_left"].append(f)
        elif all(c[0] == n_t for c in cs):
            surfaces["epicardium"].append(f)
        elif not closed and all(c[1] == n_th for c in cs):
            surfaces["base"].append(f)
        else:
            raise MeshError("unclassified boundary face")
    if closed:
        del surfaces["base"]

    tmp = Mesh(nodes, elements)
    surfaces = {k: orient_faces(tmp, k, np.array(v)) for k, v in surfaces.items()}
    cavities = {"left": [("endocardium_left", -1)]}
    closures = set()

    if not closed:
        # flat fan closing the cavity in the base plane; its inner nodes carry no DOFs
        nodes = list(nodes)
        rim = [vertex_id((0, n_th, k)) for k in range(n_phi)]
        rim_mid = [mids[tuple(sorted((rim[k], rim[(k + 1) % n_phi])))][0] for k in range(n_phi)]
        centre = len(nodes)
        nodes.append(np.zeros(3))
        spokes = []
        for k in range(n_phi):
            spokes.append(len(nodes))
            nodes.append(0.5 * nodes[rim[k]])
        fan = [
            [centre, rim[k], rim[(k + 1) % n_phi], spokes[k], rim_mid[k], spokes[(k + 1) % n_phi]]
            for k in range(n_phi)
        ]
        surfaces["closure_left"] = np.array(fan)
        closures.add("closure_left")
        cavities["left"].append(("closure_left", 1))
        nodes = np.array(nodes)

    meta = {
        "kind": "closed_ellipsoid" if closed else "half_ellipsoid",
        "r_endo": r_endo.tolist(),
        "r_epi": r_epi.tolist(),
        "long_axis": [0.0, 0.0, 1.0],
        "apex": [0.0, 0.0, -float(r_epi[2])],
        "n_transmural": n_t,
        "n_theta": n_th,
        "n_phi": n_phi,
    }
    mesh = Mesh(nodes, elements, surfaces, closures, cavities, metadata=meta)
    check_jacobians(mesh)
    return mesh


def generate_half_ellipsoid(r_endo, r_epi, resolution, **kw):
    """Half-ellipsoidal shell cut at ``z = 0`` with a flat cavity closure.

    Surfaces: ``epicardium``, ``endocardium_left``, ``base`` and the
    geometry-only ``closure_left``; cavity ``left``.
    """
    return generate_ellipsoid_shell(r_endo, r_epi, resolution, np.pi / 2, **kw)


def generate_box(lengths, divisions, origin=(0.0, 0.0, 0.0)) -> Mesh:
    """Axis-aligned box with faces tagged ``xmin``, ``xmax``, ``ymin``, ... ."""
    L = np.asarray(lengths, dtype=float)
    n = tuple(int(v) for v in divisions)
    o = np.asarray(origin, dtype=float)
    if any(v < 1 for v in n) or np.any(L <= 0):
        raise MeshError("box needs positive lengths and at least one division per axis")

    def vertex_id(c):
        i, j, k = c
        return (i * (n[1] + 1) + j) * (n[2] + 1) + k

    def params(ca, cb):
        return tuple(0.5 * (a + b) for a, b in zip(ca, cb))

    def position(i, j, k):
        return o + L * np.array([i, j, k]) / np.array(n)

    nodes, elements, vparams, _ = _LatticeMesher(n, vertex_id, position, params).build()
    tmp = Mesh(nodes, elements)
    surfaces = {}
    for f in _boundary_faces(elements):
        cs = np.array([vparams[v] for v in f[:3]])
        for ax, name in enumerate("xyz"):
            if np.all(cs[:, ax] == 0):
                surfaces.setdefault(f"{name}min", []).append(f)
            elif np.all(cs[:, ax] == n[ax]):
                surfaces.setdefault(f"{name}max", []).append(f)
    surfaces = {k: orient_faces(tmp, k, np.array(v)) for k, v in sorted(surfaces.items())}
    return Mesh(nodes, elements, surfaces, metadata={"kind": "box", "lengths": L.tolist(), "divisions": list(n)})
