"""Assessment quantities: AVPD, contour Dice error, boundary stresses and
benchmark kinematics.

Lengths handed to or returned from the contour functions are in mm, the
unit of image data; the solver works in metres, so :func:`slice_simulation`
converts on the way out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, surface_geometry

# -- AVPD -----------------------------------------------------------------------------


def avpd(nodes, d, long_axis):
    """Atrioventricular plane displacement in mm, positive toward the apex.

    Parameters
    ----------
    nodes : int array
        Node ids on the valve plane.
    d : (N, 3) or (3N,) array
        Nodal displacement [m].
    long_axis : (3,) array
        Unit vector pointing from the apex to the base.
    """
    axis = np.asarray(long_axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    u = np.asarray(d, dtype=float).reshape(-1, 3)[np.asarray(nodes)]
    return -1e3 * float(np.mean(u @ axis))


# -- planes and contours ----------------------------------------------------------------


def plane_basis(normal):
    """Deterministic orthonormal in-plane axes ``(e1, e2)`` for a plane normal."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    e1 = np.cross(helper, n)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


@dataclass
class Contour:
    """Closed planar polylines of one slice, in in-plane coordinates [mm].

    ``origin`` [mm] and ``normal`` define the plane; the in-plane axes come
    from :func:`plane_basis`. An empty ``polylines`` list marks a slice that
    does not cut the object (``empty`` is then ``True``).
    """

    slice_id: int
    origin: np.ndarray
    normal: np.ndarray
    polylines: list = field(default_factory=list)

    @property
    def empty(self):
        return len(self.polylines) == 0

    def area(self):
        """Even-odd area of the polylines by the shoelace formula [mm^2]."""
        return abs(sum(shoelace_area(p) for p in self.polylines))


ContourSet = dict  # slice id -> Contour


def shoelace_area(poly):
    """Signed area of a closed polyline (first point repeated at the end)."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


class ContourError(ValueError):
    pass


def _segments_cross(a0, a1, b0, b1):
    """Proper crossings between segment sets ``a`` (n) and ``b`` (m), ``(n, m)`` bool."""

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    A0, A1 = a0[:, None], a1[:, None]
    B0, B1 = b0[None], b1[None]
    d1 = orient(A0, A1, B0)
    d2 = orient(A0, A1, B1)
    d3 = orient(B0, B1, A0)
    d4 = orient(B0, B1, A1)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def check_polyline(poly, tol=1e-9):
    """Raise :class:`ContourError` for open or self-intersecting polylines."""
    p = np.asarray(poly, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 4:
        raise ContourError("a closed polyline needs at least three distinct points plus the repeated first point")
    scale = max(float(np.ptp(p, axis=0).max()), 1.0)
    if np.linalg.norm(p[0] - p[-1]) > tol * scale:
        raise ContourError("polyline is not closed (first point differs from last)")
    a0, a1 = p[:-1], p[1:]
    hit = _segments_cross(a0, a1, a0, a1)
    # neighbouring segments share a vertex and never cross properly
    if np.any(np.triu(hit, 2)):
        raise ContourError("polyline intersects itself")


@dataclass
class BinaryImage:
    """Boolean pixel grid; pixel ``[i, j]`` has centre ``origin + ((j + 0.5) h, (i + 0.5) h)``."""

    mask: np.ndarray
    origin: np.ndarray
    resolution: float

    @property
    def count(self):
        return int(self.mask.sum())


def _grid_for(polylines, resolution, bounds=None):
    pts = np.concatenate([np.asarray(p, dtype=float) for p in polylines]) if polylines else np.zeros((1, 2))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    if bounds is not None:
        lo, hi = np.minimum(lo, bounds[0]), np.maximum(hi, bounds[1])
    # snap to the global pixel lattice so integer shifts move images exactly
    lo = (np.floor(lo / resolution) - 1) * resolution
    hi = (np.ceil(hi / resolution) + 1) * resolution
    shape = np.round((hi - lo) / resolution).astype(int)
    return lo, (int(shape[1]), int(shape[0]))


def rasterize(polylines, resolution=1.0, *, bounds=None) -> BinaryImage:
    """Pixels whose centre lies inside the polylines (even-odd rule).

    ``polylines`` is one closed polyline or a list of them; several are
    combined with the even-odd rule, so a nested loop cuts a hole.
    ``bounds = (lo, hi)`` enlarges the grid to a common box, which is how
    two contours are put on the same pixels.
    """
    if len(polylines) and np.ndim(polylines[0]) == 1:
        polylines = [polylines]
    polylines = [np.asarray(p, dtype=float) for p in polylines]
    for p in polylines:
        check_polyline(p)
    origin, shape = _grid_for(polylines, resolution, bounds)
    yc = origin[1] + (np.arange(shape[0]) + 0.5) * resolution
    xc = origin[0] + (np.arange(shape[1]) + 0.5) * resolution
    X, Y = np.meshgrid(xc, yc)
    inside = np.zeros(shape, bool)
    for p in polylines:
        for (x0, y0), (x1, y1) in zip(p[:-1], p[1:]):
            if y0 == y1:
                continue
            # half-open rule in y avoids double counting at vertices
            straddle = (y0 <= Y) != (y1 <= Y)
            xcross = x0 + (Y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= straddle & (X < xcross)
    return BinaryImage(inside, origin, float(resolution))


def dice(polys_a, polys_b, resolution=1.0):
    """Dice coefficient ``2|A & B| / (|A| + |B|)`` of two rasterized slices.

    Two empty slices agree perfectly (Dice 1).
    """
    pa = [np.asarray(p, float) for p in polys_a]
    pb = [np.asarray(p, float) for p in polys_b]
    if not pa and not pb:
        return 1.0
    if not pa or not pb:
        return 0.0
    allp = np.concatenate(pa + pb)
    bounds = (allp.min(axis=0), allp.max(axis=0))
    A = rasterize(pa, resolution, bounds=bounds).mask
    B = rasterize(pb, resolution, bounds=bounds).mask
    total = A.sum() + B.sum()
    return 1.0 if total == 0 else 2.0 * float((A & B).sum()) / float(total)


def dice_error(contours_a, contours_b, slices=None, resolution=1.0):
    """``1 - mean_s Dice_s`` over the chosen slices.

    ``contours_a`` and ``contours_b`` map slice id to :class:`Contour` or to
    a list of polylines. ``slices`` defaults to the ids present in both.
    """
    if slices is None:
        slices = sorted(set(contours_a) & set(contours_b))
    if len(slices) == 0:
        raise ValueError("no slices to compare")

    def polys(c):
        return c.polylines if isinstance(c, Contour) else list(c)

    vals = [dice(polys(contours_a[s]), polys(contours_b[s]), resolution) for s in slices]
    return 1.0 - float(np.mean(vals))


# -- slicing the simulation ---------------------------------------------------------------

_SUB_TRIANGLES = np.array([[0, 3, 5], [3, 1, 4], [5, 4, 2], [3, 4, 5]])


def _linear_triangles(faces):
    """Split 6-node faces into four straight triangles through the mid-nodes."""
    return np.asarray(faces)[:, _SUB_TRIANGLES].reshape(-1, 3)


def slice_simulation(mesh: Mesh, d, origin, normal, surfaces, slice_id=0) -> Contour:
    """Cut the deformed surfaces with a fixed plane.

    Parameters
    ----------
    d : (N, 3) or (3N,) array
        Displacement [m].
    origin, normal : (3,) arrays
        Plane point [mm] and normal.
    surfaces : str or list of str
        Surface tags forming a closed surface (for a ventricle: its
        endocardium plus the valve-plane closure).

    Returns
    -------
    Contour
        Closed polylines in in-plane coordinates [mm]; empty when the plane
        misses the surface.
    """
    if isinstance(surfaces, str):
        surfaces = [surfaces]
    x = (mesh.nodes + mesh.expand(np.asarray(d, dtype=float))) * 1e3
    origin = np.asarray(origin, dtype=float)
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    e1, e2 = plane_basis(n)
    tris = np.concatenate([_linear_triangles(mesh.surface(s)) for s in surfaces])
    s = (x - origin) @ n
    # a vertex exactly on the plane counts as above it, so every crossing is an edge crossing
    above = s >= 0.0
    segs = []
    for tri in tris:
        up = above[tri]
        if up.all() or not up.any():
            continue
        ends = []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            i, j = tri[a], tri[b]
            if up[a] != up[b]:
                ends.append((min(i, j), max(i, j)))
        segs.append(tuple(ends))
    if not segs:
        return Contour(slice_id, origin, n, [])

    def point(edge):
        i, j = edge
        w = s[i] / (s[i] - s[j])
        p = x[i] + w * (x[j] - x[i]) - origin
        return np.array([p @ e1, p @ e2])

    # chain segments sharing crossing edges
    nbr = {}
    for a, b in segs:
        nbr.setdefault(a, []).append(b)
        nbr.setdefault(b, []).append(a)
    if any(len(v) != 2 for v in nbr.values()):
        raise ContourError("surface is not closed along the slice plane; include the cavity closure surfaces")
    seen = set()
    polylines = []
    for start in sorted(nbr):
        if start in seen:
            continue
        chain = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            a, b = nbr[cur]
            nxt = b if a == prev else a
            if nxt == start:
                break
            chain.append(nxt)
            seen.add(nxt)
            prev, cur = cur, nxt
        pts = np.array([point(e) for e in chain])
        polylines.append(np.vstack([pts, pts[:1]]))
    return Contour(slice_id, origin, n, polylines)


def write_contour(path, contour: Contour):
    """Text format: header ``slice <id> origin <x y z> normal <x y z>``, then
    ``x y`` lines in mm; a blank line separates polylines."""
    with open(path, "w") as fh:
        o, nv = np.asarray(contour.origin, float).tolist(), np.asarray(contour.normal, float).tolist()
        fh.write(f"slice {contour.slice_id} origin {o[0]!r} {o[1]!r} {o[2]!r} normal {nv[0]!r} {nv[1]!r} {nv[2]!r}\n")
        for k, p in enumerate(contour.polylines):
            if k:
                fh.write("\n")
            for x, y in p:
                fh.write(f"{float(x)!r} {float(y)!r}\n")


def read_contour(path) -> Contour:
    with open(path) as fh:
        lines = fh.read().split("\n")
    head = lines[0].split()
    if len(head) != 10 or head[0] != "slice" or head[2] != "origin" or head[6] != "normal":
        raise ContourError(f"{path}: bad header line {lines[0]!r}")
    sid = int(head[1])
    origin = np.array([float(v) for v in head[3:6]])
    normal = np.array([float(v) for v in head[7:10]])
    polys, cur = [], []
    for ln in lines[1:]:
        if ln.strip():
            cur.append([float(v) for v in ln.split()])
        elif cur:
            polys.append(np.array(cur))
            cur = []
    if cur:
        polys.append(np.array(cur))
    for p in polys:
        check_polyline(p)
    return Contour(sid, origin, normal, polys)


# -- boundary stresses ----------------------------------------------------------------------


def _current_weights(cond, d):
    x = cond.mesh.nodes + np.asarray(d, dtype=float).reshape(-1, 3)
    return surface_geometry(cond.faces, x, cond.rule).area_weights


def mean_apical_stress(cond, d, v):
    """Area-weighted mean spring traction vector over the current patch [Pa].

    ``cond`` is an :class:`~pericard.boundary.OmniSpring`; the traction is
    the force per area the springs exert on the tissue.
    """
    d3 = np.asarray(d, dtype=float).reshape(-1, 3)
    t = -cond.traction(d3, np.asarray(v, dtype=float).reshape(-1, 3))
    w = _current_weights(cond, d3)
    return np.einsum("fqi,fq->i", t, w) / w.sum()


def mean_pericardial_stress(cond, d, v):
    """Area-weighted mean signed normal stress over the current epicardium [Pa].

    Positive is tension between epicardium and pericardium.
    """
    d3 = np.asarray(d, dtype=float).reshape(-1, 3)
    t = cond.normal_stress(d3, np.asarray(v, dtype=float).reshape(-1, 3))
    w = _current_weights(cond, d3)
    return float(np.sum(t * w) / w.sum())


# -- benchmark kinematics ----------------------------------------------------------------------


@dataclass
class EllipsoidFrame:
    """Node sets and axis used to measure ellipsoid kinematics."""

    axis: np.ndarray
    apex: int
    base: np.ndarray
    epi: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: Mesh, epi=("epicardium",), base="base"):
        axis = np.asarray(mesh.metadata.get("long_axis", [0.0, 0.0, 1.0]), dtype=float)
        epi_nodes = np.unique(np.concatenate([mesh.surface_nodes(s) for s in epi]))
        apex = int(epi_nodes[np.argmin(mesh.nodes[epi_nodes] @ axis)])
        base_nodes = np.intersect1d(mesh.surface_nodes(base), epi_nodes)
        return cls(axis, apex, base_nodes, epi_nodes)


def apex_translation(frame: EllipsoidFrame, d):
    """Displacement of the epicardial apex along the long axis [m] (positive toward the base)."""
    return float(np.asarray(d, dtype=float).reshape(-1, 3)[frame.apex] @ frame.axis)


def base_apex_shortening(frame: EllipsoidFrame, X, d):
    """Decrease of the axial distance between the epicardial base rim and the apex [m]."""
    x = X + np.asarray(d, dtype=float).reshape(-1, 3)
    length0 = X[frame.base].mean(axis=0) @ frame.axis - X[frame.apex] @ frame.axis
    length = x[frame.base].mean(axis=0) @ frame.axis - x[frame.apex] @ frame.axis
    return float(length0 - length)


def epicardial_twist(frame: EllipsoidFrame, X, d, apical_fraction=1 / 3, min_radius=1e-3):
    """Rotation about the long axis of the apical band relative to the base rim [rad].

    Rotations are node averages of the change in azimuth; nodes closer
    than ``min_radius`` to the axis are skipped since their azimuth is
    ill-defined.
    """
    a = frame.axis
    e1, e2 = plane_basis(a)
    x = X + np.asarray(d, dtype=float).reshape(-1, 3)

    def rotation(nodes):
        c0 = X[nodes] - np.outer(X[nodes] @ a, a)
        c1 = x[nodes] - np.outer(x[nodes] @ a, a)
        keep = np.linalg.norm(c0, axis=1) > min_radius
        phi0 = np.arctan2(c0[keep] @ e2, c0[keep] @ e1)
        phi1 = np.arctan2(c1[keep] @ e2, c1[keep] @ e1)
        return float(np.mean(np.angle(np.exp(1j * (phi1 - phi0)))))

    z = X[frame.epi] @ a
    z_apex = X[frame.apex] @ a
    z_base = X[frame.base] @ a
    cut = z_apex + apical_fraction * (z_base.mean() - z_apex)
    band = frame.epi[z <= cut]
    return rotation(band) - rotation(frame.base)


def rms_position_difference(nodes, d_a, d_b):
    """Root-mean-square distance between two deformed positions of ``nodes``."""
    diff = np.asarray(d_a, dtype=float).reshape(-1, 3)[nodes] - np.asarray(d_b, dtype=float).reshape(-1, 3)[nodes]
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))
