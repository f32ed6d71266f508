"""
Quadratic simplex shape functions and quadrature rules.

Node ordering follows Gmsh: vertices first, then edge mid-nodes.

* 10-node tetrahedron: edges (0,1) (1,2) (0,2) (0,3) (2,3) (1,3)
* 6-node triangle: edges (0,1) (1,2) (2,0)

Reference coordinates live on the unit simplex, barycentric coordinate
``L0 = 1 - sum(xi)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

TET10_EDGES = ((0, 1), (1, 2), (0, 2), (0, 3), (2, 3), (1, 3))
TRI6_EDGES = ((0, 1), (1, 2), (2, 0))

# local edge -> node index in a 10-node tet
TET10_EDGE_NODE = {frozenset(e): 4 + i for i, e in enumerate(TET10_EDGES)}

# faces of a tet as vertex triples, each opposite to the missing vertex
TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))

# Gmsh tet10 -> VTK quadratic tetra ordering (last two edges swapped)
GMSH_TO_VTK_TET10 = np.array([0, 1, 2, 3, 4, 5, 6, 7, 9, 8])


@dataclass(frozen=True)
class QuadratureRule:
    """Points in reference coordinates and weights summing to the simplex measure."""

    points: np.ndarray
    weights: np.ndarray
    degree: int
    name: str

    @property
    def n(self) -> int:
        return len(self.weights)


def _barycentric_tet(xi):
    xi = np.asarray(xi, dtype=float)
    return np.concatenate([1.0 - xi.sum(axis=-1, keepdims=True), xi], axis=-1)


def tet10_shape(xi):
    """Shape function values, shape ``(..., 10)``."""
    L = _barycentric_tet(xi)
    vert = L * (2.0 * L - 1.0)
    edge = np.stack([4.0 * L[..., i] * L[..., j] for i, j in TET10_EDGES], axis=-1)
    return np.concatenate([vert, edge], axis=-1)


def tet10_shape_grad(xi):
    """Derivatives with respect to reference coordinates, shape ``(..., 10, 3)``."""
    xi = np.asarray(xi, dtype=float)
    L = _barycentric_tet(xi)
    # dL_i / dxi_k
    dL = np.array([[-1.0, -1.0, -1.0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    out = np.empty(xi.shape[:-1] + (10, 3))
    for i in range(4):
        out[..., i, :] = (4.0 * L[..., i, None] - 1.0) * dL[i]
    for m, (i, j) in enumerate(TET10_EDGES):
        out[..., 4 + m, :] = 4.0 * (L[..., i, None] * dL[j] + L[..., j, None] * dL[i])
    return out


def tri6_shape(xi):
    xi = np.asarray(xi, dtype=float)
    L = np.concatenate([1.0 - xi.sum(axis=-1, keepdims=True), xi], axis=-1)
    vert = L * (2.0 * L - 1.0)
    edge = np.stack([4.0 * L[..., i] * L[..., j] for i, j in TRI6_EDGES], axis=-1)
    return np.concatenate([vert, edge], axis=-1)


def tri6_shape_grad(xi):
    """Derivatives with respect to ``(xi, eta)``, shape ``(..., 6, 2)``."""
    xi = np.asarray(xi, dtype=float)
    L = np.concatenate([1.0 - xi.sum(axis=-1, keepdims=True), xi], axis=-1)
    dL = np.array([[-1.0, -1.0], [1, 0], [0, 1]])
    out = np.empty(xi.shape[:-1] + (6, 2))
    for i in range(3):
        out[..., i, :] = (4.0 * L[..., i, None] - 1.0) * dL[i]
    for m, (i, j) in enumerate(TRI6_EDGES):
        out[..., 3 + m, :] = 4.0 * (L[..., i, None] * dL[j] + L[..., j, None] * dL[i])
    return out


def tri6_shape_hess(xi):
    """Second derivatives, shape ``(..., 6, 2, 2)``; constant for quadratics."""
    xi = np.asarray(xi, dtype=float)
    dL = np.array([[-1.0, -1.0], [1, 0], [0, 1]])
    H = np.empty((6, 2, 2))
    for i in range(3):
        H[i] = 4.0 * np.outer(dL[i], dL[i])
    for m, (i, j) in enumerate(TRI6_EDGES):
        H[3 + m] = 4.0 * (np.outer(dL[i], dL[j]) + np.outer(dL[j], dL[i]))
    return np.broadcast_to(H, xi.shape[:-1] + (6, 2, 2)).copy()


# -- quadrature ---------------------------------------------------------------


def _perm_points(bary):
    """All distinct permutations of a barycentric tuple, returned as reference coords."""
    from itertools import permutations

    pts = sorted(set(permutations(bary)))
    return [p[1:] for p in pts]


def tet_keast4() -> QuadratureRule:
    a = 0.5854101966249685
    b = 0.1381966011250105
    pts = np.array(_perm_points((a, b, b, b)))
    return QuadratureRule(pts, np.full(4, 1.0 / 24.0), 2, "keast4")


def tet_keast5() -> QuadratureRule:
    """Degree-3 rule with a negative centroid weight."""
    pts = [(0.25, 0.25, 0.25)] + _perm_points((0.5, 1 / 6, 1 / 6, 1 / 6))
    w = [-4.0 / 5.0 / 6.0] + [9.0 / 20.0 / 6.0] * 4
    return QuadratureRule(np.array(pts), np.array(w), 3, "keast5")


def tet_collapsed(degree: int) -> QuadratureRule:
    """Conical-product Gauss-Jacobi rule, exact to ``degree``, positive weights."""
    m = max(1, (degree + 2) // 2)
    xa, wa = roots_jacobi(m, 2.0, 0.0)
    xb, wb = roots_jacobi(m, 1.0, 0.0)
    xc, wc = roots_jacobi(m, 0.0, 0.0)
    a, b, c = (xa + 1) / 2, (xb + 1) / 2, (xc + 1) / 2
    wa, wb, wc = wa / 8.0, wb / 4.0, wc / 2.0
    A, B, Cc = np.meshgrid(a, b, c, indexing="ij")
    W = wa[:, None, None] * wb[None, :, None] * wc[None, None, :]
    pts = np.stack([A, B * (1 - A), Cc * (1 - A) * (1 - B)], axis=-1).reshape(-1, 3)
    return QuadratureRule(pts, W.ravel(), 2 * m - 1, f"collapsed{2 * m - 1}")


def tri_strang6() -> QuadratureRule:
    a, b = 0.445948490915965, 0.091576213509771
    wa, wb = 0.223381589678011, 0.109951743655322
    pts = [(a, a), (1 - 2 * a, a), (a, 1 - 2 * a), (b, b), (1 - 2 * b, b), (b, 1 - 2 * b)]
    return QuadratureRule(np.array(pts), 0.5 * np.array([wa] * 3 + [wb] * 3), 2, "strang6")


def tri_radon7() -> QuadratureRule:
    s = np.sqrt(15.0)
    a, b = (6 - s) / 21, (6 + s) / 21
    wa, wb = (155 - s) / 1200, (155 + s) / 1200
    pts = [(1 / 3, 1 / 3), (a, a), (1 - 2 * a, a), (a, 1 - 2 * a), (b, b), (1 - 2 * b, b), (b, 1 - 2 * b)]
    w = [9 / 40] + [wa] * 3 + [wb] * 3
    return QuadratureRule(np.array(pts), 0.5 * np.array(w), 5, "radon7")


TET_RULES = {"keast4": tet_keast4, "keast5": tet_keast5}

#: default volume rule: positive weights, exact for the linearised P2 stiffness.
#: The degree-3 five-point rule has a negative weight that makes the tangent
#: indefinite for nearly incompressible materials.
DEFAULT_TET_RULE = "keast4"
#: rule exact for the consistent P2 mass matrix (degree 4)
MASS_TET_RULE = "collapsed5"
TRI_RULES = {"strang6": tri_strang6, "radon7": tri_radon7}


def tet_rule(name: str = DEFAULT_TET_RULE) -> QuadratureRule:
    if name.startswith("collapsed"):
        return tet_collapsed(int(name[len("collapsed"):]))
    try:
        return TET_RULES[name]()
    except KeyError:
        raise ValueError(f"unknown tetrahedron rule {name!r}") from None


def tri_rule(name: str = "radon7") -> QuadratureRule:
    try:
        return TRI_RULES[name]()
    except KeyError:
        raise ValueError(f"unknown triangle rule {name!r}") from None


def simplex_monomial_integral(powers) -> float:
    """Exact integral of ``prod x_i**p_i`` over the unit simplex of dimension len(powers)."""
    num = np.prod([factorial(p) for p in powers])
    return num / factorial(sum(powers) + len(powers))
