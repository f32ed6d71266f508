"""Sparse assembly helpers shared by the fiber and mechanics solvers.

Assembly is deterministic: element contributions are summed with
``np.bincount`` into a CSR pattern computed once per mesh, so the
summation order never depends on threads or hashing.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class SparsityPattern:
    """CSR pattern for the union of dense element blocks.

    Parameters
    ----------
    n : int
        Matrix dimension.
    blocks : list of (B, m) int arrays
        Global dof indices of each block; every block contributes an
        ``m x m`` dense pattern.
    """

    def __init__(self, n, blocks):
        self.n = int(n)
        keys = [self._keys(b) for b in blocks]
        allk = np.unique(np.concatenate([k.ravel() for k in keys])) if keys else np.zeros(0, np.int64)
        self.keys = allk
        self.rows = allk // self.n
        self.cols = allk % self.n
        self.indptr = np.searchsorted(self.rows, np.arange(self.n + 1)).astype(np.int64)
        self.nnz = len(allk)

    def _keys(self, dofs):
        dofs = np.asarray(dofs, dtype=np.int64)
        return dofs[:, :, None] * self.n + dofs[:, None, :]

    def positions(self, dofs):
        """CSR data positions of the ``(B, m, m)`` blocks for ``dofs``."""
        k = self._keys(dofs)
        pos = np.searchsorted(self.keys, k)
        if np.any(pos >= self.nnz) or np.any(self.keys[np.minimum(pos, self.nnz - 1)] != k):
            raise ValueError("block outside the sparsity pattern")
        return pos

    def matrix(self, contributions):
        """Sum ``[(positions, values), ...]`` into a CSR matrix."""
        data = np.zeros(self.nnz)
        for pos, val in contributions:
            data += np.bincount(pos.ravel(), weights=np.asarray(val).ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.cols.copy(), self.indptr.copy()), shape=(self.n, self.n))


def vector_dofs(conn, ndim=3):
    """Nodal connectivity ``(B, n)`` to interleaved dofs ``(B, n*ndim)``."""
    conn = np.asarray(conn, dtype=np.int64)
    return (conn[:, :, None] * ndim + np.arange(ndim)).reshape(len(conn), -1)


def scatter_vector(n, dofs, values):
    """Deterministic ``np.add.at`` replacement for dof vectors."""
    return np.bincount(np.asarray(dofs).ravel(), weights=np.asarray(values).ravel(), minlength=n)


def scalar_laplacian(mesh, geo, pattern=None):
    """Stiffness matrix of ``-div grad`` for scalar P2 fields."""
    K_e = np.einsum("eqai,eqbi,eq->eab", geo.dNdX, geo.dNdX, geo.dV)
    pattern = pattern or SparsityPattern(mesh.n_nodes, [mesh.elements])
    return pattern.matrix([(pattern.positions(mesh.elements), K_e)])


def scalar_mass(mesh, geo, pattern=None):
    M_e = np.einsum("qa,qb,eq->eab", geo.N, geo.N, geo.dV)
    pattern = pattern or SparsityPattern(mesh.n_nodes, [mesh.elements])
    return pattern.matrix([(pattern.positions(mesh.elements), M_e)])


def solve_dirichlet(K, rhs, fixed, values):
    """Solve ``K u = rhs`` with ``u[fixed] = values`` by elimination."""
    from scipy.sparse.linalg import spsolve

    n = K.shape[0]
    u = np.zeros(n)
    u[fixed] = values
    free = np.setdiff1d(np.arange(n), fixed)
    K = K.tocsr()
    b = rhs[free] - K[free][:, fixed] @ u[fixed]
    u[free] = spsolve(K[free][:, free].tocsc(), b)
    return u
