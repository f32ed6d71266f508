"""Finite-element assembly of the solid: internal, boundary and pressure forces.

Dofs are interleaved, ``3 * node + component``. Closure-only nodes carry
dofs that are held fixed and overwritten from the rim motion (see
:meth:`pericard.mesh.Mesh.expand`).

The passive stress is evaluated through an optional prestress deformation
gradient ``F_pre`` per quadrature point: the hyperelastic law sees
``F F_pre`` and its stress is pulled to the imaged configuration as
``(1/J_pre) F_pre S F_pre^T``. Active and viscous stresses are defined
directly on the imaged configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import FollowerPressure
from .elements import DEFAULT_TET_RULE, MASS_TET_RULE
from .fem import SparsityPattern, scatter_vector, vector_dofs
from .fibers import FiberField, uniform_fibers
from .materials import ElementInversionError, MaterialParams, stress_and_tangent
from .mesh import Mesh, MeshError, volume_geometry

_I = np.eye(3)


@dataclass
class Assembly:
    """Forces and tangent data of one evaluation.

    ``tangent`` holds CSR data on :attr:`SolidModel.pattern` for the
    combination ``cK dF/dd + cD dF/dv`` requested by the caller.
    """

    force: np.ndarray
    tangent: np.ndarray | None
    dforce_dp: dict


class SolidModel:
    """Spatially discretised solid with boundary conditions.

    Parameters
    ----------
    mesh : Mesh
    materials : MaterialParams or dict
        One parameter set, or ``{region id: MaterialParams}``.
    fibers : FiberField, optional
        Defaults to a uniform x-aligned field (fine for isotropic models).
    springs : list
        Spring-type boundary conditions from :mod:`pericard.boundary`.
    pressures : dict
        ``{cavity: [wall surface tags]}`` carrying follower pressure.
    active_regions : iterable of int, optional
        Regions in which the fiber stress ``tau`` acts; all by default.
    dirichlet : dict, optional
        ``{surface tag: components}`` held at zero displacement.
    """

    def __init__(self, mesh: Mesh, materials, fibers: FiberField | None = None, springs=(), pressures=None, *, active_regions=None, dirichlet=None, rule=DEFAULT_TET_RULE):
        self.mesh = mesh
        self.geo = volume_geometry(mesh, rule)
        self.n_dof = 3 * mesh.n_nodes
        regions = np.unique(mesh.regions)
        if isinstance(materials, MaterialParams):
            materials = {int(r): materials for r in regions}
        missing = set(int(r) for r in regions) - set(materials)
        if missing:
            raise ValueError(f"no material for region(s) {sorted(missing)}")
        self.materials = materials
        self.groups = [(params, np.nonzero(mesh.regions == r)[0]) for r, params in sorted(materials.items()) if np.any(mesh.regions == r)]
        self.fibers = fibers if fibers is not None else uniform_fibers(mesh, rule=rule)
        if self.fibers.f0.shape != self.geo.dV.shape + (3,):
            raise ValueError("fiber field does not match the mesh quadrature")
        self.springs = list(springs)
        self.pressure_loads = {}
        for cav, walls in (pressures or {}).items():
            self.pressure_loads[cav] = [FollowerPressure(mesh, w, cav) for w in walls]
        if active_regions is None:
            self.active = np.ones(mesh.n_elements, bool)
        else:
            self.active = np.isin(mesh.regions, list(active_regions))

        self.edofs = vector_dofs(mesh.elements)
        blocks = [self.edofs, np.arange(self.n_dof)[:, None]]
        blocks += [s.dofs for s in self.springs]
        blocks += [p.dofs for loads in self.pressure_loads.values() for p in loads]
        self.pattern = SparsityPattern(self.n_dof, blocks)
        self.epos = self.pattern.positions(self.edofs)
        self.spos = [self.pattern.positions(s.dofs) for s in self.springs]
        self.ppos = {c: [self.pattern.positions(p.dofs) for p in loads] for c, loads in self.pressure_loads.items()}
        self.diag_pos = self.pattern.positions(np.arange(self.n_dof)[:, None]).ravel()

        fixed = [3 * mesh.orphan_nodes[:, None] + np.arange(3)]
        for tag, comps in (dirichlet or {}).items():
            nodes = mesh.surface_nodes(tag)
            fixed.append(3 * nodes[:, None] + np.asarray(comps)[None, :])
        self.fixed = np.unique(np.concatenate([f.ravel() for f in fixed])).astype(np.int64)
        self.free_mask = np.ones(self.n_dof, bool)
        self.free_mask[self.fixed] = False
        self._fixed_entries = ~(self.free_mask[self.pattern.rows] & self.free_mask[self.pattern.cols])
        self.fixed_diag_pos = self.diag_pos[self.fixed]

        self.F_pre = None
        self._mass = self._mass_data()

    # -- setup --------------------------------------------------------------

    def _density(self):
        rho = np.zeros(self.mesh.n_elements)
        for params, els in self.groups:
            rho[els] = params.rho
        return rho

    def _mass_data(self):
        g = volume_geometry(self.mesh, MASS_TET_RULE)
        Me = np.einsum("e,qa,qb,eq->eab", self._density(), g.N, g.N, g.dV)
        Me = np.einsum("eab,ij->eaibj", Me, _I).reshape(-1, 30, 30)
        return self.pattern.matrix([(self.epos, Me)]).data

    @property
    def mass_data(self):
        return self._mass

    def mass_matrix(self):
        return self._csr(self._mass)

    def _csr(self, data):
        import scipy.sparse as sp

        return sp.csr_matrix((data, self.pattern.cols, self.pattern.indptr), shape=(self.n_dof, self.n_dof))

    def set_prestress(self, F_pre):
        """Install a prestress deformation gradient ``(E, Q, 3, 3)`` (or ``None``)."""
        if F_pre is not None:
            F_pre = np.asarray(F_pre, dtype=float)
            if F_pre.shape != self.geo.dV.shape + (3, 3):
                raise ValueError("prestress field has the wrong shape")
            if np.any(np.linalg.det(F_pre) <= 0):
                raise ValueError("prestress deformation gradient must have det > 0")
        self.F_pre = F_pre

    # -- kinematics -------------------------------------------------------------

    def deformation_gradient(self, d):
        d_e = np.asarray(d).reshape(-1, 3)[self.mesh.elements]
        return np.einsum("eai,eqaj->eqij", d_e, self.geo.dNdX) + _I

    # -- stress -----------------------------------------------------------------

    def _passive(self, F, tangent):
        """Passive PK2 on the imaged configuration, with tangent ``dS/dE``."""
        E, Q = F.shape[:2]
        S = np.empty((E, Q, 3, 3))
        CC = np.empty((E, Q, 3, 3, 3, 3)) if tangent else None
        psi = np.empty((E, Q))
        f0, s0 = self.fibers.f0, self.fibers.s0
        Fp = self.F_pre
        for params, els in self.groups:
            Fe = F[els]
            fe, se = f0[els], s0[els]
            if Fp is not None:
                P = Fp[els]
                Fe = Fe @ P
                Pinv = np.linalg.inv(P)
                fe = np.einsum("...ij,...j->...i", Pinv, fe)
                fe /= np.linalg.norm(fe, axis=-1, keepdims=True)
                se = np.einsum("...ij,...j->...i", Pinv, se)
                se -= np.sum(se * fe, -1, keepdims=True) * fe
                se /= np.linalg.norm(se, axis=-1, keepdims=True)
            C = np.einsum("...ki,...kj->...ij", Fe, Fe)
            p_, S_, CC_ = stress_and_tangent(C, fe, se, params, tangent=tangent)
            if Fp is not None:
                Jp = np.linalg.det(P)
                S_ = np.einsum("...iI,...IJ,...jJ->...ij", P, S_, P) / Jp[..., None, None]
                if tangent:
                    CC_ = np.einsum("...iI,...jJ,...IJKL,...kK,...lL->...ijkl", P, P, CC_, P, P, optimize=True) / Jp[..., None, None, None, None]
                p_ = p_ / Jp
            S[els] = S_
            psi[els] = p_
            if tangent:
                CC[els] = CC_
        return psi, S, CC

    def _eta(self):
        eta = np.zeros(self.mesh.n_elements)
        for params, els in self.groups:
            eta[els] = params.eta
        return eta

    # -- assembly -----------------------------------------------------------------

    def assemble(self, d, v, tau=None, pressures=None, *, cK=1.0, cD=0.0, tangent=True) -> Assembly:
        """Internal, spring and pressure forces at ``(d, v)``.

        Parameters
        ----------
        d, v : (n_dof,) arrays
        tau : (E, Q) array, optional
            Active fiber stress; ignored outside active regions.
        pressures : dict, optional
            ``{cavity: pressure}`` acting on that cavity's walls.
        cK, cD : float
            Weights of ``dF/dd`` and ``dF/dv`` in the returned tangent.
        """
        mesh, g = self.mesh, self.geo
        d3 = np.asarray(d, dtype=float).reshape(-1, 3)
        v3 = np.asarray(v, dtype=float).reshape(-1, 3)
        d_e = d3[mesh.elements]
        v_e = v3[mesh.elements]
        dN = g.dNdX
        F = np.einsum("eai,eqaj->eqij", d_e, dN) + _I
        J = np.linalg.det(F)
        if np.any(J <= 0.0):
            raise ElementInversionError(np.nonzero((J <= 0).any(axis=1))[0])
        _, S, CC = self._passive(F, tangent and cK != 0.0)

        Fd = np.einsum("eai,eqaj->eqij", v_e, dN)
        FtFd = np.einsum("...ki,...kj->...ij", F, Fd)
        Edot = 0.5 * (FtFd + np.swapaxes(FtFd, -1, -2))
        eta = self._eta()[:, None, None, None]
        S = S + eta * Edot
        if tau is not None:
            t = np.where(self.active[:, None], np.asarray(tau), 0.0)
            f0 = self.fibers.f0
            S = S + t[..., None, None] * np.einsum("...i,...j->...ij", f0, f0)

        P = F @ S
        fe = np.einsum("eqiJ,eqaJ,eq->eai", P, dN, g.dV).reshape(-1, 30)
        force = scatter_vector(self.n_dof, self.edofs, fe)

        data = None
        if tangent:
            E_, Q = g.dV.shape
            # G[a i, I J] = F_iI dN_aJ
            G = np.einsum("eqiI,eqaJ->eqaiIJ", F, dN).reshape(E_, Q, 30, 9)
            Gw = G * g.dV[..., None, None]
            Ke = np.zeros((E_, 30, 30))
            if cK != 0.0:
                Cm = CC.reshape(E_, Q, 9, 9)
                T = np.matmul(G, Cm)  # (E,Q,30,9)
                Ke += cK * np.matmul(T.transpose(0, 2, 1, 3).reshape(E_, 30, 9 * Q), Gw.transpose(0, 2, 1, 3).reshape(E_, 30, 9 * Q).transpose(0, 2, 1))
                geo_ab = np.einsum("eqaJ,eqJK,eqbK,eq->eab", dN, S, dN, g.dV)
                Ke += cK * np.einsum("eab,ij->eaibj", geo_ab, _I).reshape(E_, 30, 30)
                if np.any(eta):
                    # d(Edot)/d(d_bm) = sym(dN_b (x) Fdot_m)
                    H = 0.5 * (np.einsum("eqbI,eqmJ->eqbmIJ", dN, Fd) + np.einsum("eqmI,eqbJ->eqbmIJ", Fd, dN))
                    H = H.reshape(E_, Q, 30, 9) * eta
                    Ke += cK * np.einsum("eqak,eqbk->eab", Gw, H)
            if cD != 0.0 and np.any(eta):
                Gs = 0.5 * (G.reshape(E_, Q, 30, 3, 3) + G.reshape(E_, Q, 30, 3, 3).swapaxes(-1, -2)).reshape(E_, Q, 30, 9)
                Ke += cD * eta[..., 0] * np.einsum("eqak,eqbk->eab", Gw, Gs)
            contribs = [(self.epos, Ke)]
        else:
            contribs = []

        for s, pos in zip(self.springs, self.spos):
            c = s.contribution(d3, v3, tangent)
            force += scatter_vector(self.n_dof, c.dofs, c.force)
            if tangent:
                blk = cK * c.K
                if c.D is not None and cD != 0.0:
                    blk = blk + cD * c.D
                contribs.append((pos, blk))

        dfdp = {}
        for cav, loads in self.pressure_loads.items():
            p = 0.0 if pressures is None else float(pressures.get(cav, 0.0))
            col = np.zeros(self.n_dof)
            for load, pos in zip(loads, self.ppos[cav]):
                c = load.contribution(d3, p, tangent)
                force += scatter_vector(self.n_dof, c.dofs, c.force)
                col += scatter_vector(self.n_dof, c.dofs, c.dp)
                if tangent and p != 0.0:
                    contribs.append((pos, cK * c.K))
            dfdp[cav] = col

        if tangent:
            data = np.zeros(self.pattern.nnz)
            for pos, val in contribs:
                data += np.bincount(pos.ravel(), weights=val.ravel(), minlength=self.pattern.nnz)
        return Assembly(force, data, dfdp)

    # -- bookkeeping --------------------------------------------------------------

    def strain_energy(self, d):
        F = self.deformation_gradient(d)
        psi, _, _ = self._passive(F, False)
        return float(np.sum(psi * self.geo.dV))

    def kinetic_energy(self, v):
        v = np.asarray(v).ravel()
        return 0.5 * float(v @ (self._csr(self._mass) @ v))

    def spring_energy(self, d):
        d3 = np.asarray(d).reshape(-1, 3)
        return float(sum(s.energy(d3) for s in self.springs if hasattr(s, "energy")))

    def apply_constraints(self, data):
        """Replace rows and columns of fixed dofs by the identity (in place)."""
        data[self._fixed_entries] = 0.0
        data[self.fixed_diag_pos] = 1.0
        return data

    def expand(self, d):
        """Set closure-only nodes from the solid motion."""
        if len(self.mesh.orphan_nodes) == 0:
            return d
        return self.mesh.expand(np.asarray(d).reshape(-1, 3)).ravel()


def check_surfaces(mesh: Mesh, tags):
    missing = [t for t in tags if t not in mesh.surfaces]
    if missing:
        raise MeshError(f"surface(s) {missing} not present in the mesh (available: {sorted(mesh.surfaces)})")
