import numpy as np
import pytest
from _oracles import HO_PARAMS, MODELS, fd_stress, fd_tangent, random_states, relerr, sym_unit
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pericard.elements import tet10_shape_grad
from pericard.materials import (
    ElementInversionError,
    MaterialParams,
    invariants,
    kinematics,
    material_tangent,
    pk2_holzapfel,
    pk2_mooney,
    pk2_neohooke,
    pk2_volumetric,
    strain_energy,
    stress_and_tangent,
    viscous_potential,
    viscous_stress,
    volumetric_energy,
)

# reference tet10 nodes (Gmsh order)
REF_TET = np.array([
    [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
    [0.5, 0, 0], [0.5, 0.5, 0], [0, 0.5, 0], [0, 0, 0.5], [0, 0.5, 0.5], [0.5, 0, 0.5],
])
QP = np.array([[0.25, 0.25, 0.25], [0.1, 0.2, 0.3]])
DNDX = tet10_shape_grad(QP)[None]  # reference element: dN/dX = dN/dxi


def test_kinematics_identity_and_stretch(rng):
    k = kinematics(DNDX, np.zeros((1, 10, 3)))
    np.testing.assert_allclose(k.F, np.broadcast_to(np.eye(3), k.F.shape), atol=1e-15)
    np.testing.assert_allclose(k.E, 0.0, atol=1e-15)
    np.testing.assert_allclose(k.J, 1.0)
    k = kinematics(DNDX, 0.1 * REF_TET[None])
    np.testing.assert_allclose(k.F, 1.1 * np.broadcast_to(np.eye(3), k.F.shape), atol=1e-14)
    np.testing.assert_allclose(k.J, 1.331)
    d = 0.05 * rng.normal(size=(1, 10, 3))
    k = kinematics(DNDX, d)
    F = np.eye(3) + np.einsum("ai,qaj->qij", d[0], DNDX[0])
    np.testing.assert_allclose(k.E[0], 0.5 * (np.swapaxes(F, 1, 2) @ F - np.eye(3)), atol=1e-14)


def test_kinematics_strain_rate(rng):
    d = 0.05 * rng.normal(size=(1, 10, 3))
    v = rng.normal(size=(1, 10, 3))
    h = 1e-6
    k = kinematics(DNDX, d, v)
    Ep = kinematics(DNDX, d + h * v).E
    Em = kinematics(DNDX, d - h * v).E
    np.testing.assert_allclose(k.Edot, (Ep - Em) / (2 * h), atol=1e-8)


def test_kinematics_inversion_reports_element():
    d = np.zeros((2, 10, 3))
    d[1] = -2.0 * REF_TET
    with pytest.raises(ElementInversionError) as err:
        kinematics(np.repeat(DNDX, 2, axis=0), d, element_ids=[7, 42])
    assert err.value.elements.tolist() == [42]


def test_invariants_at_identity():
    f0 = np.array([1.0, 0, 0])
    s0 = np.array([0, 1.0, 0])
    inv = invariants(np.eye(3), f0, s0)
    assert inv.I1 == 3 and inv.I2 == 3 and inv.I4f == 1 and inv.I4s == 1
    assert inv.I8fs == f0 @ s0 and inv.J == 1


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 3), elements=st.floats(-0.3, 0.3)), st.floats(0.5, 2.0))
def test_isochoric_invariants_scale_free(G, lam):
    F = np.eye(3) + G
    C = F.T @ F
    a, b = invariants(C), invariants(lam**2 * C)
    assert np.isclose(a.I1bar, b.I1bar, rtol=1e-12)
    assert np.isclose(a.I2bar, b.I2bar, rtol=1e-12)


@pytest.mark.parametrize("name", list(MODELS))
def test_frame_indifference(name, rng):
    params = MODELS[name]
    C, f0, s0 = random_states(rng, 20)
    F = np.linalg.cholesky(C).swapaxes(1, 2)  # any F with F^T F = C
    Q = np.linalg.qr(rng.normal(size=(20, 3, 3)))[0]
    QF = Q @ F
    C2 = np.swapaxes(QF, 1, 2) @ QF
    np.testing.assert_allclose(strain_energy(C2, f0, s0, params), strain_energy(C, f0, s0, params), rtol=1e-12)


def test_fiber_swap_symmetry(rng):
    C, f0, s0 = random_states(rng, 20)
    p = HO_PARAMS
    q = p.with_(a_f=p.a_s, b_f=p.b_s, a_s=p.a_f, b_s=p.b_f)
    np.testing.assert_allclose(strain_energy(C, s0, f0, q), strain_energy(C, f0, s0, p), rtol=1e-12)


def test_stress_free_reference():
    I = np.eye(3)
    f0, s0 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    assert np.abs(pk2_holzapfel(I, f0, s0, HO_PARAMS)).max() < 1e-12 * 1e3
    assert np.abs(pk2_mooney(I, MODELS["mooney"])).max() < 1e-9
    assert np.abs(pk2_neohooke(I, MODELS["neohooke"])).max() < 1e-9
    assert np.abs(pk2_volumetric(I, 1e6)).max() < 1e-9
    for p in MODELS.values():
        if p.holzapfel_form == "standard_ho2009":
            assert np.abs(stress_and_tangent(I, f0, s0, p)[1]).max() < 1e-9


def test_as_printed_reference_stress():
    # d/dC of a/(2b) (exp(b (I4 - 3)) - 1) at I4 = 1 gives a/2 exp(-2b) f(x)f, S = 2 dpsi/dC
    p = MODELS["holzapfel_as_printed"]
    f0 = np.array([0.0, 0.6, 0.8])
    s0 = np.array([0.0, -0.8, 0.6])
    S = pk2_holzapfel(np.eye(3), f0, s0, p)
    expect = p.a_f * np.exp(-2 * p.b_f) * np.outer(f0, f0) + p.a_s * np.exp(-2 * p.b_s) * np.outer(s0, s0)
    np.testing.assert_allclose(S, expect, rtol=1e-12, atol=1e-25)
    assert np.abs(S).max() > 0


def test_volumetric_energy_value():
    assert np.isclose(volumetric_energy(1.1, 1e6), 5e3)
    C = 1.1 ** (2 / 3) * np.eye(3)
    assert np.isclose(strain_energy(C, params=MaterialParams("neohooke", mu=0.0, kappa=1e6)), 5e3)


def test_viscous_stress(rng):
    assert np.all(viscous_stress(np.zeros((3, 3)), 100.0) == 0)
    np.testing.assert_allclose(viscous_stress(0.1 * np.eye(3), 100.0), 10.0 * np.eye(3))
    Ed = rng.normal(size=(3, 3))
    Ed = Ed + Ed.T
    h = 1e-6
    fd = np.zeros((3, 3))
    for k in range(3):
        for l in range(3):
            D = sym_unit(k, l) * h
            fd[k, l] = (viscous_potential(Ed + D, 100.0) - viscous_potential(Ed - D, 100.0)) / (2 * h)
    np.testing.assert_allclose(viscous_stress(Ed, 100.0), fd, rtol=1e-8)


@pytest.mark.parametrize("name", list(MODELS))
def test_stress_matches_energy_differences(name, rng):
    C, f0, s0 = random_states(rng, 100)
    _, S, _ = stress_and_tangent(C, f0, s0, MODELS[name], tangent=False)
    assert relerr(S, fd_stress(C, f0, s0, MODELS[name])).max() < 1e-6


@pytest.mark.parametrize("name", list(MODELS))
def test_tangent_matches_stress_differences(name, rng):
    C, f0, s0 = random_states(rng, 100)
    CC = material_tangent(C, f0, s0, MODELS[name])
    assert relerr(CC, fd_tangent(C, f0, s0, MODELS[name])).max() < 1e-6
    # major symmetry of the hyperelastic tangent
    np.testing.assert_allclose(CC, np.einsum("nijkl->nklij", CC), rtol=1e-10, atol=1e-10 * np.abs(CC).max())


def test_incompressible_states_stress(rng):
    C, f0, s0 = random_states(rng, 50)
    C = C / np.cbrt(np.linalg.det(C))[:, None, None]
    S = stress_and_tangent(C, f0, s0, HO_PARAMS, tangent=False)[1]
    assert relerr(S, fd_stress(C, f0, s0, HO_PARAMS)).max() < 1e-6


def test_neohooke_small_strain_tangent():
    mu, kappa = 3e3, 2e5
    CC = material_tangent(np.eye(3), params=MaterialParams("neohooke", mu=mu, kappa=kappa))
    I = np.eye(3)
    Isym = 0.5 * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I))
    IxI = np.einsum("ij,kl->ijkl", I, I)
    np.testing.assert_allclose(CC, 2 * mu * (Isym - IxI / 3) + kappa * IxI, atol=1e-9 * kappa)


@pytest.mark.parametrize("name", list(MODELS))
def test_tangent_taylor_remainder(name, rng):
    C, f0, s0 = random_states(rng, 1)
    _, S, CC = stress_and_tangent(C, f0, s0, MODELS[name])
    dE = rng.normal(size=(3, 3))
    dE = 0.5 * (dE + dE.T)
    rem = []
    for eps in (1e-3, 5e-4, 2.5e-4):
        S2 = stress_and_tangent(C + 2 * eps * dE, f0, s0, MODELS[name], tangent=False)[1]
        rem.append(np.linalg.norm(S2 - S - eps * np.einsum("nijkl,kl->nij", CC, dE)))
    orders = np.log2(np.array(rem[:-1]) / np.array(rem[1:]))
    assert np.all(orders > 1.8), orders
