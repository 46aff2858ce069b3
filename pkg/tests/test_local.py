from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifesolve.geometry import analyze
from ifesolve.local import (AffinePair, build_correction, build_ife_basis, compute_cT, cr_basis, cT_lower_bound,
                            functional_J, functional_M, functional_matrix, ife_interpolate, solve_ife_basis)
from ifesolve.mesh import build_uniform_mesh_2d, build_uniform_mesh_3d
from ifesolve.problems import example1, example3d, patch_problem

SQUARE = [(-1, 1), (-1, 1)]


@pytest.fixture(scope="module", params=["2d-high", "2d-low", "3d"])
def case(request):
    if request.param == "3d":
        spec, m = example3d(10.0, 1.0), build_uniform_mesh_3d(5, [(-1, 1)] * 3)
    else:
        bp, bm = (1000.0, 1.0) if request.param == "2d-high" else (1.0, 1000.0)
        spec, m = example1(bp, bm), build_uniform_mesh_2d(16, SQUARE)
    return spec, analyze(m, spec.levelset)


@pytest.mark.parametrize("dim", [2, 3])
def test_cr_basis_face_means(dim):
    P = np.eye(dim + 1, dim, k=-1) * 1.5 + 0.1 * np.arange(dim + 1)[:, None]
    vals, grads = cr_basis(P)
    for k in range(dim + 1):
        for j in range(dim + 1):
            face = np.delete(P, j, axis=0)
            lam = vals[k] + grads[k] @ (face.mean(axis=0) - P.mean(axis=0))
            assert lam == pytest.approx(float(k == j), abs=1e-12)


def test_affine_pair_arithmetic():
    c = np.zeros(2)
    a = AffinePair(c, np.array([1.0, 2.0]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    b = AffinePair.single(c, 3.0, np.array([1.0, 1.0]))
    x = np.array([[0.5, -0.5]])
    assert (a + b)(x, 1)[0] == pytest.approx(a(x, 1)[0] + b(x, 1)[0])
    assert (a - b)(x, -1)[0] == pytest.approx(a(x, -1)[0] - b(x, -1)[0])
    assert (a * 2.0)(x, -1)[0] == pytest.approx(2 * a(x, -1)[0])
    assert np.allclose(AffinePair.from_vector(c, a.as_vector()).as_vector(), a.as_vector())


def test_basis_matches_dense_solve(case):
    _, geo = case
    for T, cut in geo.cuts.items():
        b = build_ife_basis(T, cut.frame, cut)
        dense, _ = solve_ife_basis(cut.frame, cut)
        for x, y in zip(dense, b.basis):
            scale = max(1.0, np.abs(x.as_vector()).max())
            assert np.abs(x.as_vector() - y.as_vector()).max() <= 1e-9 * scale


def test_kronecker_properties(case):
    spec, geo = case
    for T, cut in geo.cuts.items():
        fr = cut.frame
        N = fr.dim
        b = build_ife_basis(T, fr, cut)
        c = build_correction(T, fr, cut, b, spec.levelset)
        for F, phi in enumerate(b.basis):
            gscale = 1.0 + np.abs(phi.grad).max() * max(np.abs(fr.B_T_plus).max(), np.abs(fr.B_T_minus).max())
            for i in range(N + 1):
                assert abs(functional_J(fr, phi, i)) <= 1e-10 * gscale
            for G in range(N + 1):
                assert functional_M(cut, G, phi) == pytest.approx(float(F == G), abs=1e-10)
        for i, psi in enumerate(c.psi):
            for G in range(N + 1):
                assert abs(functional_M(cut, G, psi)) <= 1e-10 * max(1.0, np.abs(psi.value).max())


def test_correction_reproduces_jumps(case):
    spec, geo = case
    P = spec.levelset
    for T, cut in list(geo.cuts.items())[:40]:
        fr = cut.frame
        N = fr.dim
        b = build_ife_basis(T, fr, cut)
        c = build_correction(T, fr, cut, b, P)
        gD = np.asarray(P.g_D(fr.x_tilde_pts[:N])).reshape(-1)
        for i in range(N):
            assert functional_J(fr, c.xi_J, i) == pytest.approx(gD[i], abs=1e-10 * max(1, abs(gD[i])))
        gN = fr.avg(P.g_N)
        assert functional_J(fr, c.xi_J, N) == pytest.approx(gN, abs=1e-10 * max(1, abs(gN)))


def test_gradient_identity(case):
    _, geo = case
    for T, cut in geo.cuts.items():
        b = build_ife_basis(T, cut.frame, cut)
        assert np.allclose(b.pi_chi_d.grad[0], cut.vol_plus / cut.volume * cut.frame.n_bar, atol=1e-12)


def test_functional_matrix_nonsingular(case):
    _, geo = case
    for cut in list(geo.cuts.values())[:20]:
        L = functional_matrix(cut.frame, cut)
        assert np.linalg.cond(L) < 1e12


@given(st.floats(0.0, 1.0), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, np.pi))
@settings(max_examples=200, deadline=None)
def test_cT_lower_bound_property(r, lp, lm, angle):
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    Bp = rot @ np.diag([10.0 ** lp, 1.0]) @ rot.T
    Bm = np.diag([1.0, 10.0 ** lm])
    frame = SimpleNamespace(n_bar=np.array([np.cos(2 * angle), np.sin(2 * angle)]), B_T_plus=Bp, B_T_minus=Bm)
    cT = compute_cT(frame, SimpleNamespace(vol_plus=r, volume=1.0))
    assert cT >= cT_lower_bound(frame) * (1 - 1e-12)


def test_interpolation_exact_for_piecewise_affine():
    spec = patch_problem()
    geo = analyze(build_uniform_mesh_2d(8, spec.domain), spec.levelset)
    P = spec.levelset
    for T, cut in geo.cuts.items():
        b = build_ife_basis(T, cut.frame, cut)
        c = build_correction(T, cut.frame, cut, b, P)
        I = ife_interpolate(T, cut, b, P.exact_plus, P.exact_minus) + c.xi_J
        x = cut.vertices.mean(axis=0)[None]
        for s in (1, -1):
            assert I(x, s)[0] == pytest.approx(P.u(x, s)[0], abs=1e-12)
