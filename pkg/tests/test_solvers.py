import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from ifesolve.assembly import assemble_system
from ifesolve.errors import InnerSolveStagnation, NoConvergence
from ifesolve.mesh import MeshHierarchy, build_uniform_mesh_2d, build_uniform_mesh_3d, refine_uniform
from ifesolve.problems import example1
from ifesolve.solvers import (InnerSolver, PreconditionerB, SmootherR, build_multigrid, cr_prolongation,
                              estimate_cond2, pcg, solve_pcg)


@pytest.fixture(scope="module")
def two_level():
    spec = example1(1000.0, 1.0)
    meshes = MeshHierarchy.build(build_uniform_mesh_2d(16, spec.domain), 1).levels
    S = assemble_system(meshes[-1], spec.levelset)
    return spec, meshes, S


def test_smoother_transpose(ex1_high, rng):
    _, S = ex1_high
    R = SmootherR(S.A, n_near=S.dofmap.n_near)
    x, y = rng.standard_normal((2, S.A.shape[0]))
    assert R.apply(x) @ y == pytest.approx(x @ R.apply_T(y), rel=1e-12)


def test_smoother_is_contraction_in_energy(ex1_high, rng):
    _, S = ex1_high
    A = S.A
    R = SmootherR(A, n_near=S.dofmap.n_near)
    e = rng.standard_normal(A.shape[0])
    e_new = e - R.apply(A @ e)
    assert e_new @ (A @ e_new) < e @ (A @ e)


def test_smoother_solves_interface_block_exactly(ex1_high, rng):
    _, S = ex1_high
    m = S.dofmap.n_near
    R = SmootherR(S.A, n_near=m)
    g = rng.standard_normal(S.A.shape[0])
    v = R.apply(g)
    assert np.abs((g - S.A @ v)[:m]).max() <= 1e-10 * np.abs(g).max()


@pytest.mark.parametrize("dim", [2, 3])
def test_prolongation_exact_for_linear(dim):
    coarse = build_uniform_mesh_2d(3) if dim == 2 else build_uniform_mesh_3d(1)
    fine = refine_uniform(coarse)
    a = np.arange(1, dim + 1) * 0.7
    lin = lambda x: 0.3 + x @ a
    P = cr_prolongation(coarse, fine)
    assert np.allclose(P @ lin(coarse.face_centroids), lin(fine.face_centroids), atol=1e-13)
    assert np.allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0)


def test_vcycle_symmetric_and_reduces_error(two_level, rng):
    spec, meshes, S = two_level
    mg = build_multigrid(meshes, spec.levelset, finest=(S.A_std, S.dofmap))
    assert mg.n_levels == 2
    x, y = rng.standard_normal((2, S.A_std.shape[0]))
    assert mg.vcycle(x) @ y == pytest.approx(x @ mg.vcycle(y), rel=1e-10)
    e = rng.standard_normal(S.A_std.shape[0])
    e1 = e - mg.vcycle(S.A_std @ e)
    energy = lambda v: v @ (S.A_std @ v)
    assert energy(e1) < 0.2 * energy(e)


def test_pcg_matches_direct(ex1_low):
    _, S = ex1_low
    x, rep = pcg(S.A, S.rhs, tol=1e-12, maxiter=2000)
    ref = spsolve(S.A.tocsc(), S.rhs)
    assert rep.converged
    assert np.abs(x - ref).max() <= 1e-8 * np.abs(ref).max()
    assert all(b >= a - 1e-12 * abs(a) for a, b in zip(rep.energies[1:], rep.energies))


def test_pcg_zero_rhs():
    A = sp.identity(5, format="csr")
    x, rep = pcg(A, np.zeros(5))
    assert rep.iterations == 0 and not x.any()


def test_pcg_no_convergence(ex1_low):
    _, S = ex1_low
    with pytest.raises(NoConvergence) as info:
        pcg(S.A, S.rhs, maxiter=2)
    assert info.value.x is not None and info.value.report.iterations == 2


def test_inner_stagnation(two_level):
    spec, meshes, S = two_level
    mg = build_multigrid(meshes, spec.levelset, finest=(S.A_std, S.dofmap), nu=1)
    inner = InnerSolver(mg, tol=1e-14, maxiter=1)
    with pytest.raises(InnerSolveStagnation):
        inner(S.rhs)


def test_preconditioner_symmetric(two_level, rng):
    spec, meshes, S = two_level
    mg = build_multigrid(meshes, spec.levelset, finest=(S.A_std, S.dofmap))
    inner = InnerSolver(mg, tol=1e-14, maxiter=200)
    B = PreconditionerB(S.A, SmootherR(S.A, n_near=S.dofmap.n_near), inner, n_s=1)
    x, y = rng.standard_normal((2, S.A.shape[0]))
    bx, by = B(x) @ y, x @ B(y)
    assert abs(bx - by) <= 1e-10 * abs(bx)


def test_preconditioner_reduces_to_inner_solve(two_level, rng):
    spec, meshes, S = two_level
    mg = build_multigrid(meshes, spec.levelset, finest=(S.A_std, S.dofmap))
    inner = InnerSolver(mg, tol=1e-12)
    B = PreconditionerB(S.A_std, SmootherR(S.A_std, n_near=S.dofmap.n_near), inner, n_s=0)
    g = rng.standard_normal(S.A.shape[0])
    assert np.allclose(B(g), inner(g), rtol=0, atol=1e-14 * np.abs(inner(g)).max())


def test_solve_pcg_iterations(two_level):
    spec, meshes, S = two_level
    u, rep = solve_pcg(S, meshes, spec.levelset)
    ref = spsolve(S.A.tocsc(), S.rhs)
    assert rep.converged and rep.iter1 <= 10 and rep.iter2 is not None
    assert np.linalg.norm(S.rhs - S.A @ u) <= 1e-8 * np.linalg.norm(S.rhs)
    assert np.abs(u - ref).max() <= 1e-5 * np.abs(ref).max()


def test_single_level_reports_direct(ex1_high):
    spec, S = ex1_high
    _, rep = solve_pcg(S, [S.geometry.mesh], spec.levelset)
    assert rep.iter2 is None


def test_cond_estimate_against_dense(ex1_high):
    _, S = ex1_high
    w = np.linalg.eigvalsh(S.A.toarray())
    cond, lo, hi, ok = estimate_cond2(S.A)
    assert ok
    assert cond == pytest.approx(w[-1] / w[0], rel=1e-4)
    small = S.A[:200, :200]
    ws = np.linalg.eigvalsh(small.toarray())
    assert estimate_cond2(small)[0] == pytest.approx(ws[-1] / ws[0], rel=1e-10)


def test_functional_entry_points(two_level, rng):
    from ifesolve.solvers import apply_preconditioner_B, apply_smoother_R, vcycle_mg
    spec, meshes, S = two_level
    R = SmootherR(S.A, n_near=S.dofmap)
    g = rng.standard_normal(S.A.shape[0])
    assert np.array_equal(apply_smoother_R(R, g), R.apply(g))
    mg = build_multigrid(meshes, spec.levelset, finest=(S.A_std, S.dofmap))
    assert np.array_equal(vcycle_mg(mg, g), mg.vcycle(g))
    B = PreconditionerB(S.A, R, InnerSolver(mg), n_s=1)
    assert np.allclose(apply_preconditioner_B(B, g), B(g))
