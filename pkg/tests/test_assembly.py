import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from ifesolve.assembly import (assemble_std_stiffness, assemble_system, build_dof_map, default_eta,
                               export_matrix_market, extract_interface_block)
from ifesolve.errors import FactorizationFailure
from ifesolve.harness import DiscreteField, compute_errors
from ifesolve.mesh import build_uniform_mesh_2d
from ifesolve.problems import continuous_problem, example1


def test_dof_ordering(ex1_high):
    _, S = ex1_high
    dm = S.dofmap
    mesh = S.geometry.mesh
    assert np.array_equal(np.sort(dm.dof_of_face), np.arange(mesh.n_faces))
    bfaces = dm.face_of_dof[dm.n_free:]
    assert np.all(mesh.boundary_faces[bfaces])
    near = set(S.geometry.classification.near_faces.tolist())
    assert set(dm.face_of_dof[: dm.n_near].tolist()) <= near
    assert dm.n_near > 0


def test_matrix_symmetric_positive(ex1_high):
    _, S = ex1_high
    A = S.A
    assert abs(A - A.T).max() == 0.0
    lu = extract_interface_block(A, A.shape[0])  # raises when not SPD
    assert lu.size == A.shape[0]


def test_interface_block_rejects_indefinite():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(FactorizationFailure):
        extract_interface_block(A, 2)


def test_parts_add_up(ex1_high):
    _, S = ex1_high
    total = S.parts["a"] + S.parts["b"] + S.parts["s"]
    assert abs(total - S.A).max() <= 1e-12 * abs(S.A).max()


def test_coercive_against_broken_energy(ex1_high, rng):
    _, S = ex1_high
    V = rng.standard_normal((S.A.shape[0], 50))
    ratio = np.einsum("ij,ij->j", V, S.A @ V) / np.einsum("ij,ij->j", V, S.parts["a"] @ V)
    assert ratio.min() >= 0.5


def test_patch_exact(patch_system):
    spec, S = patch_system
    u = spsolve(S.A.tocsc(), S.rhs)
    l2, h1 = compute_errors(DiscreteField(S, S.full_vector(u)), spec)
    assert l2 < 1e-10 and h1 < 1e-9


@pytest.mark.parametrize("stab", ["lifting", "penalty"])
def test_stabilizations_converge(stab):
    spec = example1(2.0, 1.0)
    errs = []
    for M in (8, 16):
        mesh = build_uniform_mesh_2d(M, spec.domain)
        eta = default_eta(spec.levelset, mesh) if stab == "penalty" else None
        S = assemble_system(mesh, spec.levelset, stab=stab, eta=eta)
        u = spsolve(S.A.tocsc(), S.rhs)
        errs.append(compute_errors(DiscreteField(S, S.full_vector(u)), spec)[0])
    assert errs[0] / errs[1] > 3.0


def test_reduction_to_standard_matrix():
    spec = continuous_problem(2)
    S = assemble_system(build_uniform_mesh_2d(8, spec.domain), spec.levelset)
    assert abs(S.A - S.A_std).max() <= 1e-12 * abs(S.A_std).max()
    A_std, dm, _ = assemble_std_stiffness(S.geometry.mesh, spec.levelset)
    assert dm.n_free == S.dofmap.n_free


def test_std_stiffness_annihilates_constants():
    spec = example1(1000.0, 1.0)
    mesh = build_uniform_mesh_2d(4, spec.domain)
    geo_free = build_dof_map(mesh)
    A, dm, _ = assemble_std_stiffness(mesh, spec.levelset, dofmap=geo_free)
    assert A.shape == (dm.n_free, dm.n_free)
    # the full (unconstrained) stiffness maps constants to zero: row sums of the
    # free block equal minus the couplings to boundary dofs
    assert np.all(np.asarray(A.sum(axis=1)).ravel() >= -1e-10)


def test_export_roundtrip(tmp_path, ex1_high):
    _, S = ex1_high
    p = tmp_path / "A.mtx"
    export_matrix_market(p, S.A, "test")
    B = scipy.io.mmread(p)
    assert abs(sp.csr_matrix(B) - S.A).max() <= 1e-14 * abs(S.A).max()


def test_stiffness_and_rhs_entry_points(patch_system):
    from ifesolve.assembly import assemble_rhs, assemble_stiffness
    spec, S = patch_system
    mesh = S.geometry.mesh
    assert abs(assemble_stiffness(mesh, spec.levelset) - S.A).max() == 0.0
    assert np.array_equal(assemble_rhs(mesh, spec.levelset), S.rhs)
    assert extract_interface_block(S.A, S.dofmap).size == S.dofmap.n_near
