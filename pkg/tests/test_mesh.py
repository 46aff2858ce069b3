import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifesolve.mesh import MeshHierarchy, build_uniform_mesh_2d, build_uniform_mesh_3d, refine_uniform, write_vtk


@given(st.integers(1, 12))
@settings(max_examples=12, deadline=None)
def test_uniform_2d_counts(M):
    m = build_uniform_mesh_2d(M, [(0, 1), (0, 1)])
    assert m.n_elements == 2 * M * M
    assert m.n_faces == 3 * M * M + 2 * M
    assert np.count_nonzero(m.boundary_faces) == 4 * M
    assert np.isclose(m.volumes.sum(), 1.0)
    assert np.all(m.volumes > 0)


@pytest.mark.parametrize("M", [1, 2, 3])
def test_uniform_3d_counts(M):
    m = build_uniform_mesh_3d(M, [(-1, 1)] * 3)
    assert m.n_elements == 6 * M ** 3
    assert np.isclose(m.volumes.sum(), 8.0)
    assert np.count_nonzero(m.boundary_faces) == 12 * M * M


def test_local_face_opposite_vertex():
    m = build_uniform_mesh_3d(2)
    for T in range(m.n_elements):
        for k in range(4):
            f = m.faces[m.element_faces[T, k]]
            assert m.elements[T, k] not in f


def test_face_normals_unit_and_outward():
    m = build_uniform_mesh_2d(4, [(0, 1), (0, 1)])
    assert np.allclose(np.linalg.norm(m.face_normals, axis=1), 1.0)
    b = np.flatnonzero(m.boundary_faces)
    c = m.face_centroids[b] - 0.5
    assert np.all(np.einsum("fa,fa->f", m.face_normals[b], c) > 0)


@pytest.mark.parametrize("dim", [2, 3])
def test_refinement_preserves_volume_and_nests(dim):
    base = build_uniform_mesh_2d(3) if dim == 2 else build_uniform_mesh_3d(1)
    fine = refine_uniform(base)
    assert fine.n_elements == base.n_elements * 2 ** dim
    vol = np.bincount(fine.parent_elements, fine.volumes)
    assert np.allclose(vol, base.volumes)
    # every child centroid lies in its parent
    G = base.bary_gradients[fine.parent_elements]
    x = fine.element_coords.mean(axis=1) - base.element_coords.mean(axis=1)[fine.parent_elements]
    b = 1.0 / (dim + 1) + np.einsum("eka,ea->ek", G, x)
    assert b.min() > -1e-12


def test_red_refinement_matches_uniform_mesh():
    fine = MeshHierarchy.build(build_uniform_mesh_2d(4), 2).finest
    direct = build_uniform_mesh_2d(16)
    key = lambda m: np.sort(np.round(m.element_coords.mean(axis=1), 12).view("f8,f8").ravel())
    assert np.array_equal(key(fine), key(direct))


def test_write_vtk(tmp_path):
    m = build_uniform_mesh_2d(2)
    p = tmp_path / "m.vtk"
    write_vtk(m, p, {"id": np.arange(m.n_elements)})
    text = p.read_text()
    assert f"CELLS {m.n_elements}" in text and "SCALARS id double 1" in text
