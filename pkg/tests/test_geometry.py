import numpy as np
import pytest

from ifesolve.errors import MappingFailure
from ifesolve.geometry import analyze, classify_elements, map_to_interface, project_to_interface
from ifesolve.mesh import build_uniform_mesh_2d, build_uniform_mesh_3d
from ifesolve.problems import example1, example3d, patch_problem
from ifesolve.props import sliding_planes

SQUARE = [(-1, 1), (-1, 1)]


def test_vertex_on_interface_counts_as_minus():
    # the anti-diagonal x + y = 0 passes through a row of vertices of the M = 4 mesh
    spec = patch_problem((1.0, 1.0), 0.0)
    m = build_uniform_mesh_2d(4, SQUARE)
    cls = classify_elements(m, spec.levelset)
    on = np.isclose(m.vertices.sum(axis=1), 0.0)
    assert on.sum() == 5 and np.all(cls.vertex_phi[on] == 0.0)
    v = cls.vertex_phi[m.elements]
    cut = (v.min(axis=1) < 0) & (v.max(axis=1) > 0)
    assert np.array_equal(cls.element_side == 0, cut)
    side = np.where(v.max(axis=1) > 0, 1, -1)
    assert np.array_equal(cls.element_side[~cut], side[~cut])
    touching = ~cut & (v == 0).any(axis=1)
    assert touching.any() and np.all(cls.element_side[touching & (v.max(axis=1) <= 0)] == -1)


@pytest.mark.parametrize("case", ["2d", "3d"])
def test_cut_pieces_tile_the_element(case):
    if case == "2d":
        spec, m = example1(10, 1), build_uniform_mesh_2d(16, SQUARE)
    else:
        spec, m = example3d(10, 1), build_uniform_mesh_3d(5, [(-1, 1)] * 3)
    geo = analyze(m, spec.levelset)
    assert geo.cuts
    for T, cut in geo.cuts.items():
        assert cut.vol_plus + cut.vol_minus == pytest.approx(m.volumes[T], rel=1e-12)
        assert 0 < cut.vol_plus < m.volumes[T]
        ch = cut.quad_plus.weights.sum() + cut.quad_minus.weights.sum()
        assert ch == pytest.approx(m.volumes[T], rel=1e-12)
        assert np.allclose(cut.face_piece_measure.sum(axis=1), cut.face_measure, rtol=1e-12)


def test_face_split_agrees_between_neighbours():
    spec = example1(1000, 1)
    m = build_uniform_mesh_2d(16, SQUARE)
    geo = analyze(m, spec.levelset)
    for f in geo.classification.interface_faces:
        T1, T2 = m.face_elements[f]
        if T2 < 0:
            continue
        k1, k2 = m.face_local_index[f]
        a = geo.cuts[T1].face_piece_measure[k1]
        b = geo.cuts[T2].face_piece_measure[k2]
        assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_map_to_interface_lands_on_zero_set():
    P = example1().levelset
    x = np.array([[0.3, 0.1], [-0.2, 0.25]])
    n = P.normal(project_to_interface(x, P))
    y, rho = map_to_interface(x, n, P, 0.5)
    assert np.abs(P.phi(y)).max() < 1e-12
    assert np.allclose(y, x + rho[:, None] * n)


def test_map_to_interface_reports_failure():
    P = example1().levelset
    x = np.array([[0.9, 0.9]])
    with pytest.raises(MappingFailure):
        map_to_interface(x, np.array([[1.0, 0.0]]), P, 0.01)
    y, rho = map_to_interface(x, np.array([[1.0, 0.0]]), P, 0.01, strict=False)
    assert np.isnan(rho).all()


def test_sliding_plane_sweep_builds():
    count = 0
    for mesh, spec in sliding_planes(60):
        geo = analyze(mesh, spec.levelset)
        for cut in geo.cuts.values():
            assert abs(cut.frame.n_bar @ np.array([0.6, 0.8]) - 1) < 1e-12
        count += len(geo.cuts)
    assert count > 0


def test_coarse_sphere_shrinks_patch_locally():
    spec = example3d(1, 1)
    geo = analyze(build_uniform_mesh_3d(5, spec.domain), spec.levelset)
    mus = {c.frame.mu for c in geo.cuts.values()}
    assert 0.5 in mus and min(mus) > 0


def test_map_to_interface_accepts_frame():
    spec = example1(10, 1)
    geo = analyze(build_uniform_mesh_2d(8, SQUARE), spec.levelset)
    fr = next(iter(geo.cuts.values())).frame
    y, _ = map_to_interface(fr.x_bar_pts, fr, spec.levelset)
    assert np.allclose(y, fr.x_tilde_pts, atol=1e-12)
