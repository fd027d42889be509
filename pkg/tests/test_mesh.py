import math

import numpy as np
import pytest

from smrlab.errors import ConfigurationError, GeometryError
from smrlab.mesh import (SimplicialMesh, build_box_mesh, cell_volumes, check_conforming,
                         dump_mesh, mesh_hierarchy, refine_to, refine_uniform, shape_metrics)


def test_box_1d_n4():
    m = build_box_mesh(1, 4)
    assert m.n_vert == 5 and m.n_cell == 4
    np.testing.assert_allclose(m.vertices[:, 0], [0, 0.25, 0.5, 0.75, 1.0])
    assert m.boundary_vertex.sum() == 2
    assert m.level == 0


def test_box_2d_n1_all_boundary():
    m = build_box_mesh(2, 1)
    assert m.n_vert == 4 and m.n_cell == 2
    assert m.boundary_vertex.all()


def test_box_3d_n1_volume():
    m = build_box_mesh(3, 1)
    assert m.n_vert == 8 and m.n_cell == 6
    assert abs(cell_volumes(m).sum() - 1.0) <= 1e-14


@pytest.mark.parametrize("dim,n", [(0, 1), (4, 1), (1, 0), (2, -1)])
def test_box_invalid(dim, n):
    with pytest.raises(ConfigurationError):
        build_box_mesh(dim, n)


@pytest.mark.parametrize("dim,n", [(1, 3), (2, 2), (3, 2)])
def test_cell_counts_and_orientation(dim, n):
    m = build_box_mesh(dim, n)
    assert m.n_cell == math.factorial(dim) * n ** dim
    assert np.all(cell_volumes(m) > 0)
    assert check_conforming(m)


def test_refine_1d_halves_h():
    m = build_box_mesh(1, 2)
    r = refine_uniform(m)
    assert r.n_cell == 4 and r.level == 1 and r.parent is m
    assert r.h == pytest.approx(m.h / 2, abs=0)


def test_refine_2d_rho1_unchanged():
    m = build_box_mesh(2, 1)
    r = refine_uniform(m)
    assert r.n_cell == 8
    assert shape_metrics(r).rho1 == pytest.approx(shape_metrics(m).rho1, rel=1e-13)


def test_refine_3d_volume():
    r = refine_uniform(build_box_mesh(3, 1))
    assert r.n_cell == 48
    assert abs(cell_volumes(r).sum() - 1.0) <= 1e-14
    assert check_conforming(r)


def test_shape_metrics_1d():
    s = shape_metrics(build_box_mesh(1, 4))
    assert s.h_max == s.h_min == 0.25
    assert s.rho2 == 1.0
    assert s.rho1 == pytest.approx(2.0)


def test_shape_metrics_2d_n1():
    s = shape_metrics(build_box_mesh(2, 1))
    assert s.h_max == pytest.approx(math.sqrt(2), rel=1e-15)
    assert s.rho2 == pytest.approx(1.0)
    # inradius of the right isosceles triangle is (a + b - c)/2
    assert s.rho1 == pytest.approx(math.sqrt(2) / ((2 - math.sqrt(2)) / 2), rel=1e-13)


@pytest.mark.parametrize("dim,levels", [(1, 5), (2, 5), (3, 3)])
def test_rho_invariance_over_levels(dim, levels):
    ms = mesh_hierarchy(dim, levels)
    rho1 = [shape_metrics(m).rho1 for m in ms]
    assert max(rho1) / min(rho1) <= 2.0
    if dim < 3:
        np.testing.assert_allclose(rho1, rho1[0], rtol=1e-12)
    for m in ms:
        s = shape_metrics(m)
        assert s.rho1 >= dim and s.rho2 >= 1
        assert min(s.h_max, s.h_min, s.rho1, s.rho2) > 0


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_nestedness(dim):
    ms = mesh_hierarchy(dim, 2 if dim == 3 else 3)
    for coarse, fine in zip(ms, ms[1:]):
        fine_set = {tuple(v) for v in np.round(fine.vertices * 2 ** 12).astype(int)}
        for v in np.round(coarse.vertices * 2 ** 12).astype(int):
            assert tuple(v) in fine_set
        # inherited vertices keep their coordinates exactly
        org = fine.vertex_origin
        same = org[:, 0] == org[:, 1]
        assert same.sum() == coarse.n_vert
        np.testing.assert_array_equal(fine.vertices[same], coarse.vertices[org[same, 0]])


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_boundary_flags(dim):
    m = refine_to(build_box_mesh(dim, 1), 2)
    on = np.any((m.vertices == 0) | (m.vertices == 1), axis=1)
    np.testing.assert_array_equal(m.boundary_vertex, on)


def test_lexicographic_vertex_order():
    m = refine_to(build_box_mesh(2, 1), 3)
    keys = [tuple(v) for v in m.vertices]
    assert keys == sorted(keys)


def test_refined_equals_structured():
    a = refine_to(build_box_mesh(3, 1), 2)
    b = build_box_mesh(3, 4)
    np.testing.assert_array_equal(a.vertices, b.vertices)
    assert {tuple(sorted(c)) for c in a.cells} == {tuple(sorted(c)) for c in b.cells}


def test_degenerate_cell_raises():
    m = build_box_mesh(2, 1)
    bad = SimplicialMesh(2, m.vertices, np.array([[0, 1, 1], [0, 1, 3]]), m.boundary_vertex)
    with pytest.raises(GeometryError):
        shape_metrics(bad)


def test_conformity_detects_hanging_node():
    m = build_box_mesh(1, 2)
    bad = SimplicialMesh(1, m.vertices, np.array([[0, 1], [0, 2]]), m.boundary_vertex)
    assert not check_conforming(bad)


def test_dump_format(tmp_path):
    m = build_box_mesh(2, 1)
    p = tmp_path / "mesh.txt"
    dump_mesh(m, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "2 4 2"
    assert len(lines) == 1 + 4 + 2
    assert all(int(i) < 4 for i in lines[-1].split())
