import math

import numpy as np
import pytest

from conftest import cube_mesh
from planetex.errors import GeometryError
from planetex.geometry import (PlaneFrame, PlaneGrid, ProxyMesh, ProxyPolygon, extract_boundary, point_line_distance,
                               segment_planes, signed_area)


def test_cube_gives_six_planes():
    polys = segment_planes(cube_mesh())
    assert len(polys) == 6
    assert sorted(f for p in polys for f in p.faces) == list(range(6))


def test_split_top_face_merges():
    polys = segment_planes(cube_mesh(split_top=True))
    assert len(polys) == 6
    assert any(len(p.faces) == 2 for p in polys)


def l_prism():
    # concave hexagon extruded along z
    prof = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]
    n = len(prof)
    v = [(x, y, 0.0) for x, y in prof] + [(x, y, 1.0) for x, y in prof]
    faces = [tuple(reversed(range(n))), tuple(range(n, 2 * n))]
    faces += [(i, (i + 1) % n, n + (i + 1) % n, n + i) for i in range(n)]
    return ProxyMesh(np.array(v, float), tuple(faces))


def test_l_prism_gives_eight_planes():
    # two caps plus six side walls; no two walls are coplanar
    assert len(segment_planes(l_prism())) == 8


def test_segmentation_partitions_faces():
    polys = segment_planes(l_prism())
    faces = [f for p in polys for f in p.faces]
    assert sorted(faces) == list(range(8))


def test_single_quad_boundary():
    mesh = ProxyMesh(np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)], float), ((0, 1, 2, 3),))
    (poly,) = segment_planes(mesh)
    assert len(poly.boundary.loops) == 1
    assert len(poly.boundary.loops[0]) == 4
    assert signed_area(poly.boundary.loops[0]) > 0


def test_two_coplanar_quads_share_no_edge():
    v = [(0, 0, 0), (1, 0, 0), (2, 0, 0), (2, 1, 0), (1, 1, 0), (0, 1, 0)]
    mesh = ProxyMesh(np.array(v, float), ((0, 1, 4, 5), (1, 2, 3, 4)))
    (poly,) = segment_planes(mesh)
    (loop,) = poly.boundary.loops
    assert len(loop) == 6
    assert poly.boundary.area() == pytest.approx(2.0)


def test_quad_with_hole():
    # 4x4 outer square, 2x2 hole in the middle, eight quads around it
    v = [(x, y, 0.0) for y in range(4) for x in range(4)]
    idx = lambda x, y: y * 4 + x  # noqa: E731
    faces = []
    for y in range(3):
        for x in range(3):
            if (x, y) == (1, 1):
                continue
            faces.append((idx(x, y), idx(x + 1, y), idx(x + 1, y + 1), idx(x, y + 1)))
    mesh = ProxyMesh(np.array(v, float), tuple(faces))
    (poly,) = segment_planes(mesh)
    loops = poly.boundary.loops
    assert len(loops) == 2
    assert signed_area(loops[0]) > 0 and signed_area(loops[1]) < 0
    assert poly.boundary.area() == pytest.approx(8.0)


def test_open_chain_is_an_error():
    # second quad wound the other way: the directed border edges no longer chain
    v = [(0, 0, 0), (1, 0, 0), (2, 0, 0), (2, 1, 0), (1, 1, 0), (0, 1, 0)]
    mesh = ProxyMesh(np.array(v, float), ((0, 1, 4, 5), (1, 2, 3, 4)[::-1]))
    frame = PlaneFrame.from_plane((0, 0, 1), (0, 0, 0))
    poly = ProxyPolygon(0, (0, 1), np.array([0, 0, 1.0]), 0.0, frame, mesh)
    with pytest.raises(GeometryError, match="dangling vertex"):
        extract_boundary(poly)


def test_degenerate_face_skipped_with_warning():
    v = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (2, 0, 0)]
    mesh = ProxyMesh(np.array(v, float), ((0, 1, 2, 3), (0, 1, 4)))
    with pytest.warns(UserWarning):
        polys = segment_planes(mesh)
    assert [p.faces for p in polys] == [(0,)]


def test_bad_face_ring_rejected():
    with pytest.raises(GeometryError):
        ProxyMesh(np.zeros((3, 3)), ((0, 0, 1),))


def test_point_line_distance_examples():
    seg = ((0, 0), (10, 0))
    assert point_line_distance((0, 2), seg) == 2
    assert point_line_distance((5, 0), seg) == 0
    assert point_line_distance((20, 3), seg) == 3
    with pytest.raises(GeometryError):
        point_line_distance((1, 1), ((2, 2), (2, 2)))


def test_point_line_distance_rigid_invariance(rng):
    for _ in range(20):
        p, a, b = rng.normal(size=(3, 2)) * 10
        th = rng.uniform(0, 2 * math.pi)
        R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        t = rng.normal(size=2) * 50
        f = lambda x: R @ x + t  # noqa: E731
        assert point_line_distance(f(p), (f(a), f(b))) == pytest.approx(point_line_distance(p, (a, b)), abs=1e-9)


def test_frame_round_trip(rng):
    for _ in range(10):
        n = rng.normal(size=3)
        frame = PlaneFrame.from_plane(n, rng.normal(size=3))
        assert abs(frame.u @ frame.v) < 1e-9
        assert np.allclose(np.cross(frame.u, frame.v), frame.normal, atol=1e-9)
        uv = rng.normal(size=(5, 2)) * 10
        assert np.allclose(frame.to_2d(frame.to_3d(uv)), uv, atol=1e-9)


def test_polygon_members_are_planar():
    for p in segment_planes(l_prism()):
        verts = p.mesh.vertices[[i for f in p.faces for i in p.mesh.faces[f]]]
        assert np.abs(p.distance(verts)).max() < 1e-9
        assert abs(np.linalg.norm(p.normal) - 1) < 1e-12


def test_grid_pixel_round_trip():
    mesh = ProxyMesh(np.array([(0, 0, 0), (4, 0, 0), (4, 2, 0), (0, 2, 0)], float), ((0, 1, 2, 3),))
    (poly,) = segment_planes(mesh)
    grid = PlaneGrid.for_boundary(poly.boundary, min_edge_samples=64)
    assert grid.texel == pytest.approx(4 / 64)
    # margin is 5 percent of the pixel diagonal, rounded up
    assert grid.margin == math.ceil(0.05 * math.hypot(64, 32))
    px = np.array([[3.0, 7.5], [10.25, 2.0]])
    assert np.allclose(grid.uv_to_px(grid.px_to_uv(px)), px)
    inside = grid.inside_mask(poly.boundary)
    assert inside[grid.inner_slice].all()
    assert inside.sum() == 64 * 32
