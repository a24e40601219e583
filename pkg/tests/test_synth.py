import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage

from planetex.camera import look_at
from planetex.errors import GeometryError, InputError
from planetex.geometry import PlaneGrid, segment_planes
from planetex.synth import (SceneSpec, evaluate_alignment, generate_scene, ground_truth_raster, line_crossings,
                            world_to_texture, write_scene)
from planetex.lines import LineSegment2D

SMALL = SceneSpec(texture_size=128, line_spacing=32, image_size=160, camera_count=2)


def test_spec_validation():
    with pytest.raises(GeometryError):
        SceneSpec(camera_height=-1.0)
    with pytest.raises(InputError):
        SceneSpec(line_spacing=3, line_width=3)
    with pytest.raises(InputError):
        SceneSpec.from_dict({"bogus": 1})
    assert SceneSpec.from_dict(SMALL.to_dict()) == SMALL


def test_same_seed_same_scene():
    a, b = generate_scene(SMALL, seed=3), generate_scene(SMALL, seed=3)
    assert np.array_equal(a.texture, b.texture)
    for ca, cb in zip(a.noisy_cameras, b.noisy_cameras):
        assert np.array_equal(ca.rotation, cb.rotation) and np.array_equal(ca.translation, cb.translation)
    assert all(np.array_equal(x, y) for x, y in zip(a.images, b.images))
    c = generate_scene(SMALL, seed=4)
    assert not np.array_equal(a.noisy_cameras[0].rotation, c.noisy_cameras[0].rotation)


def test_zero_noise_cameras_equal_truth():
    spec = replace(SMALL, rotation_noise_deg=0.0, translation_noise=0.0)
    sc = generate_scene(spec)
    for t, n in zip(sc.true_cameras, sc.noisy_cameras):
        assert np.allclose(t.rotation, n.rotation, atol=1e-15)
        assert np.allclose(t.translation, n.translation, atol=1e-12)


def test_render_matches_homography_oracle():
    spec = replace(SMALL, camera_count=1, camera_radius=0.0, rotation_noise_deg=0.0, translation_noise=0.0)
    sc = generate_scene(spec)
    cam = sc.true_cameras[0]
    # plane z = 0: pixel ~ K [r1 r2 t] (x, y, 1)
    K = np.array([[cam.fx, 0, cam.cx], [0, cam.fy, cam.cy], [0, 0, 1]])
    H = K @ np.column_stack([cam.rotation[:, 0], cam.rotation[:, 1], cam.translation])
    ys, xs = np.mgrid[0:cam.height, 0:cam.width].astype(float)
    p = np.linalg.inv(H) @ np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
    xy = (p[:2] / p[2]).T
    tex = world_to_texture(spec, xy)
    n = spec.texture_size
    inside = np.all((tex >= 0) & (tex <= n - 1), axis=1).reshape(xs.shape)
    oracle = np.stack([ndimage.map_coordinates(sc.texture[..., c], [tex[:, 1], tex[:, 0]], order=1)
                       for c in range(3)], axis=-1).reshape(cam.height, cam.width, 3)
    assert inside.mean() > 0.5
    assert np.abs(sc.images[0][inside] - oracle[inside]).max() <= 1 / 255


def test_ground_truth_raster_matches_texture():
    spec = replace(SMALL, camera_count=1, blobs=2, blob_radius=10)
    sc = generate_scene(spec)
    poly = segment_planes(sc.mesh)[0]
    grid = PlaneGrid.for_boundary(poly.boundary, spec.texture_size)
    gt = ground_truth_raster(spec, sc.texture, poly, grid)
    ys, xs = grid.inner_slice
    crop = gt[ys, xs]
    assert crop.shape[:2] == (spec.texture_size, spec.texture_size)
    # blobs break the symmetry, so this also pins the orientation
    assert np.abs(crop - sc.texture).max() < 1e-9


def test_line_crossings_of_a_cross():
    segs = [LineSegment2D((0, 5), (10, 5)), LineSegment2D((5, 0), (5, 10)), LineSegment2D((0, 7), (10, 7.2))]
    x = line_crossings(segs)
    assert len(x) == 2
    assert any(np.allclose(p, (5, 5)) for p in x)


def test_alignment_identity_and_shift():
    spec = replace(SMALL, texture_size=256, line_spacing=32)
    tex = generate_scene(replace(spec, camera_count=1)).texture
    rep = evaluate_alignment(tex, tex)
    assert rep.mean_displacement == pytest.approx(0.0, abs=1e-9)
    assert rep.ssim == pytest.approx(1.0, abs=1e-12)
    shifted = np.roll(tex, 3, axis=1)
    rep = evaluate_alignment(shifted, tex)
    assert rep.mean_displacement == pytest.approx(3.0, abs=0.5)
    assert rep.matched_crossings >= 0.8 * rep.reference_crossings


def test_alignment_without_lines_is_error():
    flat = np.full((64, 64, 3), 0.5)
    with pytest.raises(GeometryError):
        evaluate_alignment(flat, flat)


def test_write_scene_files(tmp_path):
    sc = generate_scene(SMALL)
    files = write_scene(sc, tmp_path)
    for key in ("mesh", "cameras", "cameras_true", "texture"):
        assert (tmp_path / files[key]).is_file()
    assert len(files["images"]) == SMALL.camera_count
    from planetex.io import load_cameras, load_mesh

    cams = load_cameras(tmp_path / "cameras.txt")
    assert [c.id for c in cams] == [0, 1]
    assert np.allclose(cams[0].rotation, sc.noisy_cameras[0].rotation, atol=1e-12)
    assert len(load_mesh(tmp_path / "mesh.obj").faces) == 1


def test_cameras_look_at_plane():
    sc = generate_scene(SMALL)
    for cam in sc.true_cameras:
        z = cam.rotation[2]
        assert z[2] == pytest.approx(-1.0)  # optical axis straight down onto z = 0
        assert cam.center[2] == pytest.approx(SMALL.camera_height)
    R, _ = look_at(np.array([0.0, 0.0, 1.0]), np.zeros(3), up=(0.0, 1.0, 0.0))
    assert math.isclose(abs(np.linalg.det(R)), 1.0)
