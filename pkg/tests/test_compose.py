import warnings

import numpy as np
import pytest
from matplotlib.colors import rgb_to_hsv
from scipy import sparse
from scipy.sparse.linalg import spsolve

from conftest import cut_ties, exhaustive_min_cut, random_cut_instance
from planetex.compose import (CUT_EPS, NO_SOURCE, CompositeInfo, SeamFallbackWarning, TextureMap,
                              composite_step, graphcut_seam, illumination_adjust, labeling_cost,
                              match_histogram_lut, overwrite_composite, poisson_blend)
from planetex.errors import GeometryError


def tmap(raster, observed, vid):
    return TextureMap.from_view(raster, observed, vid)


# --- illumination -------------------------------------------------------------

def _split_masks(h=12, w=30):
    ref = np.zeros((h, w), bool)
    ref[:, :20] = True
    tar = np.zeros((h, w), bool)
    tar[:, 10:] = True
    return ref, tar


def test_illumination_identical_is_noop(rng):
    ref_m, tar_m = _split_masks()
    img = rng.random((12, 30, 3))
    img[:, 20:] = img[:, 10:20]
    out = illumination_adjust(tmap(img, ref_m, 0), tmap(img, tar_m, 1))
    assert np.abs(out.raster - tmap(img, tar_m, 1).raster).max() <= 1 / 255


def test_illumination_removes_uniform_offset(rng):
    ref_m, tar_m = _split_masks()
    k = rng.integers(20, 200, (12, 30))
    v = (k + 0.5) / 256  # bin centres, so a +0.08 shift moves every pixel by exactly 20 bins
    v[:, 20:] = v[:, 10:20]
    hue = rng.random((12, 30))
    sat = rng.uniform(0.2, 0.8, (12, 30))
    from matplotlib.colors import hsv_to_rgb

    scene = hsv_to_rgb(np.stack([hue, sat, v], -1))
    brighter = hsv_to_rgb(np.stack([hue, sat, v + 0.08], -1))
    out = illumination_adjust(tmap(scene, ref_m, 0), tmap(brighter, tar_m, 1))
    region = tar_m & ~ref_m
    hsv = rgb_to_hsv(out.raster)
    assert np.abs(hsv[..., 2][region] - v[region]).max() <= 1 / 255
    assert np.allclose(hsv[..., 0][region], hue[region], atol=1e-9)
    assert np.allclose(hsv[..., 1][region], sat[region], atol=1e-9)
    overlap = tar_m & ref_m
    assert np.abs(hsv[..., 2][overlap] - v[overlap]).max() <= 1 / 255


def test_illumination_keeps_target_continuous():
    # a ramp seen brighter by the target: the adjusted target has no step at the overlap edge
    yy, xx = np.mgrid[:12, :30]
    scene = np.repeat((0.2 + 0.01 * xx)[..., None], 3, axis=2)
    ref_m, tar_m = _split_masks()
    out = illumination_adjust(tmap(scene, ref_m, 0), tmap(scene + 0.1, tar_m, 1))
    d = np.diff(out.raster[:, 10:, 0], axis=1)
    assert np.abs(d - 0.01).max() <= 1 / 255
    assert np.abs(out.raster[tar_m] - scene[tar_m]).max() <= 1 / 255


def test_illumination_no_overlap_noop(rng):
    a = np.zeros((8, 8), bool)
    a[:, :4] = True
    img = rng.random((8, 8, 3))
    tgt = tmap(img, ~a, 1)
    assert np.array_equal(illumination_adjust(tmap(img, a, 0), tgt).raster, tgt.raster)


def test_histogram_lut_monotone(rng):
    lut = match_histogram_lut(rng.random(500), rng.random(300) ** 2)
    assert np.all(np.diff(lut) >= 0) and lut.min() >= 0 and lut.max() <= 255


# --- graph cut ------------------------------------------------------------

def _strip_layout(h, w):
    """Overlap in the middle, A-only column on the left, B-only on the right."""
    overlap = np.zeros((h, w + 2), bool)
    overlap[:, 1:-1] = True
    a_only = np.zeros_like(overlap)
    a_only[:, 0] = True
    b_only = np.zeros_like(overlap)
    b_only[:, -1] = True
    return overlap, a_only, b_only


def test_cut_identical_images():
    overlap, a_only, b_only = _strip_layout(5, 6)
    img = np.random.default_rng(0).random((5, 8, 3))
    labels, cost = graphcut_seam(img, img, overlap, a_only, b_only)
    cut_edges = 0
    for y in range(5):
        for x in range(7):
            cut_edges += overlap[y, x] and overlap[y, x + 1] and labels[y, x] != labels[y, x + 1]
    for y in range(4):
        for x in range(8):
            cut_edges += overlap[y, x] and overlap[y + 1, x] and labels[y, x] != labels[y + 1, x]
    assert cost == pytest.approx(CUT_EPS * cut_edges)
    assert cut_edges == 5  # one crossing per row of a 5-row strip


def _enumerate_all(A, B, overlap, tie_a, tie_b):
    ys, xs = np.nonzero(overlap)
    idx = {(y, x): i for i, (y, x) in enumerate(zip(ys, xs))}
    diff = np.linalg.norm(A - B, axis=-1)
    P, Q, W = [], [], []
    for (y, x), i in idx.items():
        for dy, dx in ((0, 1), (1, 0)):
            j = idx.get((y + dy, x + dx))
            if j is not None:
                P.append(i)
                Q.append(j)
                W.append(diff[y, x] + diff[y + dy, x + dx] + CUT_EPS)
    n = len(idx)
    L = ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1).astype(bool)
    fa = np.array([tie_a[y, x] for y, x in zip(ys, xs)])
    fb = np.array([tie_b[y, x] for y, x in zip(ys, xs)])
    ok = ~(L & fa).any(1) & (L | ~fb).all(1)
    cost = (L[:, P] != L[:, Q]) @ np.array(W)
    return float(cost[ok].min())


def test_row_oracle_agrees_with_full_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(5):
        A, B, overlap, a_only, b_only = random_cut_instance(rng, 4)
        ta, tb = cut_ties(overlap, a_only, b_only)
        assert exhaustive_min_cut(A, B, overlap, ta, tb, CUT_EPS) == pytest.approx(
            _enumerate_all(A, B, overlap, ta, tb), abs=1e-12)


def test_cut_matches_exhaustive_on_6x6():
    rng = np.random.default_rng(7)
    for _ in range(5):
        A, B, overlap, a_only, b_only = random_cut_instance(rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SeamFallbackWarning)
            labels, cost = graphcut_seam(A, B, overlap, a_only, b_only)
        ta, tb = cut_ties(overlap, a_only, b_only)
        if not (ta | tb).any():
            continue
        assert cost == pytest.approx(exhaustive_min_cut(A, B, overlap, ta, tb, CUT_EPS), rel=1e-6)
        assert labeling_cost(labels, A, B, overlap) == pytest.approx(cost)


def test_cut_beats_straight_seams(rng):
    for _ in range(5):
        overlap, a_only, b_only = _strip_layout(10, 12)
        A, B = rng.random((10, 14, 3)), rng.random((10, 14, 3))
        labels, cost = graphcut_seam(A, B, overlap, a_only, b_only)
        for k in range(2, 13):
            straight = np.zeros_like(overlap)
            straight[:, k:] = True
            straight &= overlap
            assert cost <= labeling_cost(straight, A, B, overlap) * (1 + 1e-6)


def test_cut_thin_overlap_takes_a():
    overlap = np.zeros((4, 3), bool)
    overlap[:, 1] = True
    a_only = np.zeros_like(overlap)
    a_only[:, 0] = True
    b_only = np.zeros_like(overlap)
    b_only[:, 2] = True
    labels, _ = graphcut_seam(np.zeros((4, 3, 3)), np.ones((4, 3, 3)), overlap, a_only, b_only)
    assert not labels.any()


def test_cut_isolated_overlap_falls_back():
    overlap = np.ones((4, 4), bool)
    with pytest.warns(SeamFallbackWarning):
        labels, _ = graphcut_seam(np.zeros((4, 4, 3)), np.ones((4, 4, 3)), overlap,
                                  np.zeros_like(overlap), np.zeros_like(overlap))
    assert not labels.any()


# --- Poisson --------------------------------------------------------------

def _inner_mask(n=24, k=16):
    m = np.zeros((n, n), bool)
    o = (n - k) // 2
    m[o:o + k, o:o + k] = True
    return m


def test_poisson_identical_patch(rng):
    base = rng.random((24, 24, 3))
    out = poisson_blend(base, base, _inner_mask())
    assert np.abs(out - base).max() <= 1e-6


def test_poisson_constant_patch_takes_base():
    base = np.full((24, 24, 3), 0.3)
    out = poisson_blend(base, np.full((24, 24, 3), 0.8), _inner_mask())
    assert np.abs(out - 0.3).max() <= 1e-6


def _dense_poisson(base, patch, mask):
    ys, xs = np.nonzero(mask)
    idx = -np.ones(mask.shape, int)
    idx[ys, xs] = np.arange(len(ys))
    A = sparse.lil_matrix((len(ys), len(ys)))
    b = np.zeros(len(ys))
    for i, (y, x) in enumerate(zip(ys, xs)):
        for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            qy, qx = y + dy, x + dx
            A[i, i] += 1
            b[i] += patch[y, x] - patch[qy, qx]
            if mask[qy, qx]:
                A[i, idx[qy, qx]] -= 1
            else:
                b[i] += base[qy, qx]
    out = base.copy()
    out[ys, xs] = spsolve(A.tocsr(), b)
    return out


def test_poisson_gradient_patch_matches_direct_solve():
    base = np.full((24, 24), 0.4)
    yy, xx = np.mgrid[:24, :24]
    patch = 0.02 * xx + 0.01 * yy
    mask = _inner_mask()
    out = poisson_blend(base, patch, mask)
    assert np.abs(out - _dense_poisson(base, patch, mask)).max() <= 1e-5
    assert np.array_equal(out[~mask], base[~mask])


def test_poisson_empty_ring_is_error():
    with pytest.raises(GeometryError):
        poisson_blend(np.zeros((5, 5)), np.ones((5, 5)), np.ones((5, 5), bool))


# --- composite ------------------------------------------------------------

def test_composite_disjoint_union(rng):
    a = np.zeros((10, 10), bool)
    a[:, :5] = True
    A, B = rng.random((10, 10, 3)), rng.random((10, 10, 3))
    info = CompositeInfo()
    out = composite_step(tmap(A, a, 0), tmap(B, ~a, 1), info=info)
    assert out.observed.all() and not info.blended
    assert np.array_equal(out.raster[a], A[a]) and np.array_equal(out.raster[~a], B[~a])
    assert set(np.unique(out.provenance)) == {0, 1}


def test_composite_identical_full_overlap(rng):
    img = rng.random((10, 12, 3))
    full = np.ones((10, 12), bool)
    with pytest.warns(SeamFallbackWarning):
        out = composite_step(tmap(img, full, 0), tmap(img, full, 1))
    assert np.array_equal(out.raster, img) and out.observed.all()


def test_composite_reduces_seam_jump():
    h, w = 20, 60
    yy, xx = np.mgrid[:h, :w]
    scene = np.repeat((0.3 + 0.004 * xx + 0.003 * yy)[..., None], 3, axis=2)
    a = xx < 40
    b = xx >= 20
    A = tmap(scene, a, 0)
    B = tmap(np.clip(scene + 0.1, 0, 1), b, 1)
    naive = overwrite_composite(A, B)
    ours = composite_step(A, B)

    def jump(img):
        d = np.abs(np.diff(img[..., 0], axis=1)) - 0.004
        return float(d.max())

    assert ours.observed.all() and set(np.unique(ours.provenance)) <= {0, 1}
    assert jump(ours.raster) < jump(naive.raster)
    assert jump(naive.raster) > 0.09


def test_texture_map_invariants():
    with pytest.raises(ValueError):
        TextureMap(np.zeros((2, 2, 3)), np.ones((2, 2), bool), np.full((2, 2), NO_SOURCE))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        TextureMap.empty((3, 4))
