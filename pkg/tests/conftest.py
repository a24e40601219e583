import math

import numpy as np
import pytest

from planetex.geometry import ProxyMesh

ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def cube_mesh(split_top: bool = False) -> ProxyMesh:
    v = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
    faces = [(0, 3, 2, 1), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
    faces += [(4, 5, 6), (4, 6, 7)] if split_top else [(4, 5, 6, 7)]
    return ProxyMesh(np.array(v, float), tuple(faces))


def quad_mesh(size: float = 10.0) -> ProxyMesh:
    h = size / 2
    return ProxyMesh(np.array([(-h, -h, 0), (h, -h, 0), (h, h, 0), (-h, h, 0)], float), ((0, 1, 2, 3),))


def fake_selection_instance(rng, n_candidates: int, cells: int = 16, clone_prob: float = 0.2):
    """Random candidates on the unit square for selection tests.

    Footprints are cell-aligned boxes so the raster samples agree with the
    footprint polygons. Some candidates are exact clones of earlier ones
    (with a higher id) to exercise tie-breaking.
    """
    import types

    import shapely

    from planetex.geometry import PolygonBoundary

    square = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], float)
    polygon = types.SimpleNamespace(boundary=PolygonBoundary((square,)), normal=np.array([0.0, 0.0, 1.0]))
    cands = []
    for vid in range(n_candidates):
        if cands and rng.random() < clone_prob:
            src = cands[int(rng.integers(len(cands)))]
            cands.append(types.SimpleNamespace(**{**vars(src), "view_id": vid}))
            continue
        x0, y0 = rng.integers(0, cells // 2, 2)
        x1 = int(rng.integers(x0 + 2, cells + 1))
        y1 = int(rng.integers(y0 + 2, cells + 1))
        samples = np.zeros((cells, cells), bool)
        samples[y0:y1, x0:x1] = True
        colors = np.clip(rng.uniform(0.2, 0.8, 3) + rng.normal(0, 0.05, (cells, cells, 3)), 0, 1)
        tilt = rng.uniform(0, math.radians(60))
        az = rng.uniform(0, 2 * math.pi)
        view_dir = np.array([math.sin(tilt) * math.cos(az), math.sin(tilt) * math.sin(az), -math.cos(tilt)])
        cands.append(types.SimpleNamespace(
            view_id=vid, footprint=shapely.box(x0 / cells, y0 / cells, x1 / cells, y1 / cells),
            gradient_score=float(rng.uniform(0, 0.5)), mean_color=colors[samples].mean(axis=0),
            samples=samples, colors=colors, view_dir=view_dir / np.linalg.norm(view_dir)))
    return polygon, cands


def exhaustive_min_cut(A, B, overlap, tie_a, tie_b, eps):
    """Exact minimum labelling cost over a rectangular overlap by row-state enumeration.

    Every labelling of a row (2^width states) is scored, and rows are chained
    with a min-plus recursion over vertical edges. This covers all labellings
    of the grid without any flow computation.
    """
    ys, xs = np.nonzero(overlap)
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    assert overlap[y0:y1, x0:x1].all()
    diff = np.linalg.norm(np.asarray(A, float) - np.asarray(B, float), axis=-1)[y0:y1, x0:x1]
    ta, tb = tie_a[y0:y1, x0:x1], tie_b[y0:y1, x0:x1] & ~tie_a[y0:y1, x0:x1]
    h, w = diff.shape
    states = (np.arange(1 << w)[:, None] >> np.arange(w)) & 1  # 1 means the pixel takes B
    best = None
    for r in range(h):
        ok = np.all((states == 0) | ~ta[r], axis=1) & np.all((states == 1) | ~tb[r], axis=1)
        hw = diff[r, :-1] + diff[r, 1:] + eps
        row_cost = (states[:, :-1] != states[:, 1:]) @ hw
        row_cost = np.where(ok, row_cost, np.inf)
        if best is None:
            best = row_cost
            continue
        vw = diff[r - 1] + diff[r] + eps
        trans = (states[:, None, :] != states[None, :, :]) @ vw
        best = np.min(best[:, None] + trans, axis=0) + row_cost
    return float(best.min())


def random_cut_instance(rng, n: int = 6):
    """Random n x n overlap inside an (n+2)^2 frame with random exclusive border pixels."""
    size = n + 2
    overlap = np.zeros((size, size), bool)
    overlap[1:-1, 1:-1] = True
    ring = ~overlap
    side = rng.random((size, size))
    a_only = ring & (side < 0.35)
    b_only = ring & (side > 0.65)
    A = rng.random((size, size, 3))
    B = A.copy()
    cy, cx = rng.uniform(2, n, 2)
    yy, xx = np.mgrid[:size, :size]
    B[(yy - cy) ** 2 + (xx - cx) ** 2 <= rng.uniform(1, 4)] = (0.0, 0.0, 1.0)
    B += rng.normal(0, 0.05, B.shape)
    return A, B, overlap, a_only, b_only


def cut_ties(overlap, a_only, b_only):
    from scipy import ndimage

    fp = ndimage.generate_binary_structure(2, 1)
    tie_a = overlap & ndimage.binary_dilation(a_only & ~overlap, fp)
    tie_b = overlap & ndimage.binary_dilation(b_only & ~overlap & ~a_only, fp) & ~tie_a
    return tie_a, tie_b
