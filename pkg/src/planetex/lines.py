"""Line segment detection and the three-level line hierarchy (LoL0/1/2)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import GeometryError
from .geometry import PolygonBoundary, line_intersection, point_line_distance


@dataclass(frozen=True, eq=False)
class LineSegment2D:
    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        p1 = np.asarray(self.p1, dtype=float).reshape(2)
        p2 = np.asarray(self.p2, dtype=float).reshape(2)
        if not (np.all(np.isfinite(p1)) and np.all(np.isfinite(p2))):
            raise GeometryError("segment endpoints must be finite")
        if np.array_equal(p1, p2):
            raise GeometryError("zero-length segment")
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)

    @property
    def length(self) -> float:
        return float(math.hypot(*(self.p2 - self.p1)))

    @property
    def direction(self) -> np.ndarray:
        return (self.p2 - self.p1) / self.length

    @property
    def normal(self) -> np.ndarray:
        d = self.direction
        return np.array([-d[1], d[0]])

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.p1 + self.p2)

    @property
    def angle(self) -> float:
        """Undirected line angle in radians, in [0, pi)."""
        d = self.direction
        return math.atan2(d[1], d[0]) % math.pi

    def transformed(self, fn) -> "LineSegment2D":
        pts = np.asarray(fn(np.stack([self.p1, self.p2])), dtype=float)
        return LineSegment2D(pts[0], pts[1])

    def as_list(self) -> list[float]:
        return [float(self.p1[0]), float(self.p1[1]), float(self.p2[0]), float(self.p2[1])]

    def __repr__(self):
        return "LineSegment2D((%.3f, %.3f), (%.3f, %.3f))" % tuple(self.as_list())


@dataclass(frozen=True)
class BoundaryMatchMetrics:
    theta: float
    d_line: float
    non_overlap: float

    def passes(self, th: "MatchThresholds", check_overlap: bool = True) -> bool:
        ok = self.theta <= th.theta and self.d_line <= th.d_line
        return ok and (not check_overlap or self.non_overlap <= th.non_overlap)


@dataclass(frozen=True)
class MatchThresholds:
    theta: float = 5.0
    d_line: float = 10.0
    non_overlap: float = 100.0


@dataclass
class LoL1:
    segments: list
    matches: list  # boundary edge index per segment, or None


@dataclass
class LineCluster:
    representative: LineSegment2D
    members: list
    center: np.ndarray | None = None  # k-means centre in feature space


@dataclass
class LoLSet:
    lol0: list
    lol1: LoL1
    lol2: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lol0": [s.as_list() for s in self.lol0],
            "lol1": [{"segment": s.as_list(), "boundary_edge": m}
                     for s, m in zip(self.lol1.segments, self.lol1.matches)],
            "lol2": [{"line": c.representative.as_list(), "members": list(c.members)} for c in self.lol2],
        }


def _as_segment(s) -> LineSegment2D:
    if isinstance(s, LineSegment2D):
        return s
    s = np.asarray(s, dtype=float).reshape(2, 2)
    return LineSegment2D(s[0], s[1])


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------

_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _nms(mag, ang):
    h, w = mag.shape
    p = np.pad(mag, 1)
    deg = np.degrees(ang) % 180.0
    q = np.zeros(mag.shape, dtype=int)
    q[(deg >= 22.5) & (deg < 67.5)] = 1
    q[(deg >= 67.5) & (deg < 112.5)] = 2
    q[(deg >= 112.5) & (deg < 157.5)] = 3
    offs = {0: ((0, 1), (0, -1)), 1: ((1, 1), (-1, -1)), 2: ((1, 0), (-1, 0)), 3: ((1, -1), (-1, 1))}
    keep = np.zeros(mag.shape, dtype=bool)
    for k, ((dy1, dx1), (dy2, dx2)) in offs.items():
        n1 = p[1 + dy1:1 + dy1 + h, 1 + dx1:1 + dx1 + w]
        n2 = p[1 + dy2:1 + dy2 + h, 1 + dx2:1 + dx2 + w]
        keep |= (q == k) & (mag >= n1) & (mag > n2)
    return keep


class _RunningFit:
    """Total least-squares line through a growing point set."""

    def __init__(self):
        self.n = 0
        self.sx = self.sy = self.sxx = self.syy = self.sxy = 0.0

    def add(self, p):
        x, y = p
        self.n += 1
        self.sx += x
        self.sy += y
        self.sxx += x * x
        self.syy += y * y
        self.sxy += x * y

    def line(self):
        n = self.n
        cx, cy = self.sx / n, self.sy / n
        a = self.sxx / n - cx * cx
        b = self.sxy / n - cx * cy
        c = self.syy / n - cy * cy
        theta = 0.5 * math.atan2(2 * b, a - c)
        return np.array([cx, cy]), np.array([math.cos(theta), math.sin(theta)])


def _dist_to(p, line):
    c, d = line
    q = p - c
    return abs(q[0] * d[1] - q[1] * d[0])


def _fit_chain(pts: np.ndarray, min_len: float, fit_tol: float):
    out = []
    n = len(pts)
    min_pts = max(3, int(min_len) // 2)
    i = 0
    while i + min_pts <= n:
        fit = _RunningFit()
        for p in pts[i:i + min_pts]:
            fit.add(p)
        line = fit.line()
        if max(_dist_to(p, line) for p in pts[i:i + min_pts]) > fit_tol:
            i += 1
            continue
        j = i + min_pts
        while j < n and _dist_to(pts[j], line) <= fit_tol:
            fit.add(pts[j])
            line = fit.line()
            j += 1
        c, d = line
        t0 = float((pts[i] - c) @ d)
        t1 = float((pts[j - 1] - c) @ d)
        if abs(t1 - t0) >= min_len:
            out.append((c + t0 * d, c + t1 * d))
        i = j
    return out


def detect_segments(image, grad_thresh: float = 0.02, anchor_thresh: float = 0.05, sigma: float = 1.0,
                    min_len: float = 8.0, fit_tol: float = 1.5, angle_tol: float = 30.0,
                    thin_width: float = 4.0, mask: np.ndarray | None = None) -> list[LineSegment2D]:
    """Simplified edge-drawing line detector.

    Sobel gradients on a Gaussian-smoothed grey image are thinned by
    non-maximum suppression; edge chains are walked from the strongest
    anchors through 8-connected ridge pixels of consistent gradient
    orientation, refined to sub-pixel positions and split into straight
    pieces by an incremental least-squares fit. Antiparallel edge pairs
    closer than ``thin_width`` (the two flanks of a thin line) are fused
    into their centre line. Segment direction keeps the brighter side on
    the left in image coordinates (x right, y down).
    """
    img = np.asarray(image, dtype=float)
    g = img if img.ndim == 2 else img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
    if sigma > 0:
        g = ndimage.gaussian_filter(g, sigma, mode="nearest")
    gx = ndimage.sobel(g, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(g, axis=0, mode="nearest") / 8.0
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    edge = _nms(mag, ang) & (mag >= grad_thresh)
    if mask is not None:
        edge &= mask
    h, w = mag.shape

    anchors = np.flatnonzero(edge & (mag >= anchor_thresh))
    anchors = anchors[np.argsort(-mag.ravel()[anchors], kind="stable")]
    visited = np.zeros_like(edge)
    cos_tol = math.cos(math.radians(angle_tol))
    ux = np.where(mag > 0, gx / np.where(mag > 0, mag, 1), 0)
    uy = np.where(mag > 0, gy / np.where(mag > 0, mag, 1), 0)

    def walk(y, x, sign):
        ref = (ux[y, x], uy[y, x])
        tdir = (-uy[y, x] * sign, ux[y, x] * sign)
        out = []
        while True:
            best = None
            bm = -1.0
            for dy, dx in _NEIGHBORS:
                yy, xx = y + dy, x + dx
                if not (0 <= yy < h and 0 <= xx < w) or not edge[yy, xx] or visited[yy, xx]:
                    continue
                if ux[yy, xx] * ref[0] + uy[yy, xx] * ref[1] < cos_tol:
                    continue
                if dx * tdir[0] + dy * tdir[1] <= 0:
                    continue
                if mag[yy, xx] > bm:
                    best, bm = (yy, xx), mag[yy, xx]
            if best is None:
                return out
            yy, xx = best
            visited[yy, xx] = True
            out.append(best)
            t = (-uy[yy, xx], ux[yy, xx])
            if t[0] * (xx - x) + t[1] * (yy - y) < 0:
                t = (-t[0], -t[1])
            tdir = t
            y, x = yy, xx

    raw = []
    for a in anchors:
        y, x = divmod(int(a), w)
        if visited[y, x]:
            continue
        visited[y, x] = True
        back = walk(y, x, -1)
        fwd = walk(y, x, 1)
        chain = back[::-1] + [(y, x)] + fwd
        if len(chain) < max(3, min_len * 0.5):
            continue
        pts = np.array(chain, dtype=float)[:, ::-1]
        # sub-pixel shift along the gradient by a parabola through the magnitude
        iy = pts[:, 1].astype(int)
        ix = pts[:, 0].astype(int)
        gu = np.stack([ux[iy, ix], uy[iy, ix]], axis=1)
        m0 = mag[iy, ix]
        mp = ndimage.map_coordinates(mag, [pts[:, 1] + gu[:, 1], pts[:, 0] + gu[:, 0]], order=1, mode="nearest")
        mm = ndimage.map_coordinates(mag, [pts[:, 1] - gu[:, 1], pts[:, 0] - gu[:, 0]], order=1, mode="nearest")
        den = mm - 2 * m0 + mp
        off = np.where(den < 0, 0.5 * (mm - mp) / np.where(den < 0, den, -1), 0.0)
        pts = pts + np.clip(off, -0.5, 0.5)[:, None] * gu
        gmean = gu.mean(axis=0)
        for p1, p2 in _fit_chain(pts, min_len, fit_tol):
            d = p2 - p1
            # brighter side (gradient direction) on the left of p1->p2 in a y-down frame
            if d[0] * gmean[1] - d[1] * gmean[0] > 0:
                p1, p2 = p2, p1
            raw.append(LineSegment2D(p1, p2))
    return _fuse_thin_lines(raw, thin_width)


def _fuse_thin_lines(segs: list[LineSegment2D], max_width: float) -> list[LineSegment2D]:
    if max_width <= 0 or len(segs) < 2:
        return segs
    cos_tol = math.cos(math.radians(5.0))
    cands = []
    for i, a in enumerate(segs):
        for j in range(i + 1, len(segs)):
            b = segs[j]
            if a.direction @ b.direction > -cos_tol:
                continue
            sep = point_line_distance(b.midpoint, (a.p1, a.p2))
            if sep > max_width or sep < 0.5:
                continue
            d = a.direction
            ta = sorted([0.0, a.length])
            tb = sorted([float((b.p1 - a.p1) @ d), float((b.p2 - a.p1) @ d)])
            ov = min(ta[1], tb[1]) - max(ta[0], tb[0])
            if ov < 0.5 * min(a.length, b.length):
                continue
            cands.append((sep, i, j))
    used = set()
    out = []
    for sep, i, j in sorted(cands):
        if i in used or j in used:
            continue
        used.update((i, j))
        a, b = segs[i], segs[j]
        d = a.direction - b.direction
        d /= np.linalg.norm(d)
        c = 0.5 * (a.midpoint + b.midpoint)
        ts = [float((p - c) @ d) for p in (a.p1, a.p2, b.p1, b.p2)]
        out.append((min(i, j), LineSegment2D(c + min(ts) * d, c + max(ts) * d)))
    out.extend((i, s) for i, s in enumerate(segs) if i not in used)
    return [s for _, s in sorted(out, key=lambda t: t[0])]


# ---------------------------------------------------------------------------
# LoL0
# ---------------------------------------------------------------------------

def _acute_angle_deg(d1, d2) -> float:
    c = abs(float(np.clip(d1 @ d2, -1.0, 1.0)))
    return math.degrees(math.acos(min(1.0, c)))


def _span(points, direction, anchor):
    ts = [float((p - anchor) @ direction) for p in points]
    return anchor + min(ts) * direction, anchor + max(ts) * direction


def _extremal_span(a: LineSegment2D, b: LineSegment2D) -> LineSegment2D:
    pts = [a.p1, a.p2, b.p1, b.p2]
    best = (-1.0, 0, 1)
    for i in range(4):
        for j in range(i + 1, 4):
            d = float(np.linalg.norm(pts[i] - pts[j]))
            if d > best[0]:
                best = (d, i, j)
    p, q = pts[best[1]], pts[best[2]]
    if (q - p) @ a.direction < 0:
        p, q = q, p
    return LineSegment2D(p, q)


def _mergeable(a, b, angle_tol, dist_tol, gap_tol) -> bool:
    if _acute_angle_deg(a.direction, b.direction) > angle_tol:
        return False
    dist = max(point_line_distance(b.p1, (a.p1, a.p2)), point_line_distance(b.p2, (a.p1, a.p2)),
               point_line_distance(a.p1, (b.p1, b.p2)), point_line_distance(a.p2, (b.p1, b.p2)))
    if dist > dist_tol:
        return False
    long_, short = (a, b) if a.length >= b.length else (b, a)
    d = long_.direction
    ta = sorted([0.0, long_.length])
    tb = sorted([float((short.p1 - long_.p1) @ d), float((short.p2 - long_.p1) @ d)])
    gap = max(0.0, max(ta[0], tb[0]) - min(ta[1], tb[1]))
    return gap <= gap_tol


def merge_collinear(segments, angle_tol: float = 2.0, dist_tol: float = 2.0, gap_tol: float = 5.0,
                    min_len: float = 0.0) -> list[LineSegment2D]:
    """Merge nearly collinear segments into global lines, then drop short ones.

    Merging repeats to a fixed point, so the result is idempotent.
    """
    segs = [_as_segment(s) for s in segments]
    changed = True
    while changed:
        changed = False
        i = 0
        while i < len(segs):
            j = i + 1
            while j < len(segs):
                if _mergeable(segs[i], segs[j], angle_tol, dist_tol, gap_tol):
                    merged = _extremal_span(segs[i], segs[j])
                    # the merged span must itself stay within tolerance of both parts
                    if (_acute_angle_deg(merged.direction, segs[i].direction) <= angle_tol
                            and _acute_angle_deg(merged.direction, segs[j].direction) <= angle_tol):
                        segs[i] = merged
                        del segs[j]
                        changed = True
                        continue
                j += 1
            i += 1
    return [s for s in segs if s.length >= min_len]


# ---------------------------------------------------------------------------
# LoL1
# ---------------------------------------------------------------------------

def boundary_metrics(L, b) -> BoundaryMatchMetrics:
    """Angle, max endpoint-to-line distance and non-overlap of ``L`` against ``b``."""
    L = _as_segment(L)
    b = _as_segment(b)
    theta = _acute_angle_deg(L.direction, b.direction)
    d_line = max(point_line_distance(L.p1, (b.p1, b.p2)), point_line_distance(L.p2, (b.p1, b.p2)))
    e = b.p2 - b.p1
    ee = float(e @ e)
    ws = sorted(float((p - b.p1) @ e) / ee for p in (L.p1, L.p2))
    if ws[1] < 0 or ws[0] > 1:
        non_overlap = math.inf
    elif ws[0] >= 0 and ws[1] <= 1:
        non_overlap = 0.0
    else:
        non_overlap = math.inf
        for w in ws:
            if w < 0 or w > 1:
                proj = b.p1 + w * e
                non_overlap = min(non_overlap, float(np.linalg.norm(proj - b.p1)),
                                  float(np.linalg.norm(proj - b.p2)))
    return BoundaryMatchMetrics(theta, d_line, non_overlap)


def _best_edge(seg, edges, th):
    best = None
    for m, (a, b) in enumerate(edges):
        met = boundary_metrics(seg, (a, b))
        if met.passes(th):
            key = (met.d_line, met.theta, m)
            if best is None or key < best[0]:
                best = (key, m)
    return None if best is None else best[1]


def _fit_span(segs: list[LineSegment2D]) -> LineSegment2D:
    pts = np.array([p for s in segs for p in (s.p1, s.p2)])
    w = np.repeat([s.length for s in segs], 2)
    c = (pts * w[:, None]).sum(axis=0) / w.sum()
    q = pts - c
    cov = (q * w[:, None]).T @ q
    evals, evecs = np.linalg.eigh(cov)
    d = evecs[:, -1]
    if d @ segs[0].direction < 0:
        d = -d
    p, r = _span(pts, d, c)
    return LineSegment2D(p, r)


def _nearest_endpoint_index(seg, point) -> int:
    return 0 if np.linalg.norm(seg.p1 - point) <= np.linalg.norm(seg.p2 - point) else 1


def _replace_endpoint(seg, k, point) -> LineSegment2D:
    return LineSegment2D(point, seg.p2) if k == 0 else LineSegment2D(seg.p1, point)


def refine_lol1(segments, boundary: PolygonBoundary, thresholds: MatchThresholds = MatchThresholds(),
                min_len: float | None = None) -> LoL1:
    """Boundary-matched refinement of registered LoL0 lines.

    Lines passing all three metrics against some boundary edge become
    boundary-matching lines; those are cleaned by: (i) dropping ones
    shorter than ``min_len``; (ii) merging all matches of one edge into a
    single span; (iii) extending matches of adjacent edges to their common
    corner; (iv) bridging an unmatched edge whose two neighbours are matched
    when the bridge itself passes the metrics.
    """
    segs = [_as_segment(s) for s in segments]
    edges = boundary.edges
    if min_len is None:
        lo, hi = boundary.bbox()
        min_len = 0.02 * float(np.linalg.norm(hi - lo))
    labels = [_best_edge(s, edges, thresholds) for s in segs]

    groups: dict[int, list[LineSegment2D]] = {}
    unmatched = []
    for s, m in zip(segs, labels):
        if m is None:
            unmatched.append(s)
        elif s.length >= min_len:
            groups.setdefault(m, []).append(s)
    matched = {m: (g[0] if len(g) == 1 else _fit_span(g)) for m, g in groups.items()}

    for m in sorted(matched):
        p, _ = boundary.edge_neighbors(m)
        if p == m or p not in matched:
            continue
        corner = edges[m][0]
        X = line_intersection(matched[m].p1, matched[m].p2, matched[p].p1, matched[p].p2)
        if X is None:
            continue
        km = _nearest_endpoint_index(matched[m], corner)
        kp = _nearest_endpoint_index(matched[p], corner)
        em = (matched[m].p1, matched[m].p2)[km]
        ep = (matched[p].p1, matched[p].p2)[kp]
        if max(np.linalg.norm(X - em), np.linalg.norm(X - ep)) > thresholds.non_overlap:
            continue
        try:
            new_m = _replace_endpoint(matched[m], km, X)
            new_p = _replace_endpoint(matched[p], kp, X)
        except GeometryError:
            continue
        if new_m.direction @ matched[m].direction > 0 and new_p.direction @ matched[p].direction > 0:
            matched[m], matched[p] = new_m, new_p

    for o in range(len(edges)):
        if o in matched:
            continue
        p, q = boundary.edge_neighbors(o)
        if p == o or q == o or p == q or p not in matched or q not in matched:
            continue
        a = (matched[p].p1, matched[p].p2)[_nearest_endpoint_index(matched[p], edges[o][0])]
        b = (matched[q].p1, matched[q].p2)[_nearest_endpoint_index(matched[q], edges[o][1])]
        if np.allclose(a, b):
            continue
        bridge = LineSegment2D(a, b)
        if boundary_metrics(bridge, edges[o]).passes(thresholds):
            matched[o] = bridge

    out_segs = [matched[m] for m in sorted(matched)] + unmatched
    out_match = sorted(matched) + [None] * len(unmatched)
    return LoL1(out_segs, out_match)


# ---------------------------------------------------------------------------
# LoL2
# ---------------------------------------------------------------------------

def _line_features(segs, center, diag):
    feats = []
    for s in segs:
        a = s.angle
        if a >= 0.75 * math.pi:
            a -= math.pi
        n = np.array([-math.sin(a), math.cos(a)])
        feats.append([math.cos(2 * a), math.sin(2 * a), float(n @ (s.midpoint - center)) / diag])
    return np.array(feats, dtype=float).reshape(-1, 3)


def _weighted_kmeans(X, w, k, rng, max_iter=300):
    n = len(X)
    first = int(rng.choice(n, p=w / w.sum()))
    centers = [X[first]]
    for _ in range(1, k):
        d2 = np.min(((X[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        p = w * d2
        if p.sum() <= 0:
            idx = next(i for i in range(n) if not any(np.array_equal(X[i], c) for c in centers))
        else:
            idx = int(rng.choice(n, p=p / p.sum()))
        centers.append(X[idx])
    C = np.array(centers, dtype=float)
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - C[None]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            sel = labels == c
            if sel.any():
                C[c] = (X[sel] * w[sel, None]).sum(0) / w[sel].sum()
            else:
                far = int(np.argmax(d2[np.arange(n), labels]))
                C[c] = X[far]
    inertia = float((w * ((X - C[labels]) ** 2).sum(-1)).sum())
    return labels, C, inertia


def cluster_lol2(lol1, image_shape=None, split_tol: float = 0.15, seed: int = 0,
                 n_init: int = 4) -> list[LineCluster]:
    """Dynamic K-means over (doubled angle, centre distance) line features.

    K grows from 1 until no member lies farther than ``split_tol`` from its
    cluster centre in feature space. Representatives are length-weighted
    mean lines spanning their members.
    """
    segs = [_as_segment(s) for s in (lol1.segments if isinstance(lol1, LoL1) else lol1)]
    if not segs:
        raise GeometryError("cannot cluster an empty line set")
    if image_shape is not None:
        h, w_ = image_shape[:2]
        center = np.array([(w_ - 1) / 2.0, (h - 1) / 2.0])
        diag = math.hypot(w_, h)
    else:
        pts = np.array([p for s in segs for p in (s.p1, s.p2)])
        center = 0.5 * (pts.min(0) + pts.max(0))
        diag = max(float(np.linalg.norm(pts.max(0) - pts.min(0))), 1.0)
    X = _line_features(segs, center, diag)
    w = np.array([s.length for s in segs])
    n = len(segs)

    labels = np.zeros(n, dtype=int)
    for k in range(1, n + 1):
        rng = np.random.default_rng(seed)
        best = None
        for _ in range(n_init if k > 1 else 1):
            lab, C, inertia = _weighted_kmeans(X, w, k, rng)
            if best is None or inertia < best[2] - 1e-15:
                best = (lab, C, inertia)
        lab, C, _ = best
        labels = lab
        spread = np.sqrt(((X - C[lab]) ** 2).sum(-1)).max()
        if spread <= split_tol:
            break

    clusters = []
    for c in sorted(set(labels.tolist()), key=lambda c: int(np.flatnonzero(labels == c)[0])):
        members = [int(i) for i in np.flatnonzero(labels == c)]
        ww = w[members]
        v = (X[members, :2] * ww[:, None]).sum(0)
        a = 0.5 * math.atan2(v[1], v[0])
        d = np.array([math.cos(a), math.sin(a)])
        nrm = np.array([-d[1], d[0]])
        off = float(sum(wi * (nrm @ (segs[i].midpoint - center)) for i, wi in zip(members, ww)) / ww.sum())
        base = center + off * nrm
        pts = [p for i in members for p in (segs[i].p1, segs[i].p2)]
        p, q = _span(pts, d, base)
        if np.allclose(p, q):
            q = p + d
        clusters.append(LineCluster(LineSegment2D(p, q), members, C[c].copy()))
    return clusters
