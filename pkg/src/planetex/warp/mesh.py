"""Adaptive mesh: constrained Delaunay triangulation over line segments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from ..errors import GeometryError
from ..geometry import segment_intersection


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _incircle(a, b, c, d) -> float:
    """Positive when ``d`` lies inside the circumcircle of CCW triangle abc."""
    m = np.array([
        [a[0] - d[0], a[1] - d[1], (a[0] - d[0]) ** 2 + (a[1] - d[1]) ** 2],
        [b[0] - d[0], b[1] - d[1], (b[0] - d[0]) ** 2 + (b[1] - d[1]) ** 2],
        [c[0] - d[0], c[1] - d[1], (c[0] - d[0]) ** 2 + (c[1] - d[1]) ** 2],
    ])
    return float(np.linalg.det(m))


def _key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass
class AdaptiveMesh:
    """Triangle mesh whose constrained edges carry the line segments.

    ``segments[k]`` is the ordered vertex chain of input segment ``k``
    (more than two vertices when crossings split it), or ``None`` when the
    segment fell outside the domain.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    constrained: set = field(default_factory=set)
    segments: list = field(default_factory=list)

    def edges(self) -> set:
        out = set()
        for a, b, c in self.triangles:
            out.update((_key(a, b), _key(b, c), _key(c, a)))
        return out

    def signed_areas(self, vertices=None) -> np.ndarray:
        v = self.vertices if vertices is None else vertices
        t = self.triangles
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def segment_edges(self, k: int) -> list[tuple[int, int]]:
        chain = self.segments[k]
        if chain is None:
            return []
        return list(zip(chain[:-1], chain[1:]))


class _Tri:
    def __init__(self, points, triangles):
        self.p = points
        self.tris = [list(t) for t in triangles]
        self.edge_map: dict[tuple[int, int], set[int]] = {}
        for i, t in enumerate(self.tris):
            self._register(i, t)

    def _register(self, i, t):
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            self.edge_map.setdefault(_key(a, b), set()).add(i)

    def _unregister(self, i, t):
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            s = self.edge_map.get(_key(a, b))
            if s is not None:
                s.discard(i)
                if not s:
                    del self.edge_map[_key(a, b)]

    def _opposite(self, ti, a, b):
        """Vertex of triangle ti opposite the directed edge a->b, or None."""
        t = self.tris[ti]
        for k in range(3):
            if t[k] == a and t[(k + 1) % 3] == b:
                return t[(k + 2) % 3]
        return None

    def quad(self, a, b):
        """(c, t1, d, t2) for edge ab: c left of a->b in t1, d right of it in t2."""
        ts = self.edge_map.get(_key(a, b), set())
        if len(ts) != 2:
            return None
        t1 = t2 = c = d = None
        for ti in ts:
            o = self._opposite(ti, a, b)
            if o is not None:
                t1, c = ti, o
            else:
                t2, d = ti, self._opposite(ti, b, a)
        if t1 is None or t2 is None:
            return None
        return c, t1, d, t2

    def convex(self, a, b, c, d) -> bool:
        p = self.p
        return _orient(p[c], p[d], p[a]) * _orient(p[c], p[d], p[b]) < 0 and \
            _orient(p[a], p[b], p[c]) * _orient(p[a], p[b], p[d]) < 0

    def flip(self, a, b):
        c, t1, d, t2 = self.quad(a, b)
        self._unregister(t1, self.tris[t1])
        self._unregister(t2, self.tris[t2])
        self.tris[t1] = [a, d, c]
        self.tris[t2] = [d, b, c]
        self._register(t1, self.tris[t1])
        self._register(t2, self.tris[t2])
        return c, d


def _crosses(p, a, b, u, v) -> bool:
    """Proper crossing of segment ab with segment uv (shared endpoints excluded)."""
    if len({a, b, u, v}) < 4:
        return False
    o1 = _orient(p[u], p[v], p[a])
    o2 = _orient(p[u], p[v], p[b])
    o3 = _orient(p[a], p[b], p[u])
    o4 = _orient(p[a], p[b], p[v])
    return o1 * o2 < 0 and o3 * o4 < 0


def _clip(p1, p2, rect):
    x0, y0, x1, y1 = rect
    d = p2 - p1
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-d[0], p1[0] - x0), (d[0], x1 - p1[0]), (-d[1], p1[1] - y0), (d[1], y1 - p1[1])):
        if pk == 0:
            if qk < 0:
                return None
        else:
            t = qk / pk
            if pk < 0:
                t0 = max(t0, t)
            else:
                t1 = min(t1, t)
    if t0 > t1:
        return None
    return p1 + t0 * d, p1 + t1 * d


def build_adaptive_mesh(segments, domain_rect, tol: float = 1e-6) -> AdaptiveMesh:
    """Constrained Delaunay triangulation of the domain corners and segments.

    Crossing segments are split at their intersection points first (both
    halves stay constrained); every mesh vertex lying on a segment also
    splits it.
    """
    x0, y0, x1, y1 = (float(v) for v in domain_rect)
    pts: list[np.ndarray] = []

    def add_point(q):
        q = np.asarray(q, dtype=float)
        if pts:
            arr = np.asarray(pts)
            d = np.hypot(arr[:, 0] - q[0], arr[:, 1] - q[1])
            k = int(np.argmin(d))
            if d[k] <= tol:
                return k
        pts.append(q)
        return len(pts) - 1

    for c in ((x0, y0), (x1, y0), (x1, y1), (x0, y1)):
        add_point(c)

    clipped = []
    for s in segments:
        a = np.asarray(getattr(s, "p1", None) if hasattr(s, "p1") else s[0], dtype=float)
        b = np.asarray(getattr(s, "p2", None) if hasattr(s, "p2") else s[1], dtype=float)
        c = _clip(a, b, (x0, y0, x1, y1))
        if c is None or np.linalg.norm(c[1] - c[0]) <= tol:
            clipped.append(None)
            continue
        clipped.append((add_point(c[0]), add_point(c[1])))

    for i in range(len(clipped)):
        if clipped[i] is None:
            continue
        for j in range(i + 1, len(clipped)):
            if clipped[j] is None:
                continue
            a1, a2 = (pts[k] for k in clipped[i])
            b1, b2 = (pts[k] for k in clipped[j])
            x = segment_intersection(a1, a2, b1, b2)
            if x is not None:
                add_point(x)

    P = np.asarray(pts)
    chains = []
    constrained = set()
    for seg in clipped:
        if seg is None:
            chains.append(None)
            continue
        ia, ib = seg
        a, b = P[ia], P[ib]
        d = b - a
        L2 = float(d @ d)
        t = ((P - a) @ d) / L2
        dist = np.abs(d[0] * (P[:, 1] - a[1]) - d[1] * (P[:, 0] - a[0])) / np.sqrt(L2)
        on = np.flatnonzero((dist <= tol) & (t > 0) & (t < 1))
        on = [int(k) for k in on if k not in (ia, ib)]
        chain = [ia] + sorted(on, key=lambda k: t[k]) + [ib]
        chains.append(chain)
        for u, v in zip(chain[:-1], chain[1:]):
            constrained.add(_key(u, v))

    dl = Delaunay(P)
    if len(getattr(dl, "coplanar", [])):
        raise GeometryError("Delaunay triangulation dropped input points")
    tris = []
    for t in dl.simplices:
        t = [int(x) for x in t]
        if _orient(P[t[0]], P[t[1]], P[t[2]]) < 0:
            t = [t[0], t[2], t[1]]
        tris.append(t)
    T = _Tri(P, tris)

    for u, v in sorted(constrained):
        if _key(u, v) in T.edge_map:
            continue
        queue = [e for e in T.edge_map if _crosses(P, e[0], e[1], u, v)]
        guard = 0
        while queue:
            guard += 1
            if guard > 100000:
                raise GeometryError(f"could not recover constrained edge {u}-{v}")
            a, b = queue.pop(0)
            q = T.quad(a, b)
            if q is None:
                raise GeometryError(f"constrained edge {u}-{v} crosses the hull")
            c, _, d, _ = q
            if not T.convex(a, b, c, d):
                queue.append((a, b))
                continue
            T.flip(a, b)
            if _crosses(P, c, d, u, v):
                queue.append(_key(c, d))

    # incircle on unit-scaled coordinates so the cocircular tolerance is relative
    Pn = (P - P.min(axis=0)) / max(float(np.ptp(P, axis=0).max()), 1e-300)
    changed = True
    passes = 0
    while changed:
        changed = False
        passes += 1
        if passes > 10 * len(P) + 100:
            raise GeometryError("Delaunay edge flipping did not terminate")
        for e in list(T.edge_map):
            if e in constrained or e not in T.edge_map:
                continue
            q = T.quad(*e)
            if q is None:
                continue
            c, t1, d, _ = q
            a, b = e
            if _incircle(Pn[a], Pn[b], Pn[c], Pn[d]) > 1e-12 and T.convex(a, b, c, d):
                T.flip(a, b)
                changed = True

    tri_arr = np.asarray(T.tris, dtype=int).reshape(-1, 3)
    mesh = AdaptiveMesh(P, tri_arr, constrained, chains)
    missing = constrained - mesh.edges()
    if missing:
        raise GeometryError(f"constrained edges missing from triangulation: {sorted(missing)[:5]}")
    return mesh
