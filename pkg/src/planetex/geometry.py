"""Mesh representation, planar segmentation, boundaries and 2D predicates."""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GeometryError


class DegenerateFaceWarning(UserWarning):
    pass


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True, eq=False)
class ProxyMesh:
    """Polygonal mesh with derived edge/face adjacency.

    ``faces`` are vertex-index rings (triangles or larger polygons).
    """

    vertices: np.ndarray
    faces: tuple[tuple[int, ...], ...]
    edge_faces: dict = field(init=False, repr=False)
    non_manifold_edges: tuple = field(init=False, repr=False)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "vertices", verts)
        faces = tuple(tuple(int(i) for i in f) for f in self.faces)
        object.__setattr__(self, "faces", faces)
        edge_faces: dict[tuple[int, int], list[int]] = {}
        for fi, ring in enumerate(faces):
            if len(set(ring)) < 3 or len(set(ring)) != len(ring):
                raise GeometryError(f"face {fi} needs at least 3 distinct vertex indices: {ring}")
            for i in ring:
                if not 0 <= i < len(verts):
                    raise GeometryError(f"face {fi} references missing vertex {i}")
            for a, b in zip(ring, ring[1:] + ring[:1]):
                edge_faces.setdefault(_edge_key(a, b), []).append(fi)
        object.__setattr__(self, "edge_faces", edge_faces)
        object.__setattr__(
            self, "non_manifold_edges", tuple(sorted(e for e, fs in edge_faces.items() if len(fs) > 2))
        )

    def face_neighbors(self, fi: int) -> list[int]:
        ring = self.faces[fi]
        out = []
        for a, b in zip(ring, ring[1:] + ring[:1]):
            out.extend(f for f in self.edge_faces[_edge_key(a, b)] if f != fi)
        return sorted(set(out))

    def face_normal_area(self, fi: int) -> tuple[np.ndarray, float]:
        """Newell normal (unit, zero if degenerate) and area of a face."""
        pts = self.vertices[list(self.faces[fi])]
        nxt = np.roll(pts, -1, axis=0)
        n = np.cross(pts, nxt).sum(axis=0) * 0.5
        area = float(np.linalg.norm(n))
        if area == 0.0:
            return np.zeros(3), 0.0
        return n / area, area

    def triangles(self, face_ids=None) -> np.ndarray:
        """Fan-triangulate faces; returns (k, 3, 3) corner coordinates."""
        ids = range(len(self.faces)) if face_ids is None else face_ids
        tris = []
        for fi in ids:
            ring = self.faces[fi]
            for j in range(1, len(ring) - 1):
                tris.append(self.vertices[[ring[0], ring[j], ring[j + 1]]])
        if not tris:
            return np.zeros((0, 3, 3))
        return np.asarray(tris)

    @property
    def bbox_diagonal(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))


@dataclass(frozen=True, eq=False)
class PlaneFrame:
    """Orthonormal 2D workspace on a plane: ``normal = u x v``."""

    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    normal: np.ndarray

    @classmethod
    def from_plane(cls, normal, origin) -> "PlaneFrame":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        axis = np.eye(3)[int(np.argmin(np.abs(n)))]
        u = axis - np.dot(axis, n) * n
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        return cls(np.asarray(origin, dtype=float), u, v, n)

    def to_2d(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float) - self.origin
        return np.stack([p @ self.u, p @ self.v], axis=-1)

    def to_3d(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return self.origin + p[..., :1] * self.u + p[..., 1:2] * self.v


def signed_area(loop) -> float:
    p = np.asarray(loop, dtype=float)
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


@dataclass(frozen=True, eq=False)
class PolygonBoundary:
    """Closed loops in frame coordinates; outer loop CCW first, holes CW."""

    loops: tuple[np.ndarray, ...]

    @property
    def edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for loop in self.loops:
            for i in range(len(loop)):
                out.append((loop[i], loop[(i + 1) % len(loop)]))
        return out

    def edge_array(self) -> np.ndarray:
        """All edges as an (m, 2, 2) array, in the same order as ``edges``."""
        return np.asarray([[a, b] for a, b in self.edges], dtype=float).reshape(-1, 2, 2)

    def edge_neighbors(self, m: int) -> tuple[int, int]:
        """Indices of the previous and next edge in ``m``'s loop."""
        start = 0
        for loop in self.loops:
            n = len(loop)
            if m < start + n:
                k = m - start
                return start + (k - 1) % n, start + (k + 1) % n
            start += n
        raise IndexError(m)

    @property
    def vertices(self) -> np.ndarray:
        return np.concatenate(self.loops, axis=0)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.vertices
        return v.min(axis=0), v.max(axis=0)

    def area(self) -> float:
        return sum(signed_area(loop) for loop in self.loops)

    def transformed(self, fn) -> "PolygonBoundary":
        """Apply a point map to every loop (orientation is not re-checked)."""
        return PolygonBoundary(tuple(np.asarray(fn(loop), dtype=float) for loop in self.loops))

    def to_shapely(self):
        import shapely.geometry as sg

        outer = self.loops[0]
        return sg.Polygon(outer, [h for h in self.loops[1:]])


@dataclass(frozen=True, eq=False)
class ProxyPolygon:
    id: int
    faces: tuple[int, ...]
    normal: np.ndarray
    offset: float  # plane: normal . x = offset
    frame: PlaneFrame
    mesh: ProxyMesh = field(repr=False)
    boundary: PolygonBoundary | None = None

    def distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset


def _fit_plane(mesh: ProxyMesh, faces, normals, areas):
    w = np.array([areas[f] for f in faces])
    n = (np.array([normals[f] for f in faces]) * w[:, None]).sum(axis=0)
    n /= np.linalg.norm(n)
    centroids = np.array([mesh.vertices[list(mesh.faces[f])].mean(axis=0) for f in faces])
    c = (centroids * w[:, None]).sum(axis=0) / w.sum()
    return n, float(n @ c), c


def segment_planes(mesh: ProxyMesh, angle_tol: float = 2.0, dist_tol: float | None = None) -> list[ProxyPolygon]:
    """Region-grow coplanar faces into proxy polygons.

    Seeds are taken in face-index order and growth is breadth-first, so the
    result only depends on the face ordering. Zero-area faces are skipped
    with a :class:`DegenerateFaceWarning`.
    """
    if angle_tol <= 0:
        raise ValueError("angle_tol must be positive")
    if dist_tol is None:
        dist_tol = 1e-4 * mesh.bbox_diagonal
    cos_tol = math.cos(math.radians(angle_tol))

    normals, areas = {}, {}
    for fi in range(len(mesh.faces)):
        n, a = mesh.face_normal_area(fi)
        if a <= 1e-14 * max(mesh.bbox_diagonal, 1.0) ** 2:
            warnings.warn(f"skipping degenerate face {fi}", DegenerateFaceWarning, stacklevel=2)
            continue
        normals[fi], areas[fi] = n, a

    assigned: set[int] = set()
    polygons = []
    for seed in sorted(normals):
        if seed in assigned:
            continue
        members = [seed]
        assigned.add(seed)
        n, d, c = _fit_plane(mesh, members, normals, areas)
        queue = deque(mesh.face_neighbors(seed))
        while queue:
            f = queue.popleft()
            if f in assigned or f not in normals:
                continue
            if normals[f] @ n < cos_tol:
                continue
            verts = mesh.vertices[list(mesh.faces[f])]
            if np.max(np.abs(verts @ n - d)) > dist_tol:
                continue
            members.append(f)
            assigned.add(f)
            n, d, c = _fit_plane(mesh, members, normals, areas)
            queue.extend(g for g in mesh.face_neighbors(f) if g not in assigned)
        frame = PlaneFrame.from_plane(n, n * d)
        poly = ProxyPolygon(len(polygons), tuple(sorted(members)), n, d, frame, mesh)
        polygons.append(replace(poly, boundary=extract_boundary(poly)))
    return polygons


def extract_boundary(polygon: ProxyPolygon) -> PolygonBoundary:
    """Chain the edges bordering exactly one member face into closed loops."""
    mesh = polygon.mesh
    count: dict[tuple[int, int], int] = {}
    directed: dict[tuple[int, int], tuple[int, int]] = {}
    for fi in polygon.faces:
        ring = mesh.faces[fi]
        for a, b in zip(ring, ring[1:] + ring[:1]):
            k = _edge_key(a, b)
            count[k] = count.get(k, 0) + 1
            directed[k] = (a, b)
    nxt: dict[int, list[int]] = {}
    for k, c in count.items():
        if c == 1:
            a, b = directed[k]
            nxt.setdefault(a, []).append(b)
    for a in nxt:
        nxt[a].sort()
    targets = {b for outs in nxt.values() for b in outs}
    for b in targets:
        if b not in nxt:
            raise GeometryError(f"open boundary chain: dangling vertex {b}")
    for a in nxt:
        if a not in targets:
            raise GeometryError(f"open boundary chain: dangling vertex {a}")

    loops3 = []
    remaining = {a: list(bs) for a, bs in nxt.items()}
    while any(remaining.values()):
        start = min(a for a, bs in remaining.items() if bs)
        ring = [start]
        cur = remaining[start].pop(0)
        while cur != start:
            ring.append(cur)
            if not remaining.get(cur):
                raise GeometryError(f"open boundary chain: dangling vertex {cur}")
            cur = remaining[cur].pop(0)
        loops3.append(ring)

    loops2 = [polygon.frame.to_2d(mesh.vertices[r]) for r in loops3]
    areas = [signed_area(l) for l in loops2]
    order = sorted(range(len(loops2)), key=lambda i: -abs(areas[i]))
    out = []
    for rank, i in enumerate(order):
        loop = loops2[i]
        want_ccw = rank == 0
        if (areas[i] > 0) != want_ccw:
            loop = loop[::-1]
        out.append(np.ascontiguousarray(loop))
    return PolygonBoundary(tuple(out))


def point_line_distance(p, seg) -> float:
    """Perpendicular distance from ``p`` to the infinite line through ``seg``."""
    a = np.asarray(seg[0], dtype=float)
    b = np.asarray(seg[1], dtype=float)
    d = b - a
    norm = math.hypot(d[0], d[1])
    if norm == 0.0:
        raise GeometryError("zero-length segment has no supporting line")
    q = np.asarray(p, dtype=float) - a
    return abs(d[0] * q[1] - d[1] * q[0]) / norm


def line_intersection(a1, a2, b1, b2):
    """Intersection of two infinite lines, or None when parallel."""
    a1, a2, b1, b2 = (np.asarray(x, dtype=float) for x in (a1, a2, b1, b2))
    da, db = a2 - a1, b2 - b1
    den = da[0] * db[1] - da[1] * db[0]
    if abs(den) < 1e-12 * max(np.linalg.norm(da) * np.linalg.norm(db), 1e-300):
        return None
    t = ((b1[0] - a1[0]) * db[1] - (b1[1] - a1[1]) * db[0]) / den
    return a1 + t * da


def segment_intersection(a1, a2, b1, b2, eps: float = 1e-12):
    """Proper or touching intersection point of two segments, else None."""
    a1, a2, b1, b2 = (np.asarray(x, dtype=float) for x in (a1, a2, b1, b2))
    da, db = a2 - a1, b2 - b1
    den = da[0] * db[1] - da[1] * db[0]
    if abs(den) <= eps * np.linalg.norm(da) * np.linalg.norm(db):
        return None
    w = b1 - a1
    t = (w[0] * db[1] - w[1] * db[0]) / den
    s = (w[0] * da[1] - w[1] * da[0]) / den
    if -eps <= t <= 1 + eps and -eps <= s <= 1 + eps:
        return a1 + t * da
    return None


@dataclass(frozen=True)
class PlaneGrid:
    """Raster lattice over a plane frame.

    Pixel ``(x, y)`` has its centre at ``u = u0 + (x + 0.5 - margin) * texel``
    and ``v = v1 - (y + 0.5 - margin) * texel``: rows run downwards in ``v`` so
    written images appear upright.
    """

    u0: float
    v1: float
    texel: float
    width: int
    height: int
    margin: int = 0

    @classmethod
    def for_boundary(cls, boundary: PolygonBoundary, min_edge_samples: int = 256,
                     max_pixels: int = 2048 * 2048, margin_frac: float = 0.05) -> "PlaneGrid":
        lo, hi = boundary.bbox()
        longest = max(float(np.linalg.norm(b - a)) for a, b in boundary.edges)
        texel = longest / min_edge_samples
        w = max(1, int(math.ceil((hi[0] - lo[0]) / texel - 1e-9)))
        h = max(1, int(math.ceil((hi[1] - lo[1]) / texel - 1e-9)))
        if w * h > max_pixels:
            s = math.sqrt(w * h / max_pixels)
            texel *= s
            w = max(1, int(math.ceil((hi[0] - lo[0]) / texel - 1e-9)))
            h = max(1, int(math.ceil((hi[1] - lo[1]) / texel - 1e-9)))
        margin = int(math.ceil(margin_frac * math.hypot(w, h)))
        return cls(float(lo[0]), float(hi[1]), texel, w + 2 * margin, h + 2 * margin, margin)

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def inner_slice(self) -> tuple[slice, slice]:
        m = self.margin
        return slice(m, self.height - m), slice(m, self.width - m)

    def uv_to_px(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        x = (uv[..., 0] - self.u0) / self.texel + self.margin - 0.5
        y = (self.v1 - uv[..., 1]) / self.texel + self.margin - 0.5
        return np.stack([x, y], axis=-1)

    def px_to_uv(self, px) -> np.ndarray:
        px = np.asarray(px, dtype=float)
        u = self.u0 + (px[..., 0] + 0.5 - self.margin) * self.texel
        v = self.v1 - (px[..., 1] + 0.5 - self.margin) * self.texel
        return np.stack([u, v], axis=-1)

    def pixel_centers_uv(self) -> np.ndarray:
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        return self.px_to_uv(np.stack([xs, ys], axis=-1).astype(float))

    def boundary_px(self, boundary: PolygonBoundary) -> PolygonBoundary:
        """Boundary in pixel coordinates (loop orientation flips with the v axis)."""
        return boundary.transformed(self.uv_to_px)

    def inside_mask(self, boundary: PolygonBoundary) -> np.ndarray:
        import shapely

        uv = self.pixel_centers_uv()
        poly = boundary.to_shapely()
        return shapely.contains_xy(poly, uv[..., 0], uv[..., 1]) | shapely.intersects_xy(
            poly.boundary, uv[..., 0], uv[..., 1])

    def to_dict(self) -> dict:
        return {"u0": self.u0, "v1": self.v1, "texel": self.texel, "width": self.width,
                "height": self.height, "margin": self.margin}
