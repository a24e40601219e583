"""Per-plane view filtering, projection, quality terms and greedy selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy import ndimage

from .camera import CameraView, bilinear_sample
from .errors import GeometryError
from .geometry import PlaneGrid, ProxyMesh, ProxyPolygon


@dataclass
class SelectionWeights:
    lambda_p: float = 1.0
    lambda_g: float = 1.0
    lambda_c: float = 1.0
    lambda_s: float = 1.0
    tau: float = 0.02
    max_view_angle: float = 75.0
    max_distance: float | None = None  # None means unbounded

    def __post_init__(self):
        for name in ("lambda_p", "lambda_g", "lambda_c", "lambda_s", "tau", "max_view_angle"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.tau >= 1:
            raise ValueError("tau must be < 1")
        if self.max_distance is not None and self.max_distance < 0:
            raise ValueError("max_distance must be non-negative")


@dataclass(eq=False)
class ProjectedRegion:
    """One view resampled onto a proxy polygon's plane lattice.

    ``valid`` covers the whole canvas (margin included) and is false where
    the sample is occluded, outside the frustum or over the view-angle
    limit. ``footprint`` is the valid area clipped to the boundary, in plane
    frame coordinates.
    """

    view_id: int
    grid: PlaneGrid
    colors: np.ndarray
    valid: np.ndarray
    inside: np.ndarray
    src_xy: np.ndarray
    grad: np.ndarray
    footprint: object
    view_dir: np.ndarray
    gradient_score: float = 0.0
    mean_color: np.ndarray = field(default_factory=lambda: np.zeros(3))
    view: CameraView | None = field(default=None, repr=False)

    @property
    def samples(self) -> np.ndarray:
        return self.valid & self.inside

    def resample(self, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Colours and validity at float canvas positions.

        Goes back to the source photo through the interpolated sample map so
        chained warps only resample the photo once.
        """
        xy, ok = bilinear_sample(self.src_xy, coords, fill=np.nan)
        vnear, ok2 = bilinear_sample(self.valid.astype(float), coords)
        ok = ok & ok2 & (vnear > 0.999)
        if self.view is None:
            cols, ok3 = bilinear_sample(self.colors, coords)
            return cols, ok & ok3
        cols, ok3 = bilinear_sample(self.view.image, np.where(ok[..., None], xy, np.nan))
        return cols, ok & ok3


@dataclass
class SelectionState:
    selected: list = field(default_factory=list)
    unobserved: object = None
    iteration: int = 0
    initial_area: float = 0.0
    area_history: list = field(default_factory=list)
    scores: list = field(default_factory=list)

    @property
    def unobserved_area(self) -> float:
        return 0.0 if self.unobserved is None else float(self.unobserved.area)

    @property
    def uncovered_fraction(self) -> float:
        if self.initial_area <= 0:
            return 1.0
        return self.unobserved_area / self.initial_area

    @property
    def view_ids(self) -> list[int]:
        return [r.view_id for r in self.selected]


def _gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


def sobel_magnitude(image: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude scaled so a unit-per-pixel ramp gives 1."""
    g = _gray(np.asarray(image, dtype=float))
    gx = ndimage.sobel(g, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(g, axis=0, mode="nearest") / 8.0
    return np.hypot(gx, gy)


def _segments_hit_triangles(origin: np.ndarray, targets: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Whether the open segment origin->target crosses any triangle."""
    hit = np.zeros(len(targets), dtype=bool)
    d = targets - origin
    for tri in tris:
        e1 = tri[1] - tri[0]
        e2 = tri[2] - tri[0]
        p = np.cross(d, e2)
        det = p @ e1
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = origin - tri[0]
        u = (p @ s) * inv
        q = np.cross(s, e1)
        v = (d @ q) * inv
        t = (q @ e2) * inv
        eps = 1e-9
        hit |= ok & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > eps) & (t < 1 - 1e-7)
    return hit


def _footprint_from_mask(mask: np.ndarray, grid: PlaneGrid, clip):
    polys = []
    for y in range(mask.shape[0]):
        row = mask[y]
        if not row.any():
            continue
        padded = np.concatenate([[False], row, [False]])
        diff = np.diff(padded.astype(np.int8))
        starts = np.nonzero(diff == 1)[0]
        ends = np.nonzero(diff == -1)[0]
        for a, b in zip(starts, ends):
            lo = grid.px_to_uv(np.array([a - 0.5, y + 0.5]))
            hi = grid.px_to_uv(np.array([b - 0.5, y - 0.5]))
            polys.append(shapely.box(lo[0], lo[1], hi[0], hi[1]))
    if not polys:
        return shapely.Polygon()
    return shapely.intersection(shapely.unary_union(polys), clip)


def filter_and_project(views, polygon: ProxyPolygon, mesh: ProxyMesh, weights: SelectionWeights,
                       grid: PlaneGrid | None = None) -> list[ProjectedRegion]:
    """Project every usable view onto ``polygon``'s lattice.

    Views behind the plane, too far away or too oblique are dropped; the
    rest get per-sample frustum, view-angle and occlusion validity.
    """
    if grid is None:
        grid = PlaneGrid.for_boundary(polygon.boundary)
    n = polygon.normal
    inside = grid.inside_mask(polygon.boundary)
    X = polygon.frame.to_3d(grid.pixel_centers_uv())
    flat = X.reshape(-1, 3)
    others = [f for f in range(len(mesh.faces)) if f not in set(polygon.faces)]
    tris = mesh.triangles(others)
    centroid = polygon.frame.to_3d(np.asarray(polygon.boundary.to_shapely().centroid.coords[0]))
    clip = polygon.boundary.to_shapely()
    cos_max = math.cos(math.radians(weights.max_view_angle))

    regions = []
    for view in views:
        C = view.center
        if polygon.distance(C) <= 0:
            continue
        if weights.max_distance is not None and np.linalg.norm(C - centroid) > weights.max_distance:
            continue
        vdir = view.view_direction
        if vdir @ (-n) < cos_max - 1e-12:
            continue
        px, z = view.project(flat)
        ok = (z > 0) & view.in_image(px)
        rays = flat - C
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        ok &= rays @ (-n) >= cos_max - 1e-12
        if len(tris) and ok.any():
            idx = np.nonzero(ok)[0]
            ok[idx[_segments_hit_triangles(C, flat[idx], tris)]] = False
        valid = ok.reshape(grid.shape)
        if not (valid & inside).any():
            continue
        src_xy = px.reshape(grid.shape + (2,))
        image = view.image
        colors, _ = bilinear_sample(image, np.where(valid[..., None], src_xy, np.nan))
        grad, _ = bilinear_sample(sobel_magnitude(image), np.where(valid[..., None], src_xy, np.nan))
        footprint = _footprint_from_mask(valid, grid, clip)
        if footprint.area <= 0:
            continue
        region = ProjectedRegion(view.id, grid, colors, valid, inside, src_xy, grad, footprint,
                                 vdir, view=view)
        s = region.samples
        region.gradient_score = float(grad[s].mean())
        region.mean_color = colors[s].mean(axis=0)
        regions.append(region)
    return regions


def gradient_score(region: ProjectedRegion) -> float:
    """Mean Sobel magnitude over the region's valid samples."""
    s = region.samples
    if not s.any():
        raise GeometryError(f"region of view {region.view_id} has no valid samples")
    return float(region.grad[s].mean())


def photo_consistency(region: ProjectedRegion, all_regions) -> float:
    """Gaussian density of the region's mean colour, max-normalised over ``all_regions``."""
    feats = np.array([r.mean_color for r in all_regions], dtype=float)
    mu = feats.mean(axis=0)
    cov = np.cov(feats.T, ddof=0).reshape(3, 3) + 1e-4 * np.eye(3)
    inv = np.linalg.inv(cov)

    def maha(x):
        d = np.asarray(x, dtype=float) - mu
        return float(d @ inv @ d)

    best = min(maha(f) for f in feats)
    return math.exp(-0.5 * (maha(region.mean_color) - best))


def smoothness(region: ProjectedRegion, selected) -> float:
    """One minus the mean absolute colour difference on overlapping samples."""
    total = 0.0
    count = 0
    mine = region.samples
    for other in selected:
        ov = mine & other.samples
        k = int(ov.sum())
        if k == 0:
            continue
        total += float(np.abs(region.colors[ov] - other.colors[ov]).mean(axis=1).sum())
        count += k
    if count == 0:
        return 1.0
    return 1.0 - total / count


def _unit(v, name):
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-6:
        raise ValueError(f"{name} must be a unit vector")
    return v


def perspective_quality(region, selected, polygon) -> float:
    """Front-parallel and view-consistency score.

    ``region`` and the members of ``selected`` may be regions or bare
    viewing directions; ``polygon`` may be a polygon or its normal.
    """
    vj = _unit(getattr(region, "view_dir", region), "viewing direction")
    n = _unit(getattr(polygon, "normal", polygon), "plane normal")
    total = (2.0 / math.pi) * math.acos(float(np.clip(vj @ -n, -1.0, 1.0)))
    for s in selected:
        vn = _unit(getattr(s, "view_dir", s), "viewing direction")
        total += (1.0 / math.pi) * math.acos(float(np.clip(vj @ vn, -1.0, 1.0)))
    return 1.0 - total / (len(selected) + 1)


def score(region: ProjectedRegion, state: SelectionState, all_regions, polygon, weights: SelectionWeights) -> float:
    Ak = state.unobserved_area
    Aj = float(shapely.intersection(region.footprint, state.unobserved).area) if Ak > 0 else 0.0
    coverage = Aj / Ak if Ak > 0 else 0.0
    photo = 0.0
    if coverage > 0:
        photo = (weights.lambda_g * region.gradient_score
                 + weights.lambda_c * photo_consistency(region, all_regions)) * coverage
    return (photo + weights.lambda_s * smoothness(region, state.selected)
            + weights.lambda_p * perspective_quality(region, state.selected, polygon))


def select_views(polygon: ProxyPolygon, candidates, weights: SelectionWeights) -> SelectionState:
    """Greedy view selection; ties go to the lowest view id."""
    full = polygon.boundary.to_shapely()
    state = SelectionState(unobserved=full, initial_area=float(full.area))
    state.area_history.append(state.unobserved_area)
    remaining = sorted(candidates, key=lambda r: r.view_id)
    all_regions = list(remaining)
    while remaining and state.uncovered_fraction > weights.tau:
        scores = [score(r, state, all_regions, polygon, weights) for r in remaining]
        best = 0
        for i, q in enumerate(scores):
            if q > scores[best]:
                best = i
        pick = remaining.pop(best)
        state.selected.append(pick)
        state.scores.append(scores[best])
        state.unobserved = shapely.difference(state.unobserved, pick.footprint)
        state.iteration += 1
        state.area_history.append(state.unobserved_area)
    return state
