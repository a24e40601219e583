"""Sequential alignment and compositing of the selected views of one plane."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..camera import bilinear_sample
from ..compose import CompositeInfo, TextureMap, composite_step, overwrite_composite
from ..errors import GeometryError, PlanetexError
from ..geometry import PolygonBoundary, line_intersection
from ..lines import (LineSegment2D, LoLSet, MatchThresholds, cluster_lol2, detect_segments, merge_collinear,
                     refine_lol1)
from .energy import EnergyWeights, repair_topology, solve_warp
from .icp import Rigid2D, rigid_align
from .matching import MatchSet, match_segments
from .mesh import AdaptiveMesh, build_adaptive_mesh
from .resample import warp_coords


@dataclass
class StitchOptions:
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    thresholds: MatchThresholds = field(default_factory=MatchThresholds)
    icp_trim: float = 0.8
    icp_max_iters: int = 100
    icp_max_angle: float = 5.0  # degrees; larger fits fall back to identity
    sample_step: float = 1.0
    blend: bool = True
    detect: dict = field(default_factory=dict)
    merge: dict = field(default_factory=lambda: {"angle_tol": 2.0, "dist_tol": 2.0, "gap_tol": 12.0})
    snap_tol: float = 3.0


@dataclass
class ViewDiagnostics:
    view_id: int
    rigid: Rigid2D
    lol0: int = 0
    lol1: int = 0
    global_matches: int = 0
    local_matches: int = 0
    residuals_before: list = field(default_factory=list)
    residuals_after: list = field(default_factory=list)
    damped: int = 0
    energy: dict = field(default_factory=dict)
    overlap_pixels: int = 0
    cut_cost: float = 0.0
    straightness: list = field(default_factory=list)  # per segment: (El residual, length)

    @property
    def rms_before(self) -> float:
        return _rms(self.residuals_before)

    @property
    def rms_after(self) -> float:
        return _rms(self.residuals_after)


@dataclass
class StitchResult:
    texture: TextureMap
    lolsets: dict
    diagnostics: list
    reference_lines: list

    @property
    def rms_before(self) -> float:
        return _rms([r for d in self.diagnostics for r in d.residuals_before])

    @property
    def rms_after(self) -> float:
        return _rms([r for d in self.diagnostics for r in d.residuals_after])


def _rms(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean(v**2))) if len(v) else 0.0


def fill_invalid(image: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace invalid pixels by their nearest valid neighbour."""
    if valid.all() or not valid.any():
        return np.nan_to_num(image)
    _, (iy, ix) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return np.nan_to_num(image[iy, ix])


def sample_segments(segments, step: float = 1.0) -> np.ndarray:
    pts = []
    for s in segments:
        n = max(2, int(math.ceil(s.length / step)) + 1)
        t = np.linspace(0.0, 1.0, n)[:, None]
        pts.append(s.p1 + t * (s.p2 - s.p1))
    return np.concatenate(pts) if pts else np.zeros((0, 2))


def boundary_samples(boundary_px: PolygonBoundary, valid: np.ndarray, step: float = 1.0) -> np.ndarray:
    """Boundary points (pixel frame) that fall on valid view samples."""
    segs = []
    for a, b in boundary_px.edges:
        if np.linalg.norm(b - a) > 0:
            segs.append(LineSegment2D(a, b))
    pts = sample_segments(segs, step)
    if not len(pts):
        return pts
    h, w = valid.shape
    xi = np.rint(pts[:, 0]).astype(int)
    yi = np.rint(pts[:, 1]).astype(int)
    ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    ok[ok] = valid[yi[ok], xi[ok]]
    return pts[ok]


def detect_lol0(colors: np.ndarray, valid: np.ndarray, detect: dict | None = None,
                merge: dict | None = None) -> list:
    image = fill_invalid(colors, valid)
    mask = ndimage.binary_erosion(valid, iterations=2)
    return merge_collinear(detect_segments(image, mask=mask, **(detect or {})), **(merge or {}))


def align_to_boundary(lol0, boundary_px: PolygonBoundary, valid: np.ndarray, margin: float,
                      opts: StitchOptions) -> Rigid2D:
    """Rigid fit of detected lines onto the visible boundary.

    Both clouds are sampled densely along their segments. Fits that rotate
    more than ``icp_max_angle`` or move further than ``margin`` are
    rejected in favour of the identity.
    """
    target = boundary_samples(boundary_px, valid, opts.sample_step)
    source = sample_segments(lol0, opts.sample_step)
    if len(target) < 2 or len(source) < 2 or np.ptp(source, axis=0).max() == 0:
        return Rigid2D()
    T = rigid_align(source, target, max_iters=opts.icp_max_iters, trim=opts.icp_trim)
    if abs(math.degrees(T.angle)) > opts.icp_max_angle:
        return Rigid2D()
    # displacement of the boundary centroid is what matters, not the raw translation
    c = target.mean(axis=0)
    if np.linalg.norm(T.apply(c) - c) > margin:
        return Rigid2D()
    return T


def _endpoint_residuals(mesh: AdaptiveMesh, matches: MatchSet, offsets) -> list:
    P = mesh.vertices + (0.0 if offsets is None else offsets)
    out = []
    for pair in matches.pairs:
        chain = mesh.segments[pair[0]]
        if chain is None:
            continue
        line = matches.line(pair)
        for vi in (chain[0], chain[-1]):
            out.append(float(abs(line.normal @ (P[vi] - line.p1))))
    return out


def snap_junctions(segments, tol: float = 3.0, min_angle: float = 30.0) -> list:
    """Move endpoints lying within ``tol`` of a crossing line onto it.

    Near-miss T-junctions otherwise leave stubs and slivers in the mesh
    that flip as soon as either line moves.
    """
    segs = list(segments)
    smin = math.sin(math.radians(min_angle))
    for i in range(len(segs)):
        ends = [segs[i].p1.copy(), segs[i].p2.copy()]
        d = segs[i].direction
        for k in range(2):
            best = None
            for j, other in enumerate(segs):
                if j == i or abs(d[0] * other.direction[1] - d[1] * other.direction[0]) < smin:
                    continue
                X = line_intersection(segs[i].p1, segs[i].p2, other.p1, other.p2)
                if X is None:
                    continue
                dist = float(np.linalg.norm(X - ends[k]))
                t = float((X - other.p1) @ other.direction)
                if dist <= tol and -tol <= t <= other.length + tol and (best is None or dist < best[0]):
                    best = (dist, X)
            if best is not None:
                ends[k] = best[1]
        if not np.allclose(ends[0], ends[1]):
            segs[i] = LineSegment2D(ends[0], ends[1])
    return segs


def _warp_stage(segments, ref_lines, boundary_px, rect, opts: StitchOptions, diag: ViewDiagnostics):
    segments = snap_junctions(segments, opts.snap_tol)
    mesh = build_adaptive_mesh(segments, rect)
    matches = match_segments(segments, ref_lines, boundary_px, opts.thresholds)
    warp = solve_warp(mesh, matches, segments, opts.weights)
    warp = repair_topology(mesh, warp)
    diag.residuals_before += _endpoint_residuals(mesh, matches, None)
    diag.residuals_after += _endpoint_residuals(mesh, matches, warp.offsets)
    diag.damped += warp.damped
    P = mesh.vertices + warp.offsets
    moved = []
    for k, s in enumerate(segments):
        chain = mesh.segments[k]
        if chain is None:
            continue
        el = sum(float((P[a] - P[b]) @ s.normal) ** 2 for a, b in mesh.segment_edges(k))
        diag.straightness.append((el, s.length))
        a = mesh.vertices[chain[0]] + warp.offsets[chain[0]]
        b = mesh.vertices[chain[-1]] + warp.offsets[chain[-1]]
        try:
            moved.append(LineSegment2D(a, b))
        except GeometryError:
            continue
    return mesh, warp, matches, moved


def _compose_maps(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Positions ``inner[outer(p)]``: apply ``outer`` first, then look up ``inner``."""
    pos, ok = bilinear_sample(inner, outer, fill=np.nan)
    pos[~ok] = np.nan
    return pos


def stitch_plane(regions, boundary: PolygonBoundary, opts: StitchOptions | None = None,
                 lolsets: dict | None = None) -> StitchResult:
    """Align every selected view to the boundary, then to the accumulated texture.

    ``regions`` are projected regions in selection order sharing one grid.
    The first is warped onto the boundary only; later ones are warped onto
    the boundary and then onto the lines already placed.
    """
    opts = opts or StitchOptions()
    if not regions:
        raise PlanetexError("no regions to stitch")
    grid = regions[0].grid
    domain = regions[0].inside
    h, w = grid.shape
    rect = (-0.5, -0.5, w - 0.5, h - 0.5)
    bpx = grid.boundary_px(boundary)
    acc = TextureMap.empty((h, w), grid, domain)
    ref_lines: list = []
    lols: dict = {}
    diags = []
    for k, region in enumerate(regions):
        try:
            if lolsets is not None and region.view_id in lolsets:
                lol0 = list(lolsets[region.view_id].lol0)
            else:
                lol0 = detect_lol0(region.colors, region.valid, opts.detect, opts.merge)
            diag = ViewDiagnostics(region.view_id, Rigid2D(), lol0=len(lol0))
            T = align_to_boundary(lol0, bpx, region.valid, grid.margin, opts)
            diag.rigid = T
            aligned = [s.transformed(T.apply) for s in lol0]
            lol1 = refine_lol1(aligned, bpx, opts.thresholds)
            diag.lol1 = len(lol1.segments)
            lols[region.view_id] = LoLSet(lol0, lol1, cluster_lol2(lol1.segments, (h, w)) if lol1.segments else [])

            mesh_g, warp_g, m_g, moved = _warp_stage(lol1.segments, [], bpx, rect, opts, diag)
            diag.global_matches = len(m_g)
            diag.energy["global"] = dict(warp_g.breakdown)
            coords = warp_coords(mesh_g, warp_g, (h, w))
            if k > 0 and moved:
                mesh_l, warp_l, m_l, moved = _warp_stage(moved, ref_lines, bpx, rect, opts, diag)
                diag.local_matches = len(m_l)
                diag.energy["local"] = dict(warp_l.breakdown)
                coords = _compose_maps(warp_coords(mesh_l, warp_l, (h, w)), coords)
            src = T.inverse().apply(coords.reshape(-1, 2)).reshape(h, w, 2)
            colors, ok = region.resample(src)
            ok &= np.all(np.isfinite(src), axis=-1)
            target = TextureMap.from_view(colors, ok & domain, region.view_id, grid, domain)
            info = CompositeInfo()
            acc = composite_step(acc, target, blend=opts.blend, info=info)
            diag.overlap_pixels = info.overlap_pixels
            diag.cut_cost = info.cut_cost
            ref_lines = merge_collinear(ref_lines + moved)
            diags.append(diag)
        except PlanetexError as exc:
            raise type(exc)(f"view {region.view_id}: {exc}") from exc
    return StitchResult(acc, lols, diags, ref_lines)


def naive_stitch(regions) -> TextureMap:
    """Baseline: unwarped projections overwritten in selection order."""
    grid = regions[0].grid
    domain = regions[0].inside
    acc = TextureMap.empty(grid.shape, grid, domain)
    for r in regions:
        acc = overwrite_composite(acc, TextureMap.from_view(r.colors, r.valid & domain, r.view_id, grid, domain))
    return acc
