"""Stage functions and the end-to-end run.

Every stage reads what the previous one writes, so running the stages one
by one gives the same bytes as :func:`run`. Textures are cropped to the
boundary's bounding box and quantised to 8 bits before inpainting.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compose import NO_SOURCE, TextureMap
from .config import ProjectConfig
from .errors import GeometryError, InputError
from .geometry import PlaneGrid, ProxyMesh, ProxyPolygon, segment_planes
from .inpaint import ExternalBackend, inpaint
from .io import dequantize, load_cameras, load_mesh, quantize, write_outputs
from .lines import cluster_lol2
from .report import write_report
from .views import SelectionState, filter_and_project, select_views
from .warp.stitch import StitchOptions, StitchResult, stitch_plane

URL_ENV = "PLANETEX_INPAINT_URL"


def segment(mesh: ProxyMesh, cfg: ProjectConfig) -> list[ProxyPolygon]:
    return segment_planes(mesh, cfg.segmentation.angle_tol, cfg.segmentation.dist_tol)


def find_polygon(polygons, plane_id: int) -> ProxyPolygon:
    for p in polygons:
        if p.id == plane_id:
            return p
    raise InputError(f"no plane with id {plane_id} (have 0..{len(polygons) - 1})")


def make_grid(polygon: ProxyPolygon, cfg: ProjectConfig) -> PlaneGrid:
    g = cfg.grid
    return PlaneGrid.for_boundary(polygon.boundary, g.min_edge_samples, g.max_pixels, g.margin_frac)


def stitch_options(cfg: ProjectConfig) -> StitchOptions:
    s = cfg.stitch
    detect = dict(vars(cfg.detect))
    merge = dict(vars(cfg.merge))
    return StitchOptions(cfg.energy, cfg.matching, s.icp_trim, s.icp_max_iters, s.icp_max_angle,
                         s.sample_step, s.blend, detect, merge, s.snap_tol)


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

def select(mesh, cameras, polygon, cfg: ProjectConfig) -> tuple[SelectionState, PlaneGrid]:
    grid = make_grid(polygon, cfg)
    regions = filter_and_project(cameras, polygon, mesh, cfg.selection, grid)
    return select_views(polygon, regions, cfg.selection), grid


def selection_record(state: SelectionState, grid: PlaneGrid, polygon, mesh_path, cameras_path,
                     cfg: ProjectConfig) -> dict:
    return {"plane": polygon.id, "mesh": str(Path(mesh_path).resolve()),
            "cameras": str(Path(cameras_path).resolve()), "config": cfg.to_dict(), "grid": grid.to_dict(),
            "views": state.view_ids, "scores": [float(s) for s in state.scores],
            "uncovered_fraction": state.uncovered_fraction,
            "area_history": [float(a) for a in state.area_history]}


# ---------------------------------------------------------------------------
# Stitching
# ---------------------------------------------------------------------------

@dataclass
class PlaneTexture:
    """Cropped 8-bit stitched texture with its hole mask and structural lines."""

    image8: np.ndarray
    holes: np.ndarray
    lol2: list  # [[x1, y1, x2, y2], ...] in cropped pixel coordinates
    grid: PlaneGrid
    record: dict = field(default_factory=dict)
    result: StitchResult | None = field(default=None, repr=False)


def stitch(mesh, cameras, polygon, grid: PlaneGrid, view_ids, cfg: ProjectConfig) -> PlaneTexture:
    """Re-project the selected views and stitch them in selection order."""
    by_id = {c.id: c for c in cameras}
    missing = [v for v in view_ids if v not in by_id]
    if missing:
        raise InputError(f"selected views not in the camera file: {missing}")
    regions = filter_and_project([by_id[v] for v in view_ids], polygon, mesh, cfg.selection, grid)
    order = {r.view_id: r for r in regions}
    regions = [order[v] for v in view_ids if v in order]
    ys, xs = grid.inner_slice
    shape = (ys.stop - ys.start, xs.stop - xs.start)
    if not regions:
        return PlaneTexture(np.zeros(shape + (3,), np.uint8), np.ones(shape, bool), [], grid,
                            {"selected_views": [], "status": "unobserved"})
    res = stitch_plane(regions, polygon.boundary, stitch_options(cfg))
    tex = res.texture
    observed = tex.observed[ys, xs] & tex.domain[ys, xs]
    image8 = quantize(np.where(observed[..., None], tex.raster[ys, xs], 0.0))
    lol2 = []
    if res.reference_lines:
        clusters = cluster_lol2(res.reference_lines, grid.shape, cfg.cluster.split_tol, cfg.seed,
                                cfg.cluster.n_init)
        off = np.array([xs.start, ys.start] * 2, dtype=float)
        lol2 = [(np.array(c.representative.as_list()) - off).tolist() for c in clusters]
    record = {"selected_views": [r.view_id for r in regions], "status": "ok",
              "rms_before": res.rms_before, "rms_after": res.rms_after,
              "views": [{"view": d.view_id, "rigid": [d.rigid.angle, d.rigid.tx, d.rigid.ty],
                         "lol0": d.lol0, "lol1": d.lol1, "global_matches": d.global_matches,
                         "local_matches": d.local_matches, "damped": d.damped, "energy": d.energy,
                         "overlap_pixels": d.overlap_pixels, "cut_cost": d.cut_cost,
                         "straightness": max((el / n**2 for el, n in d.straightness), default=0.0)}
                        for d in res.diagnostics]}
    return PlaneTexture(image8, ~observed, lol2, grid, record, res)


# ---------------------------------------------------------------------------
# Inpainting
# ---------------------------------------------------------------------------

def resolve_backend(backend: str, url: str | None = None, timeout: float = 120.0):
    """``builtin`` or a callable client; the environment URL overrides ``url``."""
    if backend == "builtin":
        return "builtin"
    url = os.environ.get(URL_ENV) or url
    if not url:
        raise InputError(f"external inpainting needs a URL (config inpaint.url or {URL_ENV})")
    return ExternalBackend(url, timeout)


def inpaint_image(image8: np.ndarray, holes: np.ndarray, lol2, backend, seed: int,
                  cfg: ProjectConfig | None = None) -> tuple[np.ndarray, dict]:
    """Fill ``holes`` of an 8-bit texture; the rest stays bit-exact."""
    cfg = cfg or ProjectConfig()
    holes = np.asarray(holes, bool)
    if image8.shape[:2] != holes.shape:
        raise InputError(f"texture {image8.shape[:2]} and mask {holes.shape} differ in size")
    observed = ~holes
    if not holes.any():
        return image8.copy(), {"masked_pixels": 0}
    if not observed.any():
        raise GeometryError("texture has no observed pixels")
    tm = TextureMap(dequantize(image8), observed, np.where(observed, 0, NO_SOURCE))
    out, info = inpaint(tm, lol2, backend=backend, seed=seed, part_count=cfg.inpaint.part_count,
                        harmonize=cfg.inpaint.harmonize, large_mask_fraction=cfg.inpaint.large_mask_fraction)
    result = quantize(out.raster)
    result[observed] = image8[observed]
    meta = {"masked_pixels": info.masked_pixels, "part_count": info.part_count, "backend": info.backend,
            "seed": seed, "noise": [list(p) for p in info.noise.params] if info.noise else [],
            "d1": None if info.d1 is None else info.d1.tolist()}
    if info.resize:
        meta["resize"] = info.resize
    return result, meta


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

def texture_polygon(mesh, cameras, polygon, cfg: ProjectConfig) -> PlaneTexture:
    """Selection, stitching and inpainting for one polygon."""
    times = {}
    t = time.perf_counter()
    state, grid = select(mesh, cameras, polygon, cfg)
    times["select"] = time.perf_counter() - t
    t = time.perf_counter()
    pt = stitch(mesh, cameras, polygon, grid, state.view_ids, cfg)
    times["stitch"] = time.perf_counter() - t
    pt.record["uncovered_fraction"] = state.uncovered_fraction
    pt.record["unobserved_pixel_fraction"] = float(pt.holes.mean())
    image8 = pt.image8
    if cfg.inpaint.backend != "none" and pt.holes.any() and (~pt.holes).any():
        t = time.perf_counter()
        backend = resolve_backend(cfg.inpaint.backend, cfg.inpaint.url, cfg.inpaint.timeout)
        image8, meta = inpaint_image(image8, pt.holes, pt.lol2, backend, cfg.seed, cfg)
        pt.record["inpaint"] = meta
        times["inpaint"] = time.perf_counter() - t
    pt.record["timings"] = times
    pt.image8 = image8
    pt.result = None
    return pt


def _worker(args):
    mesh_path, cameras_path, cfg_dict, plane_id = args
    cfg = ProjectConfig.from_dict(cfg_dict)
    mesh = load_mesh(mesh_path)
    polygon = find_polygon(segment(mesh, cfg), plane_id)
    return texture_polygon(mesh, load_cameras(cameras_path), polygon, cfg)


def run(mesh_path, cameras_path, cfg: ProjectConfig, out_dir, jobs: int | None = None, report: bool = True):
    """Texture every polygon and write the output bundle.

    ``jobs`` > 1 processes polygons in parallel worker processes.
    """
    jobs = jobs or cfg.jobs
    mesh = load_mesh(mesh_path)
    cameras = load_cameras(cameras_path)
    polygons = segment(mesh, cfg)
    if jobs > 1 and len(polygons) > 1:
        args = [(str(mesh_path), str(cameras_path), cfg.to_dict(), p.id) for p in polygons]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, args))
    else:
        results = [texture_polygon(mesh, cameras, p, cfg) for p in polygons]
    textures = {p.id: (r.image8, r.grid) for p, r in zip(polygons, results)}
    records = {p.id: r.record for p, r in zip(polygons, results)}
    manifest = write_outputs(polygons, textures, out_dir, records, cfg.seed, mesh)
    if report:
        write_report(Path(out_dir) / "report", manifest, {p.id: r.image8 for p, r in zip(polygons, results)})
    return manifest
