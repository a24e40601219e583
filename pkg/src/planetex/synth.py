"""Synthetic planar scenes with known texture and poses, plus alignment scoring."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .camera import CameraView, bilinear_sample, look_at
from .errors import GeometryError, InputError
from .geometry import PlaneGrid, ProxyMesh, ProxyPolygon
from .lines import detect_segments, merge_collinear
from .metrics import ssim


@dataclass
class SceneSpec:
    plane_size: float = 10.0
    texture_size: int = 512
    line_spacing: int = 64
    line_width: int = 3
    wall_color: tuple = (0.85, 0.78, 0.65)
    line_color: tuple = (0.15, 0.15, 0.2)
    background_color: tuple = (0.35, 0.55, 0.85)
    blobs: int = 0
    blob_radius: int = 24
    blob_color: tuple = (0.75, 0.2, 0.15)
    camera_count: int = 4
    camera_radius: float = 3.0
    camera_height: float = 10.0
    look_at_jitter: float = 0.0
    image_size: int = 640
    fov_deg: float = 60.0
    rotation_noise_deg: float = 1.0
    translation_noise: float = 0.005  # fraction of camera distance
    seed: int = 0

    def __post_init__(self):
        for name in ("wall_color", "line_color", "background_color", "blob_color"):
            setattr(self, name, tuple(float(c) for c in getattr(self, name)))
        if not self.line_spacing > self.line_width > 0:
            raise InputError("need line_spacing > line_width > 0")
        if self.camera_count < 1:
            raise InputError("camera_count must be at least 1")
        if self.camera_height <= 0:
            raise GeometryError("cameras must be in front of the plane (camera_height > 0)")
        if self.plane_size <= 0 or self.texture_size < 16:
            raise InputError("plane_size must be positive and texture_size at least 16")

    @property
    def texel(self) -> float:
        return self.plane_size / self.texture_size

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise InputError(f"unknown scene keys: {sorted(extra)}")
        return cls(**data)


@dataclass
class Scene:
    spec: SceneSpec
    mesh: ProxyMesh
    texture: np.ndarray
    true_cameras: list
    noisy_cameras: list
    images: list = field(repr=False, default_factory=list)


def grid_texture(spec: SceneSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Wall colour with dark grid lines centred between the texture borders."""
    n = spec.texture_size
    tex = np.empty((n, n, 3))
    tex[:] = spec.wall_color
    offset = spec.line_spacing // 2 - spec.line_width // 2
    idx = np.arange(n)
    on = ((idx - offset) % spec.line_spacing) < spec.line_width
    tex[on, :] = spec.line_color
    tex[:, on] = spec.line_color
    if spec.blobs:
        rng = rng or np.random.default_rng(spec.seed)
        yy, xx = np.mgrid[0:n, 0:n]
        for _ in range(spec.blobs):
            cx, cy = rng.uniform(spec.blob_radius, n - spec.blob_radius, 2)
            tex[(xx - cx) ** 2 + (yy - cy) ** 2 <= spec.blob_radius**2] = spec.blob_color
    return tex


def facade_mesh(spec: SceneSpec) -> ProxyMesh:
    h = spec.plane_size / 2
    verts = [(-h, -h, 0.0), (h, -h, 0.0), (h, h, 0.0), (-h, h, 0.0)]
    return ProxyMesh(np.array(verts), ((0, 1, 2, 3),))


def world_to_texture(spec: SceneSpec, xy: np.ndarray) -> np.ndarray:
    """Texture pixel position of world plane points (column right along x, rows down along -y)."""
    h = spec.plane_size / 2
    s = spec.texel
    tx = (xy[..., 0] + h) / s - 0.5
    ty = (h - xy[..., 1]) / s - 0.5
    return np.stack([tx, ty], axis=-1)


def sample_texture(spec: SceneSpec, texture: np.ndarray, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear texture colour at world plane points; background outside the facade."""
    cols, ok = bilinear_sample(texture, world_to_texture(spec, xy))
    cols[~ok] = spec.background_color
    return cols, ok


def render_view(spec: SceneSpec, texture: np.ndarray, cam: CameraView) -> np.ndarray:
    """Ray-cast the textured plane z = 0 into ``cam``."""
    ys, xs = np.mgrid[0:cam.height, 0:cam.width].astype(float)
    rays = cam.ray_directions(np.stack([xs, ys], axis=-1))
    C = cam.center
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -C[2] / rays[..., 2]
    hit = np.isfinite(t) & (t > 0)
    pts = C + np.where(hit, t, 0.0)[..., None] * rays
    img, _ = sample_texture(spec, texture, pts[..., :2])
    img[~hit] = spec.background_color
    return img


def _camera(cid: int, R, t, spec: SceneSpec) -> CameraView:
    n = spec.image_size
    f = (n / 2) / math.tan(math.radians(spec.fov_deg) / 2)
    return CameraView(cid, f, f, (n - 1) / 2, (n - 1) / 2, R, t, n, n)


def perturb_pose(R, t, spec: SceneSpec, rng: np.random.Generator):
    """Random rotation (normal angle, uniform axis) and centre shift."""
    C = -R.T @ t
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(spec.rotation_noise_deg) * rng.normal()
    dR = Rotation.from_rotvec(axis * angle).as_matrix()
    dist = float(np.linalg.norm(C))
    C2 = C + rng.normal(size=3) * spec.translation_noise * dist
    R2 = dR @ R
    return R2, -R2 @ C2


def generate_scene(spec: SceneSpec, seed: int | None = None) -> Scene:
    """Mesh, texture, true and noisy cameras, and renders from the true poses."""
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    texture = grid_texture(spec, rng)
    mesh = facade_mesh(spec)
    true_cams, noisy_cams, images = [], [], []
    for i in range(spec.camera_count):
        a = 2 * math.pi * i / spec.camera_count
        eye = np.array([spec.camera_radius * math.cos(a), spec.camera_radius * math.sin(a), spec.camera_height])
        target = np.array([eye[0], eye[1], 0.0]) + np.append(rng.normal(size=2) * spec.look_at_jitter, 0.0)
        R, t = look_at(eye, target, up=(0.0, 1.0, 0.0))
        cam = _camera(i, R, t, spec)
        img = render_view(spec, texture, cam)
        cam.image = img
        Rn, tn = perturb_pose(R, t, spec, rng)
        noisy = _camera(i, Rn, tn, spec)
        noisy.image = img
        true_cams.append(cam)
        noisy_cams.append(noisy)
        images.append(img)
    return Scene(spec, mesh, texture, true_cams, noisy_cams, images)


def ground_truth_raster(spec: SceneSpec, texture: np.ndarray, polygon: ProxyPolygon, grid: PlaneGrid) -> np.ndarray:
    """The true texture resampled onto a plane lattice."""
    X = polygon.frame.to_3d(grid.pixel_centers_uv())
    cols, _ = sample_texture(spec, texture, X[..., :2])
    return cols


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class AlignmentReport:
    mean_displacement: float
    p95_displacement: float
    matched_crossings: int
    reference_crossings: int
    ssim: float
    rms_before: float = float("nan")
    rms_after: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def line_crossings(segments, min_angle: float = 30.0, reach: float = 2.0) -> np.ndarray:
    """Intersections of non-parallel segments that lie on both (within ``reach`` px)."""
    if len(segments) < 2:
        return np.zeros((0, 2))
    P1 = np.array([s.p1 for s in segments])
    D = np.array([s.p2 - s.p1 for s in segments])
    L = np.linalg.norm(D, axis=1)
    U = D / L[:, None]
    out = []
    cmin = math.sin(math.radians(min_angle))
    for i in range(len(segments)):
        cross = U[i, 0] * U[:, 1] - U[i, 1] * U[:, 0]
        for j in np.flatnonzero(np.abs(cross) >= cmin):
            if j <= i:
                continue
            w = P1[j] - P1[i]
            den = D[i, 0] * D[j, 1] - D[i, 1] * D[j, 0]
            ti = (w[0] * D[j, 1] - w[1] * D[j, 0]) / den
            tj = (w[0] * D[i, 1] - w[1] * D[i, 0]) / den
            ri, rj = reach / L[i], reach / L[j]
            if -ri <= ti <= 1 + ri and -rj <= tj <= 1 + rj:
                out.append(P1[i] + ti * D[i])
    return np.array(out) if out else np.zeros((0, 2))


def _grid_lines(image, mask, gap_tol):
    return merge_collinear(detect_segments(image, mask=mask), gap_tol=gap_tol)


def crossing_displacements(produced, reference, mask=None, radius: float = 16.0, gap_tol: float = 12.0):
    """Distances from each reference grid crossing to the nearest produced one."""
    ref_x = line_crossings(_grid_lines(reference, mask, gap_tol))
    if len(ref_x) == 0:
        raise GeometryError("no detectable line crossings in the reference")
    pro_x = line_crossings(_grid_lines(produced, mask, gap_tol))
    if len(pro_x) == 0:
        return np.zeros(0), len(ref_x)
    d, _ = cKDTree(pro_x).query(ref_x, distance_upper_bound=radius)
    return d[np.isfinite(d)], len(ref_x)


def evaluate_alignment(texture, ground_truth: np.ndarray, observed: np.ndarray | None = None,
                       region: np.ndarray | None = None, rms_before: float = float("nan"),
                       rms_after: float = float("nan"), radius: float = 16.0) -> AlignmentReport:
    """Grid-line displacement and SSIM of a texture against the ground truth.

    ``texture`` is a raster or a :class:`TextureMap`; ``observed`` limits
    the comparison (defaults to the texture's observed mask).
    """
    raster = getattr(texture, "raster", texture)
    if observed is None:
        observed = getattr(texture, "observed", np.ones(raster.shape[:2], bool))
    if region is not None:
        observed = observed & region
    disp, n_ref = crossing_displacements(raster, ground_truth, mask=observed, radius=radius)
    if len(disp) == 0:
        mean = p95 = float("inf")
    else:
        mean = float(disp.mean())
        p95 = float(np.percentile(disp, 95))
    s = ssim(raster, ground_truth, mask=observed)
    return AlignmentReport(mean, p95, int(len(disp)), int(n_ref), s, rms_before, rms_after)


def write_scene(scene: Scene, out_dir) -> dict:
    """Mesh, noisy and true camera files, view PNGs, the ground-truth texture and the scene description."""
    from pathlib import Path

    from .io import save_cameras, save_mesh, write_json, write_png

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    names = [f"images/view_{c.id:03d}.png" for c in scene.true_cameras]
    for name, img in zip(names, scene.images):
        write_png(out / name, img)
    save_mesh(scene.mesh, out / "mesh.obj")
    save_cameras(scene.noisy_cameras, out / "cameras.txt", names)
    save_cameras(scene.true_cameras, out / "cameras_true.txt", names)
    write_png(out / "texture.png", scene.texture)
    write_json(out / "scene.json", scene.spec.to_dict())
    return {"mesh": "mesh.obj", "cameras": "cameras.txt", "cameras_true": "cameras_true.txt",
            "texture": "texture.png", "images": names}
