"""File formats: OBJ meshes, camera lists, segment lists, PNG rasters and output bundles."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraView
from .errors import GeometryError, InputError
from .geometry import PlaneGrid, ProxyMesh
from .lines import LineSegment2D

ORTHO_TOL = 1e-3
CAMERA_TOKENS = 20


def to_builtin(obj):
    """Recursively turn numpy scalars and arrays into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_builtin(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(to_builtin(data), indent=2, sort_keys=True) + "\n")


def _lines(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------

def load_mesh(path) -> ProxyMesh:
    """Read the ``v`` / ``f`` subset of Wavefront OBJ (1-based, negative indices relative)."""
    verts, faces = [], []
    for no, line in _lines(path):
        tok = line.split()
        if tok[0] == "v":
            try:
                xyz = [float(t) for t in tok[1:4]]
            except ValueError:
                raise InputError(f"{path}:{no}: malformed vertex: {line!r}") from None
            if len(xyz) != 3 or not all(math.isfinite(c) for c in xyz):
                raise InputError(f"{path}:{no}: vertex needs three finite coordinates")
            verts.append(xyz)
        elif tok[0] == "f":
            ring = []
            for t in tok[1:]:
                try:
                    k = int(t.split("/")[0])
                except ValueError:
                    raise InputError(f"{path}:{no}: malformed face index {t!r}") from None
                if k == 0:
                    raise InputError(f"{path}:{no}: face index 0 (OBJ indices are 1-based)")
                i = k - 1 if k > 0 else len(verts) + k
                if not 0 <= i < len(verts):
                    raise InputError(f"{path}:{no}: face index {k} out of range")
                ring.append(i)
            if len(ring) < 3:
                raise InputError(f"{path}:{no}: face needs at least 3 vertices")
            faces.append(tuple(ring))
    try:
        return ProxyMesh(np.asarray(verts, dtype=float).reshape(-1, 3), tuple(faces))
    except GeometryError as exc:
        raise InputError(f"{path}: {exc}") from exc


def save_mesh(mesh: ProxyMesh, path) -> None:
    out = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    out += ["f " + " ".join(str(i + 1) for i in ring) for ring in mesh.faces]
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------

def orthonormalize(R: np.ndarray) -> tuple[np.ndarray, float]:
    """Nearest rotation and the largest entry change needed to reach it."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q, float(np.abs(Q - R).max())


def load_cameras(path) -> list[CameraView]:
    """Parse ``id fx fy cx cy r11..r33 t1 t2 t3 w h image_path`` lines.

    The rotation maps world to camera and the camera looks down +z.
    Image paths are relative to the camera file.
    """
    base = Path(path).parent
    cams = []
    for no, line in _lines(path):
        tok = line.split()
        if len(tok) != CAMERA_TOKENS:
            raise InputError(f"{path}:{no}: expected {CAMERA_TOKENS} tokens, got {len(tok)}")
        try:
            cid = int(tok[0])
            nums = [float(t) for t in tok[1:17]]
            w, h = int(tok[17]), int(tok[18])
        except ValueError:
            raise InputError(f"{path}:{no}: malformed number") from None
        if not all(math.isfinite(v) for v in nums):
            raise InputError(f"{path}:{no}: non-finite camera parameter")
        fx, fy, cx, cy = nums[:4]
        R = np.array(nums[4:13]).reshape(3, 3)
        t = np.array(nums[13:16])
        if np.linalg.det(R) <= 0:
            raise InputError(f"{path}:{no}: rotation has non-positive determinant")
        R, err = orthonormalize(R)
        if err > ORTHO_TOL:
            raise InputError(f"{path}:{no}: rotation is not orthonormal (correction {err:.2e} > {ORTHO_TOL})")
        img = base / tok[19]
        if not img.is_file():
            raise InputError(f"{path}:{no}: image file not found: {img}")
        try:
            cams.append(CameraView(cid, fx, fy, cx, cy, R, t, w, h, image_path=img))
        except InputError as exc:
            raise InputError(f"{path}:{no}: {exc}") from exc
    ids = [c.id for c in cams]
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate camera ids")
    return cams


def save_cameras(cams, path, image_names) -> None:
    rows = []
    for cam, name in zip(cams, image_names):
        vals = [cam.fx, cam.fy, cam.cx, cam.cy, *cam.rotation.reshape(-1).tolist(), *cam.translation.tolist()]
        rows.append(" ".join([str(cam.id), *(repr(float(v)) for v in vals), str(cam.width), str(cam.height), name]))
    Path(path).write_text("# id fx fy cx cy r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3 w h image\n"
                          + "\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# Segments
# ---------------------------------------------------------------------------

def load_segments(path) -> list[LineSegment2D]:
    segs = []
    for no, line in _lines(path):
        tok = line.split()
        if len(tok) != 4:
            raise InputError(f"{path}:{no}: expected 'x1 y1 x2 y2'")
        try:
            v = [float(t) for t in tok]
        except ValueError:
            raise InputError(f"{path}:{no}: malformed number") from None
        if not all(math.isfinite(c) for c in v):
            raise InputError(f"{path}:{no}: non-finite coordinate")
        try:
            segs.append(LineSegment2D(v[:2], v[2:]))
        except GeometryError as exc:
            raise InputError(f"{path}:{no}: {exc}") from exc
    return segs


def save_segments(segments, path) -> None:
    Path(path).write_text("".join(" ".join(repr(float(c)) for c in s.as_list()) + "\n" for s in segments))


# ---------------------------------------------------------------------------
# Rasters
# ---------------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """RGB float image in [0, 1]."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=float) / 255.0
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc


def read_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L")) > 127
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read mask {path}: {exc}") from exc


def quantize(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=float) * 255.0), 0, 255).astype(np.uint8)


def dequantize(image8: np.ndarray) -> np.ndarray:
    return np.asarray(image8, dtype=float) / 255.0


def write_png(path, image: np.ndarray) -> None:
    """Write an 8-bit RGB (float input in [0, 1]) or greyscale mask PNG."""
    a = np.asarray(image)
    if a.dtype == bool:
        im = Image.fromarray(a.astype(np.uint8) * 255)
    else:
        im = Image.fromarray(a if a.dtype == np.uint8 else quantize(a))
    im.save(path, format="PNG")


# ---------------------------------------------------------------------------
# Planes
# ---------------------------------------------------------------------------

def polygons_to_dict(polygons) -> list:
    return [{"id": p.id, "faces": list(p.faces), "normal": p.normal.tolist(), "offset": p.offset,
             "frame": {"origin": p.frame.origin.tolist(), "u": p.frame.u.tolist(), "v": p.frame.v.tolist()},
             "boundary": [loop.tolist() for loop in p.boundary.loops],
             "area": p.boundary.area()} for p in polygons]


# ---------------------------------------------------------------------------
# Output bundle
# ---------------------------------------------------------------------------

@dataclass
class OutputManifest:
    mesh: str
    material: str
    polygons: list = field(default_factory=list)
    seed: int = 0

    def to_dict(self) -> dict:
        return {"mesh": self.mesh, "material": self.material, "seed": self.seed, "polygons": self.polygons}

    def write(self, path) -> None:
        write_json(path, self.to_dict())


def texture_uv(grid: PlaneGrid, uv: np.ndarray) -> np.ndarray:
    """Texture coordinates of plane-frame points on the cropped (margin-free) texture."""
    h, w = grid.height - 2 * grid.margin, grid.width - 2 * grid.margin
    uv = np.asarray(uv, dtype=float)
    s = (uv[..., 0] - grid.u0) / (w * grid.texel)
    t = 1.0 - (grid.v1 - uv[..., 1]) / (h * grid.texel)
    return np.stack([s, t], axis=-1)


def write_outputs(polygons, textures: dict, out_dir, records: dict | None = None, seed: int = 0,
                  mesh: ProxyMesh | None = None) -> OutputManifest:
    """Write per-polygon PNGs, a textured OBJ/MTL pair and ``manifest.json``.

    ``textures`` maps polygon id to ``(image8, grid)`` where ``image8`` is the
    cropped 8-bit texture. ``records`` adds per-polygon manifest entries.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    polygons = list(polygons)
    if mesh is None:
        mesh = polygons[0].mesh
    manifest = OutputManifest("model.obj", "model.mtl", seed=seed)
    obj = ["mtllib model.mtl"] + [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    mtl = []
    vt_count = 0
    for poly in polygons:
        if poly.id not in textures:
            continue
        image8, grid = textures[poly.id]
        name = f"polygon_{poly.id:03d}.png"
        write_png(out / name, image8)
        mtl += [f"newmtl polygon_{poly.id:03d}", "Ka 1 1 1", "Kd 1 1 1", f"map_Kd {name}", ""]
        obj.append(f"usemtl polygon_{poly.id:03d}")
        for fi in poly.faces:
            ring = mesh.faces[fi]
            st = texture_uv(grid, poly.frame.to_2d(mesh.vertices[list(ring)]))
            obj += [f"vt {s!r} {t!r}" for s, t in st.tolist()]
            obj.append("f " + " ".join(f"{v + 1}/{vt_count + k + 1}" for k, v in enumerate(ring)))
            vt_count += len(ring)
        entry = {"id": poly.id, "texture": name, "resolution": [int(image8.shape[1]), int(image8.shape[0])],
                 "texel": grid.texel}
        entry.update(to_builtin((records or {}).get(poly.id, {})))
        manifest.polygons.append(entry)
    try:
        (out / "model.obj").write_text("\n".join(obj) + "\n")
        (out / "model.mtl").write_text("\n".join(mtl) + "\n")
        manifest.write(out / "manifest.json")
    except OSError as exc:
        raise InputError(f"cannot write to {out}: {exc}") from exc
    for f in [manifest.mesh, manifest.material] + [p["texture"] for p in manifest.polygons]:
        if not (out / f).is_file():
            raise InputError(f"output file missing after write: {f}")
    return manifest
