"""Calibrated pinhole camera.

Conventions: the rotation maps world to camera coordinates, the camera
looks down its +z axis, image x runs right and y runs down, and pixel
``(0, 0)`` has its centre at integer coordinates ``(0, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError


@dataclass(eq=False)
class CameraView:
    id: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int
    image_path: Path | None = None
    _image: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise InputError(f"camera {self.id}: focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError(f"camera {self.id}: principal point outside the image")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise InputError(f"camera {self.id}: rotation is not orthonormal (error {err:.2e})")

    @property
    def image(self) -> np.ndarray:
        """RGB float image in [0, 1], loaded lazily from ``image_path``."""
        if self._image is None:
            if self.image_path is None:
                raise InputError(f"camera {self.id} has no image")
            from .io import read_image

            self._image = read_image(self.image_path)
        return self._image

    @image.setter
    def image(self, value):
        self._image = np.asarray(value, dtype=float)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def view_direction(self) -> np.ndarray:
        """Unit optical axis in world coordinates."""
        return self.rotation[2].copy()

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates and depth of world points."""
        pc = self.to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = self.fx * pc[..., 0] / z + self.cx
            y = self.fy * pc[..., 1] / z + self.cy
        return np.stack([x, y], axis=-1), z

    def in_image(self, px) -> np.ndarray:
        px = np.asarray(px)
        return ((px[..., 0] >= -0.5) & (px[..., 0] < self.width - 0.5)
                & (px[..., 1] >= -0.5) & (px[..., 1] < self.height - 0.5))

    def ray_directions(self, px) -> np.ndarray:
        """World-space unit rays through pixel positions."""
        px = np.asarray(px, dtype=float)
        d = np.stack([(px[..., 0] - self.cx) / self.fx, (px[..., 1] - self.cy) / self.fy,
                      np.ones(px.shape[:-1])], axis=-1)
        d = d @ self.rotation
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at ``eye`` looking at ``target``.

    ``up`` maps to image-up (camera -y).
    """
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=float)
    x = np.cross(-up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 0.0, 1.0]), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ eye


def bilinear_sample(image: np.ndarray, xy: np.ndarray, fill=0.0) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup of ``image`` at float pixel positions.

    Returns the samples and a mask of positions inside the pixel-centre hull
    (edge pixels are clamped within half a pixel).
    """
    h, w = image.shape[:2]
    x = xy[..., 0]
    y = xy[..., 1]
    ok = np.isfinite(x) & np.isfinite(y) & (x >= -0.5) & (x <= w - 0.5) & (y >= -0.5) & (y <= h - 0.5)
    xc = np.clip(np.where(ok, x, 0.0), 0, w - 1)
    yc = np.clip(np.where(ok, y, 0.0), 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(int), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(int), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    out = (image[y0, x0] * (1 - fx) * (1 - fy) + image[y0, x1] * fx * (1 - fy)
           + image[y1, x0] * (1 - fx) * fy + image[y1, x1] * fx * fy)
    okb = ok[..., None] if image.ndim == 3 else ok
    return np.where(okb, out, fill), ok
