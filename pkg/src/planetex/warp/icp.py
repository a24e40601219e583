"""Rigid 2D registration by trimmed iterative closest point."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import GeometryError


@dataclass(frozen=True)
class Rigid2D:
    angle: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.matrix.T + self.translation

    __call__ = apply

    def inverse(self) -> "Rigid2D":
        t = -self.matrix.T @ self.translation
        return Rigid2D(-self.angle, float(t[0]), float(t[1]))

    def compose(self, other: "Rigid2D") -> "Rigid2D":
        """``self`` after ``other``."""
        t = self.matrix @ other.translation + self.translation
        return Rigid2D(self.angle + other.angle, float(t[0]), float(t[1]))


def fit_rigid(src: np.ndarray, dst: np.ndarray, weights=None) -> Rigid2D:
    """Closed-form least-squares rotation + translation taking src onto dst."""
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float)
    cs = (src * w[:, None]).sum(0) / w.sum()
    cd = (dst * w[:, None]).sum(0) / w.sum()
    a = (src - cs) * w[:, None]
    b = dst - cd
    H = a.T @ b
    angle = math.atan2(H[0, 1] - H[1, 0], H[0, 0] + H[1, 1])
    R = Rigid2D(angle).matrix
    t = cd - R @ cs
    return Rigid2D(angle, float(t[0]), float(t[1]))


def rigid_align(source_points, target_points, max_iters: int = 100, conv_tol: float = 1e-12,
                trim: float = 0.8, init: Rigid2D | None = None) -> Rigid2D:
    """Transform moving ``source_points`` onto ``target_points``.

    Each iteration pairs every point of the smaller cloud with its nearest
    neighbour in the other, keeps the best ``trim`` fraction by residual and
    refits in closed form. Stops when the mean residual changes by less
    than ``conv_tol`` or after ``max_iters``.
    """
    src = np.asarray(source_points, dtype=float).reshape(-1, 2)
    dst = np.asarray(target_points, dtype=float).reshape(-1, 2)
    if len(src) < 2 or len(dst) < 2:
        raise GeometryError("rigid alignment needs at least two points per cloud")
    if np.ptp(src, axis=0).max() == 0:
        raise GeometryError("source points are coincident; rotation is unobservable")
    T = init or Rigid2D()
    src_from_small = len(src) <= len(dst)
    tree_dst = cKDTree(dst)
    prev = math.inf
    for _ in range(max_iters):
        moved = T.apply(src)
        if src_from_small:
            d, j = tree_dst.query(moved)
            a, b = src, dst[j]
        else:
            d, j = cKDTree(moved).query(dst)
            a, b = src[j], dst
        keep = max(2, int(math.ceil(trim * len(d))))
        order = np.argsort(d, kind="stable")[:keep]
        T = fit_rigid(a[order], b[order])
        err = float(np.linalg.norm(T.apply(a[order]) - b[order], axis=1).mean())
        if abs(prev - err) < conv_tol:
            break
        prev = err
    return T
