"""Piecewise-affine image warping and margin padding."""

from __future__ import annotations

import math

import numpy as np
from matplotlib.tri import Triangulation

from ..camera import bilinear_sample
from .energy import WarpField
from .mesh import AdaptiveMesh


def margin_pixels(diagonal: float, frac: float = 0.05) -> int:
    """Margin width for a bounding box of the given diagonal length."""
    return int(math.ceil(frac * diagonal - 1e-9))


def extend_margin(image: np.ndarray, bbox, frac: float = 0.05) -> tuple[np.ndarray, int]:
    """Pad by the margin of ``bbox = (x0, y0, x1, y1)`` with edge replication.

    Returns the padded image and the offset ``N``; a point ``p`` maps to
    ``p + N`` in the padded frame.
    """
    x0, y0, x1, y1 = (float(v) for v in bbox)
    n = margin_pixels(math.hypot(x1 - x0, y1 - y0), frac)
    pad = ((n, n), (n, n)) + ((0, 0),) * (image.ndim - 2)
    return np.pad(image, pad, mode="edge"), n


def unpad(image: np.ndarray, n: int) -> np.ndarray:
    if n == 0:
        return image
    return image[n:-n, n:-n]


def warp_coords(mesh: AdaptiveMesh, warp: WarpField, shape) -> np.ndarray:
    """Source position of every output pixel under the inverse piecewise-affine map.

    Pixels outside all deformed triangles get NaN.
    """
    h, w = shape[:2]
    out = np.full((h, w, 2), np.nan)
    if not np.any(warp.offsets):
        ys, xs = np.mgrid[0:h, 0:w].astype(float)
        xy = np.stack([xs, ys], axis=-1)
        V = mesh.vertices
        lo, hi = V.min(axis=0), V.max(axis=0)
        ok = (xs >= lo[0]) & (xs <= hi[0]) & (ys >= lo[1]) & (ys <= hi[1])
        out[ok] = xy[ok]
        return out
    Vd = mesh.vertices + warp.offsets
    tri = Triangulation(Vd[:, 0], Vd[:, 1], mesh.triangles)
    finder = tri.get_trifinder()
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    t = finder(xs.ravel(), ys.ravel())
    hit = t >= 0
    tt = mesh.triangles[t[hit]]
    P = np.stack([xs.ravel()[hit], ys.ravel()[hit]], axis=-1)
    a, b, c = Vd[tt[:, 0]], Vd[tt[:, 1]], Vd[tt[:, 2]]
    v0, v1, v2 = b - a, c - a, P - a
    den = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    beta = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / den
    gamma = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / den
    alpha = 1.0 - beta - gamma
    S = mesh.vertices
    src = (alpha[:, None] * S[tt[:, 0]] + beta[:, None] * S[tt[:, 1]] + gamma[:, None] * S[tt[:, 2]])
    flat = out.reshape(-1, 2)
    flat[np.flatnonzero(hit)] = src
    return out


def warp_image(image: np.ndarray, mesh: AdaptiveMesh, warp: WarpField, valid: np.ndarray | None = None):
    """Warp ``image`` by the mesh deformation (inverse mapped, bilinear).

    Returns ``(warped, valid)``; output pixels outside the deformed mesh or
    mapping onto invalid source pixels are invalid and zero.
    """
    coords = warp_coords(mesh, warp, image.shape)
    out, ok = bilinear_sample(np.asarray(image, dtype=float), coords, fill=0.0)
    if valid is not None:
        vs, ok2 = bilinear_sample(valid.astype(float), coords)
        ok &= ok2 & (vs > 0.999)
    okb = ok[..., None] if out.ndim == 3 else ok
    return np.where(okb, out, 0.0), ok
