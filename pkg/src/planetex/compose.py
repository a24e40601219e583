"""Overlap compositing: brightness matching, seam cut and gradient-domain blending."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy import ndimage, sparse
from scipy.sparse.csgraph import breadth_first_order, maximum_flow
from scipy.sparse.linalg import splu

from .errors import GeometryError
from .geometry import PlaneGrid
from .linalg import conjugate_gradient

NO_SOURCE = -1
CUT_EPS = 1e-4


class SeamFallbackWarning(UserWarning):
    pass


@dataclass
class TextureMap:
    """Per-plane texture raster on a :class:`PlaneGrid` canvas.

    ``provenance`` holds the source view id of every observed pixel and
    ``NO_SOURCE`` elsewhere. ``inpainted`` marks holes filled afterwards.
    """

    raster: np.ndarray
    observed: np.ndarray
    provenance: np.ndarray
    grid: PlaneGrid | None = None
    domain: np.ndarray | None = None
    inpainted: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.raster = np.asarray(self.raster, dtype=float)
        self.observed = np.asarray(self.observed, dtype=bool)
        self.provenance = np.asarray(self.provenance, dtype=np.int64)
        if self.raster.shape[:2] != self.observed.shape or self.observed.shape != self.provenance.shape:
            raise ValueError("raster, observed and provenance shapes differ")
        if not np.all(np.isfinite(self.raster)):
            raise ValueError("texture raster is not finite")
        if np.any((self.provenance != NO_SOURCE) != self.observed):
            raise ValueError("provenance must be defined exactly where observed")

    @classmethod
    def empty(cls, shape, grid=None, domain=None, channels: int = 3) -> "TextureMap":
        h, w = shape[:2]
        return cls(np.zeros((h, w, channels)), np.zeros((h, w), bool), np.full((h, w), NO_SOURCE),
                   grid, domain)

    @classmethod
    def from_view(cls, raster, observed, view_id: int, grid=None, domain=None) -> "TextureMap":
        observed = np.asarray(observed, dtype=bool)
        raster = np.where(observed[..., None], np.nan_to_num(np.asarray(raster, dtype=float)), 0.0)
        return cls(raster, observed, np.where(observed, view_id, NO_SOURCE), grid, domain)

    @property
    def shape(self) -> tuple[int, int]:
        return self.observed.shape

    def copy(self) -> "TextureMap":
        return TextureMap(self.raster.copy(), self.observed.copy(), self.provenance.copy(), self.grid,
                          None if self.domain is None else self.domain.copy(),
                          None if self.inpainted is None else self.inpainted.copy())


# ---------------------------------------------------------------------------
# Illumination
# ---------------------------------------------------------------------------

def _bins(v: np.ndarray) -> np.ndarray:
    return np.clip((v * 256).astype(int), 0, 255)


def match_histogram_lut(source_v: np.ndarray, reference_v: np.ndarray) -> np.ndarray:
    """Monotone 256-bin lookup taking the source CDF onto the reference CDF.

    Bins outside the source's range keep the offset of the nearest end so
    values the source never showed are shifted, not clamped.
    """
    hs = np.bincount(_bins(source_v), minlength=256).astype(float)
    hr = np.bincount(_bins(reference_v), minlength=256).astype(float)
    cs = np.cumsum(hs) / hs.sum()
    cr = np.cumsum(hr) / hr.sum()
    lut = np.minimum(np.searchsorted(cr, cs - 1e-12, side="left"), 255)
    present = np.flatnonzero(hs)
    lo, hi = present[0], present[-1]
    b = np.arange(256)
    lut = np.where(b < lo, lut[lo] - (lo - b), lut)
    lut = np.where(b > hi, lut[hi] + (b - hi), lut)
    return np.clip(lut, 0, 255)


def illumination_adjust(reference: TextureMap, target: TextureMap) -> TextureMap:
    """Bring the target's brightness to the reference's.

    The lookup is estimated where both views see the same content (the
    overlap) and applied to every target pixel, so the target stays
    continuous across the edge of the overlap. Works on the HSV value
    channel only; each pixel moves by its bin shift so the position within
    the bin is kept.
    """
    overlap = reference.observed & target.observed
    out = target.copy()
    if not overlap.any():
        return out
    hsv_t = rgb_to_hsv(np.clip(target.raster, 0, 1))
    v_ref = np.max(np.clip(reference.raster[overlap], 0, 1), axis=-1)
    lut = match_histogram_lut(hsv_t[..., 2][overlap], v_ref)
    region = target.observed
    v = hsv_t[..., 2][region]
    b = _bins(v)
    hsv_t[..., 2][region] = np.clip(v + (lut[b] - b) / 256.0, 0.0, 1.0)
    adjusted = hsv_to_rgb(hsv_t)
    out.raster = np.where(region[..., None], adjusted, target.raster)
    return out


# ---------------------------------------------------------------------------
# Graph cut
# ---------------------------------------------------------------------------

def _grid_edges(mask: np.ndarray):
    """4-neighbour pixel pairs with both ends in ``mask`` (each pair once)."""
    ys, xs = np.nonzero(mask[:, :-1] & mask[:, 1:])
    right = (ys, xs, ys, xs + 1)
    ys2, xs2 = np.nonzero(mask[:-1, :] & mask[1:, :])
    down = (ys2, xs2, ys2 + 1, xs2)
    return [np.concatenate(z) for z in zip(right, down)]


def cut_weights(image_a, image_b, edges) -> np.ndarray:
    diff = np.linalg.norm(np.asarray(image_a, float) - np.asarray(image_b, float), axis=-1) \
        if np.ndim(image_a) == 3 else np.abs(np.asarray(image_a, float) - np.asarray(image_b, float))
    y0, x0, y1, x1 = edges
    return diff[y0, x0] + diff[y1, x1] + CUT_EPS


def labeling_cost(labels: np.ndarray, image_a, image_b, overlap) -> float:
    """Sum of seam weights over overlap neighbours with different labels."""
    edges = _grid_edges(overlap)
    y0, x0, y1, x1 = edges
    cut = labels[y0, x0] != labels[y1, x1]
    return float(cut_weights(image_a, image_b, edges)[cut].sum())


def graphcut_seam(image_a, image_b, overlap, a_only, b_only) -> tuple[np.ndarray, float]:
    """Minimum-cost seam through the overlap.

    Returns a boolean map that is true where the overlap takes image B and
    the cut cost. Overlap pixels next to A-only pixels are tied to A, those
    next to B-only pixels to B (A wins when both apply). Components with
    no tie stay A with a warning.
    """
    overlap = np.asarray(overlap, bool)
    labels = np.zeros(overlap.shape, bool)
    if not overlap.any():
        return labels, 0.0
    a_only = np.asarray(a_only, bool) & ~overlap
    b_only = np.asarray(b_only, bool) & ~overlap & ~a_only
    fp = ndimage.generate_binary_structure(2, 1)
    to_a = overlap & ndimage.binary_dilation(a_only, fp)
    to_b = overlap & ndimage.binary_dilation(b_only, fp) & ~to_a

    comp, ncomp = ndimage.label(overlap, fp)
    free = np.zeros(ncomp + 1, bool)
    has_t = np.zeros(ncomp + 1, bool)
    has_t[np.unique(comp[to_a | to_b])] = True
    free[1:] = ~has_t[1:]
    if free[1:].any():
        warnings.warn(f"{int(free[1:].sum())} overlap component(s) touch no exclusive side; kept as A",
                      SeamFallbackWarning, stacklevel=2)

    idx = np.full(overlap.shape, -1, dtype=np.int64)
    n = int(overlap.sum())
    idx[overlap] = np.arange(n)
    S, T = n, n + 1
    edges = _grid_edges(overlap)
    w = cut_weights(image_a, image_b, edges)
    y0, x0, y1, x1 = edges
    p, q = idx[y0, x0], idx[y1, x1]

    total = float(w.sum()) + 1.0
    scale = (2**30) / (2.0 * total)
    wi = np.maximum(np.rint(w * scale), 1).astype(np.int64)
    inf = int(np.rint(total * scale)) + 1
    ta = idx[to_a]
    tb = idx[to_b]
    rows = np.concatenate([p, q, np.full(len(ta), S), tb])
    cols = np.concatenate([q, p, ta, np.full(len(tb), T)])
    caps = np.concatenate([wi, wi, np.full(len(ta) + len(tb), inf)]).astype(np.int32)
    G = sparse.csr_matrix((caps, (rows, cols)), shape=(n + 2, n + 2))
    res = maximum_flow(G, S, T, method="dinic")
    residual = (G - res.flow).tocsr()
    residual.data = (residual.data > 0).astype(np.int8)
    residual.eliminate_zeros()
    reach = breadth_first_order(residual, S, directed=True, return_predecessors=False)
    side_a = np.zeros(n + 2, bool)
    side_a[reach] = True
    labels[overlap] = ~side_a[:n]
    labels[free[comp] & overlap] = False
    return labels, labeling_cost(labels, image_a, image_b, overlap)


# ---------------------------------------------------------------------------
# Poisson blending
# ---------------------------------------------------------------------------

def poisson_blend(base: np.ndarray, patch: np.ndarray, mask: np.ndarray, known: np.ndarray | None = None,
                  max_residual: float = 1e-6, atol: float = 1e-9) -> np.ndarray:
    """Gradient-domain paste of ``patch`` into ``base`` over ``mask``.

    Pixels of ``known`` (default: everything outside the mask) next to the
    mask give Dirichlet values; other neighbours are free (Neumann).
    Components of the mask with no Dirichlet contact take the patch as is.
    The result equals ``base`` outside the mask. The system is factorised
    directly; CG polishes any channel whose max residual exceeds
    ``max_residual``.
    """
    base = np.asarray(base, dtype=float)
    patch = np.asarray(patch, dtype=float)
    mask = np.asarray(mask, bool)
    known = ~mask if known is None else (np.asarray(known, bool) & ~mask)
    out = base.copy()
    if not mask.any():
        return out
    fp = ndimage.generate_binary_structure(2, 1)
    ring = known & ndimage.binary_dilation(mask, fp)
    if not ring.any():
        raise GeometryError("blend mask has an empty boundary ring")
    comp, _ = ndimage.label(mask, fp)
    touched = np.unique(comp[ndimage.binary_dilation(ring, fp) & mask])
    solve = np.isin(comp, touched[touched > 0])
    copy = mask & ~solve
    out[copy] = patch[copy]
    if not solve.any():
        return out

    h, w = mask.shape
    n = int(solve.sum())
    idx = np.full((h, w), -1, dtype=np.int64)
    idx[solve] = np.arange(n)
    ys, xs = np.nonzero(solve)
    chans = 1 if base.ndim == 2 else base.shape[2]
    B = base.reshape(h, w, chans)
    Pt = patch.reshape(h, w, chans)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    rhs = np.zeros((n, chans))
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        qy, qx = ys + dy, xs + dx
        inb = (qy >= 0) & (qy < h) & (qx >= 0) & (qx < w)
        qy_c, qx_c = np.where(inb, qy, 0), np.where(inb, qx, 0)
        q_in = inb & solve[qy_c, qx_c]
        q_known = inb & ring[qy_c, qx_c] & ~q_in
        use = q_in | q_known
        diag += use
        grad = Pt[ys, xs] - Pt[qy_c, qx_c]
        rhs += np.where(use[:, None], grad, 0.0)
        rhs += np.where(q_known[:, None], B[qy_c, qx_c], 0.0)
        sel = np.flatnonzero(q_in)
        rows.append(sel)
        cols.append(idx[qy_c[sel], qx_c[sel]])
        vals.append(np.full(len(sel), -1.0))
    A = sparse.csr_matrix((np.concatenate(vals + [diag]),
                           (np.concatenate(rows + [np.arange(n)]), np.concatenate(cols + [np.arange(n)]))),
                          shape=(n, n))
    O = out.reshape(h, w, chans)
    lu = splu(A.tocsc())
    for c in range(chans):
        x = lu.solve(rhs[:, c])
        if np.abs(A @ x - rhs[:, c]).max() > max_residual:
            x, _, _ = conjugate_gradient(A, rhs[:, c], x0=x, rtol=0.0, atol=atol)
        O[ys, xs, c] = x
    return out


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

@dataclass
class CompositeInfo:
    overlap_pixels: int = 0
    cut_cost: float = 0.0
    blended: bool = False


def composite_step(accumulated: TextureMap, target: TextureMap, blend: bool = True,
                   info: CompositeInfo | None = None) -> TextureMap:
    """Add a warped view onto the accumulated texture.

    Brightness matching, then a seam cut in the overlap, then Poisson
    blending of the pixels the target contributes.
    """
    if accumulated.shape != target.shape:
        raise ValueError("texture maps have different resolutions")
    info = info if info is not None else CompositeInfo()
    if not accumulated.observed.any():
        out = target.copy()
        out.grid = accumulated.grid if accumulated.grid is not None else target.grid
        out.domain = accumulated.domain if accumulated.domain is not None else target.domain
        return out
    overlap = accumulated.observed & target.observed
    info.overlap_pixels = int(overlap.sum())
    a_only = accumulated.observed & ~overlap
    b_only = target.observed & ~overlap
    out = accumulated.copy()
    if not overlap.any():
        out.raster[b_only] = target.raster[b_only]
        out.provenance[b_only] = target.provenance[b_only]
        out.observed |= target.observed
        return out
    tgt = illumination_adjust(accumulated, target)
    labels, cost = graphcut_seam(accumulated.raster, tgt.raster, overlap, a_only, b_only)
    info.cut_cost = cost
    take = b_only | (overlap & labels)
    if blend and take.any():
        known = accumulated.observed & ~take
        fp = ndimage.generate_binary_structure(2, 1)
        if (known & ndimage.binary_dilation(take, fp)).any():
            out.raster = poisson_blend(accumulated.raster, tgt.raster, take, known)
            info.blended = True
        else:
            out.raster[take] = tgt.raster[take]
    else:
        out.raster[take] = tgt.raster[take]
    out.provenance[take] = target.provenance[take]
    out.observed |= target.observed
    return out


def overwrite_composite(accumulated: TextureMap, target: TextureMap) -> TextureMap:
    """Naive compositing: the target's observed pixels replace the accumulated ones."""
    out = accumulated.copy()
    m = target.observed
    out.raster[m] = target.raster[m]
    out.provenance[m] = target.provenance[m]
    out.observed |= m
    return out
