"""Mesh warp energy, its conjugate-gradient minimiser and flip repair.

The energy is a sum of squared linear residuals in the vertex offsets:

* alignment: distance of each matched target endpoint to its reference line,
* straightness: projection of each target sub-edge onto its segment normal,
* regularisation: squared offset of every mesh vertex.

Minimising it is a sparse SPD linear system ``A x = b`` with
``A = 2 J^T W J`` and ``b = -2 J^T W e`` for residuals ``J x + e``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ..errors import SolverError
from ..lines import _as_segment
from ..linalg import conjugate_gradient
from .matching import MatchSet
from .mesh import AdaptiveMesh


@dataclass(frozen=True)
class EnergyWeights:
    lambda_a: float = 0.5
    lambda_l: float = 0.5
    lambda_r: float = 0.025

    def __post_init__(self):
        vals = (self.lambda_a, self.lambda_l, self.lambda_r)
        if any(v < 0 for v in vals):
            raise ValueError("energy weights must be non-negative")
        if not any(v > 0 for v in vals):
            raise ValueError("energy weights must not all be zero")


@dataclass
class WarpField:
    offsets: np.ndarray
    breakdown: dict = field(default_factory=dict)
    iterations: int = 0
    damped: int = 0

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(self.offsets)):
            raise SolverError("warp offsets are not finite")


@dataclass
class WarpSystem:
    """Residuals ``J x + e`` with per-row weights and term labels."""

    J: sparse.csr_matrix
    e: np.ndarray
    w: np.ndarray
    term: np.ndarray  # 0 alignment, 1 straightness, 2 regularisation

    @property
    def A(self):
        return 2.0 * (self.J.T @ sparse.diags(self.w) @ self.J).tocsr()

    @property
    def b(self) -> np.ndarray:
        return -2.0 * (self.J.T @ (self.w * self.e))

    @property
    def c(self) -> float:
        return float(self.w @ self.e**2)

    def energy(self, x) -> float:
        r = self.J @ np.ravel(x) + self.e
        return float(self.w @ r**2)

    def gradient(self, x) -> np.ndarray:
        x = np.ravel(x)
        return self.A @ x - self.b


def _target_endpoints(mesh: AdaptiveMesh, t: int):
    chain = mesh.segments[t]
    if chain is None:
        return None
    return chain[0], chain[-1]


def assemble(mesh: AdaptiveMesh, matches: MatchSet, lol1_tar, weights: EnergyWeights) -> WarpSystem:
    n = len(mesh.vertices)
    V = mesh.vertices
    rows, cols, vals, e, w, term = [], [], [], [], [], []

    def row(entries, const, weight, label):
        r = len(e)
        for c, v in entries:
            rows.append(r)
            cols.append(c)
            vals.append(v)
        e.append(const)
        w.append(weight)
        term.append(label)

    if weights.lambda_a > 0:
        for pair in matches.pairs:
            ends = _target_endpoints(mesh, pair[0])
            if ends is None:
                continue
            line = matches.line(pair)
            nr = line.normal
            for vi in ends:
                row([(2 * vi, nr[0]), (2 * vi + 1, nr[1])], float(nr @ (V[vi] - line.p1)),
                    weights.lambda_a, 0)

    if weights.lambda_l > 0:
        for j, seg in enumerate(lol1_tar):
            nj = _as_segment(seg).normal
            for a, b in mesh.segment_edges(j):
                row([(2 * a, nj[0]), (2 * a + 1, nj[1]), (2 * b, -nj[0]), (2 * b + 1, -nj[1])],
                    float(nj @ (V[a] - V[b])), weights.lambda_l, 1)

    if weights.lambda_r > 0:
        for k in range(2 * n):
            row([(k, 1.0)], 0.0, weights.lambda_r, 2)

    J = sparse.csr_matrix((vals, (rows, cols)), shape=(len(e), 2 * n))
    return WarpSystem(J, np.asarray(e, dtype=float), np.asarray(w, dtype=float), np.asarray(term, dtype=int))


def energy(mesh: AdaptiveMesh, matches: MatchSet, lol1_tar, weights: EnergyWeights, offsets) -> dict:
    """Evaluate the three terms directly from the geometry."""
    P = mesh.vertices + np.asarray(offsets, dtype=float).reshape(-1, 2)
    Ea = 0.0
    for pair in matches.pairs:
        ends = _target_endpoints(mesh, pair[0])
        if ends is None:
            continue
        line = matches.line(pair)
        for vi in ends:
            Ea += float(line.normal @ (P[vi] - line.p1)) ** 2
    El = 0.0
    for j, seg in enumerate(lol1_tar):
        nj = _as_segment(seg).normal
        for a, b in mesh.segment_edges(j):
            El += float((P[a] - P[b]) @ nj) ** 2
    Er = float(np.sum((P - mesh.vertices) ** 2))
    out = {"Ea": Ea, "El": El, "Er": Er}
    for name, v in out.items():
        if not math.isfinite(v):
            raise SolverError(f"energy term {name} is not finite")
    out["E"] = weights.lambda_a * Ea + weights.lambda_l * El + weights.lambda_r * Er
    return out


def solve_warp(mesh: AdaptiveMesh, matches: MatchSet, lol1_tar, weights: EnergyWeights = EnergyWeights(),
               rtol: float = 1e-8) -> WarpField:
    n = len(mesh.vertices)
    system = assemble(mesh, matches, lol1_tar, weights)
    for label, name in enumerate(("Ea", "El", "Er")):
        sel = system.term == label
        if not (np.all(np.isfinite(system.e[sel])) and np.all(np.isfinite(system.J[np.flatnonzero(sel)].data))):
            raise SolverError(f"energy term {name} is not finite")
    b = system.b
    if not np.any(b):
        x, its = np.zeros(2 * n), 0
    else:
        x, its, _ = conjugate_gradient(system.A, b, rtol=rtol, maxiter=10 * 2 * n)
    return WarpField(x.reshape(n, 2), energy(mesh, matches, lol1_tar, weights, x), its)


def repair_topology(mesh: AdaptiveMesh, warp: WarpField, max_halvings: int = 20,
                    eps: float = 1e-9) -> WarpField:
    """Damp offsets of vertices in flipped triangles until every area is positive.

    Each round halves the scale of every vertex belonging to a triangle whose
    signed area is at most ``eps``.
    """
    scale = np.ones(len(mesh.vertices))
    moving = np.any(warp.offsets != 0, axis=1)
    for _ in range(max_halvings + 1):
        areas = mesh.signed_areas(mesh.vertices + warp.offsets * scale[:, None])
        bad = areas <= eps
        if not bad.any():
            out = WarpField(warp.offsets * scale[:, None], dict(warp.breakdown), warp.iterations,
                            int(np.count_nonzero(scale < 1)))
            return out
        idx = np.unique(mesh.triangles[bad].ravel())
        idx = idx[moving[idx]]
        if len(idx) == 0:
            break
        scale[idx] *= 0.5
    bad_tris = np.flatnonzero(mesh.signed_areas(mesh.vertices + warp.offsets * scale[:, None]) <= eps)
    raise SolverError(f"{len(bad_tris)} triangles still flipped after {max_halvings} halvings "
                      f"(first: {bad_tris[:5].tolist()})")
