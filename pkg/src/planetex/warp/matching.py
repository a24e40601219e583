"""Geometric pairing of target lines with reference lines."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..geometry import PolygonBoundary
from ..lines import LineSegment2D, MatchThresholds, _as_segment, boundary_metrics


@dataclass
class MatchSet:
    """Pairs ``(target index, reference index, reference-is-boundary)``.

    Boundary references index ``boundary_edges``; the others index
    ``ref_segments``.
    """

    pairs: list = field(default_factory=list)
    ref_segments: list = field(default_factory=list)
    boundary_edges: list = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def line(self, pair) -> LineSegment2D:
        _, r, is_boundary = pair
        if is_boundary:
            a, b = self.boundary_edges[r]
            return LineSegment2D(a, b)
        return self.ref_segments[r]


def match_segments(lol1_tar, lol1_ref, boundary: PolygonBoundary | None = None,
                   thresholds: MatchThresholds = MatchThresholds()) -> MatchSet:
    """Pair each target line with at most one reference line.

    A pair is kept when the angle and line distance are within threshold,
    plus the non-overlap distance when the reference is a boundary edge.
    Among qualifying references the smallest line distance wins, then the
    smallest angle.
    """
    tar = [_as_segment(s) for s in lol1_tar]
    ref = [_as_segment(s) for s in lol1_ref]
    edges = [] if boundary is None else [(a.copy(), b.copy()) for a, b in boundary.edges]
    candidates = [(r, False, s) for r, s in enumerate(ref)]
    candidates += [(m, True, e) for m, e in enumerate(edges)]
    out = MatchSet(ref_segments=ref, boundary_edges=edges)
    for t, seg in enumerate(tar):
        best = None
        for r, is_b, line in candidates:
            met = boundary_metrics(seg, line)
            if not met.passes(thresholds, check_overlap=is_b):
                continue
            key = (met.d_line, met.theta, is_b, r)
            if best is None or key < best[0]:
                best = (key, (t, r, is_b))
        if best is not None:
            out.pairs.append(best[1])
    return out
