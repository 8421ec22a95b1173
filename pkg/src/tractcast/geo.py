"""Planar geometry kernel: polygon membership, point-to-polygon distance, and
the buffered point-to-tract assignment that every aggregation depends on.

Coordinates are assumed to live in a projected planar CRS (feet by
convention); no reprojection or geodesic math happens here. Membership is
decided by the even-odd rule with boundary points counting as inside, and
buffered membership is implemented as distance-to-polygon <= buffer, which is
equivalent to polygon offsetting for containment queries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GeometryError",
    "PlanarPoint",
    "PolygonShape",
    "TractGeometry",
    "SpatialIndex",
    "ring_area",
    "point_in_polygon",
    "distance_point_polygon",
    "tract_distance",
    "assign_tracts",
    "assign_points",
    "FEET_PER_MILE",
]

# Points closer than this to a boundary segment are treated as boundary
# points (and therefore inside). Units are CRS units, i.e. ~1e-9 ft.
BOUNDARY_EPS = 1e-9

FEET_PER_MILE = 5280.0


class GeometryError(ValueError):
    """A ring or polygon failed validation at load time."""


@dataclass(frozen=True)
class PlanarPoint:
    """A point in projected planar coordinates."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite coordinates ({self.x}, {self.y})")


def _as_ring(points) -> np.ndarray:
    ring = np.asarray(points, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise GeometryError("ring must be a sequence of (x, y) pairs")
    if len(ring) < 4:
        raise GeometryError("ring needs at least 4 points (closed)")
    if not np.all(np.isfinite(ring)):
        raise GeometryError("ring contains non-finite coordinates")
    if ring[0, 0] != ring[-1, 0] or ring[0, 1] != ring[-1, 1]:
        raise GeometryError("ring is not closed (first point != last point)")
    if np.any(np.all(ring[:-1] == ring[1:], axis=1)):
        raise GeometryError("ring repeats consecutive points")
    return ring


def ring_area(ring) -> float:
    """Signed shoelace area of a closed ring (positive for counter-clockwise)."""
    r = np.asarray(ring, dtype=np.float64)
    x0, y0 = r[:-1, 0], r[:-1, 1]
    x1, y1 = r[1:, 0], r[1:, 1]
    return float(0.5 * np.sum(x0 * y1 - x1 * y0))


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segments_touch(p1, p2, p3, p4) -> bool:
    """True if segment p1-p2 shares any point with segment p3-p4."""
    d1 = _orient(*p3, *p4, *p1)
    d2 = _orient(*p3, *p4, *p2)
    d3 = _orient(*p1, *p2, *p3)
    d4 = _orient(*p1, *p2, *p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True

    def on(a, b, c):
        return (
            _orient(*a, *b, *c) == 0
            and min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
        )

    return on(p1, p2, p3) or on(p1, p2, p4) or on(p3, p4, p1) or on(p3, p4, p2)


def _ring_self_intersects(ring: np.ndarray) -> bool:
    pts = ring[:-1]
    n = len(pts)
    for i in range(n):
        a1 = tuple(pts[i])
        a2 = tuple(pts[(i + 1) % n])
        for j in range(i + 1, n):
            # skip adjacent segments, which legitimately share an endpoint
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_touch(a1, a2, tuple(pts[j]), tuple(pts[(j + 1) % n])):
                return True
    return False


class PolygonShape:
    """A simple polygon: one outer ring plus optional hole rings.

    Rings are validated on construction; queries assume a valid shape and
    never raise.
    """

    __slots__ = ("outer", "holes", "area", "bbox", "_seg_a", "_seg_d", "_seg_len2")

    def __init__(self, outer, holes=()):
        self.outer = _as_ring(outer)
        self.holes = tuple(_as_ring(h) for h in holes)
        if _ring_self_intersects(self.outer):
            raise GeometryError("outer ring is self-intersecting")
        area = abs(ring_area(self.outer)) - sum(abs(ring_area(h)) for h in self.holes)
        if area <= 0.0:
            raise GeometryError("polygon has non-positive area")
        self.area = float(area)
        self.bbox = (
            float(self.outer[:, 0].min()),
            float(self.outer[:, 1].min()),
            float(self.outer[:, 0].max()),
            float(self.outer[:, 1].max()),
        )
        # flattened segment soup over all rings, for distance queries
        starts = [self.outer[:-1]] + [h[:-1] for h in self.holes]
        ends = [self.outer[1:]] + [h[1:] for h in self.holes]
        self._seg_a = np.concatenate(starts, axis=0)
        seg_b = np.concatenate(ends, axis=0)
        self._seg_d = seg_b - self._seg_a
        self._seg_len2 = np.maximum(np.sum(self._seg_d**2, axis=1), 1e-300)

    def rings(self):
        yield self.outer
        yield from self.holes


def _crossings_odd(px: float, py: float, ring: np.ndarray) -> bool:
    """Even-odd ray test: True if a rightward ray from p crosses an odd
    number of ring edges. Half-open vertex rule avoids double counting."""
    x0, y0 = ring[:-1, 0], ring[:-1, 1]
    x1, y1 = ring[1:, 0], ring[1:, 1]
    straddle = (y0 > py) != (y1 > py)
    if not np.any(straddle):
        return False
    x0s, y0s, x1s, y1s = x0[straddle], y0[straddle], x1[straddle], y1[straddle]
    xin = x0s + (py - y0s) * (x1s - x0s) / (y1s - y0s)
    return bool(np.count_nonzero(px < xin) % 2)


def _boundary_distance(px: float, py: float, poly: PolygonShape) -> float:
    a = poly._seg_a
    d = poly._seg_d
    t = ((px - a[:, 0]) * d[:, 0] + (py - a[:, 1]) * d[:, 1]) / poly._seg_len2
    np.clip(t, 0.0, 1.0, out=t)
    dx = px - (a[:, 0] + t * d[:, 0])
    dy = py - (a[:, 1] + t * d[:, 1])
    return float(np.sqrt(np.min(dx * dx + dy * dy)))


def point_in_polygon(p: PlanarPoint, poly: PolygonShape) -> bool:
    """Even-odd membership; boundary points (outer or hole rings) count as
    inside."""
    px, py = p.x, p.y
    x0, y0, x1, y1 = poly.bbox
    if not (x0 - BOUNDARY_EPS <= px <= x1 + BOUNDARY_EPS and y0 - BOUNDARY_EPS <= py <= y1 + BOUNDARY_EPS):
        return False
    if _boundary_distance(px, py, poly) <= BOUNDARY_EPS:
        return True
    if not _crossings_odd(px, py, poly.outer):
        return False
    return not any(_crossings_odd(px, py, h) for h in poly.holes)


def distance_point_polygon(p: PlanarPoint, poly: PolygonShape) -> float:
    """0.0 for points inside (or on) the polygon, else the minimum Euclidean
    distance to any boundary segment (hole boundaries included)."""
    px, py = p.x, p.y
    d = _boundary_distance(px, py, poly)
    if d <= BOUNDARY_EPS:
        return 0.0
    if _crossings_odd(px, py, poly.outer) and not any(
        _crossings_odd(px, py, h) for h in poly.holes
    ):
        return 0.0
    return d


class TractGeometry:
    """A census tract: opaque id, one or more polygon shapes, area in square
    miles. When the source provides an area it must agree with the shoelace
    area within 0.1%."""

    __slots__ = ("tract_id", "shapes", "area_sq_mi", "bbox")

    def __init__(self, tract_id: str, shapes, area_sq_mi: float | None = None,
                 units_per_mile: float = FEET_PER_MILE):
        if not tract_id:
            raise GeometryError("tract_id must be a non-empty string")
        shapes = tuple(shapes)
        if not shapes:
            raise GeometryError(f"tract {tract_id}: no polygon shapes")
        self.tract_id = str(tract_id)
        self.shapes = shapes
        computed = sum(s.area for s in shapes) / (units_per_mile**2)
        if area_sq_mi is None:
            self.area_sq_mi = float(computed)
        else:
            if area_sq_mi <= 0:
                raise GeometryError(f"tract {tract_id}: area must be positive")
            if abs(area_sq_mi - computed) > 1e-3 * computed:
                raise GeometryError(
                    f"tract {tract_id}: declared area {area_sq_mi} differs from "
                    f"geometry area {computed:.6f} sq mi by more than 0.1%"
                )
            self.area_sq_mi = float(area_sq_mi)
        xs0 = min(s.bbox[0] for s in shapes)
        ys0 = min(s.bbox[1] for s in shapes)
        xs1 = max(s.bbox[2] for s in shapes)
        ys1 = max(s.bbox[3] for s in shapes)
        self.bbox = (xs0, ys0, xs1, ys1)

    def __repr__(self):
        return f"TractGeometry({self.tract_id!r}, shapes={len(self.shapes)}, area={self.area_sq_mi:.4f})"


def tract_distance(p: PlanarPoint, tract: TractGeometry) -> float:
    return min(distance_point_polygon(p, s) for s in tract.shapes)


class SpatialIndex:
    """Uniform grid over tract bounding boxes.

    Candidate queries are conservative: any tract whose geometry lies within
    `buffer` of the query point is guaranteed to be among the candidates for
    any buffer (false positives are filtered by the exact distance test).
    The index is immutable after construction; queries are thread-safe.
    """

    def __init__(self, tracts, cell_size: float | None = None):
        self.tracts = tuple(tracts)
        if not self.tracts:
            raise GeometryError("spatial index needs at least one tract")
        boxes = np.array([t.bbox for t in self.tracts], dtype=np.float64)
        self._boxes = boxes
        if cell_size is None:
            spans = np.maximum(boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1])
            cell_size = float(np.median(spans))
            if cell_size <= 0:
                cell_size = 1.0
        self.cell_size = float(cell_size)
        self._origin = (float(boxes[:, 0].min()), float(boxes[:, 1].min()))
        grid: dict[tuple[int, int], list[int]] = {}
        for i, (bx0, by0, bx1, by1) in enumerate(boxes):
            cx0, cy0 = self._cell(bx0, by0)
            cx1, cy1 = self._cell(bx1, by1)
            for cx in range(cx0, cx1 + 1):
                for cy in range(cy0, cy1 + 1):
                    grid.setdefault((cx, cy), []).append(i)
        self._grid = grid

    def _cell(self, x: float, y: float) -> tuple[int, int]:
        ox, oy = self._origin
        return (int(math.floor((x - ox) / self.cell_size)),
                int(math.floor((y - oy) / self.cell_size)))

    def candidates(self, px: float, py: float, buffer: float) -> list[int]:
        """Indices of every tract whose bbox intersects the buffer square
        around (px, py), in ascending tract order."""
        cx0, cy0 = self._cell(px - buffer, py - buffer)
        cx1, cy1 = self._cell(px + buffer, py + buffer)
        seen: set[int] = set()
        for cx in range(cx0, cx1 + 1):
            for cy in range(cy0, cy1 + 1):
                seen.update(self._grid.get((cx, cy), ()))
        out = []
        b = self._boxes
        for i in sorted(seen):
            if (b[i, 0] <= px + buffer and b[i, 2] >= px - buffer
                    and b[i, 1] <= py + buffer and b[i, 3] >= py - buffer):
                out.append(i)
        return out

    def query(self, p: PlanarPoint, buffer: float) -> frozenset[str]:
        if buffer < 0:
            raise ValueError("buffer must be >= 0")
        hits = []
        for i in self.candidates(p.x, p.y, buffer):
            if tract_distance(p, self.tracts[i]) <= buffer:
                hits.append(self.tracts[i].tract_id)
        return frozenset(hits)


def assign_tracts(p: PlanarPoint, tracts: SpatialIndex, buffer: float = 50.0) -> frozenset[str]:
    """All tract ids whose buffered geometry contains p.

    Points within the buffer of several tracts belong to each of them; an
    empty result is a valid outcome for points outside every buffered tract.
    """
    return tracts.query(p, buffer)


def _polygon_distances(pts: np.ndarray, poly: PolygonShape, chunk: int = 4096) -> np.ndarray:
    """Vectorized distance_point_polygon for an (n, 2) array of points."""
    n = len(pts)
    out = np.empty(n, dtype=np.float64)
    a = poly._seg_a
    d = poly._seg_d
    l2 = poly._seg_len2
    for s in range(0, n, chunk):
        block = pts[s:s + chunk]
        px = block[:, 0][:, None]
        py = block[:, 1][:, None]
        t = ((px - a[:, 0]) * d[:, 0] + (py - a[:, 1]) * d[:, 1]) / l2
        np.clip(t, 0.0, 1.0, out=t)
        dx = px - (a[:, 0] + t * d[:, 0])
        dy = py - (a[:, 1] + t * d[:, 1])
        dist = np.sqrt(np.min(dx * dx + dy * dy, axis=1))

        inside = np.zeros(len(block), dtype=bool)
        maybe = dist > BOUNDARY_EPS
        if np.any(maybe):
            bx = block[maybe, 0]
            by = block[maybe, 1]
            parity = _crossings_odd_batch(bx, by, poly.outer)
            for h in poly.holes:
                parity &= ~_crossings_odd_batch(bx, by, h)
            inside[maybe] = parity
        dist[inside | ~maybe] = 0.0
        out[s:s + chunk] = dist
    return out


def _crossings_odd_batch(px: np.ndarray, py: np.ndarray, ring: np.ndarray) -> np.ndarray:
    x0, y0 = ring[:-1, 0], ring[:-1, 1]
    x1, y1 = ring[1:, 0], ring[1:, 1]
    dy = y1 - y0
    safe_dy = np.where(dy == 0.0, 1.0, dy)
    pyc = py[:, None]
    straddle = (y0 > pyc) != (y1 > pyc)
    xin = x0 + (pyc - y0) * (x1 - x0) / safe_dy
    hits = straddle & (px[:, None] < xin)
    return (np.count_nonzero(hits, axis=1) % 2).astype(bool)


def assign_points(points: np.ndarray, tracts, buffer: float = 50.0) -> list[tuple[str, ...]]:
    """Batch tract assignment for an (n, 2) array of points.

    Sweeps tract-by-tract with vectorized distance tests; equivalent to
    calling assign_tracts per point (covered by tests) but much faster for
    large record batches. Returns one sorted id-tuple per point.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    hits: list[list[str]] = [[] for _ in range(len(pts))]
    for tract in tracts:
        x0, y0, x1, y1 = tract.bbox
        cand = np.flatnonzero(
            (pts[:, 0] >= x0 - buffer) & (pts[:, 0] <= x1 + buffer)
            & (pts[:, 1] >= y0 - buffer) & (pts[:, 1] <= y1 + buffer)
        )
        if len(cand) == 0:
            continue
        best = np.full(len(cand), np.inf)
        for shape in tract.shapes:
            np.minimum(best, _polygon_distances(pts[cand], shape), out=best)
        for idx in cand[best <= buffer]:
            hits[idx].append(tract.tract_id)
    return [tuple(sorted(h)) for h in hits]
