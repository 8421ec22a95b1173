"""Buffered point-to-tract assignment on a toy grid.

Walks through the geometry kernel: polygon membership, point-to-polygon
distance, and the buffered assignment rule under which a point close to a
border belongs to every adjacent tract.

Run:  python demos/01_geometry_and_assignment.py
"""
import numpy as np

from tractcast.geo import (
    PlanarPoint,
    PolygonShape,
    SpatialIndex,
    TractGeometry,
    assign_tracts,
    distance_point_polygon,
    tract_distance,
)


def square_tract(tract_id, x0, y0, size=1000.0):
    ring = [(x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size), (x0, y0)]
    return TractGeometry(tract_id, [PolygonShape(ring)])


tracts = [square_tract("A", 0, 0), square_tract("B", 1000, 0),
          square_tract("C", 0, 1000), square_tract("D", 1000, 1000)]
index = SpatialIndex(tracts)

print("Four 1000-ft tracts in a 2x2 block; buffer = 50 ft\n")

probes = {
    "deep inside A": PlanarPoint(500, 500),
    "on the A|B border": PlanarPoint(1000, 500),
    "30 ft into B (within A's buffer)": PlanarPoint(1030, 500),
    "at the 4-corner point": PlanarPoint(1000, 1000),
    "far outside": PlanarPoint(5000, 5000),
}
for label, p in probes.items():
    assigned = sorted(assign_tracts(p, index, buffer=50.0))
    dists = {t.tract_id: round(tract_distance(p, t), 1) for t in tracts}
    print(f"{label:<36} -> {assigned or ['(none)']}   distances: {dists}")

print("\nBuffered membership is monotone in the buffer radius:")
p = PlanarPoint(1030, 500)
for buffer in (0, 20, 50, 100):
    print(f"  buffer {buffer:>3} ft -> {sorted(assign_tracts(p, index, buffer))}")

print("\nThe spatial index agrees with a brute-force scan on random points:")
rng = np.random.default_rng(0)
pts = rng.uniform(-200, 2200, size=(2000, 2))
mismatches = 0
for x, y in pts:
    q = PlanarPoint(x, y)
    brute = frozenset(t.tract_id for t in tracts if tract_distance(q, t) <= 50.0)
    if assign_tracts(q, index, 50.0) != brute:
        mismatches += 1
print(f"  {len(pts)} random probes, {mismatches} disagreements")

hole = PolygonShape(
    [(0, 0), (100, 0), (100, 100), (0, 100), (0, 0)],
    [[(40, 40), (60, 40), (60, 60), (40, 60), (40, 40)]],
)
inside_hole = PlanarPoint(50, 50)
print("\nHoles count as outside until the buffer reaches the hole boundary:")
print(f"  distance from the hole center to the polygon: "
      f"{distance_point_polygon(inside_hole, hole):.1f} ft")
