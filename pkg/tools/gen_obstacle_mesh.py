"""Generate the obstacle mesh shipped in ``src/dfsolve/data``.

The domain is the square ``(0, L)^2`` with the bottom-left corner cut by
an inlet arc centred at the origin and the top-right corner cut by an
outlet arc centred at ``(L, L)``.  Seven circular obstacles are removed.
Outlet facets are tagged GAMMA_P, everything else GAMMA_U.

Requires the ``triangle`` package (not a runtime dependency).

Usage: python tools/gen_obstacle_mesh.py [max_area] [out_path]
"""

import sys
from pathlib import Path

import numpy as np
import triangle

from dfsolve.mesh import GAMMA_P, GAMMA_U, Mesh, save_mesh

L = 0.1
R_IN = 0.02
R_OUT = 0.0132
# (centre x, centre y, radius)
OBSTACLES = [
    (0.040, 0.030, 0.008),
    (0.030, 0.065, 0.010),
    (0.060, 0.055, 0.009),
    (0.075, 0.025, 0.007),
    (0.055, 0.085, 0.006),
    (0.085, 0.060, 0.005),
    (0.015, 0.040, 0.004),
]
INLET, OUTLET, WALL = 1, 2, 3


def _arc(cx, cy, r, t0, t1, n):
    t = np.linspace(t0, t1, n + 1)
    return np.column_stack([cx + r * np.cos(t), cy + r * np.sin(t)])


def outer_boundary(n_arc):
    """Counter-clockwise outer polygon and per-segment markers."""
    inlet = _arc(0.0, 0.0, R_IN, np.pi / 2, 0.0, n_arc)        # (0, R_IN) -> (R_IN, 0)
    outlet = _arc(L, L, R_OUT, -np.pi / 2, -np.pi, n_arc)      # (L, L-R_OUT) -> (L-R_OUT, L)
    pts = [inlet, [[L, 0.0]], outlet, [[0.0, L]]]
    pts = np.vstack(pts)
    marks = ([INLET] * n_arc + [WALL, WALL] + [OUTLET] * n_arc + [WALL, WALL])
    return pts, marks


def build(max_area=4e-6, n_arc=24, n_circle=40):
    pts, marks = outer_boundary(n_arc)
    n0 = len(pts)
    segs = [[i, (i + 1) % n0] for i in range(n0)]
    vertices = [pts]
    holes = []
    off = n0
    for cx, cy, r in OBSTACLES:
        c = _arc(cx, cy, r, 0.0, 2 * np.pi, n_circle)[:-1]
        vertices.append(c)
        segs += [[off + i, off + (i + 1) % n_circle] for i in range(n_circle)]
        marks += [WALL] * n_circle
        holes.append([cx, cy])
        off += n_circle
    geom = dict(vertices=np.vstack(vertices), segments=np.array(segs),
                segment_markers=np.array(marks)[:, None], holes=np.array(holes))
    out = triangle.triangulate(geom, f"pq30a{max_area:.12f}")
    tags = {}
    for (a, b), m in zip(out["segments"], out["segment_markers"].ravel()):
        tags[(int(a), int(b))] = GAMMA_P if m == OUTLET else GAMMA_U
    return Mesh.from_cells(out["vertices"], out["triangles"], tags)


def main(argv):
    max_area = float(argv[1]) if len(argv) > 1 else 4e-6
    path = Path(argv[2]) if len(argv) > 2 else (
        Path(__file__).resolve().parents[1] / "src" / "dfsolve" / "data" / "obstacles.mesh")
    mesh = build(max_area)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, path)
    print(f"{path}: {mesh.n_vertices} vertices, {mesh.n_cells} cells, h = {mesh.h:.3e}")


if __name__ == "__main__":
    main(sys.argv)
