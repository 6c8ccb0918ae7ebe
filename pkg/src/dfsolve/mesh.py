"""Conforming triangular meshes with tagged boundaries.

Local conventions used throughout the package:

* cell vertices are stored counter-clockwise (positive signed area);
* local facet ``i`` of a cell is the edge opposite local vertex ``i``;
* a facet is stored as ``(lo, hi)`` with ``lo < hi`` and its global unit
  normal is the tangent ``x[hi] - x[lo]`` rotated clockwise;
* ``cell_facet_signs[c, i]`` is ``+1`` when the outward normal of cell ``c``
  on local facet ``i`` agrees with the global normal, ``-1`` otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Union

import numpy as np

INTERIOR = 0
GAMMA_U = 1
GAMMA_P = 2

TAG_NAMES = {GAMMA_U: "GAMMA_U", GAMMA_P: "GAMMA_P"}
TAG_CODES = {name: code for code, name in TAG_NAMES.items()}

HEADER = "forchheimer-mesh v1"


class MeshError(ValueError):
    """Raised for invalid mesh input or inconsistent incidence."""


class MeshParseError(MeshError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D simplicial mesh.

    Build instances with :meth:`from_cells`; the constructor expects all
    derived connectivity to be consistent already.
    """

    vertices: np.ndarray          # (nv, 2)
    cells: np.ndarray             # (nc, 3)
    facets: np.ndarray            # (nf, 2), lo < hi
    cell_facets: np.ndarray       # (nc, 3)
    cell_facet_signs: np.ndarray  # (nc, 3)
    facet_cells: np.ndarray       # (nf, 2), -1 when absent
    facet_tags: np.ndarray        # (nf,), INTERIOR / GAMMA_U / GAMMA_P
    parent: np.ndarray | None = field(default=None)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_cells(cls, vertices, cells, boundary_tags, parent=None):
        """Build connectivity from vertex coordinates and cell triples.

        ``boundary_tags`` is either a mapping ``(i, j) -> tag`` over boundary
        edges (orientation ignored; tags may be ints or ``"GAMMA_U"``-style
        names) or a callable ``tag(midpoint, normal)`` evaluated on every
        boundary facet.
        """
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64, copy=True)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (n, 2)")
        if cells.ndim != 2 or cells.shape[1] != 3 or len(cells) == 0:
            raise MeshError("cells must have shape (m, 3) with m >= 1")
        if cells.min() < 0 or cells.max() >= len(vertices):
            raise MeshError("cell vertex index out of range")

        area2 = _signed_area2(vertices, cells)
        if np.any(area2 == 0):
            raise MeshError(f"degenerate cell {int(np.flatnonzero(area2 == 0)[0])}")
        flip = area2 < 0
        cells[flip] = cells[flip][:, [0, 2, 1]]

        # local facet i is opposite local vertex i
        local = cells[:, [[1, 2], [2, 0], [0, 1]]]          # (nc, 3, 2)
        edges = np.sort(local.reshape(-1, 2), axis=1)
        facets, inverse, counts = np.unique(
            edges, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            raise MeshError("non-manifold facet shared by more than two cells")
        cell_facets = inverse.reshape(-1, 3)
        # outward normal of a CCW cell on edge (a, b) is (b - a) rotated
        # clockwise; the global normal uses (lo, hi)
        signs = np.where(local[:, :, 0] < local[:, :, 1], 1, -1)

        nf = len(facets)
        facet_cells = -np.ones((nf, 2), dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        owner = np.repeat(np.arange(len(cells)), 3)[order]
        fid = inverse[order]
        first = np.ones(len(fid), dtype=bool)
        first[1:] = fid[1:] != fid[:-1]
        facet_cells[fid[first], 0] = owner[first]
        facet_cells[fid[~first], 1] = owner[~first]

        boundary = facet_cells[:, 1] < 0
        tags = np.zeros(nf, dtype=np.int8)
        if callable(boundary_tags):
            mids = vertices[facets].mean(axis=1)
            t = vertices[facets[:, 1]] - vertices[facets[:, 0]]
            normals = np.stack([t[:, 1], -t[:, 0]], axis=1)
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)
            for f in np.flatnonzero(boundary):
                c = facet_cells[f, 0]
                j = int(np.flatnonzero(cell_facets[c] == f)[0])
                tags[f] = _tag_code(boundary_tags(mids[f], signs[c, j] * normals[f]))
        else:
            lookup = {tuple(int(v) for v in e): i for i, e in enumerate(facets)}
            for (i, j), tag in boundary_tags.items():
                key = (min(i, j), max(i, j))
                f = lookup.get(key)
                if f is None:
                    raise MeshError(f"tagged edge {key} is not a mesh facet")
                if not boundary[f]:
                    raise MeshError(f"tagged edge {key} is an interior facet")
                tags[f] = _tag_code(tag)
        missing = boundary & (tags == INTERIOR)
        if np.any(missing):
            f = int(np.flatnonzero(missing)[0])
            raise MeshError(f"boundary facet {tuple(facets[f])} has no tag")

        return cls(vertices, cells, facets, cell_facets, signs.astype(np.int8),
                   facet_cells, tags, parent)

    # -- geometry ---------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @cached_property
    def jacobians(self) -> np.ndarray:
        """Affine map Jacobians ``J[c] = [x1 - x0, x2 - x0]`` (columns)."""
        x = self.vertices[self.cells]
        return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)

    @cached_property
    def det_jacobians(self) -> np.ndarray:
        return _signed_area2(self.vertices, self.cells)

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * self.det_jacobians

    @cached_property
    def cell_diameters(self) -> np.ndarray:
        x = self.vertices[self.cells]
        d = np.stack([np.linalg.norm(x[:, 1] - x[:, 2], axis=1),
                      np.linalg.norm(x[:, 2] - x[:, 0], axis=1),
                      np.linalg.norm(x[:, 0] - x[:, 1], axis=1)], axis=1)
        return d.max(axis=1)

    @property
    def h(self) -> float:
        return float(self.cell_diameters.max())

    @cached_property
    def facet_lengths(self) -> np.ndarray:
        x = self.vertices[self.facets]
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Global unit normals (tangent lo->hi rotated clockwise)."""
        x = self.vertices[self.facets]
        t = x[:, 1] - x[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def boundary_facets(self, tag=None) -> np.ndarray:
        if tag is None:
            return np.flatnonzero(self.facet_tags != INTERIOR)
        return np.flatnonzero(self.facet_tags == _tag_code(tag))

    def interior_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_tags == INTERIOR)

    def map_to_physical(self, ref_points) -> np.ndarray:
        """Map reference points ``(nq, 2)`` into every cell: ``(nc, nq, 2)``."""
        x0 = self.vertices[self.cells[:, 0]]
        return x0[:, None, :] + np.einsum("cij,qj->cqi", self.jacobians, ref_points)

    def map_to_reference(self, cells, points) -> np.ndarray:
        """Inverse affine map of physical ``points`` (n, 2) in ``cells`` (n,)."""
        cells = np.asarray(cells)
        J = self.jacobians[cells]
        x0 = self.vertices[self.cells[cells, 0]]
        return np.linalg.solve(J, (np.asarray(points) - x0)[..., None])[..., 0]

    def check(self) -> None:
        """Validate the invariants; raises :class:`MeshError`."""
        if np.any(self.det_jacobians <= 0):
            raise MeshError("cell with non-positive signed area")
        interior = self.facet_cells[:, 1] >= 0
        if np.any((self.facet_tags == INTERIOR) != interior):
            raise MeshError("interior/boundary tagging mismatch")
        for f in np.flatnonzero(interior):
            c0, c1 = self.facet_cells[f]
            s0 = self.cell_facet_signs[c0][self.cell_facets[c0] == f]
            s1 = self.cell_facet_signs[c1][self.cell_facets[c1] == f]
            if s0[0] != -s1[0]:
                raise MeshError(f"facet {f} orientation signs do not oppose")


def _signed_area2(vertices, cells):
    x = vertices[cells]
    a = x[:, 1] - x[:, 0]
    b = x[:, 2] - x[:, 0]
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def _tag_code(tag) -> int:
    if isinstance(tag, str):
        try:
            return TAG_CODES[tag.upper()]
        except KeyError:
            raise MeshError(f"unknown boundary tag {tag!r}") from None
    tag = int(tag)
    if tag not in TAG_NAMES:
        raise MeshError(f"unknown boundary tag {tag!r}")
    return tag


# -- structured meshes ---------------------------------------------------

SideRule = Union[Mapping[str, object], Callable[[np.ndarray, np.ndarray], object]]


def structured_rectangle(nx: int, ny: int, extent=(0.0, 1.0, 0.0, 1.0),
                         tagging: SideRule | None = None,
                         pattern: str = "diagonal") -> Mesh:
    """Triangulate ``[x0, x1] x [y0, y1]`` with ``nx * ny`` quadrilaterals.

    ``pattern="diagonal"`` splits each quad along its lower-left to
    upper-right diagonal (2 cells per quad); ``"crossed"`` inserts the quad
    centre (4 cells per quad).  ``tagging`` maps side names ``left``,
    ``right``, ``bottom``, ``top`` to boundary tags, or is a callable
    ``(midpoint, outward_normal) -> tag``.  The default tags every side
    ``GAMMA_U`` except the right one.
    """
    if int(nx) < 1 or int(ny) < 1:
        raise ValueError("nx and ny must be >= 1")
    x0, x1, y0, y1 = (float(v) for v in extent)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("extent must have positive side lengths")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    if pattern == "diagonal":
        cells = np.concatenate([np.column_stack([v00, v10, v11]),
                                np.column_stack([v00, v11, v01])])
    elif pattern == "crossed":
        centres = 0.25 * (verts[v00] + verts[v10] + verts[v01] + verts[v11])
        vc = len(verts) + np.arange(nx * ny)
        verts = np.vstack([verts, centres])
        cells = np.concatenate([np.column_stack([v00, v10, vc]),
                                np.column_stack([v10, v11, vc]),
                                np.column_stack([v11, v01, vc]),
                                np.column_stack([v01, v00, vc])])
    else:
        raise ValueError(f"unknown pattern {pattern!r}")

    if tagging is None:
        tagging = {"left": GAMMA_U, "bottom": GAMMA_U, "top": GAMMA_U, "right": GAMMA_P}
    rule = tagging if callable(tagging) else _side_rule(tagging, (x0, x1, y0, y1))
    return Mesh.from_cells(verts, cells, rule)


def _side_rule(sides, extent):
    x0, x1, y0, y1 = extent
    tol = 1e-12 * max(x1 - x0, y1 - y0)
    unknown = set(sides) - {"left", "right", "bottom", "top"}
    if unknown:
        raise ValueError(f"unknown sides {sorted(unknown)}")

    def rule(mid, normal):
        if abs(mid[0] - x0) < tol:
            return sides["left"]
        if abs(mid[0] - x1) < tol:
            return sides["right"]
        if abs(mid[1] - y0) < tol:
            return sides["bottom"]
        return sides["top"]

    return rule


# -- refinement ----------------------------------------------------------

def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle is split into four similar children.

    Children of cell ``c`` are ``c, c + nc, c + 2 nc, c + 3 nc`` and the
    result records ``parent[child] = c``.
    """
    nv, nc = mesh.n_vertices, mesh.n_cells
    mids = mesh.vertices[mesh.facets].mean(axis=1)
    verts = np.vstack([mesh.vertices, mids])
    m = nv + mesh.cell_facets           # midpoint of the edge opposite vertex i
    a, b, c = mesh.cells.T
    ma, mb, mc = m.T
    cells = np.concatenate([
        np.column_stack([a, mc, mb]),
        np.column_stack([b, ma, mc]),
        np.column_stack([c, mb, ma]),
        np.column_stack([ma, mb, mc]),
    ])
    tags = {}
    for f in mesh.boundary_facets():
        lo, hi = mesh.facets[f]
        tags[(lo, nv + f)] = int(mesh.facet_tags[f])
        tags[(nv + f, hi)] = int(mesh.facet_tags[f])
    parent = np.tile(np.arange(nc), 4)
    return Mesh.from_cells(verts, cells, tags, parent=parent)


def ancestors(levels) -> np.ndarray:
    """Map every cell of ``levels[-1]`` to its ancestor in ``levels[0]``.

    ``levels`` is a chain of meshes where each one was produced by
    :func:`refine_uniform` from its predecessor.
    """
    idx = np.arange(levels[-1].n_cells)
    for m in reversed(levels[1:]):
        if m.parent is None:
            raise MeshError("mesh chain is not a refinement sequence")
        idx = m.parent[idx]
    return idx


# -- file I/O ------------------------------------------------------------

def save_mesh(mesh: Mesh, path) -> None:
    """Write the ASCII ``forchheimer-mesh v1`` format."""
    lines = [HEADER, f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"cells {mesh.n_cells}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.cells.tolist()]
    bf = mesh.boundary_facets()
    lines.append(f"boundary {len(bf)}")
    lines += [f"{mesh.facets[f, 0]} {mesh.facets[f, 1]} {TAG_NAMES[int(mesh.facet_tags[f])]}"
              for f in bf]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    """Read the ASCII ``forchheimer-mesh v1`` format.

    Raises :class:`MeshParseError` (with a line number) for malformed input
    and :class:`MeshError` for inconsistent incidence or tagging.
    """
    raw = Path(path).read_text().splitlines()
    lines = [(n + 1, ln.strip()) for n, ln in enumerate(raw)
             if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise MeshParseError("unexpected end of file", len(raw))
        item = lines[pos]
        pos += 1
        return item

    lineno, text = take()
    if text != HEADER:
        raise MeshParseError(f"expected header {HEADER!r}", lineno)

    def section(name):
        lineno, text = take()
        parts = text.split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshParseError(f"expected '{name} <count>'", lineno)
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshParseError(f"bad count {parts[1]!r}", lineno) from None
        if count < 0:
            raise MeshParseError("negative count", lineno)
        return count

    nv = section("vertices")
    verts = np.empty((nv, 2))
    for i in range(nv):
        lineno, text = take()
        parts = text.split()
        try:
            if len(parts) != 2:
                raise ValueError
            verts[i] = [float(p) for p in parts]
        except ValueError:
            raise MeshParseError("expected 'x y'", lineno) from None

    nc = section("cells")
    cells = np.empty((nc, 3), dtype=np.int64)
    for i in range(nc):
        lineno, text = take()
        parts = text.split()
        try:
            if len(parts) != 3:
                raise ValueError
            cells[i] = [int(p) for p in parts]
        except ValueError:
            raise MeshParseError("expected 'i j k'", lineno) from None
        if cells[i].min() < 0 or cells[i].max() >= nv:
            raise MeshParseError("vertex index out of range", lineno)

    nb = section("boundary")
    tags = {}
    for _ in range(nb):
        lineno, text = take()
        parts = text.split()
        try:
            if len(parts) != 3:
                raise ValueError
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise MeshParseError("expected 'i j TAG'", lineno) from None
        if parts[2] not in TAG_CODES:
            raise MeshParseError(f"unknown tag {parts[2]!r}", lineno)
        key = (min(i, j), max(i, j))
        if key in tags:
            raise MeshError(f"line {lineno}: facet {key} tagged twice")
        tags[key] = parts[2]
    if pos != len(lines):
        raise MeshParseError("trailing content", lines[pos][0])
    return Mesh.from_cells(verts, cells, tags)
