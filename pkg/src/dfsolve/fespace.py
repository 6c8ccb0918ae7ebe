"""Raviart-Thomas and discontinuous Lagrange spaces on triangles.

Only degrees k = 0 and k = 1 are provided.  RT degrees of freedom are

* facet moments ``int_e (v . n_e) lambda_a ds`` against the two endpoint
  barycentric functions (k = 1) or the plain flux ``int_e v . n_e ds``
  (k = 0), with ``n_e`` the global facet normal;
* for k = 1, interior moments ``int_K v . J^{-T} e_i dx`` (i = 1, 2), which
  pull back to ``int v_hat . e_i`` on the reference cell.

Basis functions are mapped with the contravariant Piola transform
``v = J v_hat / det J`` so the facet functionals are preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse.linalg as spla

from .mesh import GAMMA_U, Mesh
from .quadrature import edge_rule, triangle_rule

RT = "RaviartThomas"
DG = "DiscontinuousLagrange"

# reference triangle: vertices and outward normals of the facets opposite
# each vertex
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_FACET_VERTS = np.array([[1, 2], [2, 0], [0, 1]])


def _monomials(degree):
    return [(i, d - i) for d in range(degree + 1) for i in range(d, -1, -1)]


def _eval_monomials(monos, pts):
    x, y = pts[:, 0], pts[:, 1]
    return np.array([x**i * y**j for i, j in monos])


def _eval_monomial_grads(monos, pts):
    x, y = pts[:, 0], pts[:, 1]
    dx = np.array([i * x ** max(i - 1, 0) * y**j if i else 0 * x for i, j in monos])
    dy = np.array([j * x**i * y ** max(j - 1, 0) if j else 0 * x for i, j in monos])
    return dx, dy


class RTElement:
    """Reference Raviart-Thomas element of degree 0 or 1."""

    def __init__(self, degree: int):
        if degree not in (0, 1):
            raise ValueError("RT elements are implemented for k = 0, 1")
        self.degree = degree
        self.monos = _monomials(degree + 1)
        nm = len(self.monos)
        idx = {m: i for i, m in enumerate(self.monos)}
        span = []
        # [P_k]^2
        for i, j in _monomials(degree):
            for comp in range(2):
                c = np.zeros((2, nm))
                c[comp, idx[(i, j)]] = 1.0
                span.append(c)
        # x * homogeneous P_k
        for i, j in _monomials(degree):
            if i + j != degree:
                continue
            c = np.zeros((2, nm))
            c[0, idx[(i + 1, j)]] = 1.0
            c[1, idx[(i, j + 1)]] = 1.0
            span.append(c)
        span = np.array(span)
        self.dim = len(span)
        D = np.array([self._dofs(s) for s in span]).T    # D[dof, span]
        self.coeffs = np.linalg.solve(D.T, span.reshape(self.dim, -1)).reshape(span.shape)

    @property
    def n_facet_dofs(self) -> int:
        return self.degree + 1

    def _dofs(self, c):
        vals = []
        rule = edge_rule(6)
        t = rule.points[:, 0]
        for i, (a, b) in enumerate(REF_FACET_VERTS):
            xa, xb = REF_VERTICES[a], REF_VERTICES[b]
            tang = xb - xa
            length = np.linalg.norm(tang)
            n = np.array([tang[1], -tang[0]]) / length
            pts = (1 - t)[:, None] * xa + t[:, None] * xb
            vn = np.einsum("d,dm,mq->q", n, c, _eval_monomials(self.monos, pts))
            if self.degree == 0:
                vals.append(length * rule.weights @ vn)
            else:
                vals.append(length * rule.weights @ (vn * (1 - t)))
                vals.append(length * rule.weights @ (vn * t))
        if self.degree == 1:
            trule = triangle_rule(4)
            v = np.einsum("dm,mq->dq", c, _eval_monomials(self.monos, trule.points))
            vals += list(v @ trule.weights)
        return np.array(vals)

    def values(self, pts) -> np.ndarray:
        """Reference basis values, shape ``(dim, nq, 2)``."""
        m = _eval_monomials(self.monos, np.atleast_2d(pts))
        return np.einsum("bdm,mq->bqd", self.coeffs, m)

    def divergences(self, pts) -> np.ndarray:
        """Reference divergences, shape ``(dim, nq)``."""
        dx, dy = _eval_monomial_grads(self.monos, np.atleast_2d(pts))
        return self.coeffs[:, 0] @ dx + self.coeffs[:, 1] @ dy


class DGElement:
    """Reference P_k element (k = 0: constant, k = 1: barycentric basis)."""

    def __init__(self, degree: int):
        if degree not in (0, 1):
            raise ValueError("DG elements are implemented for k = 0, 1")
        self.degree = degree
        self.dim = 1 if degree == 0 else 3

    def values(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.degree == 0:
            return np.ones((1, len(pts)))
        x, y = pts[:, 0], pts[:, 1]
        return np.array([1 - x - y, x, y])

    def gradients(self, pts) -> np.ndarray:
        """Reference gradients, shape ``(dim, nq, 2)``."""
        nq = len(np.atleast_2d(pts))
        if self.degree == 0:
            return np.zeros((1, nq, 2))
        g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        return np.repeat(g[:, None, :], nq, axis=1)


@lru_cache(maxsize=None)
def _element(kind, degree):
    return RTElement(degree) if kind == RT else DGElement(degree)


@dataclass(eq=False)
class CellQuadrature:
    """Physical quadrature data for a rule mapped into every cell."""

    ref_points: np.ndarray   # (nq, 2)
    points: np.ndarray       # (nc, nq, 2)
    weights: np.ndarray      # (nc, nq), includes |det J|


class FeSpace:
    """Global RT_k or DG_k space on a mesh.

    ``cell_dofs[c]`` lists the global dof of every local basis function of
    cell ``c`` and ``cell_signs[c]`` the orientation sign (all ones for DG).
    """

    def __init__(self, mesh: Mesh, kind: str, degree: int):
        if kind not in (RT, DG):
            raise ValueError(f"unknown space kind {kind!r}")
        self.mesh = mesh
        self.kind = kind
        self.degree = int(degree)
        self.element = _element(kind, self.degree)
        nc = mesh.n_cells
        if kind == DG:
            nl = self.element.dim
            self.cell_dofs = np.arange(nc * nl).reshape(nc, nl)
            self.cell_signs = np.ones((nc, nl))
            self.n_dofs = nc * nl
            self.constrained_dofs = np.zeros(0, dtype=np.int64)
            return

        nf = mesh.n_facets
        signs = mesh.cell_facet_signs.astype(float)
        if self.degree == 0:
            self.cell_dofs = mesh.cell_facets.copy()
            self.cell_signs = signs
            self.n_dofs = nf
            gu = mesh.boundary_facets(GAMMA_U)
            self.constrained_dofs = gu
        else:
            dofs = np.empty((nc, 8), dtype=np.int64)
            sg = np.empty((nc, 8))
            for i, (a, b) in enumerate(REF_FACET_VERTS):
                f = mesh.cell_facets[:, i]
                va = mesh.cells[:, a]
                vb = mesh.cells[:, b]
                a_is_lo = va < vb
                dofs[:, 2 * i] = 2 * f + np.where(a_is_lo, 0, 1)
                dofs[:, 2 * i + 1] = 2 * f + np.where(a_is_lo, 1, 0)
                sg[:, 2 * i] = signs[:, i]
                sg[:, 2 * i + 1] = signs[:, i]
            dofs[:, 6] = 2 * nf + 2 * np.arange(nc)
            dofs[:, 7] = 2 * nf + 2 * np.arange(nc) + 1
            sg[:, 6:] = 1.0
            self.cell_dofs = dofs
            self.cell_signs = sg
            self.n_dofs = 2 * nf + 2 * nc
            gu = mesh.boundary_facets(GAMMA_U)
            self.constrained_dofs = np.sort(np.concatenate([2 * gu, 2 * gu + 1]))

    def __repr__(self):
        return f"FeSpace({self.kind}, k={self.degree}, n_dofs={self.n_dofs})"

    @property
    def local_dim(self) -> int:
        return self.element.dim

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.flatnonzero(mask)

    # -- quadrature and basis data -----------------------------------------

    def quadrature(self, degree: int) -> CellQuadrature:
        rule = triangle_rule(degree)
        pts = self.mesh.map_to_physical(rule.points)
        w = np.abs(self.mesh.det_jacobians)[:, None] * rule.weights[None, :]
        return CellQuadrature(rule.points, pts, w)

    def basis_values(self, ref_points, cells=None) -> np.ndarray:
        """Physical basis values at reference points.

        RT: ``(nc, nloc, nq, 2)`` (Piola-mapped, orientation signs applied).
        DG: ``(nc, nloc, nq)``.
        """
        cells = slice(None) if cells is None else cells
        vals = self.element.values(ref_points)
        if self.kind == DG:
            nc = len(self.mesh.cells[cells])
            return np.broadcast_to(vals, (nc,) + vals.shape)
        J = self.mesh.jacobians[cells]
        det = self.mesh.det_jacobians[cells]
        phys = np.einsum("cij,bqj->cbqi", J, vals) / det[:, None, None, None]
        return phys * self.cell_signs[cells][:, :, None, None]

    def basis_divergences(self, ref_points, cells=None) -> np.ndarray:
        """Physical divergences ``(nc, nloc, nq)`` of the RT basis."""
        if self.kind != RT:
            raise ValueError("divergence is only defined on RT spaces")
        cells = slice(None) if cells is None else cells
        d = self.element.divergences(ref_points)
        det = self.mesh.det_jacobians[cells]
        return d[None] / det[:, None, None] * self.cell_signs[cells][:, :, None]

    def basis_gradients(self, ref_points, cells=None) -> np.ndarray:
        """Physical gradients ``(nc, nloc, nq, 2)`` of the DG basis."""
        if self.kind != DG:
            raise ValueError("gradients are only provided for DG spaces")
        cells = slice(None) if cells is None else cells
        g = self.element.gradients(ref_points)
        Jinv = np.linalg.inv(self.mesh.jacobians[cells])
        return np.einsum("cji,bqj->cbqi", Jinv, g)

    def zero(self) -> "FeFunction":
        return FeFunction(self, np.zeros(self.n_dofs))


def rt_space(mesh, degree) -> FeSpace:
    return FeSpace(mesh, RT, degree)


def dg_space(mesh, degree) -> FeSpace:
    return FeSpace(mesh, DG, degree)


@dataclass(eq=False)
class FeFunction:
    space: FeSpace
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n_dofs,):
            raise ValueError(
                f"coefficient vector has shape {self.coeffs.shape}, "
                f"space has {self.space.n_dofs} dofs")

    def local_coeffs(self, cells=None) -> np.ndarray:
        dofs = self.space.cell_dofs if cells is None else self.space.cell_dofs[cells]
        return self.coeffs[dofs]

    def values(self, ref_points, cells=None) -> np.ndarray:
        """Values at reference points of every (or the given) cell."""
        c = self.local_coeffs(cells)
        phi = self.space.basis_values(ref_points, cells)
        if self.space.kind == RT:
            return np.einsum("cb,cbqd->cqd", c, phi)
        return np.einsum("cb,cbq->cq", c, phi)

    def divergences(self, ref_points, cells=None) -> np.ndarray:
        c = self.local_coeffs(cells)
        return np.einsum("cb,cbq->cq", c, self.space.basis_divergences(ref_points, cells))

    def gradients(self, ref_points, cells=None) -> np.ndarray:
        c = self.local_coeffs(cells)
        return np.einsum("cb,cbqd->cqd", c, self.space.basis_gradients(ref_points, cells))

    def __add__(self, other):
        return FeFunction(self.space, self.coeffs + _coeffs_of(other, self.space))

    def __sub__(self, other):
        return FeFunction(self.space, self.coeffs - _coeffs_of(other, self.space))

    def __mul__(self, scalar):
        return FeFunction(self.space, self.coeffs * float(scalar))

    __rmul__ = __mul__


def _coeffs_of(other, space):
    if other.space is not space:
        raise ValueError("functions live on different spaces")
    return other.coeffs


def _check_cell(f, cell):
    if not 0 <= int(cell) < f.space.mesh.n_cells:
        raise IndexError(f"cell {cell} out of range")


def eval(f: FeFunction, cell: int, ref_point) -> np.ndarray:
    """Value of ``f`` at one reference point of one cell."""
    _check_cell(f, cell)
    v = f.values(np.atleast_2d(ref_point), cells=np.array([int(cell)]))
    return v[0, 0]


def eval_div(f: FeFunction, cell: int, ref_point) -> float:
    if f.space.kind != RT:
        raise ValueError("eval_div requires an RT function")
    _check_cell(f, cell)
    return float(f.divergences(np.atleast_2d(ref_point), cells=np.array([int(cell)]))[0, 0])


# -- interpolation and projection --------------------------------------------

def _facet_points(mesh, rule):
    t = rule.points[:, 0]
    x = mesh.vertices[mesh.facets]
    return (1 - t)[None, :, None] * x[:, None, 0] + t[None, :, None] * x[:, None, 1]


def rt_facet_moments(space: FeSpace, evaluator, facets=None, degree=8) -> np.ndarray:
    """Global facet dof values of a field given by ``evaluator(x, facet_cells)``.

    Returns an array ``(len(facets), k + 1)``.
    """
    mesh = space.mesh
    facets = np.arange(mesh.n_facets) if facets is None else np.asarray(facets)
    rule = edge_rule(degree)
    t = rule.points[:, 0]
    pts = _facet_points(mesh, rule)[facets]              # (nf, nq, 2)
    cells = np.repeat(mesh.facet_cells[facets, 0][:, None], len(t), axis=1)
    v = evaluator(pts.reshape(-1, 2), cells.ravel()).reshape(pts.shape)
    vn = np.einsum("fqd,fd->fq", v, mesh.facet_normals[facets])
    L = mesh.facet_lengths[facets][:, None]
    if space.degree == 0:
        return L * (vn @ rule.weights)[:, None]
    lo = L[:, 0] * (vn @ (rule.weights * (1 - t)))
    hi = L[:, 0] * (vn @ (rule.weights * t))
    return np.column_stack([lo, hi])


def _interpolate_rt(space: FeSpace, evaluator, degree=8) -> np.ndarray:
    mesh = space.mesh
    coeffs = np.zeros(space.n_dofs)
    mom = rt_facet_moments(space, evaluator, degree=degree)
    if space.degree == 0:
        coeffs[:] = mom[:, 0]
        return coeffs
    nf = mesh.n_facets
    coeffs[0:2 * nf:2] = mom[:, 0]
    coeffs[1:2 * nf:2] = mom[:, 1]
    q = space.quadrature(degree)
    cells = np.repeat(np.arange(mesh.n_cells)[:, None], q.points.shape[1], axis=1)
    v = evaluator(q.points.reshape(-1, 2), cells.ravel()).reshape(q.points.shape)
    Jinv_T = np.linalg.inv(mesh.jacobians).transpose(0, 2, 1)
    # int_K v . J^{-T} e_i
    inner = np.einsum("cq,cqd,cdi->ci", q.weights, v, Jinv_T)
    coeffs[2 * nf::2] = inner[:, 0]
    coeffs[2 * nf + 1::2] = inner[:, 1]
    return coeffs


def interpolate_rt(v, space: FeSpace, degree: int = 8) -> FeFunction:
    """Canonical (Fortin) interpolant of a vector field ``v(x) -> (..., 2)``."""
    if space.kind != RT:
        raise ValueError("interpolate_rt needs an RT space")
    return FeFunction(space, _interpolate_rt(space, lambda x, c: v(x), degree))


def project_l2(q, space: FeSpace, degree: int | None = None) -> FeFunction:
    """Orthogonal L2 projection of a scalar field ``q(x) -> (...)`` onto DG_k."""
    if space.kind != DG:
        raise ValueError("project_l2 needs a DG space")
    degree = degree or 2 * space.degree + 6
    quad = space.quadrature(min(degree, 10))
    vals = np.asarray(q(quad.points.reshape(-1, 2)), dtype=float).reshape(quad.weights.shape)
    return FeFunction(space, _project_values(space, quad, vals))


def _project_values(space, quad, vals):
    phi = space.element.values(quad.ref_points)             # (nl, nq)
    M = np.einsum("cq,aq,bq->cab", quad.weights, phi, phi)
    rhs = np.einsum("cq,aq,cq->ca", quad.weights, phi, vals)
    loc = np.linalg.solve(M, rhs[..., None])[..., 0]
    out = np.zeros(space.n_dofs)
    out[space.cell_dofs] = loc
    return out


def discrete_gradient(q: FeFunction, rt: FeSpace) -> FeFunction:
    """Solve ``(grad_h q, v) = -(div v, q)`` for all v in the RT space.

    Test functions range over the RT space with zero flux on GAMMA_U;
    the constrained coefficients of the result are zero.
    """
    from .forms import assemble_b, assemble_mass

    if q.space.kind != DG or rt.kind != RT or q.space.mesh is not rt.mesh:
        raise ValueError("discrete_gradient needs a DG function and an RT space on one mesh")
    if q.space.degree != rt.degree:
        raise ValueError("DG and RT degrees must agree")
    free = rt.free_dofs
    M = assemble_mass(rt)[free][:, free].tocsc()
    rhs = -(assemble_b(rt, q.space).T @ q.coeffs)[free]
    out = np.zeros(rt.n_dofs)
    out[free] = spla.spsolve(M, rhs)
    return FeFunction(rt, out)


# -- transfer between nested meshes -------------------------------------------

def coarse_evaluator(f: FeFunction, ancestor):
    """Evaluator ``(x, fine_cells) -> values`` of a coarse function.

    ``ancestor[c]`` is the coarse cell containing fine cell ``c``.
    """
    mesh = f.space.mesh

    def evaluate(x, fine_cells):
        cc = ancestor[fine_cells]
        ref = mesh.map_to_reference(cc, x)
        phi_ref = f.space.element.values(ref)               # (nl, n[, 2])
        c = f.coeffs[f.space.cell_dofs[cc]] * f.space.cell_signs[cc]
        if f.space.kind == DG:
            return np.einsum("nb,bn->n", c, phi_ref)
        J = mesh.jacobians[cc]
        det = mesh.det_jacobians[cc]
        v = np.einsum("nb,bnd->nd", c, phi_ref)
        return np.einsum("nij,nj->ni", J, v) / det[:, None]

    return evaluate


def prolongate(f: FeFunction, fine: FeSpace, ancestor) -> FeFunction:
    """Exact injection of ``f`` into the space ``fine`` on a nested mesh."""
    ev = coarse_evaluator(f, ancestor)
    if fine.kind == RT:
        return FeFunction(fine, _interpolate_rt(fine, ev))
    quad = fine.quadrature(2 * fine.degree + 2)
    nc, nq = quad.weights.shape
    cells = np.repeat(np.arange(nc)[:, None], nq, axis=1)
    vals = ev(quad.points.reshape(-1, 2), cells.ravel()).reshape(nc, nq)
    return FeFunction(fine, _project_values(fine, quad, vals))


def restrict_l2(f: FeFunction, coarse: FeSpace, ancestor) -> FeFunction:
    """L2 projection of a fine DG function onto ``coarse`` on a nested mesh."""
    if f.space.kind != DG or coarse.kind != DG:
        raise ValueError("restrict_l2 needs DG spaces")
    fine = f.space
    quad = fine.quadrature(f.space.degree + coarse.degree + 2)
    nc, nq = quad.weights.shape
    vals = f.values(quad.ref_points).ravel()
    cc = np.repeat(ancestor, nq)
    ref = coarse.mesh.map_to_reference(cc, quad.points.reshape(-1, 2))
    phi = coarse.element.values(ref)                      # (nl, nc * nq)
    w = quad.weights.ravel()
    nl = coarse.local_dim
    rhs = np.zeros((coarse.mesh.n_cells, nl))
    for a in range(nl):
        np.add.at(rhs[:, a], cc, w * phi[a] * vals)
    cq = coarse.quadrature(2 * coarse.degree + 2)
    cphi = coarse.element.values(cq.ref_points)
    M = np.einsum("cq,aq,bq->cab", cq.weights, cphi, cphi)
    out = np.zeros(coarse.n_dofs)
    out[coarse.cell_dofs] = np.linalg.solve(M, rhs[..., None])[..., 0]
    return FeFunction(coarse, out)


def boundary_lifting(space: FeSpace, flux) -> np.ndarray:
    """Coefficient vector carrying the essential data on GAMMA_U facets.

    ``flux(x)`` returns a vector field whose normal trace is imposed; all
    other coefficients are zero.
    """
    out = np.zeros(space.n_dofs)
    gu = space.mesh.boundary_facets(GAMMA_U)
    if flux is None or len(gu) == 0:
        return out
    mom = rt_facet_moments(space, lambda x, c: flux(x), facets=gu)
    if space.degree == 0:
        out[gu] = mom[:, 0]
    else:
        out[2 * gu] = mom[:, 0]
        out[2 * gu + 1] = mom[:, 1]
    return out
