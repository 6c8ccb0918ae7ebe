"""Assembly of the discrete operators and load vectors.

Conventions: with ``B[i, j] = int q_i div(phi_j)`` the Galerkin system reads

    (A + C(u)) u - B^T p = f_load - <p_D, v.n>_{Gamma_p}
               -B u      = -g_load

which is symmetric.  All matrices are returned as ``scipy.sparse.csr_matrix``
over the full (unconstrained) dof range; essential conditions are handled
by the callers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp

from .fespace import DG, RT, FeFunction, FeSpace
from .mesh import GAMMA_P, INTERIOR
from .quadrature import edge_rule


class AssemblyError(ValueError):
    pass


@dataclass
class ModelParams:
    """Material data of the Darcy-Forchheimer model.

    ``kappa`` is a positive scalar, a symmetric 2x2 array, or a callable
    ``kappa(x)`` returning either shape ``x.shape[:-1]`` (scalar field) or
    ``x.shape[:-1] + (2, 2)`` (tensor field).
    """

    kappa: float | np.ndarray | Callable = 1.0
    F: float = 1.0
    r: float = 3.0
    eps_reg: float = 1e-10

    def __post_init__(self):
        if self.F < 0:
            raise ValueError("Forchheimer coefficient must be nonnegative")
        if self.r < 2:
            raise ValueError("Forchheimer index must satisfy r >= 2")
        if not callable(self.kappa):
            k = np.asarray(self.kappa, dtype=float)
            if k.shape not in ((), (2, 2)):
                raise ValueError("constant kappa must be a scalar or a 2x2 array")

    def with_(self, **changes) -> "ModelParams":
        d = dict(kappa=self.kappa, F=self.F, r=self.r, eps_reg=self.eps_reg)
        d.update(changes)
        return ModelParams(**d)

    @property
    def is_scalar(self) -> bool:
        return not callable(self.kappa) and np.ndim(self.kappa) == 0

    def kappa_tensor(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = self.kappa(x) if callable(self.kappa) else np.asarray(self.kappa, dtype=float)
        k = np.asarray(k, dtype=float)
        if k.ndim >= 2 and k.shape[-2:] == (2, 2) and k.shape[:-2] in ((), x.shape[:-1]):
            return np.broadcast_to(k, x.shape[:-1] + (2, 2))
        return np.broadcast_to(k, x.shape[:-1])[..., None, None] * np.eye(2)

    def kappa_inverse(self, x) -> np.ndarray:
        """``kappa(x)^{-1}`` as tensors; raises if kappa is not SPD."""
        K = self.kappa_tensor(x)
        lam = np.linalg.eigvalsh(0.5 * (K + np.swapaxes(K, -1, -2)))
        asym = np.abs(K - np.swapaxes(K, -1, -2)).max(axis=(-1, -2))
        bad = (lam[..., 0] <= 0) | (asym > 1e-12 * np.abs(K).max(axis=(-1, -2)))
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            cell = f"cell {idx[0]}" if bad.ndim >= 2 else f"point {idx[0]}"
            raise AssemblyError(f"kappa is not symmetric positive definite in {cell}")
        return np.linalg.inv(K)

    def kappa_min(self, x) -> np.ndarray:
        return np.linalg.eigvalsh(self.kappa_tensor(x))[..., 0]

    def kappa_max(self, x) -> np.ndarray:
        return np.linalg.eigvalsh(self.kappa_tensor(x))[..., -1]


def _qdeg_bilinear(k):
    return 2 * k + 2


def _qdeg_nonlinear(k):
    return 2 * k + 4


def _scatter(row_dofs, col_dofs, local, shape) -> sp.csr_matrix:
    nc, nr = row_dofs.shape
    ncol = col_dofs.shape[1]
    rows = np.repeat(row_dofs, ncol, axis=1).ravel()
    cols = np.tile(col_dofs, (1, nr)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()


def _scatter_vec(dofs, local, n) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=n)


def _field_at(field, points, shape):
    """Evaluate a scalar/vector coefficient given as constant, array or callable."""
    if callable(field):
        return np.asarray(field(points), dtype=float)
    return np.broadcast_to(np.asarray(field, dtype=float), shape)


def _require(space, kind):
    if space.kind != kind:
        raise ValueError(f"expected a {kind} space, got {space.kind}")


# -- RT blocks -------------------------------------------------------------------

def weighted_rt_mass(V: FeSpace, weight, degree: int, div_weight=None) -> sp.csr_matrix:
    """``int W phi_j . phi_i (+ int w_div div phi_j div phi_i)``.

    ``weight`` and ``div_weight`` are arrays at the quadrature points of
    ``V.quadrature(degree)``: scalar ``(nc, nq)`` or tensor ``(nc, nq, 2, 2)``.
    """
    _require(V, RT)
    q = V.quadrature(degree)
    phi = V.basis_values(q.ref_points)
    W = np.asarray(weight, dtype=float)
    if W.ndim == 4:
        Wphi = np.einsum("cqij,cbqj->cbqi", W, phi)
    else:
        Wphi = np.broadcast_to(W, q.weights.shape)[:, None, :, None] * phi
    local = np.einsum("cq,caqi,cbqi->cab", q.weights, phi, Wphi)
    if div_weight is not None:
        d = V.basis_divergences(q.ref_points)
        wd = np.broadcast_to(np.asarray(div_weight, dtype=float), q.weights.shape)
        local += np.einsum("cq,caq,cbq->cab", q.weights * wd, d, d)
    return _scatter(V.cell_dofs, V.cell_dofs, local, (V.n_dofs, V.n_dofs))


def assemble_mass(space: FeSpace, weight=None, degree: int | None = None) -> sp.csr_matrix:
    """L2 mass matrix, optionally weighted by a scalar field."""
    k = space.degree
    if degree is None:
        degree = _qdeg_bilinear(k) if weight is None else _qdeg_nonlinear(k)
    q = space.quadrature(degree)
    w = np.ones_like(q.weights) if weight is None else _field_at(weight, q.points, q.weights.shape)
    if space.kind == RT:
        return weighted_rt_mass(space, w, degree)
    phi = space.element.values(q.ref_points)
    local = np.einsum("cq,aq,bq->cab", q.weights * w, phi, phi)
    return _scatter(space.cell_dofs, space.cell_dofs, local, (space.n_dofs, space.n_dofs))


def assemble_a(params: ModelParams, V: FeSpace) -> sp.csr_matrix:
    """``a(u, v) = int kappa^{-1} u . v``."""
    _require(V, RT)
    deg = _qdeg_bilinear(V.degree) if params.is_scalar else _qdeg_nonlinear(V.degree)
    q = V.quadrature(deg)
    return weighted_rt_mass(V, params.kappa_inverse(q.points), deg)


def assemble_b(V: FeSpace, Q: FeSpace) -> sp.csr_matrix:
    """``B[i, j] = int q_i div(phi_j)``, shape ``(Q.n_dofs, V.n_dofs)``."""
    _require(V, RT)
    _require(Q, DG)
    if V.mesh is not Q.mesh:
        raise ValueError("spaces live on different meshes")
    q = V.quadrature(2 * max(V.degree, Q.degree) + 1)
    d = V.basis_divergences(q.ref_points)
    psi = Q.element.values(q.ref_points)
    local = np.einsum("cq,aq,cbq->cab", q.weights, psi, d)
    return _scatter(Q.cell_dofs, V.cell_dofs, local, (Q.n_dofs, V.n_dofs))


def _velocity_at_quadrature(u: FeFunction, degree):
    q = u.space.quadrature(degree)
    return q, u.values(q.ref_points)


def assemble_c_residual(u: FeFunction, params: ModelParams, V: FeSpace | None = None) -> np.ndarray:
    """Vector ``c(u; u, phi_i) = int F |u|^{r-2} u . phi_i``."""
    V = V or u.space
    _require(V, RT)
    if params.F == 0:
        return np.zeros(V.n_dofs)
    q, uv = _velocity_at_quadrature(u, _qdeg_nonlinear(V.degree))
    mag = np.linalg.norm(uv, axis=-1)
    flux = params.F * mag ** (params.r - 2)
    local = np.einsum("cq,cq,cqi,cbqi->cb", q.weights, flux, uv, V.basis_values(q.ref_points))
    return _scatter_vec(V.cell_dofs, local, V.n_dofs)


def forchheimer_weight(uv: np.ndarray, params: ModelParams, full: bool = True) -> np.ndarray:
    """Tangent weight of ``F |u|^{r-2} u`` at velocity samples ``uv (..., 2)``.

    ``full`` returns the tensor ``F|u|^{r-2} I + F(r-2)|u|^{r-4} u (x) u``;
    otherwise the isotropic scalar ``F |u|^{r-2}``.  The magnitude is
    floored at ``eps_reg`` so the weight stays finite at ``u = 0``.
    """
    r, F = params.r, params.F
    mag = np.maximum(np.linalg.norm(uv, axis=-1), params.eps_reg)
    iso = F * mag ** (r - 2)
    if not full:
        return iso
    outer = np.einsum("...i,...j->...ij", uv, uv)
    return iso[..., None, None] * np.eye(2) + (F * (r - 2) * mag ** (r - 4))[..., None, None] * outer


def assemble_newton_hessian(u_m: FeFunction, params: ModelParams, V: FeSpace | None = None) -> sp.csr_matrix:
    """Derivative of :func:`assemble_c_residual` at ``u_m``."""
    V = V or u_m.space
    _require(V, RT)
    deg = _qdeg_nonlinear(V.degree)
    q, uv = _velocity_at_quadrature(u_m, deg)
    return weighted_rt_mass(V, forchheimer_weight(uv, params), deg)


def assemble_hdiv_riesz(weight, V: FeSpace, mode: str = "intersection",
                        degree: int | None = None) -> sp.csr_matrix:
    """Weighted H(div) Riesz operator.

    ``weight`` is a scalar, a callable ``w(x)`` or an array at the
    quadrature points of ``V.quadrature(degree)`` (scalar or 2x2 tensor).

    * ``"intersection"``: ``(W u, v) + (div u, div v)``
    * ``"scaled"``: ``(w u, v) + (w div u, div v)`` (scalar ``w`` only)
    """
    _require(V, RT)
    degree = degree or _qdeg_nonlinear(V.degree)
    q = V.quadrature(degree)
    if callable(weight):
        W = np.asarray(weight(q.points), dtype=float)
    else:
        W = np.asarray(weight, dtype=float)
        if W.ndim == 0:
            W = np.full(q.weights.shape, float(W))
    if mode == "intersection":
        return weighted_rt_mass(V, W, degree, div_weight=1.0)
    if mode == "scaled":
        if W.ndim == 4:
            raise ValueError("scaled mode needs a scalar weight")
        return weighted_rt_mass(V, W, degree, div_weight=W)
    raise ValueError(f"unknown Riesz mode {mode!r}")


def assemble_rhs(f, g, V: FeSpace, Q: FeSpace, p_D=None) -> tuple[np.ndarray, np.ndarray]:
    """Load vectors ``(int f . phi_i - <p_D, phi_i . n>_{Gamma_p}, int g q_i)``.

    ``f`` maps points ``(..., 2)`` to vectors, ``g`` and ``p_D`` to scalars;
    ``None`` means zero.
    """
    _require(V, RT)
    _require(Q, DG)
    deg = _qdeg_nonlinear(V.degree)
    rhs_u = np.zeros(V.n_dofs)
    rhs_p = np.zeros(Q.n_dofs)
    q = V.quadrature(deg)
    if f is not None:
        fv = _field_at(f, q.points, q.points.shape)
        local = np.einsum("cq,cqi,cbqi->cb", q.weights, fv, V.basis_values(q.ref_points))
        rhs_u += _scatter_vec(V.cell_dofs, local, V.n_dofs)
    if p_D is not None:
        rhs_u -= boundary_flux_load(V, p_D, V.mesh.boundary_facets(GAMMA_P))
    if g is not None:
        gv = _field_at(g, q.points, q.weights.shape)
        local = np.einsum("cq,cq,bq->cb", q.weights, gv, Q.element.values(q.ref_points))
        rhs_p += _scatter_vec(Q.cell_dofs, local, Q.n_dofs)
    return rhs_u, rhs_p


def boundary_flux_load(V: FeSpace, p, facets, degree: int | None = None) -> np.ndarray:
    """``int_{facets} p (phi_i . n) ds`` with the outward normal."""
    mesh = V.mesh
    facets = np.asarray(facets, dtype=np.int64)
    out = np.zeros(V.n_dofs)
    if len(facets) == 0:
        return out
    rule = edge_rule(degree or _qdeg_nonlinear(V.degree))
    t = rule.points[:, 0]
    x = mesh.vertices[mesh.facets[facets]]
    pts = (1 - t)[None, :, None] * x[:, None, 0] + t[None, :, None] * x[:, None, 1]
    cells = mesh.facet_cells[facets, 0]
    nf, nq = len(facets), len(t)
    ref = mesh.map_to_reference(np.repeat(cells, nq), pts.reshape(-1, 2))
    phi_ref = V.element.values(ref).reshape(V.local_dim, nf, nq, 2)
    J = mesh.jacobians[cells]
    det = mesh.det_jacobians[cells]
    phi = np.einsum("fij,bfqj->fbqi", J, phi_ref) / det[:, None, None, None]
    phi *= V.cell_signs[cells][:, :, None, None]
    # outward normal of the single adjacent cell
    j = np.argmax(mesh.cell_facets[cells] == facets[:, None], axis=1)
    n_out = mesh.facet_normals[facets] * mesh.cell_facet_signs[cells, j][:, None]
    pv = np.asarray(p(pts), dtype=float) if callable(p) else np.full((nf, nq), float(p))
    w = rule.weights[None, :] * mesh.facet_lengths[facets][:, None] * pv
    local = np.einsum("fq,fbqi,fi->fb", w, phi, n_out)
    return _scatter_vec(V.cell_dofs[cells], local, V.n_dofs)


# -- DG pressure operators ----------------------------------------------------------

@dataclass
class FacetJumps:
    """Jump traces of DG basis functions on a set of facets.

    ``values[f, a, q]`` is the jump of local basis ``a`` (first the
    ``nl`` functions of cell 0, then those of cell 1) at facet point ``q``;
    on boundary facets only the inner trace is present.
    """

    facets: np.ndarray
    dofs: np.ndarray       # (nf, 2 nl)
    values: np.ndarray     # (nf, 2 nl, nq)
    points: np.ndarray     # (nf, nq, 2)
    weights: np.ndarray    # (nf, nq), includes facet length
    lengths: np.ndarray    # (nf,)
    normals: np.ndarray    # (nf, 2)

    def jump(self, coeffs) -> np.ndarray:
        return np.einsum("fa,faq->fq", np.asarray(coeffs)[self.dofs], self.values)


def facet_jumps(Q: FeSpace, facets=None, degree: int = 4) -> FacetJumps:
    """Jumps over interior and GAMMA_P facets (the default set)."""
    _require(Q, DG)
    mesh = Q.mesh
    if facets is None:
        tags = mesh.facet_tags
        facets = np.flatnonzero((tags == INTERIOR) | (tags == GAMMA_P))
    facets = np.asarray(facets, dtype=np.int64)
    rule = edge_rule(degree)
    t = rule.points[:, 0]
    nf, nq, nl = len(facets), len(t), Q.local_dim
    x = mesh.vertices[mesh.facets[facets]]
    pts = (1 - t)[None, :, None] * x[:, None, 0] + t[None, :, None] * x[:, None, 1]
    c0 = mesh.facet_cells[facets, 0]
    c1 = mesh.facet_cells[facets, 1]
    inner = c1 >= 0
    c1s = np.where(inner, c1, c0)
    vals = np.zeros((nf, 2 * nl, nq))
    for side, (cells, sgn) in enumerate(((c0, 1.0), (c1s, -1.0))):
        ref = mesh.map_to_reference(np.repeat(cells, nq), pts.reshape(-1, 2))
        v = Q.element.values(ref).reshape(nl, nf, nq).transpose(1, 0, 2)
        if side == 1:
            v = v * inner[:, None, None]
        vals[:, side * nl:(side + 1) * nl] = sgn * v
    dofs = np.concatenate([Q.cell_dofs[c0], Q.cell_dofs[c1s]], axis=1)
    L = mesh.facet_lengths[facets]
    return FacetJumps(facets, dofs, vals, pts, rule.weights[None, :] * L[:, None],
                      L, mesh.facet_normals[facets])


def _facet_kappa(params: ModelParams, fj: FacetJumps):
    K = params.kappa_tensor(fj.points)
    return np.einsum("fi,fqij,fj->fq", fj.normals, K, fj.normals)


def _cell_kappa(params: ModelParams, points):
    return params.kappa_tensor(points)


def _as_params(kappa) -> ModelParams:
    return kappa if isinstance(kappa, ModelParams) else ModelParams(kappa=kappa)


def assemble_pressure_laplacian(kappa, Q: FeSpace, penalty: float = 1.0) -> sp.csr_matrix:
    """Facet-penalised weighted Laplacian on DG_k.

    ``sum_K (kappa grad p, grad q)_K + sum_F gamma h_F^{-1} (kappa_n [[p]], [[q]])_F``
    over interior and GAMMA_P facets, with ``kappa_n = n . kappa n``, ``h_F``
    the facet length and ``gamma = penalty``.  ``kappa`` is anything
    accepted by :class:`ModelParams` or a ``ModelParams`` instance.
    """
    _require(Q, DG)
    params = _as_params(kappa)
    n = Q.n_dofs
    A = sp.csr_matrix((n, n))
    k = Q.degree
    if k > 0:
        q = Q.quadrature(_qdeg_nonlinear(k))
        G = Q.basis_gradients(q.ref_points)
        K = _cell_kappa(params, q.points)
        local = np.einsum("cq,caqi,cqij,cbqj->cab", q.weights, G, K, G)
        A = A + _scatter(Q.cell_dofs, Q.cell_dofs, local, (n, n))
    fj = facet_jumps(Q, degree=_qdeg_nonlinear(k))
    w = penalty * fj.weights * _facet_kappa(params, fj) / fj.lengths[:, None]
    local = np.einsum("fq,faq,fbq->fab", w, fj.values, fj.values)
    return (A + _scatter(fj.dofs, fj.dofs, local, (n, n))).tocsr()


def assemble_pressure_slaplacian_linearised(p_ref: FeFunction, params: ModelParams,
                                            Q: FeSpace | None = None, s: float = 1.5,
                                            coefficient=None) -> sp.csr_matrix:
    """Linearisation around ``p_ref`` of the facet-penalised s-Laplacian.

    Cell term ``c[|g|^{s-2} grad p . grad q + (s-2)|g|^{s-4}(g . grad p)(g . grad q)]``
    with ``g = grad p_ref``; facet term ``c (s-1) h_F^{1-s} |[[p_ref]]|^{s-2} [[p]][[q]]``.
    The coefficient ``c`` defaults to ``1/F`` and may also be a callable
    or a per-cell array.  Magnitudes are floored at ``eps_reg``.
    """
    Q = Q or p_ref.space
    _require(Q, DG)
    eps = params.eps_reg
    if coefficient is None:
        coefficient = np.inf if params.F == 0 else 1.0 / params.F
    n = Q.n_dofs
    k = Q.degree
    deg = _qdeg_nonlinear(k)

    def coef_at(points, cells):
        if callable(coefficient):
            return np.asarray(coefficient(points), dtype=float)
        c = np.asarray(coefficient, dtype=float)
        if c.ndim == 1:
            return np.broadcast_to(c[cells][:, None], points.shape[:-1])
        return np.broadcast_to(c, points.shape[:-1])

    A = sp.csr_matrix((n, n))
    if k > 0:
        q = Q.quadrature(deg)
        G = Q.basis_gradients(q.ref_points)
        g = p_ref.gradients(q.ref_points)
        mag = np.maximum(np.linalg.norm(g, axis=-1), eps)
        W = (mag ** (s - 2))[..., None, None] * np.eye(2) \
            + ((s - 2) * mag ** (s - 4))[..., None, None] * np.einsum("cqi,cqj->cqij", g, g)
        c = coef_at(q.points, np.arange(Q.mesh.n_cells))
        local = np.einsum("cq,caqi,cqij,cbqj->cab", q.weights * c, G, W, G)
        A = A + _scatter(Q.cell_dofs, Q.cell_dofs, local, (n, n))
    fj = facet_jumps(Q, degree=deg)
    jump = np.maximum(np.abs(fj.jump(p_ref.coeffs)), eps)
    c = coef_at(fj.points, Q.mesh.facet_cells[fj.facets, 0])
    w = fj.weights * c * (s - 1) * fj.lengths[:, None] ** (1 - s) * jump ** (s - 2)
    local = np.einsum("fq,faq,fbq->fab", w, fj.values, fj.values)
    return (A + _scatter(fj.dofs, fj.dofs, local, (n, n))).tocsr()


def export_matrix(A, path) -> None:
    """Write a sparse operator in MatrixMarket coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))
