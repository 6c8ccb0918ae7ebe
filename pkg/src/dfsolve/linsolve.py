"""Saddle-point linear algebra: direct and MINRES solves, block-diagonal
preconditioners, preconditioned condition numbers and discrete kernels.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespace import FeFunction, FeSpace
from .forms import (ModelParams, _scatter, assemble_a, assemble_hdiv_riesz, assemble_mass,
                    assemble_newton_hessian, assemble_pressure_laplacian,
                    assemble_pressure_slaplacian_linearised, forchheimer_weight)

log = logging.getLogger(__name__)

INTERSECTION = "intersection"
SCALED = "scaled"
NONE = "none"
SUM_OF_INVERSES = "sum"
CANONICAL = "canonical"

DENSE_LIMIT = 20000


class LinearSolverError(RuntimeError):
    pass


@dataclass(eq=False)
class BlockSystem:
    """Symmetric saddle-point system ``[[A, B^T], [B, 0]] (x_u, x_p) = (b_u, b_p)``.

    Only the free velocity dofs (those not on GAMMA_U facets) appear in
    ``A`` and ``B``; ``free`` maps them back to the full RT numbering.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    V: FeSpace | None = None
    Q: FeSpace | None = None
    free: np.ndarray | None = None

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.B.shape[0]

    def matrix(self) -> sp.csc_matrix:
        return sp.bmat([[self.A, self.B.T], [self.B, None]], format="csc")

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_u, self.rhs_p])

    def split(self, x):
        return x[:self.n_u], x[self.n_u:]

    def residual(self, x_u, x_p) -> tuple[np.ndarray, np.ndarray]:
        return (self.rhs_u - self.A @ x_u - self.B.T @ x_p, self.rhs_p - self.B @ x_u)


@dataclass
class PrecondSpec:
    """Choice of block-diagonal preconditioner.

    ``variant`` is ``"intersection"`` (velocity Riesz map of the
    intersection space, pressure map of the sum space), ``"scaled"``
    (H(div) Riesz map scaled by the scalar weight, scaled pressure mass) or
    ``"none"``.  ``pressure_mode`` selects the sum-of-inverses or the
    inverse-of-sum pressure block.  ``u_hat``/``p_hat`` are the
    linearisation state; ``None`` means zero.
    """

    variant: str = INTERSECTION
    pressure_mode: str = SUM_OF_INVERSES
    u_hat: FeFunction | None = None
    p_hat: FeFunction | None = None
    penalty: float = 1.0

    def __post_init__(self):
        if self.variant not in (INTERSECTION, SCALED, NONE):
            raise ValueError(f"unknown preconditioner variant {self.variant!r}")
        if self.pressure_mode not in (SUM_OF_INVERSES, CANONICAL):
            raise ValueError(f"unknown pressure mode {self.pressure_mode!r}")


@dataclass
class KrylovReport:
    iterations: int
    residual: float
    converged: bool
    breakdown: bool = False
    history: list = field(default_factory=list)


def _equilibration(sys: BlockSystem) -> np.ndarray:
    """Symmetric diagonal scaling: ``diag(A)`` and an approximate Schur diagonal."""
    da = np.abs(sys.A.diagonal())
    da = np.where(da > 0, da, 1.0)
    du = 1.0 / np.sqrt(da)
    B = sp.csr_matrix(sys.B)
    ds = np.asarray(B.multiply(B) @ (du**2)).ravel()
    ds = np.where(ds > 0, ds, 1.0)
    return np.concatenate([du, 1.0 / np.sqrt(ds)])


def solve_direct(sys: BlockSystem, refine: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Sparse LU solve of the full saddle-point system.

    The matrix is equilibrated first and the solution is improved by up to
    ``refine`` steps of iterative refinement, which keeps the constraint
    rows accurate when the velocity block is badly scaled.
    """
    K = sys.matrix()
    b = sys.rhs()
    d = _equilibration(sys)
    D = sp.diags(d)
    try:
        lu = spla.splu((D @ K @ D).tocsc())
    except RuntimeError as exc:
        raise LinearSolverError(f"singular saddle-point system: {exc}") from exc
    x = d * lu.solve(d * b)
    for _ in range(refine):
        r = b - K @ x
        if not np.all(np.isfinite(r)):
            break
        x = x + d * lu.solve(d * r)
    if not np.all(np.isfinite(x)):
        raise LinearSolverError("direct solve produced non-finite values")
    return sys.split(x)


# -- preconditioner blocks ----------------------------------------------------------

class _Factor:
    """Cached factorisation of a sparse SPD (or semidefinite) block."""

    def __init__(self, A):
        self.A = sp.csc_matrix(A)
        self._lu = spla.splu(self.A)

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))


@dataclass(eq=False)
class BlockPreconditioner:
    """Assembled preconditioner blocks for one linearisation state.

    ``R_u`` is the velocity Riesz matrix (the preconditioner applies its
    inverse).  The pressure side is described by ``pressure_blocks``:
    the preconditioner applies ``sum_i P_i^{-1}`` (sum mode) or
    ``(sum_i P_i)^{-1}`` (canonical mode).
    """

    spec: PrecondSpec
    R_u: sp.csr_matrix
    pressure_blocks: list
    _u: _Factor | None = None
    _p: list | None = None

    def __post_init__(self):
        if self.spec.variant == NONE:
            return
        self._u = _Factor(self.R_u)
        if self.spec.pressure_mode == CANONICAL:
            self._p = [_Factor(sum(self.pressure_blocks[1:], self.pressure_blocks[0]))]
        else:
            self._p = [_Factor(P) for P in self.pressure_blocks]

    def apply(self, r_u, r_p) -> tuple[np.ndarray, np.ndarray]:
        if self.spec.variant == NONE:
            return np.array(r_u, dtype=float), np.array(r_p, dtype=float)
        if self._u is None:
            raise LinearSolverError("preconditioner blocks are not factorised")
        z_p = sum(f.solve(r_p) for f in self._p)
        return self._u.solve(r_u), z_p

    def as_operator(self, n_u, n_p) -> spla.LinearOperator:
        def mv(x):
            return np.concatenate(self.apply(x[:n_u], x[n_u:]))
        return spla.LinearOperator((n_u + n_p, n_u + n_p), matvec=mv, dtype=float)

    def dense_inverse_pressure(self) -> np.ndarray:
        """Dense matrix of the pressure preconditioner (the map, not its inverse)."""
        n = self.pressure_blocks[0].shape[0]
        if self.spec.variant == NONE:
            return np.eye(n)
        I = np.eye(n)
        return np.column_stack([sum(f.solve(I[:, j]) for f in self._p) for j in range(n)])


def build_preconditioner(spec: PrecondSpec, params: ModelParams, V: FeSpace, Q: FeSpace,
                         free=None) -> BlockPreconditioner:
    """Assemble the preconditioner blocks for ``spec`` on the free velocity dofs."""
    free = V.free_dofs if free is None else free
    n_p = Q.n_dofs
    if spec.variant == NONE:
        return BlockPreconditioner(spec, sp.identity(len(free), format="csr"),
                                   [sp.identity(n_p, format="csr")])
    k = V.degree
    deg = 2 * k + 4
    q = V.quadrature(deg)
    u_hat = spec.u_hat
    if u_hat is None or params.F == 0:
        iso = np.zeros(q.weights.shape)
    else:
        iso = forchheimer_weight(u_hat.values(q.ref_points), params, full=False)

    if spec.variant == INTERSECTION:
        R = assemble_a(params, V)
        if params.F > 0 and u_hat is not None:
            R = R + assemble_newton_hessian(u_hat, params, V)
        R = R + assemble_hdiv_riesz(0.0, V, "intersection")
        blocks = [assemble_mass(Q), assemble_pressure_laplacian(params, Q, spec.penalty)]
        if np.any(iso > 0):
            p_hat = spec.p_hat if spec.p_hat is not None else Q.zero()
            inv = _cell_inverse_weight(iso, q.weights)
            blocks.append(assemble_pressure_slaplacian_linearised(
                p_hat, params, Q, coefficient=inv))
    else:
        wbar = 1.0 / params.kappa_min(q.points) + iso
        R = assemble_hdiv_riesz(wbar, V, "scaled", degree=deg)
        blocks = [_dg_mass_weighted(Q, 1.0 / wbar, deg)]
    R = R.tocsr()[free][:, free]
    return BlockPreconditioner(spec, R, [sp.csr_matrix(b) for b in blocks])


def _cell_inverse_weight(iso, qw):
    """Per-cell inverse of the cell-averaged weight, floored to stay finite."""
    avg = (iso * qw).sum(axis=1) / qw.sum(axis=1)
    floor = 1e-12 * avg.max()
    return 1.0 / np.maximum(avg, floor)


def _dg_mass_weighted(Q, w, degree):
    q = Q.quadrature(degree)
    phi = Q.element.values(q.ref_points)
    local = np.einsum("cq,aq,bq->cab", q.weights * w, phi, phi)
    return _scatter(Q.cell_dofs, Q.cell_dofs, local, (Q.n_dofs, Q.n_dofs))


def apply_preconditioner(precond: BlockPreconditioner, residual) -> tuple[np.ndarray, np.ndarray]:
    r_u, r_p = residual
    return precond.apply(r_u, r_p)


# -- Krylov --------------------------------------------------------------------------

def minres_solve(sys: BlockSystem, precond: BlockPreconditioner | None = None,
                 tol: float = 1e-8, maxit: int = 500) -> tuple[tuple, KrylovReport]:
    """Preconditioned MINRES on the full saddle-point system."""
    K = sys.matrix()
    b = sys.rhs()
    M = None if precond is None else precond.as_operator(sys.n_u, sys.n_p)
    count = [0]

    def cb(xk):
        count[0] += 1

    x, info = spla.minres(K, b, M=M, rtol=tol, maxiter=maxit, callback=cb)
    res = np.linalg.norm(b - K @ x) / max(np.linalg.norm(b), 1e-300)
    report = KrylovReport(count[0], float(res), info == 0, breakdown=info < 0)
    if info < 0:
        log.warning("MINRES breakdown (info=%d)", info)
    return sys.split(x), report


# -- spectra ---------------------------------------------------------------------------

def preconditioned_eigenvalues(sys: BlockSystem, precond: BlockPreconditioner) -> np.ndarray:
    """Eigenvalues of ``P K`` via the symmetric pencil ``K x = lambda P^{-1} x`` (dense)."""
    n = sys.n_u + sys.n_p
    if n > DENSE_LIMIT:
        raise LinearSolverError(f"system of size {n} exceeds the dense limit {DENSE_LIMIT}")
    K = sys.matrix().toarray()
    # P = blockdiag(R_u^{-1}, P_p); use P = L L^T and eig(L^T K L)
    L_u = np.linalg.cholesky(np.linalg.inv(precond.R_u.toarray()))
    P_p = precond.dense_inverse_pressure()
    L_p = np.linalg.cholesky(0.5 * (P_p + P_p.T))
    L = sla.block_diag(L_u, L_p)
    S = L.T @ K @ L
    return np.linalg.eigvalsh(0.5 * (S + S.T))


def estimate_condition_number(sys: BlockSystem, precond: BlockPreconditioner,
                              method: str = "dense", spectra_path=None) -> float:
    """``max |lambda| / min |lambda|`` of the preconditioned operator."""
    if method == "dense":
        lam = preconditioned_eigenvalues(sys, precond)
    elif method == "lanczos":
        lam = _lanczos_extremes(sys, precond)
    else:
        raise ValueError(f"unknown method {method!r}")
    if spectra_path is not None:
        dump_spectrum(lam, spectra_path)
    a = np.abs(lam)
    if a.min() == 0 or not np.all(np.isfinite(a)):
        raise LinearSolverError("singular preconditioned operator")
    return float(a.max() / a.min())


def _lanczos_extremes(sys, precond):
    """Extremal |eigenvalues| of the pencil ``(K, P^{-1})`` by ARPACK."""
    K = sys.matrix()
    n = K.shape[0]
    Pop = precond.as_operator(sys.n_u, sys.n_p)
    Pinv = sp.block_diag([precond.R_u, _pressure_inverse_sparse(precond)], format="csc")
    big = spla.eigsh(K, k=1, M=Pinv, Minv=Pop, which="LM", return_eigenvectors=False)
    lu = spla.splu(sp.csc_matrix(K))
    Kinv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    small = spla.eigsh(K, k=1, M=Pinv, sigma=0.0, OPinv=Kinv, which="LM",
                       return_eigenvectors=False)
    return np.concatenate([big, small])


def _pressure_inverse_sparse(precond):
    if precond.spec.pressure_mode == CANONICAL or len(precond.pressure_blocks) == 1:
        return sum(precond.pressure_blocks[1:], precond.pressure_blocks[0])
    return sp.csr_matrix(np.linalg.inv(precond.dense_inverse_pressure()))


def dump_spectrum(lam, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eigenvalue"])
        for v in np.sort(lam):
            w.writerow([repr(float(v))])


def kernel_basis(B, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of ``null(B)`` as columns (dense SVD)."""
    Bd = B.toarray() if sp.issparse(B) else np.asarray(B)
    Z = sla.null_space(Bd, rcond=tol)
    return Z
