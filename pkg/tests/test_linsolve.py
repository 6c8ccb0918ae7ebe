import numpy as np
import pytest
import scipy.sparse as sp

from dfsolve.fespace import FeFunction, dg_space, rt_space
from dfsolve.forms import ModelParams, assemble_b
from dfsolve.harness import ex4_condition
from dfsolve.linsolve import (CANONICAL, INTERSECTION, NONE, SCALED, BlockPreconditioner,
                              BlockSystem, LinearSolverError, PrecondSpec, build_preconditioner,
                              dump_spectrum, estimate_condition_number, kernel_basis,
                              minres_solve, preconditioned_eigenvalues, solve_direct)
from dfsolve.nlsolve import DiscreteProblem, ProblemData

GOLDEN = (1 + np.sqrt(5)) / 2


def tangent_system(mesh, k, params, rng=None):
    V, Q = rt_space(mesh, k), dg_space(mesh, k)
    problem = DiscreteProblem(params, V, Q, ProblemData())
    u = np.zeros(V.n_dofs) if rng is None else rng.standard_normal(V.n_dofs)
    u[V.constrained_dofs] = 0.0
    sys = problem.tangent(u, problem.residual(u, np.zeros(Q.n_dofs)))
    if rng is not None:
        sys.rhs_u = rng.standard_normal(sys.n_u)
        sys.rhs_p = rng.standard_normal(sys.n_p)
    return problem, sys, FeFunction(V, u)


def test_identity_system():
    n = 5
    sys = BlockSystem(sp.identity(n, format="csr"), sp.csr_matrix((0, n)),
                      np.arange(n, dtype=float), np.zeros(0))
    xu, xp = solve_direct(sys)
    np.testing.assert_allclose(xu, np.arange(n))
    assert xp.size == 0


@pytest.mark.parametrize("k", [0, 1])
def test_direct_matches_dense_oracle(square4, rng, k):
    _, sys, _ = tangent_system(square4, k, ModelParams(kappa=1e-4, F=10.0), rng)
    x = np.linalg.solve(sys.matrix().toarray(), sys.rhs())
    xu, xp = solve_direct(sys)
    np.testing.assert_allclose(np.concatenate([xu, xp]), x, rtol=1e-8,
                               atol=1e-10 * np.abs(x).max())
    ru, rp = sys.residual(xu, xp)
    assert np.abs(rp).max() < 1e-12 * max(1.0, np.abs(sys.rhs_p).max())


def test_direct_singular_raises():
    sys = BlockSystem(sp.csr_matrix((2, 2)), sp.csr_matrix((1, 2)), np.ones(2), np.ones(1))
    with pytest.raises(LinearSolverError):
        solve_direct(sys)


@pytest.mark.parametrize("variant", [INTERSECTION, SCALED])
@pytest.mark.parametrize("k", [0, 1])
def test_preconditioner_blocks_spd(square4, rng, variant, k):
    params = ModelParams(kappa=1e-2, F=100.0, r=3.0)
    problem, _, u = tangent_system(square4, k, params, rng)
    P = build_preconditioner(PrecondSpec(variant, u_hat=u), params, problem.V, problem.Q,
                             problem.free)
    R = P.R_u.toarray()
    np.testing.assert_allclose(R, R.T, atol=1e-10 * np.abs(R).max())
    assert np.linalg.eigvalsh(R).min() > 0
    Pp = P.dense_inverse_pressure()
    np.testing.assert_allclose(Pp, Pp.T, atol=1e-8 * np.abs(Pp).max())
    assert np.linalg.eigvalsh(0.5 * (Pp + Pp.T)).min() > 0


def test_none_variant_is_identity(square4, rng):
    problem, sys, _ = tangent_system(square4, 0, ModelParams())
    P = build_preconditioner(PrecondSpec(NONE), problem.params, problem.V, problem.Q,
                             problem.free)
    ru, rp = rng.standard_normal(sys.n_u), rng.standard_normal(sys.n_p)
    zu, zp = P.apply(ru, rp)
    np.testing.assert_array_equal(zu, ru)
    np.testing.assert_array_equal(zp, rp)


def test_spec_rejects_unknown():
    with pytest.raises(ValueError):
        PrecondSpec("jacobi")
    with pytest.raises(ValueError):
        PrecondSpec(pressure_mode="product")


@pytest.mark.parametrize("variant", [INTERSECTION, SCALED])
def test_minres_matches_direct(square4, rng, variant):
    params = ModelParams(kappa=0.1, F=5.0, r=3.0)
    problem, sys, u = tangent_system(square4, 1, params, rng)
    P = build_preconditioner(PrecondSpec(variant, u_hat=u), params, problem.V, problem.Q,
                             problem.free)
    (xu, xp), report = minres_solve(sys, P, tol=1e-12, maxit=2000)
    du, dp = solve_direct(sys)
    assert report.converged

    # MINRES converges in the norm induced by the preconditioner; its stopping
    # test is relative to an estimate of |K| |x|, so allow some slack over tol
    Pp_inv = np.linalg.inv(P.dense_inverse_pressure())

    def pnorm(a, b):
        return np.sqrt(a @ (P.R_u @ a) + b @ Pp_inv @ b)

    assert pnorm(xu - du, xp - dp) < 1e-8 * pnorm(du, dp)


def test_exact_schur_preconditioner_spectrum(square4):
    problem, sys, _ = tangent_system(square4, 0, ModelParams(kappa=1.0, F=0.0))
    A = sys.A.toarray()
    B = sys.B.toarray()
    S = B @ np.linalg.solve(A, B.T)
    P = BlockPreconditioner(PrecondSpec(INTERSECTION, CANONICAL), sys.A,
                            [sp.csr_matrix(S)])
    lam = preconditioned_eigenvalues(sys, P)
    targets = np.array([1.0, GOLDEN, 1 - GOLDEN])
    assert np.abs(lam[:, None] - targets[None, :]).min(axis=1).max() < 1e-8
    cond = estimate_condition_number(sys, P)
    assert abs(cond - GOLDEN**2) < 1e-8


def test_lanczos_agrees_with_dense(square4):
    params = ModelParams(kappa=1e-4, F=1e3, r=3.0)
    problem, sys, _ = tangent_system(square4, 0, params)
    P = build_preconditioner(PrecondSpec(INTERSECTION, CANONICAL, penalty=4.0), params,
                             problem.V, problem.Q, problem.free)
    dense = estimate_condition_number(sys, P)
    lanczos = estimate_condition_number(sys, P, method="lanczos")
    assert abs(dense - lanczos) < 1e-6 * dense
    with pytest.raises(ValueError):
        estimate_condition_number(sys, P, method="power")


def test_spectrum_dump(tmp_path, square4):
    problem, sys, _ = tangent_system(square4, 0, ModelParams())
    P = build_preconditioner(PrecondSpec(SCALED), problem.params, problem.V, problem.Q,
                             problem.free)
    path = tmp_path / "spec.csv"
    estimate_condition_number(sys, P, spectra_path=path)
    lines = path.read_text().splitlines()
    assert lines[0] == "eigenvalue" and len(lines) == sys.n_u + sys.n_p + 1
    dump_spectrum(np.array([2.0, -1.0]), path)
    assert path.read_text().splitlines()[1:] == ["-1.0", "2.0"]


@pytest.mark.parametrize("k", [0, 1])
def test_kernel_basis(square4, k):
    V, Q = rt_space(square4, k), dg_space(square4, k)
    B = assemble_b(V, Q)
    Z = kernel_basis(B)
    assert Z.shape[1] == V.n_dofs - Q.n_dofs
    assert np.abs(B @ Z).max() < 1e-10
    np.testing.assert_allclose(Z.T @ Z, np.eye(Z.shape[1]), atol=1e-10)


def test_unpreconditioned_condition_degrades_with_kappa():
    small = ex4_condition(3.0, 1e-8, 1.0, 4, variant=NONE)
    unit = ex4_condition(3.0, 1.0, 1.0, 4, variant=NONE)
    assert small / unit > 1e3


def test_intersection_robust_on_small_grid():
    vals = [ex4_condition(3.0, kap, 1e3, 4) for kap in (1.0, 1e-4, 1e-8)]
    assert max(vals) / min(vals) < 10
