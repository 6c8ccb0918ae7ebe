import numpy as np
import pytest
import scipy.sparse as sp

from dfsolve.fespace import FeFunction, dg_space, interpolate_rt, project_l2, rt_space
from dfsolve.forms import ModelParams, assemble_mass
from dfsolve.norms import (ErrorReport, LevelRecord, convergence_rates, div_residual_inf,
                           norm_h3div, norm_l2, norm_lp, norm_Qhat, norm_V, qhat_blocks,
                           sum_space_norm)

A = np.array([0.6, -0.8])


def constant_field(V):
    return interpolate_rt(lambda x: np.broadcast_to(A, x.shape), V)


def position_field(V):
    return interpolate_rt(lambda x: x.copy(), V)


def spd(rng, n):
    M = rng.standard_normal((n, n))
    return M @ M.T + 0.1 * np.eye(n)


def test_l2_and_lp_of_constant(square4):
    u = constant_field(rt_space(square4, 0))
    assert norm_l2(u) == pytest.approx(1.0, abs=1e-14)
    assert norm_lp(u, 3) == pytest.approx(1.0, abs=1e-14)
    p = project_l2(lambda x: np.full(x.shape[:-1], 2.0), dg_space(square4, 1))
    assert norm_l2(p) == pytest.approx(2.0, abs=1e-14)
    assert norm_l2(p, exact=lambda x: np.full(x.shape[:-1], 2.0)) < 1e-14


def test_l2_of_linear_function(square4):
    p = project_l2(lambda x: x[..., 0], dg_space(square4, 1))
    assert norm_l2(p) == pytest.approx(np.sqrt(1 / 3), abs=1e-14)


def test_h3div_examples(square4):
    V = rt_space(square4, 0)
    assert norm_h3div(constant_field(V)) == pytest.approx(1.0, abs=1e-14)
    x = position_field(V)
    # the position field lies in RT_0, so its interpolant is exact
    assert norm_h3div(x, exact=lambda p: p,
                      exact_div=lambda p: np.full(p.shape[:-1], 2.0)) < 1e-14
    assert norm_h3div(x, power_sum=True) ** 2 == pytest.approx(
        norm_lp(x, 3) ** 3 + 4.0, rel=1e-12)
    # int |x|^3 over the unit square by an independent tensor Gauss rule
    g, w = np.polynomial.legendre.leggauss(40)
    g, w = (g + 1) / 2, w / 2
    X, Y = np.meshgrid(g, g)
    l3 = np.sum(np.outer(w, w) * (X**2 + Y**2) ** 1.5)
    assert abs(norm_lp(x, 3) ** 3 - l3) < 1e-8
    assert norm_h3div(x) == pytest.approx(l3 ** (1 / 3) + 2.0, abs=1e-8)


def test_norm_V_constant_field(square4):
    u = constant_field(rt_space(square4, 0))
    params = ModelParams(kappa=0.25, F=8.0, r=3.0)
    # |a| / sqrt(kappa) + 0 + F^{1/3} |a|
    assert norm_V(u, params) == pytest.approx(2.0 + 2.0, abs=1e-13)


def test_norm_V_tensor_kappa(square4):
    u = constant_field(rt_space(square4, 0))
    K = np.diag([4.0, 1.0])
    expected = np.sqrt(A @ np.linalg.inv(K) @ A)
    assert norm_V(u, ModelParams(kappa=K, F=0.0)) == pytest.approx(expected, abs=1e-13)


def test_sum_space_single_block_is_energy(rng):
    B = spd(rng, 6)
    q = rng.standard_normal(6)
    assert sum_space_norm(q, [B]) == pytest.approx(np.sqrt(q @ B @ q), rel=1e-12)


@pytest.mark.parametrize("m", [2, 3])
def test_sum_space_closed_form(rng, m):
    n = 7
    blocks = [spd(rng, n) for _ in range(m)]
    q = rng.standard_normal(n)
    S = sum(np.linalg.inv(b) for b in blocks)
    expected = np.sqrt(q @ np.linalg.solve(S, q))
    got = sum_space_norm(q, [sp.csr_matrix(b) for b in blocks])
    assert abs(got - expected) < 1e-12 * expected


def test_sum_space_singular_block(rng):
    n = 5
    L = np.zeros((n, n))
    L[:2, :2] = [[1.0, -1.0], [-1.0, 1.0]]
    q = rng.standard_normal(n)
    e = np.array([1.0, -1.0, 0, 0, 0]) / np.sqrt(2)
    # null(L) is free; along e the blocks have weights 1 and 2
    assert sum_space_norm(q, [np.eye(n), L]) == pytest.approx(np.sqrt(2 / 3) * abs(q @ e),
                                                               rel=1e-12)
    assert sum_space_norm(np.zeros(n), [np.eye(n), L]) == 0.0


def test_sum_space_common_null_space(rng):
    n = 5
    L = np.zeros((n, n))
    L[:2, :2] = [[1.0, -1.0], [-1.0, 1.0]]
    q = rng.standard_normal(n)
    assert sum_space_norm(q, [np.zeros((n, n)), L]) < 1e-12
    D = np.diag([1.0, 1.0, 0.0, 0.0, 0.0])
    # common null space spans the last three entries, first two behave as before
    assert sum_space_norm(q, [D, L]) == pytest.approx(
        np.sqrt(2 / 3) * abs(q[:2] @ [1, -1]) / np.sqrt(2), rel=1e-10)


def test_qhat_mass_only_is_l2(square4, rng):
    Q = dg_space(square4, 1)
    q = FeFunction(Q, rng.standard_normal(Q.n_dofs))
    assert sum_space_norm(q.coeffs, [assemble_mass(Q)]) == pytest.approx(norm_l2(q), rel=1e-12)


def test_qhat_bounded_by_l2(square4, rng):
    Q = dg_space(square4, 0)
    q = FeFunction(Q, rng.standard_normal(Q.n_dofs))
    params = ModelParams(kappa=1e-3, F=10.0)
    assert len(qhat_blocks(Q, params)) == 3
    assert len(qhat_blocks(Q, params.with_(F=0.0))) == 2
    assert 0 < norm_Qhat(q, params) <= norm_l2(q) * (1 + 1e-12)
    with pytest.raises(ValueError):
        norm_Qhat(rt_space(square4, 0).zero(), params)


def test_div_residual(square4):
    V, Q = rt_space(square4, 0), dg_space(square4, 0)
    u = position_field(V)
    assert div_residual_inf(u, Q, g=lambda x: np.full(x.shape[:-1], 2.0)) < 1e-12
    assert div_residual_inf(u, Q) == pytest.approx(2.0, abs=1e-12)


def test_convergence_rates():
    h = 2.0 ** -np.arange(1, 5)
    rates = convergence_rates(h, 3 * h**2)
    assert rates[0] is None
    np.testing.assert_allclose(rates[1:], 2.0, atol=1e-12)
    with pytest.raises(ValueError):
        convergence_rates(h, h[:-1])
    with pytest.raises(ValueError):
        convergence_rates(h[:1], h[:1])
    with pytest.raises(ValueError):
        convergence_rates(h[::-1], h)


def test_error_report_round_trip():
    rep = ErrorReport(meta={"degree": 0})
    for h in (0.5, 0.25):
        rep.add(LevelRecord(h=h, n_dofs=10, err_u=h, err_p=h**2))
    assert rep.columns() == ["err_u", "err_p"]
    assert rep.rates()["err_p"][1] == pytest.approx(2.0)
    again = ErrorReport.from_dict(rep.to_dict())
    assert again.levels == rep.levels and again.meta == rep.meta
