import numpy as np
import pytest

from dfsolve.fespace import (DG, RT, FeFunction, boundary_lifting, dg_space, discrete_gradient,
                             eval, eval_div, interpolate_rt, project_l2, prolongate,
                             restrict_l2, rt_space)
from dfsolve.forms import assemble_b, assemble_mass
from dfsolve.linsolve import kernel_basis
from dfsolve.mesh import GAMMA_U, ancestors, refine_uniform, structured_rectangle
from dfsolve.quadrature import edge_rule

from conftest import UNIT_SQUARE

PI = np.pi


def vortex(x):
    X, Y = x[..., 0], x[..., 1]
    return np.stack([np.cos(PI * X) * np.sin(PI * Y), -np.sin(PI * X) * np.cos(PI * Y)], -1)


@pytest.mark.parametrize("k,nl_rt,nl_dg", [(0, 3, 1), (1, 8, 3)])
def test_local_dimensions(square4, k, nl_rt, nl_dg):
    assert rt_space(square4, k).local_dim == nl_rt
    assert dg_space(square4, k).local_dim == nl_dg


def test_zero_function(square4):
    V = rt_space(square4, 0)
    assert np.all(eval(V.zero(), 3, [0.2, 0.3]) == 0)
    assert eval_div(V.zero(), 3, [0.2, 0.3]) == 0


@pytest.mark.parametrize("k", [0, 1])
def test_basis_unit_flux_single_cell(k):
    m = structured_rectangle(1, 1)
    V = rt_space(m, k)
    rule = edge_rule(6)
    t = rule.points[:, 0]
    for f in range(m.n_facets):
        c = m.facet_cells[f, 0]
        x = m.vertices[m.facets[f]]
        pts = (1 - t)[:, None] * x[0] + t[:, None] * x[1]
        ref = m.map_to_reference(np.full(len(t), c), pts)
        n = m.facet_normals[f]
        L = m.facet_lengths[f]
        for j in range(k + 1):
            coeffs = np.zeros(V.n_dofs)
            dof = f if k == 0 else 2 * f + j
            coeffs[dof] = 1.0
            u = FeFunction(V, coeffs)
            vn = np.array([eval(u, c, r) @ n for r in ref])
            weight = 1.0 if k == 0 else (1 - t if j == 0 else t)
            # the dof is the normal moment against the matching facet function
            assert abs(L * np.sum(rule.weights * vn * weight) - 1.0) < 1e-12


def test_dg1_reproduces_linear(square4):
    Q = dg_space(square4, 1)
    p = project_l2(lambda x: x[..., 0], Q)
    for c in range(square4.n_cells):
        assert abs(eval(p, c, [1 / 3, 1 / 3]) - square4.centroids[c, 0]) < 1e-13


def test_rt0_interpolant_of_position(square4):
    u = interpolate_rt(lambda x: x.copy(), rt_space(square4, 0))
    for c in range(square4.n_cells):
        assert abs(eval_div(u, c, [0.1, 0.7]) - 2.0) < 1e-12
        np.testing.assert_allclose(eval(u, c, [0.25, 0.25]),
                                   square4.map_to_physical(np.array([[0.25, 0.25]]))[c, 0],
                                   atol=1e-13)


def test_eval_errors(square4):
    V = rt_space(square4, 0)
    with pytest.raises(IndexError):
        eval(V.zero(), square4.n_cells, [0.1, 0.1])
    with pytest.raises(ValueError):
        eval_div(dg_space(square4, 0).zero(), 0, [0.1, 0.1])


@pytest.mark.parametrize("k", [0, 1])
def test_kernel_vectors_pointwise_divergence_free(square4, k):
    V, Q = rt_space(square4, k), dg_space(square4, k)
    B = assemble_b(V, Q).toarray()
    Z = kernel_basis(B)
    q = V.quadrature(4)
    for z in Z.T[:5]:
        assert np.abs(FeFunction(V, z).divergences(q.ref_points)).max() < 1e-10


@pytest.mark.parametrize("k", [0, 1])
def test_interpolation_is_projection(square4, k, rng):
    V = rt_space(square4, k)
    u = FeFunction(V, rng.standard_normal(V.n_dofs))

    from dfsolve.fespace import _interpolate_rt, coarse_evaluator
    ident = np.arange(square4.n_cells)
    again = _interpolate_rt(V, coarse_evaluator(u, ident))
    np.testing.assert_allclose(again, u.coeffs, atol=1e-12)


@pytest.mark.parametrize("k", [0, 1])
def test_commuting_diagram(square4, k):
    V, Q = rt_space(square4, k), dg_space(square4, k)

    def v(x):
        X, Y = x[..., 0], x[..., 1]
        return np.stack([X**3 * Y + Y**2, X * Y**2 - X**4], -1)

    def div_v(x):
        X, Y = x[..., 0], x[..., 1]
        return 3 * X**2 * Y + 2 * X * Y

    Pi = interpolate_rt(v, V)
    Pdiv = project_l2(div_v, Q)
    q = Q.quadrature(6)
    diff = Pi.divergences(q.ref_points) - Pdiv.values(q.ref_points)
    assert np.sqrt(np.sum(q.weights * diff**2)) < 1e-10


@pytest.mark.parametrize("k", [0, 1])
def test_fortin_rates(k):
    m = structured_rectangle(2, 2, tagging=UNIT_SQUARE)
    errs, hs = [], []
    for _ in range(4):
        V = rt_space(m, k)
        u = interpolate_rt(vortex, V)
        q = V.quadrature(8)
        e = u.values(q.ref_points) - vortex(q.points)
        errs.append(np.sqrt(np.sum(q.weights * np.sum(e**2, -1))))
        hs.append(m.h)
        m = refine_uniform(m)
    rates = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    assert rates[-1] >= k + 0.9


@pytest.mark.parametrize("k", [0, 1])
def test_normal_continuity(square4, k, rng):
    m = square4
    V = rt_space(m, k)
    u = FeFunction(V, rng.standard_normal(V.n_dofs))
    rule = edge_rule(4)
    t = rule.points[:, 0]
    for f in np.flatnonzero(m.facet_cells[:, 1] >= 0):
        x = m.vertices[m.facets[f]]
        pts = (1 - t)[:, None] * x[0] + t[:, None] * x[1]
        vals = []
        for c in m.facet_cells[f]:
            ref = m.map_to_reference(np.full(len(t), c), pts)
            vals.append(np.array([eval(u, c, r) for r in ref]) @ m.facet_normals[f])
        assert np.abs(vals[0] - vals[1]).max() < 1e-12


@pytest.mark.parametrize("k", [0, 1])
def test_divergence_lies_in_dg(square4, k):
    V, Q = rt_space(square4, k), dg_space(square4, k)
    q = Q.quadrature(5)
    for j in range(0, V.n_dofs, 7):
        c = np.zeros(V.n_dofs)
        c[j] = 1.0
        d = FeFunction(V, c).divergences(q.ref_points)
        # project the divergence values onto DG_k cellwise and compare pointwise
        from dfsolve.fespace import _project_values
        p = FeFunction(Q, _project_values(Q, q, d))
        assert np.abs(p.values(q.ref_points) - d).max() < 1e-12


def test_projection_reproduces_polynomials(square4):
    Q = dg_space(square4, 1)
    p = project_l2(lambda x: 2 * x[..., 0] - 3 * x[..., 1] + 1, Q)
    q = Q.quadrature(4)
    np.testing.assert_allclose(p.values(q.ref_points),
                               2 * q.points[..., 0] - 3 * q.points[..., 1] + 1, atol=1e-13)


def test_projection_cell_averages(square4):
    Q = dg_space(square4, 0)
    p = project_l2(lambda x: np.sin(PI * x[..., 0]), Q, degree=10)
    # independent oracle: average over each cell with a degree-10 rule
    from dfsolve.quadrature import triangle_rule
    r = triangle_rule(10)
    pts = square4.map_to_physical(r.points)
    avg = (np.sin(PI * pts[..., 0]) @ r.weights) / 0.5
    np.testing.assert_allclose(p.coeffs, avg, atol=1e-13)


@pytest.mark.parametrize("k", [0, 1])
def test_projection_orthogonality(square4, k):
    Q = dg_space(square4, k)
    fun = lambda x: np.exp(x[..., 0]) * np.cos(2 * x[..., 1])
    p = project_l2(fun, Q, degree=10)
    q = Q.quadrature(10)
    phi = Q.element.values(q.ref_points)
    res = np.einsum("cq,aq,cq->ca", q.weights, phi, p.values(q.ref_points) - fun(q.points))
    assert np.abs(res).max() < 1e-12


@pytest.mark.parametrize("k", [0, 1])
def test_discrete_gradient_adjoint(square4, k, rng):
    V, Q = rt_space(square4, k), dg_space(square4, k)
    q = FeFunction(Q, rng.standard_normal(Q.n_dofs))
    g = discrete_gradient(q, V)
    M = assemble_mass(V)
    B = assemble_b(V, Q)
    free = V.free_dofs
    lhs = (M @ g.coeffs)[free]
    rhs = -(B.T @ q.coeffs)[free]
    assert np.abs(lhs - rhs).max() < 1e-11


def test_discrete_gradient_of_constant(square4):
    V, Q = rt_space(square4, 0), dg_space(square4, 0)
    g = discrete_gradient(FeFunction(Q, np.full(Q.n_dofs, 3.0)), V)
    M = assemble_mass(V)
    # (grad_h c, v) = 0 for v with zero flux on the whole boundary
    interior = np.flatnonzero(square4.facet_cells[:, 1] >= 0)
    assert np.abs((M @ g.coeffs)[interior]).max() < 1e-12


def test_discrete_gradient_of_projected_x(square4):
    V, Q = rt_space(square4, 0), dg_space(square4, 0)
    q = project_l2(lambda x: x[..., 0], Q)
    g = discrete_gradient(q, V)
    # second assembly path: -(div v, q) by quadrature of basis divergences
    quad = V.quadrature(2)
    div = V.basis_divergences(quad.ref_points)             # (nc, nl, nq)
    loc = -np.einsum("cq,caq,cq->ca", quad.weights, div, q.values(quad.ref_points))
    ref = np.zeros(V.n_dofs)
    np.add.at(ref, V.cell_dofs, loc)
    free = V.free_dofs
    np.testing.assert_allclose((assemble_mass(V) @ g.coeffs)[free], ref[free], atol=1e-12)


@pytest.mark.parametrize("k", [0, 1])
def test_prolongate_restrict_round_trip(k):
    levels = [structured_rectangle(2, 2)]
    levels += [refine_uniform(levels[0])]
    anc = ancestors(levels)
    Q0, Q1 = dg_space(levels[0], k), dg_space(levels[1], k)
    V0, V1 = rt_space(levels[0], k), rt_space(levels[1], k)
    p = project_l2(lambda x: np.sin(x[..., 0]) + x[..., 1] ** 2, Q0)
    np.testing.assert_allclose(restrict_l2(prolongate(p, Q1, anc), Q0, anc).coeffs,
                               p.coeffs, atol=1e-13)
    u = interpolate_rt(vortex, V0)
    uf = prolongate(u, V1, anc)
    q = V1.quadrature(4)
    ref = levels[0].map_to_reference(np.repeat(anc, q.points.shape[1]),
                                     q.points.reshape(-1, 2))
    coarse_vals = np.array([eval(u, c, r) for c, r in
                            zip(np.repeat(anc, q.points.shape[1]), ref)])
    np.testing.assert_allclose(uf.values(q.ref_points).reshape(-1, 2), coarse_vals, atol=1e-12)


def test_boundary_lifting_only_on_gamma_u(square4):
    V = rt_space(square4, 1)
    lift = boundary_lifting(V, vortex)
    gu = square4.boundary_facets(GAMMA_U)
    mask = np.zeros(V.n_dofs, bool)
    mask[2 * gu] = mask[2 * gu + 1] = True
    assert np.all(lift[~mask] == 0)
    assert np.any(lift[mask] != 0)
    assert set(V.constrained_dofs) == set(np.flatnonzero(mask))


def test_function_arithmetic(square4, rng):
    V = rt_space(square4, 0)
    a = FeFunction(V, rng.standard_normal(V.n_dofs))
    b = FeFunction(V, rng.standard_normal(V.n_dofs))
    np.testing.assert_allclose((a + b - b).coeffs, a.coeffs)
    np.testing.assert_allclose((a * 2.0).coeffs, 2 * a.coeffs)
    with pytest.raises(ValueError):
        a + FeFunction(rt_space(square4, 0), b.coeffs)
    with pytest.raises(ValueError):
        FeFunction(V, np.zeros(V.n_dofs + 1))
    assert V.kind == RT and dg_space(square4, 0).kind == DG
