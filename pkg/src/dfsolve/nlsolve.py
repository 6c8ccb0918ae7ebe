"""Newton-Raphson solution of the discrete Darcy-Forchheimer system."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fespace import FeFunction, FeSpace, boundary_lifting
from .forms import (ModelParams, assemble_a, assemble_b, assemble_c_residual,
                    assemble_newton_hessian, assemble_rhs)
from .linsolve import (BlockSystem, LinearSolverError, PrecondSpec, build_preconditioner,
                       minres_solve, solve_direct)

log = logging.getLogger(__name__)

DARCY = "darcy"
ZERO = "zero"
PROVIDED = "provided"


class NewtonError(RuntimeError):
    pass


@dataclass
class ProblemData:
    """Right-hand sides and boundary data; ``None`` entries mean zero.

    ``u_bc`` is a vector field whose normal trace is imposed on GAMMA_U,
    ``p_D`` the pressure on GAMMA_P.
    """

    f: Callable | None = None
    g: Callable | None = None
    u_bc: Callable | None = None
    p_D: Callable | None = None


@dataclass
class NewtonConfig:
    tol_abs: float = 1e-8
    tol_rel: float = 1e-8
    max_iters: int = 25
    damping: float | None = None
    initial_guess: str = DARCY
    linear_solver: str = "direct"
    precond: PrecondSpec | None = None
    krylov_tol: float = 1e-12
    max_halvings: int = 10

    def __post_init__(self):
        if self.tol_abs <= 0 or self.tol_rel <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.damping is not None and not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.initial_guess not in (DARCY, ZERO, PROVIDED):
            raise ValueError(f"unknown initial guess {self.initial_guess!r}")
        if self.linear_solver not in ("direct", "minres"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class NewtonReport:
    iterations: int
    residual_history: list
    converged: bool
    linear_stats: list = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]


class DiscreteProblem:
    """Assembled, state-independent parts of the Galerkin system."""

    def __init__(self, params: ModelParams, V: FeSpace, Q: FeSpace, data: ProblemData):
        if len(V.mesh.boundary_facets("GAMMA_P")) == 0:
            raise ValueError("the pressure boundary GAMMA_P must be nonempty")
        self.params, self.V, self.Q, self.data = params, V, Q, data
        self.free = V.free_dofs
        self.A = assemble_a(params, V).tocsr()
        self.B = assemble_b(V, Q).tocsr()
        self.f_load, self.g_load = assemble_rhs(data.f, data.g, V, Q, p_D=data.p_D)
        self.lift = boundary_lifting(V, data.u_bc)
        self._Bf = self.B[:, self.free]

    def full_velocity(self, u_free) -> np.ndarray:
        u = self.lift.copy()
        u[self.free] = u_free
        return u

    def residual(self, u, p, params=None) -> tuple[np.ndarray, np.ndarray]:
        """``(A u + c(u) - B^T p - f_load)[free]`` and ``-B u + g_load``."""
        params = params or self.params
        ru = self.A @ u + assemble_c_residual(FeFunction(self.V, u), params, self.V) \
            - self.B.T @ p - self.f_load
        rp = -(self.B @ u) + self.g_load
        return ru[self.free], rp

    def tangent(self, u, res, params=None) -> BlockSystem:
        params = params or self.params
        K = self.A
        if params.F > 0:
            K = K + assemble_newton_hessian(FeFunction(self.V, u), params, self.V)
        K = K.tocsr()[self.free][:, self.free]
        return BlockSystem(K, -self._Bf, -res[0], -res[1], self.V, self.Q, self.free)


def _norm(res) -> float:
    return float(np.sqrt(res[0] @ res[0] + res[1] @ res[1]))


def _solve(system, config, params, u_state, problem):
    if config.linear_solver == "direct":
        return solve_direct(system), None
    spec = config.precond or PrecondSpec()
    spec = dataclasses.replace(spec, u_hat=FeFunction(problem.V, u_state))
    P = build_preconditioner(spec, params, problem.V, problem.Q, problem.free)
    return minres_solve(system, P, tol=config.krylov_tol, maxit=5000)


def initial_guess_darcy(params: ModelParams, V: FeSpace, Q: FeSpace, data: ProblemData,
                        problem: DiscreteProblem | None = None) -> tuple[FeFunction, FeFunction]:
    """Solve the linear problem obtained with ``F = 0``."""
    problem = problem or DiscreteProblem(params, V, Q, data)
    u = problem.lift.copy()
    p = np.zeros(Q.n_dofs)
    darcy = params.with_(F=0.0)
    res = problem.residual(u, p, darcy)
    du, dp = solve_direct(problem.tangent(u, res, darcy))
    u[problem.free] += du
    return FeFunction(V, u), FeFunction(Q, p + dp)


def newton_solve(params: ModelParams, V: FeSpace, Q: FeSpace, data: ProblemData,
                 config: NewtonConfig | None = None, initial=None):
    """Newton iteration for the discrete system.

    Returns ``(u_h, p_h, report)``.  Non-convergence is reported through
    ``report.converged``; a singular tangent raises :class:`NewtonError`.
    """
    config = config or NewtonConfig()
    problem = DiscreteProblem(params, V, Q, data)
    if initial is not None:
        u = initial[0].coeffs.copy()
        u[V.constrained_dofs] = problem.lift[V.constrained_dofs]
        p = initial[1].coeffs.copy()
    elif config.initial_guess == DARCY:
        u0, p0 = initial_guess_darcy(params, V, Q, data, problem)
        u, p = u0.coeffs, p0.coeffs
    else:
        u, p = problem.lift.copy(), np.zeros(Q.n_dofs)

    res = problem.residual(u, p)
    history = [_norm(res)]
    target = max(config.tol_abs, config.tol_rel * history[0])
    stats = []
    it = 0
    while history[-1] > target and it < config.max_iters:
        it += 1
        system = problem.tangent(u, res)
        try:
            (du, dp), krylov = _solve(system, config, params, u, problem)
        except LinearSolverError as exc:
            raise NewtonError(f"tangent solve failed at iteration {it}: {exc}") from exc
        stats.append(krylov)
        step = config.damping or 1.0
        for _ in range(config.max_halvings + 1):
            u_new = u.copy()
            u_new[problem.free] += step * du
            p_new = p + step * dp
            res_new = problem.residual(u_new, p_new)
            if config.damping is None or _norm(res_new) < history[-1]:
                break
            step *= 0.5
        u, p, res = u_new, p_new, res_new
        history.append(_norm(res))
        log.debug("newton %d: residual %.3e", it, history[-1])
        if not np.isfinite(history[-1]):
            raise NewtonError(f"non-finite residual at iteration {it}")
    converged = history[-1] <= target
    if not converged:
        log.warning("Newton did not converge in %d iterations (residual %.3e)",
                    it, history[-1])
    report = NewtonReport(it, history, converged, stats)
    return FeFunction(V, u), FeFunction(Q, p), report
