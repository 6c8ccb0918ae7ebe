"""Weighted and unweighted norms, error records and convergence rates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespace import DG, RT, FeFunction, FeSpace, project_l2
from .forms import (ModelParams, assemble_mass, assemble_pressure_laplacian,
                    assemble_pressure_slaplacian_linearised)

NORM_QDEG = 8


def _samples(f: FeFunction, exact=None, exact_div=None, degree=NORM_QDEG):
    """Error values (and divergences for RT) at quadrature points."""
    q = f.space.quadrature(degree)
    v = f.values(q.ref_points)
    if exact is not None:
        v = v - np.asarray(exact(q.points))
    d = None
    if f.space.kind == RT:
        d = f.divergences(q.ref_points)
        if exact_div is not None:
            d = d - np.asarray(exact_div(q.points))
    return q, v, d


def norm_l2(f: FeFunction, exact=None, degree: int = NORM_QDEG) -> float:
    """``||f - exact||_{0}`` for scalar or vector functions."""
    q, v, _ = _samples(f, exact, degree=degree)
    sq = v**2 if f.space.kind == DG else np.sum(v**2, axis=-1)
    return float(np.sqrt(np.sum(q.weights * sq)))


def norm_lp(f: FeFunction, p: float, exact=None, degree: int = NORM_QDEG) -> float:
    q, v, _ = _samples(f, exact, degree=degree)
    mag = np.abs(v) if f.space.kind == DG else np.linalg.norm(v, axis=-1)
    return float(np.sum(q.weights * mag**p) ** (1.0 / p))


def norm_h3div(u: FeFunction, exact=None, exact_div=None, degree: int = NORM_QDEG,
               power_sum: bool = False) -> float:
    """``||e||_{0,3} + ||div e||_0`` for ``e = u - exact``.

    With ``power_sum=True`` returns ``(||e||_{0,3}^3 + ||div e||_0^2)^{1/2}``
    instead; that expression is not homogeneous, so its rates differ.
    """
    q, v, d = _samples(u, exact, exact_div, degree)
    l3 = np.sum(q.weights * np.linalg.norm(v, axis=-1) ** 3)
    div2 = np.sum(q.weights * d**2)
    if power_sum:
        return float(np.sqrt(l3 + div2))
    return float(l3 ** (1 / 3) + np.sqrt(div2))


def norm_V(u: FeFunction, params: ModelParams, exact=None, exact_div=None,
           degree: int = NORM_QDEG) -> float:
    """``||kappa^{-1/2} e||_0 + ||div e||_0 + F^{1/3} ||e||_{0,3}``."""
    q, v, d = _samples(u, exact, exact_div, degree)
    Kinv = params.kappa_inverse(q.points)
    t1 = np.sqrt(np.sum(q.weights * np.einsum("cqi,cqij,cqj->cq", v, Kinv, v)))
    t2 = np.sqrt(np.sum(q.weights * d**2))
    t3 = params.F ** (1 / 3) * np.sum(q.weights * np.linalg.norm(v, axis=-1) ** 3) ** (1 / 3)
    return float(t1 + t2 + t3)


def sum_space_norm(q, blocks) -> float:
    """``inf { sum_i ||q_i||_{B_i}^2 : sum_i q_i = q }^{1/2}`` for PSD blocks.

    The minimiser solves the saddle system with blocks ``B_i`` coupled by
    the constraint; the squared norm equals ``-mu . q`` for its multiplier.
    Components in the common null space of all blocks cost nothing.
    """
    q = np.asarray(q, dtype=float)
    n = len(q)
    if not np.any(q):
        return 0.0
    m = len(blocks)
    I = sp.identity(n, format="csr")
    rows = [[sp.csr_matrix(blocks[i]) if i == j else None for j in range(m)] + [I]
            for i in range(m)]
    rows.append([I] * m + [None])
    K = sp.bmat(rows, format="csc")
    rhs = np.concatenate([np.zeros(m * n), q])
    try:
        with np.errstate(all="raise"):
            x = spla.splu(K).solve(rhs)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError
    except (RuntimeError, FloatingPointError):
        # blocks with a common null space: the system stays consistent and
        # the multiplier is unique, so a least-squares solve is exact
        x = np.linalg.lstsq(K.toarray(), rhs, rcond=None)[0]
    mu = x[m * n:]
    return float(np.sqrt(max(-mu @ q, 0.0)))


def qhat_blocks(Q: FeSpace, params: ModelParams, p_ref: FeFunction | None = None):
    """Mass, weighted Laplacian and linearised 3/2-Laplacian for the pressure norm."""
    blocks = [assemble_mass(Q), assemble_pressure_laplacian(params, Q)]
    if params.F > 0:
        p_ref = p_ref if p_ref is not None else Q.zero()
        blocks.append(assemble_pressure_slaplacian_linearised(p_ref, params, Q))
    return blocks


def norm_Qhat(q: FeFunction, params: ModelParams, p_ref: FeFunction | None = None,
              blocks=None) -> float:
    """Broken weighted pressure norm (sum-space infimum).

    ``p_ref`` is the linearisation state of the 3/2-Laplacian; by default
    the function itself.
    """
    if q.space.kind != DG:
        raise ValueError("norm_Qhat needs a DG function")
    if blocks is None:
        blocks = qhat_blocks(q.space, params, q if p_ref is None else p_ref)
    return sum_space_norm(q.coeffs, blocks)


def div_residual_inf(u: FeFunction, Q: FeSpace, g=None) -> float:
    """``max |P_h(div u - g)|`` over the DG space."""
    if u.space.kind != RT or Q.kind != DG:
        raise ValueError("expected an RT velocity and a DG space")
    q = Q.quadrature(2 * Q.degree + 2)
    phi = Q.element.values(q.ref_points)
    M = np.einsum("cq,aq,bq->cab", q.weights, phi, phi)
    d = u.divergences(q.ref_points)
    rhs = np.einsum("cq,aq,cq->ca", q.weights, phi, d)
    c = np.linalg.solve(M, rhs[..., None])[..., 0]
    if g is not None:
        c = c - project_l2(g, Q).coeffs[Q.cell_dofs]
    # DG_0 coefficients are cell values, DG_1 coefficients vertex values
    return float(np.abs(c).max())


def convergence_rates(h, errors) -> list:
    """``log(e/e~) / log(h/h~)`` per consecutive pair; first entry ``None``."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(h) != len(e):
        raise ValueError("h and errors differ in length")
    if len(h) < 2:
        raise ValueError("at least two levels are needed")
    if np.any(np.diff(h) >= 0):
        raise ValueError("mesh sizes must decrease strictly")
    rates = [None]
    for i in range(1, len(h)):
        rates.append(float(math.log(e[i - 1] / e[i]) / math.log(h[i - 1] / h[i])))
    return rates


@dataclass
class LevelRecord:
    h: float
    n_dofs: int
    err_u: float | None = None
    err_p: float | None = None
    err_u_weighted: float | None = None
    err_p_weighted: float | None = None
    div_residual_inf: float | None = None
    newton_iters: int | None = None
    newton_residual: float | None = None


@dataclass
class ErrorReport:
    """Per-level errors plus rates; error columns absent everywhere are skipped."""

    levels: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    ERROR_FIELDS = ("err_u", "err_p", "err_u_weighted", "err_p_weighted")

    def add(self, record: LevelRecord) -> None:
        self.levels.append(record)

    def columns(self) -> list:
        return [f for f in self.ERROR_FIELDS
                if any(getattr(r, f) is not None for r in self.levels)]

    def rates(self) -> dict:
        if len(self.levels) < 2:
            return {c: [None] * len(self.levels) for c in self.columns()}
        h = [r.h for r in self.levels]
        return {c: convergence_rates(h, [getattr(r, c) for r in self.levels])
                for c in self.columns()}

    def to_dict(self) -> dict:
        return {"meta": self.meta, "levels": [asdict(r) for r in self.levels],
                "rates": self.rates()}

    @classmethod
    def from_dict(cls, d) -> "ErrorReport":
        return cls([LevelRecord(**r) for r in d["levels"]], dict(d.get("meta", {})))
