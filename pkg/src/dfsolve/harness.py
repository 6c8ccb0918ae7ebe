"""Experiment drivers, manufactured solutions and result serialisation."""

from __future__ import annotations

import copy
import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from .fespace import FeFunction, dg_space, project_l2, prolongate, restrict_l2, rt_space
from .forms import ModelParams
from .linsolve import (NONE, LinearSolverError, PrecondSpec, build_preconditioner,
                       estimate_condition_number)
from .mesh import Mesh, ancestors, load_mesh, refine_uniform, structured_rectangle
from .nlsolve import DiscreteProblem, NewtonConfig, ProblemData, newton_solve
from .norms import (ErrorReport, LevelRecord, div_residual_inf, norm_h3div, norm_l2,
                    norm_Qhat, norm_V)

log = logging.getLogger(__name__)

EXPERIMENTS = ("ex1", "ex2", "ex3", "ex4", "custom")
FORMATS = ("csv", "json", "vtk")

HETEROGENEOUS_EX2 = "heterogeneous-ex2"
TENSOR_EX3 = "tensor-ex3"

# inlet arc radius of the shipped obstacle mesh (see tools/gen_obstacle_mesh.py)
OBSTACLE_INLET_RADIUS = 0.02

UNIT_SQUARE_SIDES = {"left": "GAMMA_U", "bottom": "GAMMA_U", "top": "GAMMA_P", "right": "GAMMA_P"}
CHANNEL_SIDES = {"left": "GAMMA_U", "bottom": "GAMMA_U", "top": "GAMMA_U", "right": "GAMMA_P"}

EX4_GRID = {
    "r": [3.0, 4.0, 5.0],
    "kappa": [1.0, 1e-4, 1e-8],
    "F": [1.0, 1e3, 1e9],
    "n": [4, 8, 16],
}


class ExperimentError(RuntimeError):
    pass


# -- configuration -------------------------------------------------------------------

def _default_solver():
    return {"tol_abs": 1e-8, "tol_rel": 1e-8, "max_iters": 25, "damping": None}


def _default_precond():
    return {"variant": "intersection", "pressure_mode": "sum", "penalty": 1.0}


def _default_output():
    return {"dir": None, "formats": ["csv", "json"]}


@dataclass
class ExperimentConfig:
    """Settings of one experiment run.

    ``params`` holds ``kappa`` (a number, a 2x2 list, ``"heterogeneous-ex2"``
    or ``"tensor-ex3"``), ``F`` and ``r``; extra keys parametrise the
    named permeabilities.  ``mesh`` optionally sets the coarse grid
    (``nx``, ``ny``, ``pattern``) or a mesh file (``path``); ``grid``
    overrides the parameter grid of ``ex4``.
    """

    experiment: str = "ex1"
    degree: int = 0
    levels: int = 5
    params: dict = field(default_factory=lambda: {"kappa": 1.0, "F": 1.0, "r": 3.5})
    solver: dict = field(default_factory=_default_solver)
    precond: dict = field(default_factory=_default_precond)
    output: dict = field(default_factory=_default_output)
    mesh: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.degree not in (0, 1):
            raise ValueError("degree must be 0 or 1")
        if int(self.levels) < 1:
            raise ValueError("levels must be at least 1")
        self.levels = int(self.levels)
        bad = set(self.output.get("formats", [])) - set(FORMATS)
        if bad:
            raise ValueError(f"unknown output formats {sorted(bad)}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @classmethod
    def defaults(cls, experiment: str) -> "ExperimentConfig":
        """Parameter defaults of each experiment."""
        if experiment in ("ex1", "custom"):
            return cls(experiment)
        if experiment == "ex2":
            return cls("ex2", levels=4, params={"kappa": HETEROGENEOUS_EX2, "kappa0": 1e-8,
                                                "F": 1e4, "r": 3.5})
        if experiment == "ex3":
            return cls("ex3", degree=1, levels=1,
                       params={"kappa": TENSOR_EX3, "F": 1e3, "r": 3.0})
        if experiment == "ex4":
            # penalty 4 is calibrated against the reference condition numbers
            return cls("ex4", levels=1, params={"kappa": 1.0, "F": 1.0, "r": 3.0},
                       precond={"variant": "intersection", "pressure_mode": "sum",
                                "penalty": 4.0})
        raise ValueError(f"unknown experiment {experiment!r}")

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        base = cls.defaults(d.get("experiment", "ex1"))
        return base.merged(d)

    def merged(self, overrides: dict) -> "ExperimentConfig":
        """Copy with ``overrides`` applied; nested dictionaries are merged."""
        d = self.to_dict()
        for key, val in overrides.items():
            if isinstance(val, dict) and isinstance(d.get(key), dict):
                d[key].update(copy.deepcopy(val))
            else:
                d[key] = copy.deepcopy(val)
        return ExperimentConfig(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())


def kappa_ex2(kappa0: float = 1e-8) -> Callable:
    """``kappa0 (1 + exp(-(10 y - 5 - sin 10 x)^2 / 2))``."""
    def kappa(x):
        x = np.asarray(x, dtype=float)
        return kappa0 * (1 + np.exp(-0.5 * (10 * x[..., 1] - 5 - np.sin(10 * x[..., 0])) ** 2))
    return kappa


def kappa_ex3(kappa1=5e-10, kappa2=1e-10, nu=1e-6, theta=0.082) -> np.ndarray:
    """Rotated anisotropic permeability scaled by the kinematic viscosity."""
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, -s], [s, c]])
    return R @ np.diag([kappa1, kappa2]) @ R.T / nu


def build_params(params: dict) -> ModelParams:
    kappa = params.get("kappa", 1.0)
    if kappa == HETEROGENEOUS_EX2:
        kappa = kappa_ex2(params.get("kappa0", 1e-8))
    elif kappa == TENSOR_EX3:
        kappa = kappa_ex3(**{k: params[k] for k in ("kappa1", "kappa2", "nu", "theta")
                             if k in params})
    elif isinstance(kappa, str):
        raise ValueError(f"unknown permeability {kappa!r}")
    else:
        kappa = np.asarray(kappa, dtype=float)
        kappa = float(kappa) if kappa.ndim == 0 else kappa
    return ModelParams(kappa, float(params.get("F", 1.0)), float(params.get("r", 3.0)))


def newton_config(config: ExperimentConfig) -> NewtonConfig:
    s = {**_default_solver(), **config.solver}
    return NewtonConfig(tol_abs=s["tol_abs"], tol_rel=s["tol_rel"],
                        max_iters=int(s["max_iters"]), damping=s["damping"])


# -- manufactured solution -------------------------------------------------------------

def _complex_step_grad(fun, x, h=1e-30):
    """Gradient of a real-analytic ``fun`` by the complex-step formula."""
    out = []
    for i in range(2):
        xc = x.astype(complex)
        xc[..., i] += 1j * h
        out.append(np.imag(fun(xc)) / h)
    return np.stack(out, axis=-1)


@dataclass
class ManufacturedSolution:
    """Exact fields with the data that make them solve the model.

    ``f``, ``g`` and the boundary flux are derived from ``u``, ``grad_p``
    and ``div_u``; :meth:`self_check` verifies them against complex-step
    derivatives of ``u`` and ``p``.
    """

    u: Callable
    p: Callable
    grad_p: Callable
    div_u: Callable
    params: ModelParams
    note: str = ""

    def f(self, x):
        U = self.u(x)
        mag = np.linalg.norm(U, axis=-1)[..., None]
        drag = np.einsum("...ij,...j->...i", self.params.kappa_inverse(x), U)
        return drag + self.params.F * mag ** (self.params.r - 2) * U + self.grad_p(x)

    def g(self, x):
        return self.div_u(x)

    def flux(self, x):
        return self.u(x)

    def data(self) -> ProblemData:
        return ProblemData(f=self.f, g=self.g, u_bc=self.flux, p_D=self.p)

    def self_check(self, n: int = 64, seed: int = 0, tol: float = 1e-10) -> float:
        """Largest relative defect of ``grad p`` and ``div u`` at random points."""
        x = np.random.default_rng(seed).uniform(0.05, 0.95, size=(n, 2))
        gp = _complex_step_grad(self.p, x)
        du = _complex_step_grad(lambda y: self.u(y)[..., 0], x)[..., 0] \
            + _complex_step_grad(lambda y: self.u(y)[..., 1], x)[..., 1]
        scale = max(1.0, np.abs(gp).max(), np.abs(du).max())
        err = max(np.abs(gp - self.grad_p(x)).max(), np.abs(du - self.div_u(x)).max()) / scale
        if err > tol:
            raise ExperimentError(f"manufactured solution self-check failed ({err:.2e})")
        return float(err)


def ex1_solution(params: ModelParams) -> ManufacturedSolution:
    pi = np.pi

    def u(x):
        X, Y = x[..., 0], x[..., 1]
        return np.stack([np.cos(pi * X) * np.sin(pi * Y), -np.sin(pi * X) * np.cos(pi * Y)], -1)

    def p(x):
        return np.sin(pi * x[..., 0]) * np.cos(pi * x[..., 1])

    def grad_p(x):
        X, Y = x[..., 0], x[..., 1]
        return np.stack([pi * np.cos(pi * X) * np.cos(pi * Y),
                         -pi * np.sin(pi * X) * np.sin(pi * Y)], -1)

    def div_u(x):
        return np.zeros(np.shape(x)[:-1])

    return ManufacturedSolution(u, p, grad_p, div_u, params,
                                note="p = sin(pi x) cos(pi y), u = curl of the same stream function")


# -- meshes --------------------------------------------------------------------------

def _coarse_mesh(config: ExperimentConfig, extent, nx, ny, sides) -> Mesh:
    m = config.mesh
    if "path" in m:
        return load_mesh(m["path"])
    return structured_rectangle(int(m.get("nx", nx)), int(m.get("ny", ny)), extent,
                                tagging=sides, pattern=m.get("pattern", "diagonal"))


def obstacle_mesh_path() -> Path:
    return Path(str(resources.files("dfsolve") / "data" / "obstacles.mesh"))


# -- experiments -----------------------------------------------------------------------

def _n_dofs(V, Q) -> int:
    return int(V.n_dofs + Q.n_dofs)


def _solve_level(params, V, Q, data, config, level):
    try:
        return newton_solve(params, V, Q, data, newton_config(config))
    except (LinearSolverError, RuntimeError, ValueError) as exc:
        raise ExperimentError(f"level {level}: {exc}") from exc


def run_ex1(config: ExperimentConfig | None = None) -> ErrorReport:
    """Convergence against the smooth manufactured solution on the unit square."""
    config = config or ExperimentConfig.defaults("ex1")
    params = build_params(config.params)
    sol = ex1_solution(params)
    sol.self_check()
    mesh = _coarse_mesh(config, (0.0, 1.0, 0.0, 1.0), 2, 2, UNIT_SQUARE_SIDES)
    report = ErrorReport(meta={"experiment": "ex1", "config": config.to_dict(),
                               "error_norms": {"err_u": "H3(div)", "err_p": "L2",
                                               "err_u_weighted": "V",
                                               "err_p_weighted": "Qhat"}})
    fields = []
    for level in range(config.levels):
        if level:
            mesh = refine_uniform(mesh)
        t0 = time.perf_counter()
        V, Q = rt_space(mesh, config.degree), dg_space(mesh, config.degree)
        uh, ph, nr = _solve_level(params, V, Q, sol.data(), config, level)
        p_proj = project_l2(sol.p, Q)
        report.add(LevelRecord(
            h=mesh.h, n_dofs=_n_dofs(V, Q),
            err_u=norm_h3div(uh, sol.u, sol.div_u),
            err_p=norm_l2(ph, sol.p),
            err_u_weighted=norm_V(uh, params, sol.u, sol.div_u),
            err_p_weighted=norm_Qhat(ph - p_proj, params, p_ref=p_proj),
            div_residual_inf=div_residual_inf(uh, Q, sol.g),
            newton_iters=nr.iterations, newton_residual=nr.final_residual))
        log.info("ex1 level %d: h=%.4f dofs=%d it=%d (%.1fs)", level, mesh.h,
                 report.levels[-1].n_dofs, nr.iterations, time.perf_counter() - t0)
        fields.append((level, uh, ph))
    _write_outputs(report, config, fields)
    return report


def run_ex2(config: ExperimentConfig | None = None) -> ErrorReport:
    """Self-convergence against a reference solution two refinements finer."""
    config = config or ExperimentConfig.defaults("ex2")
    params = build_params(config.params)

    def inflow(x):
        y = x[..., 1]
        return np.stack([-2.5 * y * (1 - y), np.zeros_like(y)], -1)

    data = ProblemData(u_bc=inflow)
    meshes = [_coarse_mesh(config, (0.0, 2.0, 0.0, 1.0), 4, 2, CHANNEL_SIDES)]
    for _ in range(config.levels + 1):
        meshes.append(refine_uniform(meshes[-1]))
    k = config.degree

    ref = meshes[-1]
    Vr, Qr = rt_space(ref, k), dg_space(ref, k)
    u_ref, p_ref, _ = _solve_level(params, Vr, Qr, data, config, "reference")

    report = ErrorReport(meta={"experiment": "ex2", "config": config.to_dict(),
                               "reference_h": ref.h,
                               "error_norms": {"err_u": "H3(div)", "err_p": "L2",
                                               "err_u_weighted": "V",
                                               "err_p_weighted": "Qhat"}})
    fields = []
    for level in range(config.levels):
        mesh = meshes[level]
        V, Q = rt_space(mesh, k), dg_space(mesh, k)
        uh, ph, nr = _solve_level(params, V, Q, data, config, level)
        anc = ancestors(meshes[level:])
        eu = prolongate(uh, Vr, anc) - u_ref
        ep = prolongate(ph, Qr, anc) - p_ref
        p_coarse = restrict_l2(p_ref, Q, anc)
        report.add(LevelRecord(
            h=mesh.h, n_dofs=_n_dofs(V, Q),
            err_u=norm_h3div(eu), err_p=norm_l2(ep),
            err_u_weighted=norm_V(eu, params),
            err_p_weighted=norm_Qhat(ph - p_coarse, params, p_ref=p_coarse),
            div_residual_inf=div_residual_inf(uh, Q),
            newton_iters=nr.iterations, newton_residual=nr.final_residual))
        log.info("ex2 level %d: h=%.4f dofs=%d it=%d", level, mesh.h,
                 report.levels[-1].n_dofs, nr.iterations)
        fields.append((level, uh, ph))
    _write_outputs(report, config, fields)
    return report


@dataclass
class Ex3Result:
    n_cells: int
    n_dofs: int
    u_max: float
    kappa_max: float
    forchheimer_threshold: float
    newton_iters: int
    newton_residual: float
    converged: bool
    div_residual_inf: float

    def to_dict(self) -> dict:
        return asdict(self)


def _max_speed(u: FeFunction) -> float:
    k = u.space.degree
    q = u.space.quadrature(2 * k + 2)
    pts = np.vstack([np.eye(3)[:, 1:], q.ref_points])       # cell vertices + interior
    return float(np.linalg.norm(u.values(pts), axis=-1).max())


def run_ex3(config: ExperimentConfig | None = None) -> Ex3Result:
    """Anisotropic filtration through the shipped obstacle geometry."""
    config = config or ExperimentConfig.defaults("ex3")
    params = build_params(config.params)
    path = Path(config.mesh.get("path", obstacle_mesh_path()))
    if not path.exists():
        raise ExperimentError(f"obstacle mesh {path} not found")
    mesh = load_mesh(path)
    r_in = float(config.params.get("inlet_radius", OBSTACLE_INLET_RADIUS))
    speed = float(config.params.get("inlet_speed", 0.25))
    force = float(config.params.get("force", 1.3e-5))

    def inlet(x):
        rad = np.linalg.norm(x, axis=-1)[..., None]
        # radial field; tangential to the axis walls, cut off before the obstacles
        return np.where(rad < 1.25 * r_in, speed * x / np.maximum(rad, 1e-300), 0.0)

    def f(x):
        return np.stack([np.full(x.shape[:-1], force), np.zeros(x.shape[:-1])], -1)

    V, Q = rt_space(mesh, config.degree), dg_space(mesh, config.degree)
    uh, ph, nr = _solve_level(params, V, Q, ProblemData(f=f, u_bc=inlet), config, 0)
    u_max = _max_speed(uh)
    k_max = float(params.kappa_max(mesh.centroids).max())
    res = Ex3Result(mesh.n_cells, _n_dofs(V, Q), u_max, k_max, k_max * params.F * u_max,
                    nr.iterations, nr.final_residual, nr.converged, div_residual_inf(uh, Q))
    out = config.output
    if out.get("dir"):
        d = Path(out["dir"])
        d.mkdir(parents=True, exist_ok=True)
        if "json" in out.get("formats", []):
            (d / "report.json").write_text(json.dumps(
                {"experiment": "ex3", "config": config.to_dict(), "diagnostics": res.to_dict()},
                indent=2))
        if "vtk" in out.get("formats", []):
            write_vtk(d / "fields_0.vtk", uh, ph)
    return res


@dataclass
class CondTable:
    """Condition numbers over a parameter grid; ``None`` marks a failed cell."""

    variant: str
    grid: dict
    entries: list = field(default_factory=list)

    def value(self, r, kappa, F, n):
        for e in self.entries:
            if (e["r"], e["kappa"], e["F"], e["n"]) == (r, kappa, F, n):
                return e["cond"]
        raise KeyError((r, kappa, F, n))

    def values(self) -> np.ndarray:
        return np.array([e["cond"] for e in self.entries if e["cond"] is not None])

    def to_dict(self) -> dict:
        return {"variant": self.variant, "grid": self.grid, "entries": self.entries}

    @classmethod
    def from_dict(cls, d) -> "CondTable":
        return cls(d["variant"], d["grid"], list(d["entries"]))


def ex4_condition(r, kappa, F, n, variant="intersection", pressure_mode="sum",
                  penalty=4.0, method="dense") -> float:
    """Preconditioned condition number of the tangent at zero velocity."""
    mesh = structured_rectangle(n, n, tagging=UNIT_SQUARE_SIDES)
    V, Q = rt_space(mesh, 0), dg_space(mesh, 0)
    params = ModelParams(kappa, F, r)
    problem = DiscreteProblem(params, V, Q, ProblemData())
    u = np.zeros(V.n_dofs)
    system = problem.tangent(u, problem.residual(u, np.zeros(Q.n_dofs)))
    spec = PrecondSpec(variant, pressure_mode, penalty=penalty)
    P = build_preconditioner(spec, params, V, Q, problem.free)
    return estimate_condition_number(system, P, method=method)


def _ex4_cell(args):
    r, kappa, F, n, pc = args
    try:
        return {"r": r, "kappa": kappa, "F": F, "n": n, "h": 1.0 / n,
                "cond": ex4_condition(r, kappa, F, n, **pc), "error": None}
    except (LinearSolverError, np.linalg.LinAlgError, ValueError) as exc:
        log.warning("condition estimate failed at r=%g kappa=%g F=%g n=%d: %s",
                    r, kappa, F, n, exc)
        return {"r": r, "kappa": kappa, "F": F, "n": n, "h": 1.0 / n,
                "cond": None, "error": str(exc)}


def run_ex4(config: ExperimentConfig | None = None) -> CondTable:
    """Condition numbers of the preconditioned tangent over the parameter grid."""
    config = config or ExperimentConfig.defaults("ex4")
    grid = {**EX4_GRID, **config.grid}
    pc = {"variant": config.precond.get("variant", "intersection"),
          "pressure_mode": config.precond.get("pressure_mode", "sum"),
          "penalty": float(config.precond.get("penalty", 4.0))}
    if pc["variant"] == NONE:
        pc.pop("penalty")
    cells = [(float(r), float(kap), float(F), int(n), pc)
             for r in grid["r"] for kap in grid["kappa"] for F in grid["F"] for n in grid["n"]]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            entries = list(pool.map(_ex4_cell, cells))
    else:
        entries = [_ex4_cell(c) for c in cells]
    table = CondTable(pc["variant"], grid, entries)
    out = config.output
    if out.get("dir"):
        d = Path(out["dir"])
        d.mkdir(parents=True, exist_ok=True)
        if "csv" in out.get("formats", []):
            emit_cond_table(table, d / "cond.csv")
        if "json" in out.get("formats", []):
            (d / "report.json").write_text(json.dumps(
                {"experiment": "ex4", "config": config.to_dict(), "cond": table.to_dict()},
                indent=2))
    return table


def run(config: ExperimentConfig):
    runners = {"ex1": run_ex1, "ex2": run_ex2, "ex3": run_ex3, "ex4": run_ex4,
               "custom": run_ex1}
    return runners[config.experiment](config)


# -- output -------------------------------------------------------------------------------

def _sci(v) -> str:
    return "" if v is None else f"{v:.2e}"


def _rate(v) -> str:
    return "*" if v is None else f"{v:.3f}"


def emit_report(report: ErrorReport, fmt: str, path) -> list:
    """Write ``errors.csv`` and ``rates.csv`` (``fmt="csv"``) or
    ``report.json`` (``fmt="json"``) into the directory ``path``.
    """
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    cols = report.columns()
    if fmt == "csv":
        with open(d / "errors.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "n_dofs", "h", *cols, "div_residual_inf",
                        "newton_iters", "newton_residual"])
            for i, r in enumerate(report.levels):
                w.writerow([i, r.n_dofs, f"{r.h:.4f}", *(_sci(getattr(r, c)) for c in cols),
                            _sci(r.div_residual_inf),
                            "" if r.newton_iters is None else r.newton_iters,
                            _sci(r.newton_residual)])
        rates = report.rates()
        with open(d / "rates.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "h", *(f"rate_{c}" for c in cols)])
            for i, r in enumerate(report.levels):
                w.writerow([i, f"{r.h:.4f}", *(_rate(rates[c][i]) for c in cols)])
        return [d / "errors.csv", d / "rates.csv"]
    if fmt == "json":
        (d / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
        return [d / "report.json"]
    raise ValueError(f"unknown format {fmt!r}")


def load_report(path) -> ErrorReport:
    return ErrorReport.from_dict(json.loads(Path(path).read_text()))


def emit_cond_table(table: CondTable, path) -> None:
    """One row per ``(r, kappa, F)`` with one column per mesh size."""
    ns = list(table.grid["n"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "kappa", "F", *(f"h=1/{n}" for n in ns)])
        rows = {}
        for e in table.entries:
            rows.setdefault((e["r"], e["kappa"], e["F"]), {})[e["n"]] = e["cond"]
        for (r, kap, F), vals in rows.items():
            w.writerow([f"{r:g}", f"{kap:g}", f"{F:g}",
                        *("nan" if vals.get(n) is None else f"{vals[n]:.2f}" for n in ns)])


def write_vtk(path, u: FeFunction, p: FeFunction) -> None:
    """Legacy ASCII VTK file with cell-centre velocity, its magnitude and pressure."""
    mesh = u.space.mesh
    c = np.array([[1 / 3, 1 / 3]])
    uc = u.values(c)[:, 0]
    pc = p.values(c)[:, 0]
    lines = ["# vtk DataFile Version 3.0", "dfsolve fields", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x:.16e} {y:.16e} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {mesh.n_cells} {4 * mesh.n_cells}")
    lines += [f"3 {a} {b} {cc}" for a, b, cc in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += ["5"] * mesh.n_cells
    lines += [f"CELL_DATA {mesh.n_cells}", "VECTORS velocity double"]
    lines += [f"{a:.16e} {b:.16e} 0" for a, b in uc]
    lines += ["SCALARS velocity_magnitude double 1", "LOOKUP_TABLE default"]
    lines += [f"{v:.16e}" for v in np.linalg.norm(uc, axis=1)]
    lines += ["SCALARS pressure double 1", "LOOKUP_TABLE default"]
    lines += [f"{v:.16e}" for v in pc]
    Path(path).write_text("\n".join(lines) + "\n")


def _write_outputs(report, config, fields):
    out = config.output
    if not out.get("dir"):
        return
    formats = out.get("formats", [])
    for fmt in ("csv", "json"):
        if fmt in formats:
            emit_report(report, fmt, out["dir"])
    if "vtk" in formats:
        for level, uh, ph in fields:
            write_vtk(Path(out["dir"]) / f"fields_{level}.vtk", uh, ph)
