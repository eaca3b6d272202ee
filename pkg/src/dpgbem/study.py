"""Convergence studies: per-level solve, errors, estimator and rates."""

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .bem import assemble_bem, representation
from .coupling import CompatibilityWarning, Coupling, H12Variant, build_h12_product, build_system
from .dpg import assemble_ultraweak
from .estimator import adaptive_indicators, estimate
from .mesh import BoundaryMesh, adaptive_refine, dorfler_mark, lshape, uniform_refine
from .solvers import solve
from .spaces import DofLayout, boundary_traces, dof_points, l2_errors, project_boundary_data

log = logging.getLogger(__name__)

CSV_COLUMNS = ["level", "N", "dofs", "err_u", "err_sigma", "est_total", "est_dpg", "est_proj",
               "est_weighted", "eoc_err_u", "eoc_err_sigma", "eoc_est", "solver_iters",
               "solve_seconds"]

PROBES = np.array([[0.6, 0.1], [-0.5, 0.3], [0.1, -0.7], [-0.15, -0.15], [1.0, 1.0]])


class ConfigurationError(ValueError):
    """Inconsistent study configuration (detected before any computation)."""


@dataclass(frozen=True)
class StudyConfig:
    problem: str = "smooth"
    coupling: str = "ls"
    refine: str = "uniform"
    levels: int = 4
    beta: float = 1.0
    h12: str = "ml"
    theta: float = 0.3
    solver: str = "direct"

    def validate(self):
        if self.problem not in ("smooth", "singular"):
            raise ConfigurationError(f"unknown problem {self.problem!r}")
        try:
            Coupling(self.coupling)
            H12Variant(self.h12)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.refine not in ("uniform", "adaptive"):
            raise ConfigurationError(f"unknown refinement {self.refine!r}")
        if self.refine == "adaptive" and self.h12 == "ml":
            raise ConfigurationError("the multilevel product needs uniform refinement; use --h12 w")
        if self.levels < 1:
            raise ConfigurationError("levels must be at least 1")
        if not self.beta > 0:
            raise ConfigurationError("beta must be positive")
        if not 0 < self.theta <= 1:
            raise ConfigurationError("theta must lie in (0, 1]")
        if self.solver not in ("direct", "cg", "gmres"):
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if self.solver == "cg" and self.coupling != "ls":
            raise ConfigurationError("CG applies to the least-squares coupling only")


@dataclass
class LevelResult:
    level: int
    N: int
    dofs: int
    err_u: float
    err_sigma: float
    est_total: float
    est_dpg: float
    est_proj: float
    est_weighted: float
    solver_iters: int
    solve_seconds: float
    uc_probe: Optional[List[float]] = None


@dataclass
class ConvergenceRecord:
    config: StudyConfig
    levels: List[LevelResult] = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.levels], float)

    @property
    def N(self):
        return self.column("N")

    def eoc(self, name):
        """Pairwise rates of column ``name`` (None where undefined)."""
        return pairwise_eoc(self.N, self.column(name))

    def slope(self, name, k=3):
        return lsq_eoc(self.N, self.column(name), k)

    def rows(self):
        rates = {c: self.eoc(c) for c in ("err_u", "err_sigma", "est_total")}
        out = []
        for i, r in enumerate(self.levels):
            row = {c: getattr(r, c) for c in CSV_COLUMNS if hasattr(r, c)}
            row["eoc_err_u"] = None if i == 0 else rates["err_u"][i - 1]
            row["eoc_err_sigma"] = None if i == 0 else rates["err_sigma"][i - 1]
            row["eoc_est"] = None if i == 0 else rates["est_total"][i - 1]
            out.append(row)
        return out

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows():
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({
            "config": asdict(self.config),
            "levels": self.rows(),
            "slopes": {c: self.slope(c) for c in ("err_u", "err_sigma", "est_total")},
        }, indent=2)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def pairwise_eoc(N, q):
    """-log(q_l/q_{l-1}) / log(N_l/N_{l-1}) for consecutive levels; None if undefined."""
    N = np.asarray(N, float)
    q = np.asarray(q, float)
    out = []
    for i in range(1, len(q)):
        if q[i] > 0 and q[i - 1] > 0 and N[i] != N[i - 1]:
            out.append(float(math.log(q[i] / q[i - 1]) / math.log(N[i] / N[i - 1])))
        else:
            out.append(None)
    return out


def lsq_eoc(N, q, k=3):
    """Least-squares slope of log q against log N over the last ``k`` levels."""
    N = np.asarray(N, float)[-k:]
    q = np.asarray(q, float)[-k:]
    if len(q) < 2:
        raise ValueError("need at least two levels for a rate")
    if np.any(q <= 0):
        return None
    return float(np.polyfit(np.log(N), np.log(q), 1)[0])


def compute_eoc(record, k=3):
    """Pairwise and fitted rates for errors and the estimator."""
    return {c: {"pairwise": record.eoc(c), "fit": record.slope(c, k)}
            for c in ("err_u", "err_sigma", "est_total")}


@dataclass
class LevelState:
    """Everything computed on one mesh (kept for tests and post-processing)."""

    mesh: object
    layout: DofLayout
    system: object
    bem: object
    h12: object
    coupled: object
    x: np.ndarray
    u0h: np.ndarray
    phi0h: np.ndarray
    estimate: object


def solve_level(mesh, problem, coupling, beta=1.0, h12="ml", hierarchy=None, solver="direct"):
    """Assemble and solve the coupled problem on ``mesh``."""
    layout = DofLayout.from_mesh(mesh)
    system = assemble_ultraweak(mesh, layout, problem.f)
    boundary = BoundaryMesh.from_mesh(mesh)
    bem = assemble_bem(boundary)
    u0h = project_boundary_data(boundary, problem.u0, "S1")
    phi0h = project_boundary_data(boundary, problem.phi0, "P0")
    chain = list(hierarchy or []) + [boundary]
    product = build_h12_product(h12, chain if H12Variant(h12) is H12Variant.MULTILEVEL else [boundary], bem)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CompatibilityWarning)
        coupled = build_system(system, bem, coupling, u0h, phi0h, beta, product,
                               dof_points(mesh, layout))
    x, report = solve(coupled, solver)
    est = estimate(system, bem, product, x, u0h, phi0h)
    return LevelState(mesh, layout, system, bem, product, coupled, x, u0h, phi0h, est), report


def exterior_field(state, points):
    """u^c = D(u_hat - u0h) - S(sigma_hat - phi0h) at exterior points."""
    uG, sG = boundary_traces(state.layout, state.x)
    return representation(state.bem.boundary, uG - state.u0h, sG - state.phi0h, points)


def run_study(config, mesh=None, probes=None, callback=None):
    """Run a uniform or adaptive convergence study.

    Parameters
    ----------
    config : StudyConfig
    mesh : Triangulation, optional
        Initial mesh; defaults to the 12-triangle L-shape.
    probes : (m, 2) array, optional
        Exterior points at which the reconstructed exterior field is stored.
    callback : callable, optional
        Called as ``callback(level, state)`` after every level.
    """
    from .problems import get_problem

    config.validate()
    problem = get_problem(config.problem)
    mesh = lshape() if mesh is None else mesh
    record = ConvergenceRecord(config)
    chain = []
    for level in range(config.levels):
        state, report = solve_level(mesh, problem, config.coupling, config.beta, config.h12,
                                    chain, config.solver)
        if not report.converged:
            raise RuntimeError(f"{report.method} solver did not converge "
                               f"(relative residual {report.residual:.3e})")
        err_u, err_s = l2_errors(mesh, state.layout, state.x, problem.exact_u, problem.exact_sigma)
        est = state.estimate
        uc = None
        if probes is not None:
            uc = [float(v) for v in exterior_field(state, probes)]
        record.levels.append(LevelResult(
            level, mesh.n_triangles, state.layout.ndof, err_u, err_s, est.total, est.term_dpg,
            est.term_proj, est.term_weighted, report.iterations, report.seconds, uc))
        log.info("level %d: N=%d err_u=%.3e err_sigma=%.3e est=%.3e", level, mesh.n_triangles,
                 err_u, err_s, est.total)
        if callback is not None:
            callback(level, state)
        if level == config.levels - 1:
            break
        chain.append(state.bem.boundary)
        if config.refine == "uniform":
            mesh = uniform_refine(mesh)
        else:
            ind = adaptive_indicators(est, mesh)
            mesh = adaptive_refine(mesh, dorfler_mark(np.sqrt(ind), config.theta))
    return record
