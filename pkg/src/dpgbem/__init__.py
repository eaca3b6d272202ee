"""Ultra-weak DPG discretisation of the Laplace transmission problem coupled to
boundary elements, with a posteriori estimation and adaptivity."""

from .bem import BemMatrices, assemble_bem, eval_potentials
from .coupling import Coupling, CoupledSystem, H12Product, H12Variant, build_h12_product, build_system
from .dpg import UltraWeakSystem, assemble_ultraweak, energy_residual
from .estimator import EstimatorBreakdown, adaptive_indicators, estimate
from .mesh import BoundaryMesh, Triangulation, adaptive_refine, lshape, uniform_refine
from .problems import ProblemData, problem_singular, problem_smooth
from .solvers import SolveReport, solve_cg, solve_direct, solve_gmres
from .study import ConvergenceRecord, StudyConfig, compute_eoc, run_study

__version__ = "0.1.0"
