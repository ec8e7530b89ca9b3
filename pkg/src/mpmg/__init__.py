"""Mixed-precision multigrid laboratory.

Emulated low-precision arithmetic, multigrid cycles and iterative
refinement for sparse SPD systems, together with evaluators for the
corresponding rounding-error bounds.
"""
from .fpemu import (BF16, CARRIER, FP16, FP32, FP64, PrecisionSpec,
                    PrecisionTriple, as_precision, dot, fl_op, round_to)
from .sparsekit import SparseOperator, SparseSpd, SpectralStats
from .probgen import ModelProblem, make_problem
from .hierarchy import Hierarchy, PrecisionPolicy, build_hierarchy
from .smoothers import make_smoother
from .cycles import tg_cycle, v_cycle
from .refine import SolveReport, fmg, ir_solve
from .bounds import BoundReport, bound_report

__version__ = "0.1.0"

__all__ = [
    "BF16", "CARRIER", "FP16", "FP32", "FP64", "PrecisionSpec",
    "PrecisionTriple", "as_precision", "dot", "fl_op", "round_to",
    "SparseOperator", "SparseSpd", "SpectralStats", "ModelProblem",
    "make_problem", "Hierarchy", "PrecisionPolicy", "build_hierarchy",
    "make_smoother", "tg_cycle", "v_cycle", "SolveReport", "fmg", "ir_solve",
    "BoundReport", "bound_report",
]
