"""Three-precision iterative refinement and progressive-precision FMG."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .cycles import CycleTrace, v_cycle
from .fpemu import PrecisionTriple, fl_sub, norm2, round_to
from .hierarchy import Hierarchy
from .sparsekit import SparseSpd, energy_norm, residual_mixed

InnerSolver = Callable[[np.ndarray], np.ndarray]

PLATEAU_RATIO = 0.9
FLOOR_MARGIN = 10.0


@dataclass
class SolveReport:
    """Histories of one solve; entry ``i`` belongs to iterate ``x^(i)``."""

    iterates_error_energy: list[float] = field(default_factory=list)
    residual_history: list[float] = field(default_factory=list)
    measured_rho: float = math.nan
    floor: float = 0.0
    iterations: int = 0
    converged: bool = False
    diverged: bool = False
    level: int | None = None

    @property
    def final_error(self) -> float:
        return self.iterates_error_energy[-1]

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "rel_energy_error", "residual_norm"])
        for i, e in enumerate(self.iterates_error_energy):
            res = (self.residual_history[i]
                   if i < len(self.residual_history) else "")
            w.writerow([i, repr(e), repr(res) if res != "" else ""])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def detect_floor(history) -> float:
    """Limiting accuracy of an error history, or 0 if it is still falling.

    The plateau starts at the last iterate that improved on every earlier
    one by more than the factor ``PLATEAU_RATIO``; the floor is the median of
    the plateau. At least three plateau entries are required.
    """
    e = np.asarray(history, dtype=np.float64)
    if e.size < 3:
        raise ValueError("too-short history: need at least 3 iterates")
    start = 0
    best = e[0]
    for i in range(1, e.size):
        if e[i] < PLATEAU_RATIO * best:
            start = i
        best = min(best, e[i])
    plateau = e[start:]
    if plateau.size < 3:
        return 0.0
    return float(np.median(plateau))


def measured_rate(history, floor: float) -> float:
    """Geometric-mean contraction over the iterates above ``10 * floor``."""
    e = np.asarray(history, dtype=np.float64)
    above = e > FLOOR_MARGIN * floor
    k = 0
    while k + 1 < e.size and above[k + 1] and e[k + 1] > 0:
        k += 1
    if k == 0 or e[0] <= 0:
        return math.nan
    return float((e[k] / e[0]) ** (1.0 / k))


def exact_solver(A: SparseSpd) -> InnerSolver:
    """Carrier-precision Cholesky solve, the ideal inner solver."""
    return A.solve


def ir_solve(A: SparseSpd, b, inner: InnerSolver, precisions, tol: float,
             max_iter: int = 50, x0=None, x_ref=None):
    """Iterative refinement with a black-box inner solver.

    The residual ``A x - b`` is formed in high precision and rounded to
    working precision; the inner solver approximates ``A y = r``; the update
    ``x <- x - y`` runs in working precision. Stops when the working-precision
    Euclidean residual norm drops below ``tol``.

    Returns ``(x, report)``; if ``tol`` is never met the best iterate (in
    energy error) is returned with ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    return _ir_loop(A, b, inner, precisions, tol, max_iter, x0, x_ref)


def _ir_loop(A, b, inner, precisions, tol, max_iter, x0, x_ref,
             keep_last=False):
    """Refinement loop; ``tol = 0`` runs exactly ``max_iter`` updates.

    ``keep_last`` returns the final iterate instead of the most accurate
    one (the reference-based choice is instrumentation, not algorithm).
    """
    prec = PrecisionTriple.parse(precisions)
    high, work = prec.high, prec.work
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.n,):
        raise ValueError(f"dimension mismatch: A is {A.n}, b {b.shape}")
    x = np.zeros(A.n) if x0 is None else round_to(np.asarray(x0, float), work)
    ref = A.solve(b) if x_ref is None else np.asarray(x_ref, dtype=np.float64)
    ref_norm = energy_norm(A, ref)

    def rel_err(v):
        err = energy_norm(A, v - ref)
        return err / ref_norm if ref_norm > 0 else err

    rep = SolveReport()
    rep.iterates_error_energy.append(rel_err(x))
    best_x, best_e = x, rep.iterates_error_energy[0]
    for it in range(max_iter + 1):
        r = residual_mixed(A, x, b, high, work)
        rn = norm2(r, work)
        rep.residual_history.append(rn)
        if rn < tol:
            rep.converged = True
            best_x = x
            break
        if it == max_iter:
            break
        try:
            y = inner(r)
            x_new = fl_sub(x, y, work)
        except (FloatingPointError, ValueError):
            rep.diverged = True
            break
        if not np.all(np.isfinite(x_new)):
            rep.diverged = True
            break
        x = x_new
        rep.iterations += 1
        e = rel_err(x)
        rep.iterates_error_energy.append(e)
        if e < best_e:
            best_x, best_e = x, e
        if e > 1e6 * max(rep.iterates_error_energy[0], 1.0):
            rep.diverged = True
            break
    hist = rep.iterates_error_energy
    rep.floor = detect_floor(hist) if len(hist) >= 3 else 0.0
    rep.measured_rho = measured_rate(hist, rep.floor)
    return (x if rep.converged or keep_last else best_x), rep


def run_to_stagnation(A: SparseSpd, b, inner: InnerSolver, precisions,
                      max_iter: int = 40, x_ref=None):
    """IR with an unreachable tolerance, to expose the limiting accuracy."""
    return ir_solve(A, b, inner, precisions, tol=np.finfo(float).tiny,
                    max_iter=max_iter, x_ref=x_ref)


@dataclass
class FMGResult:
    x: np.ndarray
    reports: list[SolveReport]
    v_cycles: int


def fmg(hier: Hierarchy, N: int, b_fine=None, trace: CycleTrace | None = None):
    """Full multigrid with ``N`` refinement cycles (one V-cycle each) per level.

    Level ``j`` starts from the working-precision interpolation of the level
    ``j-1`` result. The right-hand sides are the hierarchy's exact restricted
    chain unless ``b_fine`` is given, in which case the chain is rebuilt in
    carrier precision. Per-level reports measure the energy error against
    ``A_j^-1 b_j``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    rhs = [lev.b for lev in hier.levels]
    if b_fine is not None:
        rhs[-1] = np.asarray(b_fine, dtype=np.float64)
        for j in range(hier.ell, 1, -1):
            rhs[j - 2] = hier.level(j).P.csr.T @ rhs[j - 1]
    reports: list[SolveReport] = []
    count = 0
    x = None
    for j in range(1, hier.ell + 1):
        lev = hier.level(j)
        work = lev.precisions.work
        if j == 1:
            x = np.zeros(lev.n)
        else:
            x = lev.P.matvec(round_to(x, work), work)

        def inner(r, j=j):
            nonlocal count
            count += 1
            return v_cycle(hier, r, level=j, trace=trace)[0]

        x, rep = _ir_loop(lev.A, rhs[j - 1], inner, lev.precisions,
                          tol=0.0, max_iter=N, x0=x, x_ref=None,
                          keep_last=True)
        rep.level = j
        reports.append(rep)
    return FMGResult(x=x, reports=reports, v_cycles=count)
