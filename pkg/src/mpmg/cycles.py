"""Two-grid and V(1,0) correction cycles in per-level low precision.

Both cycles approximate the solution of ``A y = r`` from ``y = 0``. Level
``j`` computes its relaxation, residual and restriction in its own low
precision; the restricted residual is rounded to level ``j-1``'s precision
on arrival, and the coarse correction is interpolated in the coarse
precision before the fine-precision update.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .fpemu import CARRIER, fl_sub, round_to
from .hierarchy import Hierarchy
from .sparsekit import residual


@dataclass
class LevelRecord:
    """One level visit; norms are Euclidean, measured in carrier precision."""

    cycle: int
    j: int
    p: int
    rhs_norm: float
    relaxed_norm: float
    residual_norm: float | None = None
    correction_norm: float | None = None


@dataclass
class CycleTrace:
    records: list[LevelRecord] = field(default_factory=list)
    cycles: int = 0

    def add(self, rec: LevelRecord):
        self.records.append(rec)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)


def _finite(v, step: str):
    if not np.all(np.isfinite(v)):
        raise FloatingPointError(f"non-finite value at step '{step}'")
    return v


def _norm(v) -> float:
    return float(np.linalg.norm(v))


def tg_cycle(hier: Hierarchy, r, coarse_mode: str = "exact", B_c=None,
             trace: CycleTrace | None = None):
    """One two-grid correction cycle on the two finest levels of ``hier``.

    ``coarse_mode="operator"`` multiplies the exact coarse solution by
    ``B_c`` (a matrix or callable), in carrier precision.
    """
    if hier.ell < 2:
        raise ValueError("two-grid cycle needs at least two levels")
    if coarse_mode not in ("exact", "operator"):
        raise ValueError(f"unknown coarse_mode {coarse_mode!r}")
    if coarse_mode == "operator" and B_c is None:
        raise ValueError("coarse_mode='operator' requires B_c")
    fine, coarse = hier.levels[-1], hier.levels[-2]
    prec, prec_c = fine.precisions.low, coarse.precisions.low
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (fine.n,):
        raise ValueError(f"dimension mismatch: level has {fine.n}, r {r.shape}")
    r = round_to(_finite(r, "input rhs"), prec)
    y = _finite(fine.smoother.apply(r, prec), "relax")
    r_tg = _finite(residual(fine.A, y, r, prec), "tg residual")
    b_c = round_to(fine.P.T.matvec(r_tg, prec), prec_c)
    _finite(b_c, "restrict")
    d_c = coarse.A.solve(b_c)
    if coarse_mode == "operator":
        d_c = B_c(d_c) if callable(B_c) else np.asarray(B_c) @ d_c
    d_c = _finite(round_to(d_c, prec_c), "coarse solve")
    d = _finite(fine.P.matvec(d_c, prec_c), "interpolate")
    y = _finite(fl_sub(y, d, prec), "update")
    if trace is not None:
        trace.cycles += 1
        trace.add(LevelRecord(trace.cycles, fine.j, prec.p, _norm(r),
                              _norm(y), _norm(r_tg), _norm(d)))
        trace.add(LevelRecord(trace.cycles, coarse.j, CARRIER.p, _norm(b_c),
                              _norm(d_c)))
    return y, trace


def v_cycle(hier: Hierarchy, r, level: int | None = None,
            trace: CycleTrace | None = None):
    """One V(1,0)-cycle starting at ``level`` (default: finest)."""
    j = hier.ell if level is None else level
    lev = hier.level(j)
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (lev.n,):
        raise ValueError(f"dimension mismatch: level has {lev.n}, r {r.shape}")
    if trace is not None:
        trace.cycles += 1
    return _v(hier, j, r, trace), trace


def _v(hier, j, r, trace):
    lev = hier.level(j)
    prec = lev.precisions.low
    r = round_to(_finite(r, f"input rhs (level {j})"), prec)
    y = _finite(lev.smoother.apply(r, prec), f"relax (level {j})")
    rec = None
    if trace is not None:
        rec = LevelRecord(trace.cycles, j, prec.p, _norm(r), _norm(y))
        trace.add(rec)
    if j > 1:
        coarse = hier.level(j - 1)
        r_v = _finite(residual(lev.A, y, r, prec), f"v residual (level {j})")
        r_c = _finite(lev.P.T.matvec(r_v, prec), f"restrict (level {j})")
        d_c = _v(hier, j - 1, r_c, trace)
        d = _finite(lev.P.matvec(d_c, coarse.precisions.low),
                    f"interpolate (level {j})")
        y = _finite(fl_sub(y, d, prec), f"update (level {j})")
        if rec is not None:
            rec.residual_norm = _norm(r_v)
            rec.correction_norm = _norm(d)
    return y


def v_cycle_solver(hier: Hierarchy, trace: CycleTrace | None = None):
    """Inner solver ``r -> y`` performing one V-cycle."""
    def solve(r):
        return v_cycle(hier, r, trace=trace)[0]
    return solve


def tg_solver(hier: Hierarchy, trace: CycleTrace | None = None, **kw):
    def solve(r):
        return tg_cycle(hier, r, trace=trace, **kw)[0]
    return solve
