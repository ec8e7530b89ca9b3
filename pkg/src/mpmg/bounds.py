"""Closed-form rounding-error bounds and their infinite-precision inputs.

Evaluators take unit roundoffs as floats so that ``eps = 0`` represents
exact arithmetic. ``Roundoffs`` bundles the high, working and low values.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.linalg

from .fpemu import PrecisionTriple
from .hierarchy import Hierarchy, kappa_PtP
from .smoothers import Smoother
from .sparsekit import SpectralStats, energy_norm

DENSE_ORACLE_MAX = 1023


def json_safe(obj):
    """Replace non-finite floats (and numpy scalars) by JSON-friendly values."""
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


class BoundError(ValueError):
    """A hypothesis of a convergence bound is violated."""


@dataclass(frozen=True)
class Roundoffs:
    high: float
    work: float
    low: float

    @classmethod
    def of(cls, prec) -> "Roundoffs":
        if isinstance(prec, Roundoffs):
            return prec
        if isinstance(prec, PrecisionTriple):
            return cls(prec.high.eps, prec.work.eps, prec.low.eps)
        if isinstance(prec, dict) and all(isinstance(v, float)
                                          for v in prec.values()):
            return cls(prec.get("high", 0.0), prec.get("work", 0.0),
                       prec.get("low", 0.0))
        return cls.of(PrecisionTriple.parse(prec))


EXACT = Roundoffs(0.0, 0.0, 0.0)


def gamma(stats: SpectralStats) -> float:
    """``(kappa^1/2 + kappa_under) / kappa``."""
    return (math.sqrt(stats.kappa) + stats.kappa_under) / stats.kappa


def _plus(m: float, eps: float) -> float:
    d = 1.0 - m * eps
    if d <= 0:
        raise BoundError(f"precision too coarse: {m} * eps >= 1")
    return m / d


def eval_ir_bounds(stats: SpectralStats, rho: float, precisions, m_A: int,
                   m_bar_plus: float | None = None):
    """``(delta_rho_ir, chi)`` for refinement with inner factor ``rho``.

    ``m_bar_plus`` defaults to ``(m_A+1)/(1-(m_A+1) eps_high)``.
    """
    if not 0 <= rho < 1:
        raise BoundError(f"inner factor rho must lie in [0, 1), got {rho}")
    e = Roundoffs.of(precisions)
    k = stats.kappa
    tau = math.sqrt(k) * e.work
    if tau >= 1:
        raise BoundError(f"work precision too coarse for kappa (tau = {tau:.3g})")
    tau_bar = k * e.high
    mb = _plus(m_A + 1, e.high) if m_bar_plus is None else m_bar_plus
    g = gamma(stats)
    tail = g * (1 + rho) * (1 + e.work) * mb * tau_bar
    delta = ((1 + 2 * rho) * tau + tail) / (1 - tau)
    chi = (tau + tail) / (1 - tau)
    return delta, chi


@dataclass
class TGBound:
    tau_dot: float
    mu_dot: float
    sigma: float
    beta: float
    phi: float
    delta: float


def sigma_of(stats: SpectralStats, smoother: Smoother, eps_low: float) -> float:
    a = smoother.alpha_M
    return (1 + eps_low) * max(a * stats.norm_A, stats.psi * a,
                               stats.psi * smoother.norm_M)


def delta_tg_formula(tau_dot, zeta, kappa_ptp, m_P_plus, sigma, m_A_plus):
    """The two-grid perturbation as a function of its scalar inputs."""
    mu = 3.0 * zeta * math.sqrt(kappa_ptp) * m_P_plus * tau_dot
    beta = 2.0 + 3.0 * sigma + 2.0 * m_A_plus * (1.0 + sigma)
    phi = 2 * tau_dot**2 + (4 + beta) * mu * tau_dot + 2 * mu * tau_dot**2
    delta = 4 * tau_dot + (2 + beta) * mu + phi
    return TGBound(tau_dot, mu, sigma, beta, phi, delta)


def eval_tg_bounds(stats: SpectralStats, P_stats: dict, smoother: Smoother,
                   zeta: float, precisions, m_A: int) -> TGBound:
    """Two-grid bound; ``P_stats`` holds ``kappa_PtP`` and ``m_P``."""
    e = Roundoffs.of(precisions)
    tau_dot = math.sqrt(stats.kappa) * e.low
    if tau_dot >= 1:
        raise BoundError(f"low precision too coarse (tau_dot = {tau_dot:.3g})")
    return delta_tg_formula(
        tau_dot, zeta, P_stats.get("kappa_PtP", 1.0),
        _plus(P_stats.get("m_P", 0), e.low),
        sigma_of(stats, smoother, e.low), _plus(m_A + 1, e.low))


def _level_inputs(hier: Hierarchy):
    """Level-maxima parameters for the multilevel bounds."""
    mx = hier.maxima
    sigma = max(sigma_of(lev.A.stats, lev.smoother, lev.eps_low)
                for lev in hier.levels)
    zeta = max(hier.zeta.values(), default=1.0)
    return dict(zeta=zeta, kappa_ptp=mx["kappa_PtP"],
                m_P_plus=mx["m_P_dot_plus"], sigma=sigma,
                m_A_plus=mx["m_A_dot_plus"])


def delta_tg_level(hier: Hierarchy, j: int) -> TGBound:
    lev = hier.level(j)
    tau_dot = math.sqrt(lev.A.stats.kappa) * lev.eps_low
    if tau_dot >= 1:
        raise BoundError(
            f"low precision too coarse on level {j} (tau_dot = {tau_dot:.3g})")
    return delta_tg_formula(tau_dot, **_level_inputs(hier))


def two_grid_bound(hier: Hierarchy) -> TGBound:
    """Two-grid bound for the two finest levels of ``hier``."""
    fin = hier.finest
    if hier.ell < 2:
        return eval_tg_bounds(fin.A.stats, {}, fin.smoother, 1.0,
                              fin.precisions, fin.A.m_A)
    P_stats = {"kappa_PtP": kappa_PtP(fin.P),
               "m_P": max(fin.P.max_row_nnz, fin.P.max_col_nnz)}
    return eval_tg_bounds(fin.A.stats, P_stats, fin.smoother,
                          hier.zeta[hier.ell], fin.precisions, fin.A.m_A)


def v_prefactor(vartheta: float, m: int) -> float:
    if math.isinf(vartheta):
        return 1.0
    if vartheta <= 1:
        raise BoundError(
            f"precision ladder violates vartheta > 1 (vartheta = {vartheta:.4g})")
    t = vartheta**m
    return t / (t - 1)


def eval_v_bounds(hier: Hierarchy) -> float:
    """V-cycle perturbation ``vartheta^m/(vartheta^m - 1) delta_tg(finest)``."""
    pre = v_prefactor(hier.vartheta, hier.m)
    return pre * delta_tg_level(hier, hier.ell).delta


def eval_v_bounds_sum(hier: Hierarchy) -> float:
    """Sum of per-level two-grid perturbations; needs no ladder condition."""
    return sum(delta_tg_level(hier, j).delta for j in range(1, hier.ell + 1))


# -- dense infinite-precision oracles -----------------------------------------

def energy_operator_norm(X: np.ndarray, A: np.ndarray, L=None) -> float:
    """``||X||_A = ||L^T X L^-T||_2`` with ``A = L L^T``."""
    if L is None:
        L = np.linalg.cholesky(A)
    Y = L.T @ X
    Z = scipy.linalg.solve_triangular(L, Y.T, lower=True).T
    return float(np.linalg.norm(Z, 2))


def smoother_propagation(level) -> np.ndarray:
    A = level.A.toarray()
    return np.eye(level.n) - level.smoother.dense() @ A


def coarse_projection(level, coarse) -> np.ndarray:
    """``P A_c^-1 P^T A`` for level ``j`` and its coarse neighbour."""
    P = level.P.toarray()
    A = level.A.toarray()
    Ac = coarse.A.toarray()
    return P @ np.linalg.solve(Ac, P.T @ A)


def v_operators(hier: Hierarchy) -> list[np.ndarray]:
    """Dense ``V_1 .. V_ell`` from the recursive definition."""
    if hier.finest.n > DENSE_ORACLE_MAX:
        raise ValueError(
            f"n = {hier.finest.n} too large for the dense oracle "
            f"(max {DENSE_ORACLE_MAX}); use a power-iteration estimate")
    out = [smoother_propagation(hier.levels[0])]
    for j in range(2, hier.ell + 1):
        lev, coarse = hier.level(j), hier.level(j - 1)
        P = lev.P.toarray()
        A = lev.A.toarray()
        Ac = coarse.A.toarray()
        W = np.linalg.solve(Ac, P.T @ A)
        T = np.eye(lev.n) - P @ W
        G = smoother_propagation(lev)
        out.append((P @ out[-1] @ W + T) @ G)
    return out


def tg_operator(hier: Hierarchy, B_c=None) -> np.ndarray:
    fine, coarse = hier.levels[-1], hier.levels[-2]
    P = fine.P.toarray()
    A = fine.A.toarray()
    W = np.linalg.solve(coarse.A.toarray(), P.T @ A)
    if B_c is not None:
        W = np.asarray(B_c) @ W
    return (np.eye(fine.n) - P @ W) @ smoother_propagation(fine)


def dense_capable(hier: Hierarchy) -> Hierarchy:
    """The largest leading sub-hierarchy within the dense oracle cap."""
    j = max((lev.j for lev in hier.levels if lev.n <= DENSE_ORACLE_MAX),
            default=0)
    if j == 0:
        raise ValueError("no level fits the dense oracle")
    return hier if j == hier.ell else hier.sub(j)


def measure_rho_star(hier: Hierarchy, B_c=None):
    """``(rho*_tg, rho*_v)``: dense energy norms of the exact operators.

    ``rho*_v`` is the maximum over levels of ``||V_j||_{A_j}``; ``rho*_tg``
    uses the two finest levels (``nan`` for a single level).
    """
    vs = v_operators(hier)
    rho_v = max(energy_operator_norm(V, lev.A.toarray())
                for V, lev in zip(vs, hier.levels))
    rho_tg = math.nan
    if hier.ell >= 2:
        rho_tg = energy_operator_norm(tg_operator(hier, B_c),
                                      hier.finest.A.toarray())
    return rho_tg, rho_v


def measured_contraction(hier: Hierarchy, cycle, n_rhs: int = 20,
                         seed: int = 42) -> float:
    """Worst relative energy error ``||A^-1 r - cycle(r)||_A / ||A^-1 r||_A``
    over ``n_rhs`` seeded Gaussian right-hand sides on the finest level."""
    A = hier.finest.A
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_rhs):
        r = rng.standard_normal(A.n)
        x = A.solve(r)
        worst = max(worst, energy_norm(A, x - cycle(r)) / energy_norm(A, x))
    return worst


def measure_C(hier: Hierarchy, q: float | None = None) -> float:
    """Largest adjacent-level discretization ratio over the RHS chain."""
    q = hier.disc_q if q is None else q
    best = 0.0
    for j in range(2, hier.ell + 1):
        lev, coarse = hier.level(j), hier.level(j - 1)
        xf = lev.A.solve(lev.b)
        nf = energy_norm(lev.A, xf)
        if nf == 0:
            raise ValueError(f"zero fine solution on level {j}")
        xc = coarse.A.solve(coarse.b)
        num = energy_norm(lev.A, lev.P.csr @ xc - xf)
        best = max(best, num / (coarse.h**q * nf))
    return best


def n_min_estimate(theta: float, q: float, rho_star_v: float) -> int:
    """Smallest integer N with N > (0.5 + q log2 theta)/|log2 rho*_v|."""
    if rho_star_v <= 0:
        return 1
    if rho_star_v >= 1:
        raise BoundError("rho*_v >= 1: the V-cycle does not converge")
    x = (0.5 + q * math.log2(theta)) / abs(math.log2(rho_star_v))
    return max(1, math.floor(x) + 1)


@dataclass
class FMGCheck:
    holds: list[bool]
    lhs: list[float]
    rhs: list[float]
    n_min: int


def eval_fmg_condition(hier: Hierarchy, C: float, q: float, N: int,
                       rho_star_v: float, worst_case: bool = False) -> FMGCheck:
    """Per-level sufficient condition for discretization accuracy.

    The inner factor on level ``j`` is the measured ``rho_star_v``, or
    ``rho_star_v + delta_rho_v`` of the sub-hierarchy when ``worst_case``.
    For ``j >= 2`` the initial error is the interpolated coarse result; on
    level 1 the start is zero (relative error 1).
    """
    holds, lhs_all, rhs_all = [], [], []
    thetas = []
    for j in range(1, hier.ell + 1):
        lev = hier.level(j)
        sub = hier.sub(j)
        e = Roundoffs.of(lev.precisions)
        rho_v = rho_star_v
        if worst_case:
            rho_v += (eval_v_bounds(sub) if j > 1
                      else delta_tg_level(sub, 1).delta)
        if rho_v >= 1:
            raise BoundError(
                f"outer iteration not contracting on level {j} "
                f"(rho_v = {rho_v:.3g})")
        d_ir, chi = eval_ir_bounds(lev.A.stats, rho_v, e, lev.A.m_A,
                                   m_bar_plus=sub.maxima["m_A_bar_plus"])
        rate = rho_v + d_ir
        if rate >= 1:
            raise BoundError(
                f"outer iteration not contracting on level {j} "
                f"(rho_v + delta_ir = {rate:.3g})")
        Ch = C * lev.h**q
        if j == 1:
            lhs = rate**N + chi / (1 - rate)
        else:
            mu = level_mu(lev)
            th = hier.theta[j]
            lhs = rate**N * ((math.sqrt(2) + mu) * th**q * Ch + mu) \
                + chi / (1 - rate)
            thetas.append(th)
        holds.append(lhs <= Ch)
        lhs_all.append(lhs)
        rhs_all.append(Ch)
    n_min = max((n_min_estimate(t, q, rho_star_v) for t in thetas), default=1)
    return FMGCheck(holds, lhs_all, rhs_all, n_min)


def level_mu(lev) -> float:
    """``mu_j = kappa(P^T P)^1/2 m_P^+ tau_j`` for a level with ``P``."""
    mP = max(lev.P.max_row_nnz, lev.P.max_col_nnz)
    tau_j = math.sqrt(lev.A.stats.kappa) * lev.eps_work
    return math.sqrt(kappa_PtP(lev.P)) * _plus(mP, lev.eps_work) * tau_j


@dataclass
class BoundReport:
    gamma: float
    tau: list[float]
    tau_dot: list[float]
    tau_bar: list[float]
    alpha_M: list[float]
    vartheta: float
    rho_star_tg: float | None = None
    rho_star_v: float | None = None
    rho_star_source_n: int | None = None
    mu_dot: float | None = None
    beta: float | None = None
    sigma: float | None = None
    delta_rho_tg: float | None = None
    delta_rho_v: float | None = None
    delta_rho_v_sum: float | None = None
    delta_rho_ir: float | None = None
    chi: float | None = None
    delta_rho_ir_worst: float | None = None
    chi_worst: float | None = None
    mu_j: list[float] = field(default_factory=list)
    C: float | None = None
    q: float | None = None
    n_min: int | None = None
    fmg_N: int | None = None
    fmg_holds: list[bool] | None = None
    fmg_holds_worst: list[bool] | None = None
    fmg_lhs: list[float] | None = None
    fmg_rhs: list[float] | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return json_safe(asdict(self))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def bound_report(hier: Hierarchy, fmg_N: int | None = None,
                 measure: bool = True) -> BoundReport:
    """Evaluate every bound for ``hier``.

    The measured ``rho*_v`` is plugged in for the inner factor of the
    refinement bounds; the worst-case variant uses ``rho*_v + delta_rho_v``.
    Violated hypotheses are recorded in ``notes`` rather than raised.
    """
    fin = hier.finest
    st = fin.A.stats
    rep = BoundReport(
        gamma=gamma(st),
        tau=[math.sqrt(l.A.stats.kappa) * l.eps_work for l in hier.levels],
        tau_dot=[math.sqrt(l.A.stats.kappa) * l.eps_low for l in hier.levels],
        tau_bar=[l.A.stats.kappa * l.eps_high for l in hier.levels],
        alpha_M=[l.smoother.alpha_M for l in hier.levels],
        vartheta=hier.vartheta)
    if measure:
        sub = dense_capable(hier)
        rep.rho_star_tg, rep.rho_star_v = measure_rho_star(sub)
        rep.rho_star_source_n = sub.finest.n
        if sub is not hier:
            rep.notes.append(f"rho* measured on the finest dense-capable "
                             f"level (n = {sub.finest.n})")
    try:
        tg = two_grid_bound(hier)
        rep.mu_dot, rep.beta, rep.sigma = tg.mu_dot, tg.beta, tg.sigma
        rep.delta_rho_tg = tg.delta
        rep.delta_rho_v_sum = eval_v_bounds_sum(hier)
        rep.delta_rho_v = eval_v_bounds(hier)
    except BoundError as exc:
        rep.notes.append(str(exc))
    rep.mu_j = [level_mu(lev) for lev in hier.levels[1:]]
    if rep.rho_star_v is not None and rep.rho_star_v < 1:
        try:
            rep.delta_rho_ir, rep.chi = eval_ir_bounds(
                st, rep.rho_star_v, fin.precisions, fin.A.m_A)
            if rep.delta_rho_v is not None:
                worst = rep.rho_star_v + rep.delta_rho_v
                if worst < 1:
                    rep.delta_rho_ir_worst, rep.chi_worst = eval_ir_bounds(
                        st, worst, fin.precisions, fin.A.m_A)
                else:
                    rep.notes.append(
                        f"rho*_v + delta_rho_v = {worst:.3g} >= 1: "
                        "worst-case refinement bound vacuous")
        except BoundError as exc:
            rep.notes.append(str(exc))
        if hier.ell >= 2:
            rep.q = hier.disc_q
            rep.C = measure_C(hier)
            thetas = list(hier.theta.values())
            rep.n_min = max(n_min_estimate(t, rep.q, rep.rho_star_v)
                            for t in thetas)
            if fmg_N is not None:
                rep.fmg_N = fmg_N
                try:
                    chk = eval_fmg_condition(hier, rep.C, rep.q, fmg_N,
                                             rep.rho_star_v)
                    rep.fmg_holds = chk.holds
                    rep.fmg_lhs, rep.fmg_rhs = chk.lhs, chk.rhs
                except BoundError as exc:
                    rep.notes.append(str(exc))
                try:
                    rep.fmg_holds_worst = eval_fmg_condition(
                        hier, rep.C, rep.q, fmg_N, rep.rho_star_v,
                        worst_case=True).holds
                except BoundError as exc:
                    rep.notes.append(f"worst case: {exc}")
    return rep
