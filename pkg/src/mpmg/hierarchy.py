"""Multilevel hierarchies: Galerkin coarsening, precision ladders, factors."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fpemu import PrecisionSpec, PrecisionTriple, as_precision
from .probgen import ModelProblem, coarse_size, interpolation_for
from .smoothers import Smoother, make_smoother
from .sparsekit import NotSPDError, SparseOperator, SparseSpd

log = logging.getLogger(__name__)

COARSEST_MAX_N = 1
POLICIES = ("uniform", "kappa-matched", "fixed-ladder")


class LadderWarning(UserWarning):
    """The precision ladder violates the coarsening assumption vartheta > 1."""


@dataclass
class PrecisionPolicy:
    """How each level's precision triple is chosen.

    ``triple`` is the finest level's triple. ``uniform`` copies it to every
    level. ``kappa-matched`` keeps high and work precision and lowers the
    low precision to the smallest ``p`` with ``kappa_j 2**-p <= target``,
    clamped to ``[floor, triple.low.p]``. ``fixed-ladder`` takes ``ladder``,
    a list of low-precision bit counts (or full triple dicts) ordered from
    coarsest to finest.
    """

    kind: str = "uniform"
    triple: PrecisionTriple = field(
        default_factory=lambda: PrecisionTriple.parse({}))
    target: float = 2.0**-4
    floor: int = 8
    ladder: list | None = None

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ValueError(f"unknown precision policy {self.kind!r}")
        self.triple = PrecisionTriple.parse(self.triple)

    @classmethod
    def parse(cls, cfg) -> "PrecisionPolicy":
        if isinstance(cfg, PrecisionPolicy):
            return cfg
        cfg = dict(cfg)
        return cls(kind=cfg.pop("kind", "uniform"),
                   triple=PrecisionTriple.parse(cfg.pop("triple", {})),
                   target=float(cfg.pop("target", 2.0**-4)),
                   floor=int(cfg.pop("floor", 8)),
                   ladder=cfg.pop("ladder", None))

    def assign(self, kappas: list[float]) -> list[PrecisionTriple]:
        """Triples for levels ordered coarsest first."""
        top = self.triple
        if self.kind == "uniform":
            return [top] * len(kappas)
        if self.kind == "kappa-matched":
            out = []
            for k in kappas:
                p = math.ceil(math.log2(k / self.target))
                p = min(max(p, self.floor), top.low.p)
                out.append(PrecisionTriple(top.high, top.work, PrecisionSpec(p)))
            return out
        if self.ladder is None or len(self.ladder) != len(kappas):
            raise ValueError(
                f"fixed-ladder needs one entry per level ({len(kappas)})")
        out = []
        for item in self.ladder:
            if isinstance(item, dict):
                out.append(PrecisionTriple.parse(item))
            else:
                out.append(PrecisionTriple(top.high, top.work,
                                           as_precision(item)))
        return out

    def to_dict(self):
        d = {"kind": self.kind, "triple": self.triple.to_dict()}
        if self.kind == "kappa-matched":
            d.update(target=self.target, floor=self.floor)
        if self.kind == "fixed-ladder":
            d["ladder"] = self.ladder
        return d


@dataclass
class GridLevel:
    """One level of the hierarchy; ``P`` interpolates from level ``j-1``."""

    j: int
    A: SparseSpd
    P: SparseOperator | None
    precisions: PrecisionTriple
    h: float
    smoother: Smoother
    b: np.ndarray
    n_side: int

    @property
    def n(self) -> int:
        return self.A.n

    @property
    def eps_low(self) -> float:
        return self.precisions.low.eps

    @property
    def eps_work(self) -> float:
        return self.precisions.work.eps

    @property
    def eps_high(self) -> float:
        return self.precisions.high.eps


@dataclass
class Hierarchy:
    """Levels ordered coarsest (``levels[0]``, j = 1) to finest (j = ell).

    ``theta`` and ``zeta`` map ``j`` (2..ell) to the pseudo mesh and
    precision coarsening factors.
    """

    levels: list[GridLevel]
    m: int
    theta: dict[int, float]
    zeta: dict[int, float]
    vartheta: float
    maxima: dict
    problem: str = ""
    disc_q: float = 1.0
    policy: dict = field(default_factory=dict)

    @property
    def ell(self) -> int:
        return len(self.levels)

    def level(self, j: int) -> GridLevel:
        if not 1 <= j <= self.ell:
            raise ValueError(f"invalid level {j}; hierarchy has {self.ell}")
        return self.levels[j - 1]

    @property
    def finest(self) -> GridLevel:
        return self.levels[-1]

    def sub(self, j: int) -> "Hierarchy":
        """The hierarchy truncated at level ``j`` (levels 1..j)."""
        levels = self.levels[:j]
        return _assemble(levels, self.m, self.problem, self.disc_q, self.policy,
                         warn=False)

    def summary(self) -> dict:
        rows = []
        for lev in self.levels:
            st = lev.A.stats
            rows.append({
                "j": lev.j, "n": lev.n, "kappa": st.kappa, "norm_A": st.norm_A,
                "psi": st.psi, "m_A": lev.A.m_A, "h": lev.h,
                "precisions": lev.precisions.to_dict(),
                "theta": self.theta.get(lev.j), "zeta": self.zeta.get(lev.j),
                "smoother": lev.smoother.to_dict(),
            })
        vt = self.vartheta
        return {"problem": self.problem, "levels": self.ell, "m": self.m,
                "vartheta": vt if math.isfinite(vt) else "inf",
                "policy": self.policy, "maxima": self.maxima, "grid": rows}

    def to_json(self, **kw) -> str:
        return json.dumps(self.summary(), **kw)


def galerkin_coarsen(A: SparseSpd, P) -> SparseSpd:
    """``P^T A P`` in carrier precision."""
    P = P.csr if isinstance(P, SparseOperator) else sp.csr_matrix(P)
    if P.shape[0] != A.n:
        raise ValueError(f"dimension mismatch: A is {A.n}, P is {P.shape}")
    Ac = (P.T @ A.csr @ P).tocsr()
    Ac = ((Ac + Ac.T) * 0.5).tocsr()  # exact when already symmetric
    try:
        return SparseSpd(Ac)
    except NotSPDError as exc:
        raise NotSPDError(f"coarse operator singular (rank-deficient P): "
                          f"{exc}") from exc


def restrict_rhs(P, b) -> np.ndarray:
    """``P^T b`` in carrier precision."""
    P = P.csr if isinstance(P, SparseOperator) else sp.csr_matrix(P)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (P.shape[0],):
        raise ValueError(f"dimension mismatch: P is {P.shape}, b {b.shape}")
    return P.T @ b


def kappa_PtP(P: SparseOperator) -> float:
    PtP = (P.csr.T @ P.csr).tocsr()
    if PtP.shape[0] == 1:
        return 1.0
    S = SparseSpd(PtP, check=False)
    return S.stats.kappa


def _assemble(levels, m, problem, disc_q, policy, warn=True) -> Hierarchy:
    theta, zeta = {}, {}
    for lo, hi in zip(levels[:-1], levels[1:]):
        theta[hi.j] = lo.h / hi.h
        zeta[hi.j] = lo.eps_low / hi.eps_low
    vartheta = min((theta[j] * zeta[j] ** (-1.0 / m) for j in theta),
                   default=math.inf)
    maxima = _level_maxima(levels)
    hier = Hierarchy(levels=levels, m=m, theta=theta, zeta=zeta,
                     vartheta=vartheta, maxima=maxima, problem=problem,
                     disc_q=disc_q, policy=policy)
    if warn and vartheta <= 1:
        msg = (f"precision ladder gives vartheta = {vartheta:.4g} <= 1; "
               "the V-cycle rounding bound does not apply")
        log.info(msg)
        warnings.warn(msg, LadderWarning, stacklevel=3)
    return hier


def _level_maxima(levels) -> dict:
    def mx(vals, default=0.0):
        vals = list(vals)
        return max(vals) if vals else default
    with_p = [lev for lev in levels if lev.P is not None]
    return {
        "m_A": mx(lev.A.m_A for lev in levels),
        "m_A_dot_plus": mx(lev.A.m_A / (1 - lev.A.m_A * lev.eps_low)
                           for lev in levels),
        "m_A_bar_plus": mx(lev.A.m_A / (1 - lev.A.m_A * lev.eps_high)
                           for lev in levels),
        "m_P": mx(max(lev.P.max_row_nnz, lev.P.max_col_nnz) for lev in with_p),
        "m_P_dot_plus": mx(_mP(lev) / (1 - _mP(lev) * lev.eps_low)
                           for lev in with_p),
        "m_P_plus": mx(_mP(lev) / (1 - _mP(lev) * lev.eps_work)
                       for lev in with_p),
        "kappa_PtP": mx((kappa_PtP(lev.P) for lev in with_p), 1.0),
    }


def _mP(lev) -> int:
    return max(lev.P.max_row_nnz, lev.P.max_col_nnz)


def build_hierarchy(problem: ModelProblem, levels: int | None = None,
                    policy=None, smoother="richardson") -> Hierarchy:
    """Coarsen ``problem`` top-down into a hierarchy.

    ``levels=None`` coarsens until the coarsest grid has at most
    ``COARSEST_MAX_N`` unknowns; an explicit count may go further, down to a
    single unknown per direction. Smoother constants use each level's low
    precision.
    """
    policy = PrecisionPolicy.parse(policy or {})
    if levels is not None and levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    mats = [problem.A]
    rhs = [np.asarray(problem.b, dtype=np.float64)]
    sides = [problem.n_side]
    interps: list[SparseOperator | None] = []
    while True:
        if levels is not None and len(mats) == levels:
            break
        if levels is None and mats[-1].n <= COARSEST_MAX_N:
            break
        side = sides[-1]
        nc = coarse_size(side, problem.boundary) if side % 2 else 0
        if side % 2 == 0 or nc < 1 or nc >= side:
            if levels is None:
                break
            raise ValueError(
                f"too many levels: grid of {side} nodes per direction cannot "
                f"be coarsened {levels - 1} times")
        P = SparseOperator(interpolation_for(problem, side))
        mats.append(galerkin_coarsen(mats[-1], P))
        rhs.append(restrict_rhs(P, rhs[-1]))
        sides.append(nc)
        interps.append(P)
    mats.reverse(), rhs.reverse(), sides.reverse(), interps.reverse()
    interps.insert(0, None)
    m = problem.m
    kappas = [A.stats.kappa for A in mats]
    triples = policy.assign(kappas)
    out = []
    for j, (A, P, tr, b, side) in enumerate(
            zip(mats, interps, triples, rhs, sides), start=1):
        h = kappas[j - 1] ** (-1.0 / (2 * m))
        sm = make_smoother(A, smoother, tr.low.eps)
        out.append(GridLevel(j=j, A=A, P=P, precisions=tr, h=h, smoother=sm,
                             b=b, n_side=side))
    return _assemble(out, m, problem.name, problem.disc_q, policy.to_dict())


def galerkin_gap(A_fine: SparseSpd, P, A_coarse: SparseSpd) -> float:
    """Largest entrywise relative difference between ``P^T A P`` and a
    reference coarse matrix."""
    G = galerkin_coarsen(A_fine, P).csr
    D = (G - A_coarse.csr).tocoo()
    if D.nnz == 0:
        return 0.0
    scale = np.max(np.abs(A_coarse.values))
    return float(np.max(np.abs(D.data)) / scale)


__all__ = ["PrecisionPolicy", "GridLevel", "Hierarchy", "LadderWarning",
           "build_hierarchy", "galerkin_coarsen", "restrict_rhs", "kappa_PtP",
           "galerkin_gap"]
