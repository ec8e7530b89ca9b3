import dataclasses
import json
import math

import numpy as np
import pytest
import scipy.sparse as sp

from mpmg import bounds as bd
from mpmg.bounds import (EXACT, BoundError, Roundoffs, bound_report,
                         eval_fmg_condition, eval_ir_bounds, eval_tg_bounds,
                         eval_v_bounds, gamma, measure_C, measure_rho_star,
                         n_min_estimate, v_prefactor)
from mpmg.hierarchy import build_hierarchy, kappa_PtP
from mpmg.probgen import poisson1d
from mpmg.refine import fmg
from mpmg.smoothers import make_richardson
from mpmg.sparsekit import SparseSpd, SpectralStats


def uniform(high=53, work=24, low=11):
    return {"kind": "uniform",
            "triple": {"high": high, "work": work, "low": low}}


def test_gamma_identity():
    st = SpectralStats(1.0, 1.0, 1.0)
    assert gamma(st) == 2.0


def test_ir_bounds_vanish_in_exact_arithmetic():
    st = poisson1d(255).A.stats
    assert eval_ir_bounds(st, 0.3, EXACT, 3) == (0.0, 0.0)


def test_ir_bounds_independent_evaluation():
    A = poisson1d(255).A
    k = A.stats.kappa
    kl = A.stats.psi * A.stats.norm_Ainv
    e, eb, rho = 2.0**-24, 2.0**-53, 0.2
    tau, tau_bar = k**0.5 * e, k * eb
    g = (k**0.5 + kl) / k
    mbar = 4 / (1 - 4 * eb)
    common = g * 1.2 * (1 + e) * mbar * tau_bar
    delta_ref = (1.4 * tau + common) / (1 - tau)
    chi_ref = (tau + common) / (1 - tau)
    delta, chi = eval_ir_bounds(A.stats, rho, {"high": 53, "work": 24,
                                               "low": 11}, A.m_A)
    assert delta == pytest.approx(delta_ref, rel=1e-14)
    assert chi == pytest.approx(chi_ref, rel=1e-14)


def test_ir_bounds_errors():
    st = poisson1d(1023).A.stats
    with pytest.raises(BoundError, match="work precision too coarse"):
        eval_ir_bounds(st, 0.5, Roundoffs(0.0, 2.0**-8, 2.0**-8), 3)
    with pytest.raises(BoundError):
        eval_ir_bounds(st, 1.0, Roundoffs(0.0, 0.0, 0.0), 3)


def test_tg_bounds_zero_and_monotone():
    h = build_hierarchy(poisson1d(31), levels=2, policy=uniform())
    fin = h.finest
    P_stats = {"kappa_PtP": kappa_PtP(fin.P), "m_P": 3}
    assert eval_tg_bounds(fin.A.stats, P_stats, fin.smoother, 1.0, EXACT,
                          fin.A.m_A).delta == 0.0
    prev = -1.0
    for p in range(53, 5, -1):
        eps = 2.0**-p
        if fin.A.stats.kappa ** 0.5 * eps >= 1:
            break
        d = eval_tg_bounds(fin.A.stats, P_stats, fin.smoother, 1.0,
                           Roundoffs(0.0, 0.0, eps), fin.A.m_A).delta
        assert d > prev
        prev = d


def test_tg_bounds_independent_evaluation():
    h = build_hierarchy(poisson1d(31), levels=2, policy=uniform(53, 24, 11))
    fin = h.finest
    A, st = fin.A, fin.A.stats
    ed = 2.0**-11
    sm = make_richardson(A, 1.0, ed)
    td = st.kappa**0.5 * ed
    kP = np.linalg.cond(fin.P.toarray().T @ fin.P.toarray())
    mu = 3 * 1.0 * kP**0.5 * (3 / (1 - 3 * ed)) * td
    alpha, nM = 2 / st.norm_A, 1 / st.norm_A
    sigma = (1 + ed) * max(alpha * st.norm_A, st.psi * alpha, st.psi * nM)
    beta = 2 + 3 * sigma + 2 * (4 / (1 - 4 * ed)) * (1 + sigma)
    phi = 2 * td**2 + (4 + beta) * mu * td + 2 * mu * td**2
    ref = 4 * td + (2 + beta) * mu + phi
    got = eval_tg_bounds(st, {"kappa_PtP": kappa_PtP(fin.P), "m_P": 3}, sm,
                         1.0, {"high": 53, "work": 24, "low": 11}, A.m_A)
    assert got.delta == pytest.approx(ref, rel=1e-10)
    with pytest.raises(BoundError):
        eval_tg_bounds(st, {"kappa_PtP": 1.0, "m_P": 3}, sm, 1.0,
                       Roundoffs(0.0, 0.0, 0.5), A.m_A)


def test_v_bounds_single_level_and_prefactor():
    h = build_hierarchy(poisson1d(31), levels=1, policy=uniform())
    assert eval_v_bounds(h) == bd.delta_tg_level(h, 1).delta
    assert v_prefactor(2.0, 1) == 2.0
    assert v_prefactor(math.sqrt(2), 2) == pytest.approx(2.0)
    assert v_prefactor(math.inf, 1) == 1.0


def test_v_bounds_two_levels_consistent_with_tg():
    h = build_hierarchy(poisson1d(31), levels=2, policy=uniform(53, 24, 24))
    pre = v_prefactor(h.vartheta, h.m)
    dv, dtg = eval_v_bounds(h), bd.two_grid_bound(h).delta
    assert dtg / pre <= dv <= pre * dtg


def test_v_bound_hypothesis_uniform_ladder():
    h = build_hierarchy(poisson1d(63), levels=5, policy=uniform(53, 24, 24))
    _, rho_v = measure_rho_star(h)
    assert eval_v_bounds(h) < 1 - rho_v


def test_kappa_matched_ladder_violates_coarsening_assumption():
    """With m = 1 the kappa-matched ladder halves epsilon-dot per level while
    theta is about 2, so vartheta < 1 and the V-cycle bound is unavailable."""
    h = build_hierarchy(poisson1d(63), levels=5,
                        policy={"kind": "kappa-matched",
                                "triple": {"high": 53, "work": 24,
                                           "low": 24}})
    assert h.vartheta < 1
    with pytest.raises(BoundError, match="vartheta > 1"):
        eval_v_bounds(h)
    assert bd.eval_v_bounds_sum(h) > 0


def test_rho_star_examples():
    h = build_hierarchy(poisson1d(63), levels=2, policy=uniform())
    rho_tg, rho_v = measure_rho_star(h)
    assert 0 < rho_tg < 1
    h1 = build_hierarchy(poisson1d(63), policy=uniform()).sub(1)
    assert h1.finest.n == 1
    assert measure_rho_star(h1)[1] == pytest.approx(0.0, abs=1e-15)
    big = build_hierarchy(poisson1d(2047), policy=uniform())
    with pytest.raises(ValueError, match="power-iteration"):
        measure_rho_star(big)
    assert bd.dense_capable(big).finest.n == 1023


def test_measure_C_coarse_representable_and_stable(rng):
    prob = poisson1d(63)
    h = build_hierarchy(prob, levels=2, policy=uniform())
    P = h.finest.P.toarray()
    x = P @ rng.standard_normal(31)
    rep = dataclasses.replace(prob, b=prob.A.csr @ x)
    assert measure_C(build_hierarchy(rep, levels=2)) <= 1e-12
    Cs = [measure_C(build_hierarchy(prob, levels=L)) for L in (3, 4, 5, 6)]
    assert max(Cs) <= 1.2 * min(Cs)
    rough = dataclasses.replace(prob, b=rng.standard_normal(63))
    assert measure_C(build_hierarchy(rough, levels=6)) > max(Cs)


def test_fmg_condition_exact_limit_matches_closed_form():
    h = build_hierarchy(poisson1d(63), levels=6, policy=uniform(53, 53, 53))
    _, rho = measure_rho_star(h)
    C, q = measure_C(h), h.disc_q
    for N in range(1, 8):
        chk = eval_fmg_condition(h, C, q, N, rho)
        for j in range(2, h.ell + 1):
            simple = rho**N * math.sqrt(2) * h.theta[j] ** q <= 1
            if abs(rho**N * math.sqrt(2) * h.theta[j] ** q - 1) > 1e-6:
                assert chk.holds[j - 1] == simple
    n_min = chk.n_min
    assert all(eval_fmg_condition(h, C, q, n_min, rho).holds[1:])
    assert not all(eval_fmg_condition(h, C, q, n_min - 1, rho).holds[1:])
    assert all(eval_fmg_condition(h, C, q, 60, rho).holds)


def test_fmg_condition_errors():
    h = build_hierarchy(poisson1d(31), levels=3, policy=uniform())
    with pytest.raises(BoundError, match="not contracting"):
        eval_fmg_condition(h, 1.0, 1.0, 2, 1.0)
    assert n_min_estimate(2.0, 1.0, 0.0) == 1
    assert n_min_estimate(2.0, 1.0, 0.5) == 2


def test_n_min_matches_empirical_minimum():
    h = build_hierarchy(poisson1d(63), levels=6, policy=uniform())
    rep = bound_report(h, fmg_N=2)
    C = rep.C
    first_ok = None
    for N in range(1, 8):
        res = fmg(h, N)
        if all(r.final_error <= C * lev.h for r, lev in
               zip(res.reports, h.levels)):
            first_ok = N
            break
    assert first_ok is not None
    assert abs(rep.n_min - first_ok) <= 1


@pytest.mark.parametrize("which", ["high", "work", "low"])
def test_bounds_monotone_in_each_roundoff(which):
    h = build_hierarchy(poisson1d(63), levels=2, policy=uniform())
    fin = h.finest
    st = fin.A.stats
    P_stats = {"kappa_PtP": kappa_PtP(fin.P), "m_P": 3}
    base = {"high": 2.0**-53, "work": 2.0**-24, "low": 2.0**-16}
    prev = None
    for p in range(40, 9, -2):
        r = Roundoffs(**{**base, which: 2.0**-p})
        if which == "work" or which == "high":
            r = Roundoffs(**{**base, which: 2.0**-p,
                             "low": max(base["low"], 2.0**-p)})
        vals = eval_ir_bounds(st, 0.5, r, fin.A.m_A)
        vals += (eval_tg_bounds(st, P_stats, fin.smoother, 1.0, r,
                                fin.A.m_A).delta,)
        if prev is not None:
            assert all(v >= w for v, w in zip(vals, prev))
        prev = vals


def test_bound_report_fields():
    h = build_hierarchy(poisson1d(63), levels=6, policy=uniform(53, 24, 24))
    rep = bound_report(h, fmg_N=3)
    d = json.loads(rep.to_json())
    assert len(d["tau"]) == 6 and len(d["mu_j"]) == 5
    for k in ("gamma", "chi", "delta_rho_ir", "delta_rho_tg", "delta_rho_v",
              "rho_star_tg", "rho_star_v", "C", "mu_dot", "beta", "sigma"):
        assert d[k] is not None and d[k] >= 0, k
    assert d["fmg_holds"] == [True] * 6
    assert d["delta_rho_v_sum"] <= d["delta_rho_v"] * 2


def test_bound_report_records_violations():
    h = build_hierarchy(poisson1d(63), levels=6,
                        policy={"kind": "kappa-matched",
                                "triple": {"high": 53, "work": 24,
                                           "low": 11}})
    rep = bound_report(h)
    assert rep.delta_rho_v is None
    assert any("vartheta" in n for n in rep.notes)
