import json
import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from mpmg.hierarchy import (LadderWarning, PrecisionPolicy, build_hierarchy,
                            galerkin_coarsen, galerkin_gap, restrict_rhs)
from mpmg.probgen import linear_interpolation, poisson1d, poisson2d
from mpmg.sparsekit import NotSPDError, SparseOperator, energy_norm

UNIFORM_24_11 = {"kind": "uniform",
                 "triple": {"high": 53, "work": 24, "low": 11}}
KAPPA = {"kind": "kappa-matched", "triple": {"high": 53, "work": 24, "low": 24}}


def test_galerkin_identity_and_exact_coarse():
    A = poisson1d(15).A
    assert np.array_equal(galerkin_coarsen(A, sp.identity(15)).toarray(),
                          A.toarray())
    Ac = galerkin_coarsen(poisson1d(7).A, linear_interpolation(7))
    assert galerkin_gap(poisson1d(7).A, linear_interpolation(7),
                        poisson1d(3).A) == 0.0
    assert Ac.cholesky is not None


def test_rank_deficient_interpolation_detected():
    A = poisson1d(7).A
    P = np.zeros((7, 2))
    P[3, 0] = P[3, 1] = 1.0
    with pytest.raises(NotSPDError, match="singular"):
        galerkin_coarsen(A, P)


def test_single_level():
    h = build_hierarchy(poisson1d(15), levels=1)
    assert h.ell == 1 and math.isinf(h.vartheta)
    assert h.finest.P is None


def test_uniform_hierarchy_factors():
    h = build_hierarchy(poisson1d(63), levels=5, policy=UNIFORM_24_11)
    assert [lev.n for lev in h.levels] == [3, 7, 15, 31, 63]
    assert all(z == 1.0 for z in h.zeta.values())
    assert h.vartheta == pytest.approx(2.0, rel=1e-2)
    assert all(t > 1 for t in h.theta.values())
    for lev in h.levels:
        assert lev.h == pytest.approx(lev.A.stats.kappa ** -0.5)
        assert lev.precisions.to_dict() == {"high": 53, "work": 24, "low": 11}
    hs = [lev.h for lev in h.levels]
    assert hs == sorted(hs, reverse=True)
    assert h.vartheta == min(h.theta[j] * h.zeta[j] ** (-1 / h.m)
                             for j in h.theta)


def test_default_coarsening_reaches_single_unknown():
    h = build_hierarchy(poisson1d(63))
    assert h.levels[0].n == 1 and h.ell == 6
    h2 = build_hierarchy(poisson2d(15))
    assert [lev.n for lev in h2.levels] == [1, 9, 49, 225]


def test_too_many_levels():
    with pytest.raises(ValueError, match="too many levels"):
        build_hierarchy(poisson1d(15), levels=6)
    with pytest.raises(ValueError):
        build_hierarchy(poisson1d(15), levels=0)


def test_kappa_matched_policy_arithmetic():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        h = build_hierarchy(poisson1d(255), levels=6, policy=KAPPA)
    pol = PrecisionPolicy.parse(KAPPA)
    for lev in h.levels:
        p = lev.precisions.low.p
        k = lev.A.stats.kappa
        assert 8 <= p <= 24
        if 8 < p < 24:
            assert k * 2.0**-p <= pol.target < k * 2.0 ** -(p - 1)
    assert all(z >= 1 for z in h.zeta.values())
    ps = [lev.precisions.low.p for lev in h.levels]
    assert ps == sorted(ps)


def test_kappa_matched_ladder_warns():
    with pytest.warns(LadderWarning):
        h = build_hierarchy(poisson1d(63), levels=6,
                            policy={**KAPPA, "triple": {"high": 53,
                                                        "work": 24,
                                                        "low": 11}})
    assert h.vartheta <= 1


def test_fixed_ladder():
    pol = {"kind": "fixed-ladder", "triple": {"high": 53, "work": 24,
                                              "low": 24},
           "ladder": [8, 11, 16, 24]}
    h = build_hierarchy(poisson1d(31), levels=4, policy=pol)
    assert [lev.precisions.low.p for lev in h.levels] == [8, 11, 16, 24]
    assert h.zeta[4] == 2.0**8
    with pytest.raises(ValueError, match="one entry per level"):
        build_hierarchy(poisson1d(31), levels=3, policy=pol)


def test_precision_order_enforced():
    with pytest.raises(ValueError):
        PrecisionPolicy.parse({"triple": {"high": 24, "work": 53, "low": 11}})
    with pytest.raises(ValueError):
        PrecisionPolicy.parse({"kind": "adaptive"})


@pytest.mark.parametrize("prob", [poisson1d(63), poisson2d(15)],
                         ids=["1d", "2d"])
def test_hierarchy_galerkin_exact(prob):
    h = build_hierarchy(prob)
    for lev in h.levels[1:]:
        coarse = h.level(lev.j - 1)
        assert galerkin_gap(lev.A, lev.P, coarse.A) <= 1e-12


def test_restrict_rhs_examples(rng):
    P = linear_interpolation(3)
    assert np.array_equal(restrict_rhs(P, np.ones(3)), [2.0])
    assert np.array_equal(restrict_rhs(P, np.zeros(3)), [0.0])
    with pytest.raises(ValueError, match="dimension mismatch"):
        restrict_rhs(P, np.ones(4))


def test_coarse_energy_never_exceeds_fine(rng):
    prob = poisson1d(63)
    P = SparseOperator(linear_interpolation(63))
    A = prob.A
    Ac = galerkin_coarsen(A, P)
    for _ in range(100):
        b = rng.standard_normal(63)
        bc = restrict_rhs(P, b)
        assert energy_norm(Ac, Ac.solve(bc)) <= energy_norm(A, A.solve(b)) \
            * (1 + 1e-12)


def test_coarse_projection_energy_orthogonal(rng):
    prob = poisson1d(255)
    A = prob.A.toarray()
    P = linear_interpolation(255).toarray()
    Pi = P @ np.linalg.solve(P.T @ A @ P, P.T @ A)
    for _ in range(20):
        x = rng.standard_normal(255)
        ip = (A @ Pi @ x) @ (x - Pi @ x)
        assert abs(ip) <= 1e-8 * (x @ A @ x)


def test_summary_json():
    h = build_hierarchy(poisson1d(31), levels=3, policy=UNIFORM_24_11)
    d = json.loads(h.to_json())
    assert d["levels"] == 3 and len(d["grid"]) == 3
    assert json.loads(build_hierarchy(poisson1d(7), levels=1).to_json())[
        "vartheta"] == "inf"
    with pytest.raises(ValueError, match="invalid level"):
        h.level(4)
