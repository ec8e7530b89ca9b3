"""Relaxation operators with certified low-precision application constants.

Each smoother represents a preconditioner ``M`` for the stationary iteration
``y <- y - M (A y - r)``. ``apply`` evaluates ``M z`` with every operation
rounded to the given precision; ``alpha_M`` certifies
``||computed - M z|| <= alpha_M * eps * ||z||``. Coefficients are formed once
in carrier precision.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .fpemu import as_precision, fl_add, fl_mul, fl_sub
from .sparsekit import SparseSpd, lambda_max

CHEB_INTERVAL_FRACTION = 30.0
JACOBI_ALPHA_CONSTANT = 2.0
SMOOTHER_KINDS = ("richardson", "jacobi", "double", "cheb2", "cheb2-jacobi")


def _m_dot(m: int, eps: float) -> float:
    """``m / (1 - m eps)``, the sparsity constant of a rounded product."""
    return m / (1.0 - m * eps)


def _cheb2_steps(lo: float, hi: float):
    """Reciprocals of the two Chebyshev roots on ``[lo, hi]``."""
    if not 0 < lo < hi:
        raise ValueError(f"degenerate smoothing interval [{lo}, {hi}]")
    c, r = 0.5 * (hi + lo), 0.5 * (hi - lo)
    roots = [c + r * math.cos((2 * k - 1) * math.pi / 4) for k in (1, 2)]
    return 1.0 / roots[0], 1.0 / roots[1]


def _positive_diagonal(A: SparseSpd) -> np.ndarray:
    d = np.asarray(A.diagonal, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("nonpositive diagonal entry")
    return d


def _scaled_norm(A: SparseSpd, d: np.ndarray) -> float:
    """``||D^-1/2 A D^-1/2||``."""
    s = sp.diags(1.0 / np.sqrt(d))
    return lambda_max((s @ A.csr @ s).tocsr())


class Smoother:
    """Base class; subclasses define ``apply`` and ``dense``."""

    kind = "base"

    def __init__(self, A: SparseSpd, eps_low: float):
        self.A = A
        self.n = A.n
        self.eps_low = float(eps_low)
        self.alpha_M = math.nan
        self.norm_M = math.nan

    def apply(self, z, prec) -> np.ndarray:
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        """``M`` as a dense carrier-precision matrix."""
        raise NotImplementedError

    def apply_exact(self, z) -> np.ndarray:
        return self.dense() @ np.asarray(z, dtype=np.float64)

    def params(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha_M": self.alpha_M,
                "norm_M": self.norm_M, **self.params()}

    def __repr__(self):
        return (f"{type(self).__name__}(n={self.n}, "
                f"alpha_M={self.alpha_M:.4g}, norm_M={self.norm_M:.4g})")


class Richardson(Smoother):
    """``M = (omega/||A||) I``; ``alpha_M = 2/||A||``."""

    kind = "richardson"

    def __init__(self, A: SparseSpd, omega: float = 1.0, eps_low: float = 0.0):
        if not 0 < omega < 2:
            raise ValueError(f"omega must lie in (0, 2), got {omega}")
        super().__init__(A, eps_low)
        self.omega = float(omega)
        self.coef = self.omega / A.stats.norm_A
        self.norm_M = self.coef
        self.alpha_M = 2.0 / A.stats.norm_A

    def apply(self, z, prec):
        return fl_mul(self.coef, np.asarray(z, dtype=np.float64), prec)

    def dense(self):
        return self.coef * np.eye(self.n)

    def params(self):
        return {"omega": self.omega}


class Jacobi(Smoother):
    """``M = s D^-1`` with ``s = omega/||D^-1/2 A D^-1/2||``.

    ``alpha_M = 2 kappa(D)/||A||``.
    """

    kind = "jacobi"

    def __init__(self, A: SparseSpd, omega: float = 1.0, eps_low: float = 0.0):
        if not 0 < omega < 2:
            raise ValueError(f"omega must lie in (0, 2), got {omega}")
        super().__init__(A, eps_low)
        d = _positive_diagonal(A)
        self.omega = float(omega)
        self.scale = self.omega / _scaled_norm(A, d)
        self.mdiag = self.scale / d
        self.kappa_D = float(d.max() / d.min())
        self.norm_M = float(self.mdiag.max())
        self.alpha_M = JACOBI_ALPHA_CONSTANT * self.kappa_D / A.stats.norm_A

    def apply(self, z, prec):
        return fl_mul(self.mdiag, np.asarray(z, dtype=np.float64), prec)

    def dense(self):
        return np.diag(self.mdiag)

    def params(self):
        return {"omega": self.omega, "kappa_D": self.kappa_D}


class DoubleSweep(Smoother):
    """Two sweeps fused into ``Mt = M1 + M2 - M2 A M1``.

    Applied as ``((M2 z) + (M1 z)) - (M2 (A (M1 z)))``.
    """

    kind = "double"

    def __init__(self, s1: Smoother, s2: Smoother, A: SparseSpd,
                 eps_low: float = 0.0):
        if not (s1.n == s2.n == A.n):
            raise ValueError(
                f"dimension mismatch: {s1.n}, {s2.n} and A of size {A.n}")
        super().__init__(A, eps_low)
        self.s1, self.s2 = s1, s2
        nA, psi = A.stats.norm_A, A.stats.psi
        n1, n2, a1, a2 = s1.norm_M, s2.norm_M, s1.alpha_M, s2.alpha_M
        e = self.eps_low
        if (isinstance(s1, Richardson) and isinstance(s2, Richardson)
                and s1.omega == s2.omega):
            self.norm_M = 2.0 * s1.omega / nA
        else:
            self.norm_M = n1 + n2 + nA * n1 * n2
        mA = _m_dot(A.m_A, e)
        self.alpha_M = self.norm_M + (1 + e) * (
            (n2 + a2 * e) * (nA * a1 + psi * mA * a1 * e + psi * mA * n1)
            + nA * n1 * a2 + n1 + n2 + 2 * a1 + 2 * a2)

    def apply(self, z, prec):
        z = np.asarray(z, dtype=np.float64)
        w1 = self.s1.apply(z, prec)
        w4 = self.s2.apply(z, prec)
        w2 = self.A.matvec(w1, prec)
        w3 = self.s2.apply(w2, prec)
        return fl_sub(fl_add(w4, w1, prec), w3, prec)

    def dense(self):
        M1, M2 = self.s1.dense(), self.s2.dense()
        return M1 + M2 - M2 @ self.A.toarray() @ M1

    def params(self):
        return {"inner": [self.s1.to_dict(), self.s2.to_dict()]}


class Chebyshev2(Smoother):
    """Degree-2 Chebyshev relaxation, ``M_C = w1 I - w2 A``.

    The polynomial vanishes at the Chebyshev roots of ``[lo, hi]``; the
    default interval is ``[||A||/30, ||A||]``. Applied as
    ``(w1 z) - (w2 (A z))``.
    """

    kind = "cheb2"

    def __init__(self, A: SparseSpd, interval=None, eps_low: float = 0.0,
                 fraction: float = CHEB_INTERVAL_FRACTION):
        super().__init__(A, eps_low)
        nA, psi = A.stats.norm_A, A.stats.psi
        if interval is None:
            interval = (nA / fraction, nA)
        lo, hi = map(float, interval)
        if hi < nA * (1 - 1e-6):
            raise ValueError("smoothing interval must cover ||A||")
        s1, s2 = _cheb2_steps(lo, hi)
        self.interval = (lo, hi)
        self.w1, self.w2 = s1 + s2, s1 * s2
        self.norm_M = max(self.w1, abs(self.w1 - self.w2 * nA))
        e = self.eps_low
        mA = _m_dot(A.m_A, e)
        self.alpha_M = self.norm_M + (
            self.w1 + (1 + e) * self.w2 * psi * mA + self.w2 * nA) * (1 + e)

    def apply(self, z, prec):
        z = np.asarray(z, dtype=np.float64)
        t1 = fl_mul(self.w1, z, prec)
        t2 = fl_mul(self.w2, self.A.matvec(z, prec), prec)
        return fl_sub(t1, t2, prec)

    def dense(self):
        return self.w1 * np.eye(self.n) - self.w2 * self.A.toarray()

    def params(self):
        return {"interval": list(self.interval), "omega1": self.w1,
                "omega2": self.w2}


class Chebyshev2Jacobi(Smoother):
    """Degree-2 Chebyshev on ``D^-1 A``: ``M_C = (M1 + M2) - M2 A M1``.

    ``M_k = s_k D^-1`` are diagonal, formed in carrier precision. Applied as
    ``(W z) - (M2 (A (M1 z)))`` with ``W = M1 + M2``.
    """

    kind = "cheb2-jacobi"

    def __init__(self, A: SparseSpd, interval=None, eps_low: float = 0.0,
                 fraction: float = CHEB_INTERVAL_FRACTION):
        super().__init__(A, eps_low)
        d = _positive_diagonal(A)
        lam = _scaled_norm(A, d)
        if interval is None:
            interval = (lam / fraction, lam)
        lo, hi = map(float, interval)
        if hi < lam * (1 - 1e-6):
            raise ValueError("smoothing interval must cover ||D^-1/2 A D^-1/2||")
        s1, s2 = _cheb2_steps(lo, hi)
        self.interval = (lo, hi)
        self.m1, self.m2 = s1 / d, s2 / d
        self.wdiag = self.m1 + self.m2
        self.kappa_D = float(d.max() / d.min())
        nA, psi = A.stats.norm_A, A.stats.psi
        n1, n2 = float(self.m1.max()), float(self.m2.max())
        nw = float(self.wdiag.max())
        # M_C = D^-1/2 q(D^-1/2 A D^-1/2) D^-1/2 with q linear
        q = max(s1 + s2, abs(s1 + s2 - s1 * s2 * lam))
        self.norm_M = q / float(d.min())
        e = self.eps_low
        mA = _m_dot(A.m_A, e)
        inner = (nw + n2 * nA * n1 + n2 * psi * mA * (1 + e) * n1
                 + n2 * n1 * (nA * (1 + e) + psi * mA * e * (1 + e)))
        self.alpha_M = self.norm_M + (1 + e) * inner

    def apply(self, z, prec):
        z = np.asarray(z, dtype=np.float64)
        t1 = fl_mul(self.wdiag, z, prec)
        w = fl_mul(self.m1, z, prec)
        u = self.A.matvec(w, prec)
        v = fl_mul(self.m2, u, prec)
        return fl_sub(t1, v, prec)

    def dense(self):
        return (np.diag(self.wdiag)
                - np.diag(self.m2) @ self.A.toarray() @ np.diag(self.m1))

    def params(self):
        return {"interval": list(self.interval), "kappa_D": self.kappa_D}


def make_richardson(A, omega=1.0, eps_low=0.0):
    return Richardson(A, omega, eps_low)


def make_jacobi(A, omega=1.0, eps_low=0.0):
    return Jacobi(A, omega, eps_low)


def combine_double_sweep(s1, s2, A, eps_low=None):
    if eps_low is None:
        eps_low = max(s1.eps_low, s2.eps_low)
    return DoubleSweep(s1, s2, A, eps_low)


def make_chebyshev2(A, interval=None, eps_low=0.0,
                    fraction=CHEB_INTERVAL_FRACTION):
    return Chebyshev2(A, interval, eps_low, fraction)


def make_chebyshev2_jacobi(A, interval=None, eps_low=0.0,
                           fraction=CHEB_INTERVAL_FRACTION):
    return Chebyshev2Jacobi(A, interval, eps_low, fraction)


def make_smoother(A: SparseSpd, spec, eps_low) -> Smoother:
    """Build a smoother from a config mapping or kind string.

    Keys: ``kind`` (one of ``SMOOTHER_KINDS``), ``omega``, ``fraction``
    (Chebyshev interval ``[top/fraction, top]``) and, for ``double``,
    ``inner``: a list of two inner specs (default two Richardson sweeps).
    """
    if isinstance(spec, str):
        spec = {"kind": spec}
    spec = dict(spec)
    kind = spec.pop("kind", "richardson")
    if not isinstance(eps_low, float):
        eps_low = as_precision(eps_low).eps
    omega = float(spec.pop("omega", 1.0))
    fraction = float(spec.pop("fraction", CHEB_INTERVAL_FRACTION))
    inner = spec.pop("inner", None)
    if spec:
        raise ValueError(f"unknown smoother keys: {sorted(spec)}")
    if kind == "richardson":
        return Richardson(A, omega, eps_low)
    if kind == "jacobi":
        return Jacobi(A, omega, eps_low)
    if kind == "cheb2":
        return Chebyshev2(A, None, eps_low, fraction)
    if kind == "cheb2-jacobi":
        return Chebyshev2Jacobi(A, None, eps_low, fraction)
    if kind == "double":
        inner = inner or [{"kind": "richardson", "omega": omega}] * 2
        if len(inner) != 2:
            raise ValueError("double sweep needs exactly two inner smoothers")
        s1, s2 = (make_smoother(A, s, eps_low) for s in inner)
        return DoubleSweep(s1, s2, A, eps_low)
    raise ValueError(f"unknown smoother {kind!r}; choose from {SMOOTHER_KINDS}")
