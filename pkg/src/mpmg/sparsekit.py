"""Sparse SPD storage, precision-aware kernels and spectral statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fpemu import as_precision, fl_add, fl_mul, fl_sub, round_to

DENSE_EIG_MAX = 1024


class NotSPDError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Iterative eigenvalue estimate failed; ``partial`` holds the last value."""

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class SparseOperator:
    """Rectangular CSR matrix with an emulated-precision product.

    Rows are padded to a fixed width so each product runs as a short loop of
    vector operations; accumulation within a row is left to right by column.
    """

    def __init__(self, mat):
        csr = sp.csr_matrix(mat, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        csr.eliminate_zeros()
        self._csr = csr
        self.shape = csr.shape
        self.row_ptr = _readonly(csr.indptr)
        self.col_idx = _readonly(csr.indices)
        self.values = _readonly(csr.data)

    @property
    def csr(self):
        return self._csr

    @cached_property
    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    @cached_property
    def max_row_nnz(self) -> int:
        return int(self.row_nnz.max()) if self.shape[0] else 0

    @cached_property
    def max_col_nnz(self) -> int:
        counts = np.bincount(self.col_idx, minlength=self.shape[1])
        return int(counts.max()) if counts.size else 0

    @cached_property
    def _ell(self):
        nrow = self.shape[0]
        width = max(self.max_row_nnz, 1)
        cols = np.zeros((nrow, width), dtype=np.int64)
        vals = np.zeros((nrow, width))
        pos = np.arange(self.values.size) - np.repeat(self.row_ptr[:-1],
                                                      self.row_nnz)
        rows = np.repeat(np.arange(nrow), self.row_nnz)
        cols[rows, pos] = self.col_idx
        vals[rows, pos] = self.values
        return cols, vals

    @cached_property
    def T(self) -> "SparseOperator":
        return SparseOperator(self._csr.T)

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def abs_matvec(self, x):
        return abs(self._csr) @ x

    def matvec(self, x, prec=None):
        """Product with every multiply and add rounded to ``prec``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.shape[1],):
            raise ValueError(
                f"dimension mismatch: matrix {self.shape}, vector {x.shape}")
        cols, vals = self._ell
        prec = as_precision(53 if prec is None else prec)
        prods = fl_mul(vals, x[cols], prec)
        acc = prods[:, 0]
        for k in range(1, prods.shape[1]):
            acc = fl_add(acc, prods[:, k], prec)
        return acc + 0.0

    def __matmul__(self, x):
        return self.matvec(x)


@dataclass(frozen=True)
class SpectralStats:
    norm_A: float
    norm_Ainv: float
    psi: float

    @property
    def kappa(self) -> float:
        return self.norm_A * self.norm_Ainv

    @property
    def kappa_under(self) -> float:
        return self.psi * self.norm_Ainv

    @property
    def lambda_min(self) -> float:
        return 1.0 / self.norm_Ainv

    def to_dict(self):
        d = asdict(self)
        d.update(kappa=self.kappa, kappa_under=self.kappa_under)
        return d


class CholeskyFactor:
    """Banded Cholesky factorisation in carrier precision."""

    def __init__(self, A: "SparseSpd"):
        coo = A.csr.tocoo()
        u = int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0
        n = A.n
        ab = np.zeros((u + 1, n))
        upper = coo.row <= coo.col
        r, c = coo.row[upper], coo.col[upper]
        ab[u + r - c, c] = coo.data[upper]
        try:
            self._cb = scipy.linalg.cholesky_banded(ab, lower=False)
        except np.linalg.LinAlgError as exc:
            raise NotSPDError(f"matrix not SPD: {exc}") from exc
        self.bandwidth = u
        self.n = n

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        return scipy.linalg.cho_solve_banded((self._cb, False), b)


class SparseSpd(SparseOperator):
    """Symmetric positive definite CSR matrix.

    ``stats`` may be supplied (e.g. from an analytic spectrum); otherwise
    they are estimated on first access and cached.
    """

    def __init__(self, mat, stats: SpectralStats | None = None,
                 check: bool = True):
        super().__init__(mat)
        if self.shape[0] != self.shape[1]:
            raise ValueError(f"matrix must be square, got {self.shape}")
        self.n = self.shape[0]
        if check:
            diff = self._csr - self._csr.T
            if diff.nnz and np.max(np.abs(diff.data)) > 0:
                raise NotSPDError("matrix not symmetric")
            self.cholesky  # noqa: B018 -- raises NotSPDError if indefinite
        self._stats = stats

    @property
    def m_A(self) -> int:
        return self.max_row_nnz

    @cached_property
    def cholesky(self) -> CholeskyFactor:
        return CholeskyFactor(self)

    def solve(self, b):
        return self.cholesky.solve(b)

    @property
    def stats(self) -> SpectralStats:
        if self._stats is None:
            self._stats = estimate_stats(self)
        return self._stats

    @cached_property
    def diagonal(self) -> np.ndarray:
        return _readonly(self._csr.diagonal())


def matvec(A: SparseOperator, x, prec) -> np.ndarray:
    return A.matvec(x, prec)


def residual(A: SparseOperator, x, b, prec) -> np.ndarray:
    """``A x - b`` with all operations in ``prec``."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.shape[0],):
        raise ValueError(
            f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    return fl_sub(A.matvec(x, prec), b, prec)


def residual_mixed(A: SparseOperator, x, b, high, work) -> np.ndarray:
    """Residual in ``high`` precision, then rounded to ``work``."""
    high, work = as_precision(high), as_precision(work)
    if high.p < work.p:
        raise ValueError("precision inversion: high precision is lower "
                         "than working precision")
    return round_to(residual(A, x, b, high), work)


def energy_norm(A: SparseSpd, x) -> float:
    """``sqrt(x' A x)`` in carrier precision (instrumentation only)."""
    x = np.asarray(x, dtype=np.float64)
    q = float(x @ (A.csr @ x))
    if q < 0:
        scale = float(np.abs(x) @ (abs(A.csr) @ np.abs(x)))
        if q < -1e-12 * scale:
            raise NotSPDError("matrix not SPD: negative energy")
        q = 0.0
    return math.sqrt(q)


def power_iteration(apply, n, tol=1e-8, maxiter=10_000, seed=0):
    """Largest eigenvalue of a symmetric positive semidefinite operator."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(maxiter):
        w = apply(v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    raise ConvergenceError(
        f"power iteration did not converge in {maxiter} steps "
        f"(partial estimate {lam:.6g})", partial=lam)


def estimate_stats(A: SparseSpd, method: str = "auto",
                   tol: float = 1e-8) -> SpectralStats:
    """Spectral norm, inverse norm and ``|| |A| ||`` of an SPD matrix.

    ``method``: ``"dense"`` (symmetric eigensolver), ``"lanczos"`` (ARPACK,
    shift-invert through the banded Cholesky factor for the smallest
    eigenvalue) or ``"power"`` (plain and inverse power iteration). ``"auto"``
    picks dense up to ``DENSE_EIG_MAX`` and Lanczos beyond.
    """
    n = A.n
    if method == "auto":
        method = "dense" if n <= DENSE_EIG_MAX else "lanczos"
    absA = abs(A.csr)
    if method == "dense" or n <= 2:
        ev = scipy.linalg.eigvalsh(A.toarray())
        lo, hi = float(ev[0]), float(ev[-1])
        psi = float(np.max(np.abs(scipy.linalg.eigvalsh(absA.toarray()))))
    elif method == "lanczos":
        hi = float(spla.eigsh(A.csr, k=1, which="LA", tol=tol * 1e-2,
                              return_eigenvectors=False)[0])
        inv = spla.LinearOperator((n, n), matvec=A.solve, dtype=np.float64)
        lo = float(spla.eigsh(A.csr, k=1, sigma=0.0, OPinv=inv,
                              which="LM", tol=tol * 1e-2,
                              return_eigenvectors=False)[0])
        psi = float(spla.eigsh(absA, k=1, which="LA", tol=tol * 1e-2,
                               return_eigenvectors=False)[0])
    elif method == "power":
        hi = power_iteration(lambda v: A.csr @ v, n, tol)
        lo = 1.0 / power_iteration(A.solve, n, tol)
        psi = power_iteration(lambda v: absA @ v, n, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    if lo <= 0:
        raise NotSPDError("matrix not SPD: nonpositive eigenvalue")
    return SpectralStats(norm_A=hi, norm_Ainv=1.0 / lo, psi=max(psi, hi))


def lambda_max(mat, tol: float = 1e-10) -> float:
    """Largest eigenvalue of a symmetric (sparse or dense) matrix."""
    n = mat.shape[0]
    if n <= DENSE_EIG_MAX:
        dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
        return float(scipy.linalg.eigvalsh(dense)[-1])
    return float(spla.eigsh(mat, k=1, which="LA", tol=tol,
                            return_eigenvectors=False)[0])


def read_matrix_market(path) -> SparseSpd:
    return SparseSpd(scipy.io.mmread(str(path)))


def write_matrix_market(path, A: SparseOperator, comment: str = ""):
    scipy.io.mmwrite(str(path), A.csr, comment=comment, precision=17)


def read_vector(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(Path(path), dtype=np.float64))


def write_vector(path, x):
    np.savetxt(Path(path), np.asarray(x, dtype=np.float64), fmt="%.17g")
