"""Model problems: 1D/2D Poisson matrices, interpolation and test vectors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fpemu import FP32, as_precision, round_to
from .sparsekit import SparseSpd, SpectralStats, energy_norm

PROBLEM_NAMES = ("poisson1d", "poisson1d-reaction", "poisson1d-noflow",
                 "poisson2d")


@dataclass
class ModelProblem:
    """A linear system ``A x = b`` together with its grid description.

    ``boundary`` is ``"dirichlet"`` (interior nodes only) or ``"noflow"``
    (boundary nodes included); ``n_side`` is the number of nodes per
    coordinate direction.
    """

    name: str
    A: SparseSpd
    b: np.ndarray
    exact_solution: np.ndarray | None = None
    order_2m: int = 2
    disc_q: float = 1.0
    dim: int = 1
    n_side: int = 0
    h: float = 0.0
    boundary: str = "dirichlet"
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.order_2m // 2

    @property
    def n(self) -> int:
        return self.A.n


def _tridiag(n, lo, mid, hi):
    return sp.diags([np.full(n - 1, lo), np.full(n, mid), np.full(n - 1, hi)],
                     [-1, 0, 1], format="csr")


def _nodes_dirichlet(n):
    h = 1.0 / (n + 1)
    return h, h * np.arange(1, n + 1)


def _manufactured_1d(x):
    return np.exp(x) * np.sin(math.pi * x)


def poisson1d(n: int, reaction: bool = False) -> ModelProblem:
    """Linear-element stiffness matrix for ``-u''`` (``+ u``) on (0, 1).

    Dirichlet conditions, ``n`` interior nodes, ``h = 1/(n+1)``. The
    stiffness part is ``tridiag(-1, 2, -1)/h``; the reaction term adds the
    lumped mass ``h I``. The right-hand side is ``A u`` for the sampled
    manufactured solution ``u = exp(x) sin(pi x)``.
    """
    if n < 2:
        raise ValueError(f"poisson1d needs n >= 2, got {n}")
    h, x = _nodes_dirichlet(n)
    shift = h if reaction else 0.0
    mat = _tridiag(n, -1.0 / h, 2.0 / h + shift, -1.0 / h)
    k = np.array([1, n])
    lam = (2.0 - 2.0 * np.cos(k * math.pi * h)) / h + shift
    # |A| is similar to A reflected about 2/h, so its norm is lambda_max too
    stats = SpectralStats(norm_A=float(lam[1]), norm_Ainv=1.0 / float(lam[0]),
                          psi=float(lam[1]))
    A = SparseSpd(mat, stats=stats)
    u = _manufactured_1d(x)
    name = "poisson1d-reaction" if reaction else "poisson1d"
    return ModelProblem(name=name, A=A, b=A.csr @ u, exact_solution=u,
                        order_2m=2, disc_q=1.0, dim=1, n_side=n, h=h)


def poisson1d_noflow(n: int) -> ModelProblem:
    """Linear elements for ``-u'' + u`` with ``u'(0) = u'(1) = 0``.

    ``n`` nodes including both ends, ``h = 1/(n-1)``; the mass matrix is
    lumped, so the constant vector has energy exactly 1.
    """
    if n < 3:
        raise ValueError(f"poisson1d_noflow needs n >= 3, got {n}")
    h = 1.0 / (n - 1)
    x = h * np.arange(n)
    main = np.full(n, 2.0 / h)
    main[[0, -1]] = 1.0 / h
    mass = np.full(n, h)
    mass[[0, -1]] = h / 2
    mat = sp.diags([np.full(n - 1, -1.0 / h), main + mass,
                    np.full(n - 1, -1.0 / h)], [-1, 0, 1], format="csr")
    A = SparseSpd(mat)
    u = 1.0 + 0.5 * np.cos(math.pi * x)
    return ModelProblem(name="poisson1d-noflow", A=A, b=A.csr @ u,
                        exact_solution=u, order_2m=2, disc_q=1.0, dim=1,
                        n_side=n, h=h, boundary="noflow")


def poisson2d(n_side: int) -> ModelProblem:
    """Five-point Laplacian on ``n_side**2`` interior nodes of the unit square.

    Diagonal ``4/h**2``, neighbours ``-1/h**2``, lexicographic ordering.
    """
    if n_side < 2:
        raise ValueError(f"poisson2d needs n_side >= 2, got {n_side}")
    h, x = _nodes_dirichlet(n_side)
    T = _tridiag(n_side, -1.0, 2.0, -1.0)
    I = sp.identity(n_side, format="csr")
    mat = ((sp.kron(I, T) + sp.kron(T, I)) / h**2).tocsr()
    s = 4.0 * np.sin(np.array([1, n_side]) * math.pi * h / 2) ** 2
    lo, hi = float(2 * s[0] / h**2), float(2 * s[1] / h**2)
    stats = SpectralStats(norm_A=hi, norm_Ainv=1.0 / lo, psi=hi)
    A = SparseSpd(mat, stats=stats)
    X, Y = np.meshgrid(x, x, indexing="xy")
    u = (np.exp(X) * np.sin(math.pi * X) * np.sin(math.pi * Y)).ravel()
    return ModelProblem(name="poisson2d", A=A, b=A.csr @ u, exact_solution=u,
                        order_2m=2, disc_q=1.0, dim=2, n_side=n_side, h=h)


def make_problem(name: str, size: int) -> ModelProblem:
    """Build a problem by name; ``size`` is n (1D) or n_side (2D)."""
    if name == "poisson1d":
        return poisson1d(size)
    if name == "poisson1d-reaction":
        return poisson1d(size, reaction=True)
    if name == "poisson1d-noflow":
        return poisson1d_noflow(size)
    if name == "poisson2d":
        return poisson2d(size)
    raise ValueError(f"unknown problem {name!r}; choose from {PROBLEM_NAMES}")


def linear_interpolation(n_fine: int, boundary: str = "dirichlet"):
    """1D linear interpolation from every other node, as a CSR matrix.

    Dirichlet: coarse node k sits at fine node 2k+1 and its column is
    ``[1/2, 1, 1/2]`` on rows 2k..2k+2. No-flow: coarse node k sits at fine
    node 2k and the half-weights are clipped at the ends.
    """
    if n_fine % 2 == 0:
        raise ValueError(f"n_fine must be odd, got {n_fine}")
    if boundary == "dirichlet":
        if n_fine < 3:
            raise ValueError("n_fine must be >= 3")
        nc = (n_fine - 1) // 2
        k = np.arange(nc)
        rows = np.concatenate([2 * k, 2 * k + 1, 2 * k + 2])
    elif boundary == "noflow":
        if n_fine < 3:
            raise ValueError("n_fine must be >= 3")
        nc = (n_fine + 1) // 2
        k = np.arange(nc)
        rows = np.concatenate([2 * k - 1, 2 * k, 2 * k + 1])
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    cols = np.concatenate([k, k, k])
    vals = np.concatenate([np.full(nc, 0.5), np.ones(nc), np.full(nc, 0.5)])
    keep = (rows >= 0) & (rows < n_fine)
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                         shape=(n_fine, nc))


def coarse_size(n_side: int, boundary: str = "dirichlet") -> int:
    if boundary == "noflow":
        return (n_side + 1) // 2
    return (n_side - 1) // 2


def interpolation_for(problem: ModelProblem, n_side: int):
    """Interpolation from the next coarser grid of a problem's geometry."""
    P1 = linear_interpolation(n_side, problem.boundary)
    if problem.dim == 1:
        return P1
    return sp.kron(P1, P1, format="csr")


def oscillatory_rounding_case(n: int, amplitude: float, prec=FP32):
    """Rounding a nearly constant, oscillating vector toward zero.

    Returns ``(x, predicted)`` where ``x = 1 + y`` with ``y`` alternating
    ``+amplitude/2, -amplitude/2`` on the ``n``-node no-flow grid, and
    ``predicted = sqrt(2) * eps / h`` is the estimated relative energy error
    of truncating ``x`` to ``prec``.
    """
    prec = as_precision(prec)
    if n < 3:
        raise ValueError(f"n must be >= 3, got {n}")
    if not 0 <= amplitude < prec.eps:
        raise ValueError("amplitude must lie in [0, eps)")
    h = 1.0 / (n - 1)
    y = 0.5 * amplitude * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return 1.0 + y, math.sqrt(2.0) * prec.eps / h


def measure_rounding_error(A: SparseSpd, x, prec=FP32) -> float:
    """Relative energy error of rounding ``x`` toward zero in ``prec``."""
    z = round_to(x, prec, mode="toward_zero")
    return energy_norm(A, z - x) / energy_norm(A, z)
