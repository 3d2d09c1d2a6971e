"""
Sparse symmetric solvers for the masked cell problems.

Pure-Neumann cell problems have the constants as kernel. They are solved
with a Jacobi-preconditioned conjugate gradient in which every search
direction is projected onto mean-zero vectors, so the returned solution
carries the normalization "mean over fluid nodes = 0".
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import sparse

from .errors import CompatibilityError, IterationLimitError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
COMPATIBILITY_TOL = 1e-8
_MAX_RESTARTS = 3


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Row-compressed operator with symmetry and kernel flags.

    Attributes:
        matrix: CSR matrix of the operator.
        symmetric: Entries satisfy A == A.T exactly.
        singular: The operator annihilates constants (pure Neumann / periodic).
    """

    matrix: sparse.csr_matrix
    symmetric: bool = True
    singular: bool = False

    def __post_init__(self):
        matrix = sparse.csr_matrix(self.matrix, dtype=float)
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"operator must be square, got {matrix.shape}")
        if self.symmetric and matrix.nnz:
            asym = abs(matrix - matrix.T)
            if asym.nnz and asym.max() != 0:
                raise ValueError("operator flagged symmetric but A != A.T")
        object.__setattr__(self, "matrix", matrix)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def dot(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x


@dataclass
class SolveReport:
    """Outcome of an iterative solve."""

    iterations: int
    residual_norm: float
    converged: bool
    tolerance: float
    rhs_norm: float
    projected_imbalance: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def default_max_iter(dimension: int) -> int:
    return max(50, int(50 * math.sqrt(dimension)))


def solve_spd(
    op: SparseOperator,
    rhs: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """Solve ``op x = rhs`` for a symmetric positive (semi)definite operator.

    Args:
        op: The operator; ``op.singular`` selects mean-zero handling.
        rhs: Right-hand side of length ``op.dimension``.
        tol: Relative residual tolerance, ``||op x - rhs|| <= tol ||rhs||``.
        max_iter: Iteration budget, 50 sqrt(n) by default.
        x0: Optional initial guess.

    Returns:
        The solution and a :class:`SolveReport`. For singular operators the
        residual is measured against the mean-free part of ``rhs``.

    Raises:
        CompatibilityError: ``|sum(rhs)|`` exceeds 1e-8 ||rhs|| on a
            singular operator.
        IterationLimitError: The budget ran out before convergence.
    """
    n = op.dimension
    b = np.array(rhs, dtype=float).reshape(-1)
    if b.shape != (n,):
        raise ValueError(f"rhs has length {b.size}, operator dimension is {n}")
    if max_iter is None:
        max_iter = default_max_iter(n)

    imbalance = 0.0
    if op.singular:
        total = float(b.sum())
        norm = float(np.linalg.norm(b))
        if abs(total) > COMPATIBILITY_TOL * norm:
            raise CompatibilityError(
                f"rhs violates the solvability condition: |sum| = {abs(total):.3e} "
                f"> {COMPATIBILITY_TOL:g} * ||rhs|| = {COMPATIBILITY_TOL * norm:.3e}",
                imbalance=abs(total),
            )
        imbalance = abs(total)
        b = b - b.mean()

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        report = SolveReport(0, 0.0, True, tol, 0.0, imbalance)
        return np.zeros(n), report

    diagonal = op.matrix.diagonal()
    inv_diag = 1.0 / np.where(diagonal > 0, diagonal, 1.0)

    def project(v: np.ndarray) -> np.ndarray:
        return v - v.mean() if op.singular else v

    x = np.zeros(n) if x0 is None else project(np.array(x0, dtype=float))
    target = tol * b_norm
    iterations = 0
    residual = math.inf

    for _ in range(_MAX_RESTARTS):
        r = project(b - op.dot(x))
        residual = float(np.linalg.norm(r))
        if residual <= target:
            break
        z = project(inv_diag * r)
        p = z.copy()
        rz = float(r @ z)
        while iterations < max_iter:
            q = op.dot(p)
            alpha = rz / float(p @ q)
            x += alpha * p
            r -= alpha * q
            iterations += 1
            residual = float(np.linalg.norm(r))
            if residual <= target:
                break
            z = project(inv_diag * r)
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        if iterations >= max_iter:
            break

    x = project(x)
    residual = float(np.linalg.norm(op.dot(x) - b))
    report = SolveReport(
        iterations=iterations,
        residual_norm=residual,
        converged=residual <= target,
        tolerance=tol,
        rhs_norm=b_norm,
        projected_imbalance=imbalance,
    )
    logger.debug(
        "CG n=%d iterations=%d residual=%.3e (target %.3e)",
        n,
        iterations,
        residual,
        target,
    )
    if not report.converged:
        raise IterationLimitError(
            f"CG did not reach {tol:g} relative residual within {max_iter} "
            f"iterations (residual {residual:.3e})",
            report,
        )
    return x, report


def masked_laplacian(mask: np.ndarray, hx: float, hy: float) -> SparseOperator:
    """Negative periodic Laplacian restricted to the True nodes of ``mask``.

    Faces towards False nodes carry no coupling, which is the homogeneous
    Neumann condition of a staircase wall. The result is symmetric positive
    semidefinite with the constants as kernel on each connected component.
    """
    mask = np.asarray(mask, dtype=bool)
    nx, ny = mask.shape
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(int(mask.sum()))
    n = int(mask.sum())

    rows, cols, vals = [], [], []
    for axis, h in ((0, hx), (1, hy)):
        neighbour = np.roll(mask, -1, axis=axis)
        both = mask & neighbour
        a = index[both]
        b = np.roll(index, -1, axis=axis)[both]
        w = np.full(a.size, 1.0 / h**2)
        rows.extend([a, b, a, b])
        cols.extend([a, b, b, a])
        vals.extend([w, w, -w, -w])

    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    matrix.sum_duplicates()
    return SparseOperator(matrix, symmetric=True, singular=True)
