"""Linear solves used inside the time steppers.

Two regimes are kept apart on purpose.  The per-step sweeps of the triangular
schemes only ever invert diagonal blocks, so those get per-block symmetric
positive definite factorizations reused across steps.  Full-space solves with
a general SPD block operator exist for the weighted scheme and for reference
computations, with an explicit residual check so a silently bad factorization
cannot poison a long run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve, lapack
from scipy.sparse.linalg import cg

from .blockops import BlockOperator, BlockVector, DimensionMismatchError, _block_dense


class NotPositiveDefiniteError(ValueError):
    """Cholesky factorization hit a non-positive pivot.

    ``pivot`` is the 1-based index of the failing leading minor.
    """

    def __init__(self, message: str, pivot: int):
        super().__init__(message)
        self.pivot = pivot


class BlockStructureError(ValueError):
    """Operator has blocks on the wrong side of the diagonal for this sweep."""


class SolveFailureError(RuntimeError):
    """A linear solve did not reach the requested accuracy."""

    def __init__(self, message: str, iterations: Optional[int] = None):
        super().__init__(message)
        self.iterations = iterations


@dataclass(frozen=True)
class SpdFactor:
    """Dense Cholesky factor of a symmetric positive definite matrix."""

    matrix: np.ndarray
    chol_lower: np.ndarray

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve((self.chol_lower, True), np.asarray(rhs, dtype=float))


@dataclass(frozen=True)
class CgSolver:
    """Conjugate gradient wrapper for an SPD matrix kept in sparse form."""

    matrix: "sp.csr_array | np.ndarray"
    rtol: float = 1e-12
    maxiter: Optional[int] = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        n = rhs.shape[0]
        maxiter = self.maxiter if self.maxiter is not None else 10 * n
        x, info = cg(self.matrix, rhs, rtol=self.rtol, atol=0.0, maxiter=maxiter)
        if info != 0:
            raise SolveFailureError(
                f"conjugate gradient stopped with info={info} after at most {maxiter} iterations",
                iterations=info if info > 0 else maxiter,
            )
        return x


Factorization = Union[SpdFactor, CgSolver]


def factor_spd(matrix, method: str = "direct", context: str = "matrix") -> Factorization:
    """Factor one SPD matrix for repeated solves.

    ``method`` is "direct" (dense Cholesky) or "cg" (matrix-free conjugate
    gradient, for blocks too large to densify).  A non-positive pivot in the
    direct path raises with the 1-based pivot index.
    """
    if method == "cg":
        mat = sp.csr_array(matrix) if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
        return CgSolver(mat)
    if method != "direct":
        raise ValueError(f"unknown factorization method {method!r}")
    dense = _block_dense(matrix)
    dense = np.asarray(dense, dtype=float)
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise DimensionMismatchError(f"{context}: expected a square matrix, got shape {dense.shape}")
    c, info = lapack.dpotrf(dense, lower=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"{context}: not positive definite, leading minor {info} is not positive", pivot=info
        )
    if info < 0:
        raise ValueError(f"{context}: invalid argument {-info} to dpotrf")
    return SpdFactor(matrix=dense, chol_lower=c)


@dataclass(frozen=True)
class DiagFactorization:
    """Per-component factorizations of the diagonal blocks of an operator."""

    dims: "BlockOperator.dims"
    factors: tuple[Factorization, ...]

    @classmethod
    def from_operator(cls, M: BlockOperator, method: str = "direct") -> "DiagFactorization":
        factors = []
        for a in range(M.dims.p):
            blk = M.block(a, a)
            if blk is None:
                raise NotPositiveDefiniteError(
                    f"diagonal block ({a + 1},{a + 1}) is absent, cannot factor", pivot=1
                )
            factors.append(factor_spd(blk, method=method, context=f"diagonal block ({a + 1},{a + 1})"))
        return cls(dims=M.dims, factors=tuple(factors))

    def solve_block(self, a: int, rhs: np.ndarray) -> np.ndarray:
        return self.factors[a].solve(rhs)


def solve_block_lower(L: BlockOperator, rhs: BlockVector, diag: DiagFactorization) -> BlockVector:
    """Forward substitution for a block lower triangular operator."""
    if not L.is_block_lower():
        raise BlockStructureError("operator has blocks above the diagonal, not lower triangular")
    if L.dims.sizes != rhs.dims.sizes:
        raise DimensionMismatchError(f"dims {L.dims.sizes} != {rhs.dims.sizes}")
    parts: list[np.ndarray] = []
    for a in range(L.dims.p):
        acc = rhs.parts[a].copy()
        for b in range(a):
            blk = L.block(a, b)
            if blk is not None:
                acc -= blk @ parts[b]
        parts.append(diag.solve_block(a, acc))
    return BlockVector(L.dims, tuple(parts))


def solve_block_upper(U: BlockOperator, rhs: BlockVector, diag: DiagFactorization) -> BlockVector:
    """Backward substitution for a block upper triangular operator."""
    if not U.is_block_upper():
        raise BlockStructureError("operator has blocks below the diagonal, not upper triangular")
    if U.dims.sizes != rhs.dims.sizes:
        raise DimensionMismatchError(f"dims {U.dims.sizes} != {rhs.dims.sizes}")
    p = U.dims.p
    parts: list[Optional[np.ndarray]] = [None] * p
    for a in range(p - 1, -1, -1):
        acc = rhs.parts[a].copy()
        for b in range(a + 1, p):
            blk = U.block(a, b)
            if blk is not None:
                acc -= blk @ parts[b]
        parts[a] = diag.solve_block(a, acc)
    return BlockVector(U.dims, tuple(parts))


def solve_spd_full(
    M: BlockOperator,
    rhs: BlockVector,
    factor: Optional[SpdFactor] = None,
    residual_rtol: float = 1e-11,
) -> BlockVector:
    """Solve M x = rhs for a full SPD block operator via one dense factorization.

    The relative residual is checked after the solve; exceeding
    ``residual_rtol`` raises rather than returning a quietly wrong vector.
    """
    if M.dims.sizes != rhs.dims.sizes:
        raise DimensionMismatchError(f"dims {M.dims.sizes} != {rhs.dims.sizes}")
    if factor is None:
        factor = factor_spd(M.to_dense(), context="full operator")
    b = rhs.to_flat()
    x = factor.solve(b)
    scale = np.linalg.norm(b)
    if scale > 0.0:
        # measure against the operator, not the factor, so a stale or
        # mismatched factorization is caught and not just LAPACK breakage
        out = BlockVector.from_flat(M.dims, x)
        residual = (M.apply(out) - rhs).norm()
        if residual > residual_rtol * scale:
            raise SolveFailureError(
                f"full solve residual {residual:.3e} exceeds {residual_rtol:.1e} * |rhs| = "
                f"{residual_rtol * scale:.3e}"
            )
        return out
    return BlockVector.from_flat(M.dims, x)
