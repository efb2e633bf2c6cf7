"""Block vector and block operator algebra on a direct sum of component spaces.

A point in the state space is a tuple of p real vectors, one per component
space of dimensions ``sizes = (n_1, ..., n_p)``.  Linear operators are p-by-p
grids of matrix blocks; a missing block acts as an exact zero.  Blocks may be
dense ndarrays or CSR sparse arrays, and the schemes only ever invert the
diagonal blocks, which is why the blockwise storage is kept explicit instead
of assembling one monolithic matrix.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigvalsh


class DimensionMismatchError(ValueError):
    """Shapes of block vectors/operators do not line up."""


class CertificateError(ValueError):
    """A claimed operator property (symmetry, positive definiteness) fails."""


class EigenConvergenceError(RuntimeError):
    """Iterative smallest-eigenvalue estimation did not converge."""

    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


Block = "np.ndarray | sp.csr_array"


def _as_block(value, shape) -> np.ndarray | sp.csr_array:
    if sp.issparse(value):
        block = sp.csr_array(value)
    else:
        block = np.asarray(value, dtype=float)
        if block.ndim != 2:
            raise DimensionMismatchError(f"block must be 2-D, got ndim={block.ndim}")
    if block.shape != shape:
        raise DimensionMismatchError(f"block shape {block.shape} != expected {shape}")
    return block


def _block_absmax(block) -> float:
    if sp.issparse(block):
        return float(np.abs(block.data).max()) if block.nnz else 0.0
    return float(np.abs(block).max()) if block.size else 0.0


def _block_dense(block) -> np.ndarray:
    return block.toarray() if sp.issparse(block) else block


def _block_t(block):
    return sp.csr_array(block.T) if sp.issparse(block) else block.T


@dataclass(frozen=True)
class BlockDims:
    """Component count and per-component dimensions of the product space."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if len(sizes) < 1 or any(n < 1 for n in sizes):
            raise DimensionMismatchError(f"need p >= 1 components of size >= 1, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def p(self) -> int:
        return len(self.sizes)

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        off = np.concatenate([[0], np.cumsum(self.sizes)])
        return tuple(int(o) for o in off)


@dataclass(frozen=True)
class BlockVector:
    """Element of the product space, stored per component."""

    dims: BlockDims
    parts: tuple[np.ndarray, ...]

    def __post_init__(self):
        parts = tuple(np.asarray(part, dtype=float).reshape(-1) for part in self.parts)
        if len(parts) != self.dims.p:
            raise DimensionMismatchError(f"expected {self.dims.p} parts, got {len(parts)}")
        for part, n in zip(parts, self.dims.sizes):
            if part.shape != (n,):
                raise DimensionMismatchError(f"part length {part.shape[0]} != {n}")
        object.__setattr__(self, "parts", parts)

    @classmethod
    def zeros(cls, dims: BlockDims) -> "BlockVector":
        return cls(dims, tuple(np.zeros(n) for n in dims.sizes))

    @classmethod
    def from_flat(cls, dims: BlockDims, flat: np.ndarray) -> "BlockVector":
        flat = np.asarray(flat, dtype=float).reshape(-1)
        if flat.shape != (dims.total,):
            raise DimensionMismatchError(f"flat length {flat.shape[0]} != {dims.total}")
        off = dims.offsets
        return cls(dims, tuple(flat[off[a] : off[a + 1]].copy() for a in range(dims.p)))

    def to_flat(self) -> np.ndarray:
        return np.concatenate(self.parts)

    def dot(self, other: "BlockVector") -> float:
        _check_same_dims(self.dims, other.dims)
        return float(sum(np.dot(x, y) for x, y in zip(self.parts, other.parts)))

    def norm(self) -> float:
        return float(np.sqrt(self.dot(self)))

    def __add__(self, other: "BlockVector") -> "BlockVector":
        _check_same_dims(self.dims, other.dims)
        return BlockVector(self.dims, tuple(x + y for x, y in zip(self.parts, other.parts)))

    def __sub__(self, other: "BlockVector") -> "BlockVector":
        _check_same_dims(self.dims, other.dims)
        return BlockVector(self.dims, tuple(x - y for x, y in zip(self.parts, other.parts)))

    def __mul__(self, scalar: float) -> "BlockVector":
        return BlockVector(self.dims, tuple(float(scalar) * x for x in self.parts))

    __rmul__ = __mul__

    def __neg__(self) -> "BlockVector":
        return self * -1.0


def _check_same_dims(a: BlockDims, b: BlockDims):
    if a.sizes != b.sizes:
        raise DimensionMismatchError(f"dims {a.sizes} != {b.sizes}")


@dataclass(frozen=True)
class BlockOperator:
    """p-by-p grid of matrix blocks; absent entries are exact zeros.

    Block (a, b) maps component b into component a and has shape
    (sizes[a], sizes[b]).  Indices are 0-based in code and 1-based in the
    on-disk manifest format.
    """

    dims: BlockDims
    blocks: Mapping[tuple[int, int], "np.ndarray | sp.csr_array"]

    def __post_init__(self):
        p = self.dims.p
        normalized = {}
        for (a, b), value in self.blocks.items():
            if not (0 <= a < p and 0 <= b < p):
                raise DimensionMismatchError(f"block index {(a, b)} out of range for p={p}")
            normalized[(a, b)] = _as_block(value, (self.dims.sizes[a], self.dims.sizes[b]))
        object.__setattr__(self, "blocks", normalized)

    @classmethod
    def identity(cls, dims: BlockDims, scale: float = 1.0) -> "BlockOperator":
        return cls(dims, {(a, a): scale * np.eye(n) for a, n in enumerate(dims.sizes)})

    @classmethod
    def from_dense(cls, dims: BlockDims, dense: np.ndarray, drop_zero: bool = True) -> "BlockOperator":
        dense = np.asarray(dense, dtype=float)
        if dense.shape != (dims.total, dims.total):
            raise DimensionMismatchError(f"dense shape {dense.shape} != {(dims.total, dims.total)}")
        off = dims.offsets
        blocks = {}
        for a in range(dims.p):
            for b in range(dims.p):
                blk = dense[off[a] : off[a + 1], off[b] : off[b + 1]]
                if drop_zero and not blk.any():
                    continue
                blocks[(a, b)] = blk.copy()
        return cls(dims, blocks)

    def block(self, a: int, b: int):
        return self.blocks.get((a, b))

    def apply(self, x: BlockVector) -> BlockVector:
        _check_same_dims(self.dims, x.dims)
        out = [np.zeros(n) for n in self.dims.sizes]
        for (a, b), blk in self.blocks.items():
            out[a] += blk @ x.parts[b]
        return BlockVector(self.dims, tuple(out))

    def transpose(self) -> "BlockOperator":
        return BlockOperator(self.dims, {(b, a): _block_t(blk) for (a, b), blk in self.blocks.items()})

    def to_dense(self) -> np.ndarray:
        off = self.dims.offsets
        dense = np.zeros((self.dims.total, self.dims.total))
        for (a, b), blk in self.blocks.items():
            dense[off[a] : off[a + 1], off[b] : off[b + 1]] = _block_dense(blk)
        return dense

    def to_sparse(self) -> sp.csr_array:
        grid = [[self.blocks.get((a, b)) for b in range(self.dims.p)] for a in range(self.dims.p)]
        return sp.csr_array(sp.bmat(grid, format="csr")) if self.blocks else sp.csr_array(
            (self.dims.total, self.dims.total)
        )

    def absmax(self) -> float:
        return max((_block_absmax(blk) for blk in self.blocks.values()), default=0.0)

    def is_block_diagonal(self) -> bool:
        return all(a == b for (a, b) in self.blocks)

    def is_block_lower(self) -> bool:
        return all(a >= b for (a, b) in self.blocks)

    def is_block_upper(self) -> bool:
        return all(a <= b for (a, b) in self.blocks)


@dataclass(frozen=True)
class OperatorCertificate:
    """Result of checking symmetry and positive definiteness."""

    symmetric: bool
    positive_definite: bool
    min_eig_estimate: float
    tol_sym: float


@dataclass(frozen=True)
class TriangularPair:
    """Two-part splitting M = lower + upper with transpose(lower) = upper.

    ``lower`` carries the blocks below the diagonal plus half of every
    diagonal block, ``upper`` the mirror image.
    """

    lower: BlockOperator
    upper: BlockOperator


def weighted_inner(D: BlockOperator, x: BlockVector, y: BlockVector) -> float:
    """Inner product (D x, y) over the whole product space."""
    _check_same_dims(D.dims, x.dims)
    _check_same_dims(D.dims, y.dims)
    return D.apply(x).dot(y)


def weighted_norm(D: BlockOperator, x: BlockVector) -> float:
    """Norm sqrt((D x, x)) for symmetric positive definite D.

    A quadratic form that comes out negative beyond rounding noise means the
    claimed definiteness of D is wrong, which is reported instead of silently
    returning nan.
    """
    q = weighted_inner(D, x, x)
    scale = D.absmax() * max(x.dot(x), 1.0)
    if q < -1e-12 * max(scale, 1e-300):
        raise CertificateError(f"quadratic form (Dx,x) = {q:.3e} negative for claimed-SPD operator")
    return float(np.sqrt(max(q, 0.0)))


def lincomb(a: float, M: BlockOperator, b: float, N: BlockOperator) -> BlockOperator:
    """Blockwise a*M + b*N; the result carries the union of both sparsity patterns."""
    _check_same_dims(M.dims, N.dims)
    blocks = {}
    for key in set(M.blocks) | set(N.blocks):
        mb = M.blocks.get(key)
        nb = N.blocks.get(key)
        if mb is None:
            blk = b * nb
        elif nb is None:
            blk = a * mb
        else:
            blk = a * mb + b * nb
            if not sp.issparse(blk):
                blk = np.asarray(blk)
        blocks[key] = blk
    return BlockOperator(M.dims, blocks)


def symmetry_defect(M: BlockOperator) -> float:
    """max |M - M^T| over all entries, computed blockwise."""
    defect = 0.0
    for a in range(M.dims.p):
        for b in range(a, M.dims.p):
            blk = M.blocks.get((a, b))
            mirror = M.blocks.get((b, a))
            if blk is None and mirror is None:
                continue
            lhs = _block_dense(blk) if blk is not None else 0.0
            rhs = _block_dense(mirror).T if mirror is not None else 0.0
            diff = lhs - rhs
            defect = max(defect, float(np.abs(diff).max()) if np.ndim(diff) else abs(diff))
    return defect


def _require_symmetric(M: BlockOperator, tol_sym: float, context: str):
    defect = symmetry_defect(M)
    scale = M.absmax()
    if defect > tol_sym * max(scale, 1e-300):
        raise CertificateError(
            f"{context}: operator is not symmetric (defect {defect:.3e}, scale {scale:.3e})"
        )


def triangular_split(M: BlockOperator, tol_sym: float = 1e-12) -> TriangularPair:
    """Split a symmetric block operator into mutually adjoint lower/upper parts.

    The lower part takes every block strictly below the diagonal and half of
    each diagonal block; the upper part is its transpose.  Their sum restores
    M exactly.
    """
    _require_symmetric(M, tol_sym, "triangular_split")
    lower = {}
    upper = {}
    for (a, b), blk in M.blocks.items():
        if a > b:
            lower[(a, b)] = blk
        elif a < b:
            upper[(a, b)] = blk
        else:
            half = 0.5 * blk
            lower[(a, a)] = half
            upper[(a, a)] = half
    dims = M.dims
    return TriangularPair(BlockOperator(dims, lower), BlockOperator(dims, upper))


def certify(
    M: BlockOperator,
    tol_sym: float = 1e-12,
    *,
    dense_threshold: int = 2000,
    power_tol: float = 1e-12,
    power_maxiter: int = 1000,
) -> OperatorCertificate:
    """Check symmetry and estimate the smallest eigenvalue.

    Small systems (total dimension up to ``dense_threshold``) use a dense
    symmetric eigensolve; larger ones fall back to inverse power iteration on
    a shifted sparse factorization, with the shift taken safely below the
    Gershgorin lower bound.
    """
    defect = symmetry_defect(M)
    scale = M.absmax()
    symmetric = defect <= tol_sym * max(scale, 1e-300)
    if not symmetric:
        return OperatorCertificate(False, False, float("nan"), tol_sym)
    if M.dims.total <= dense_threshold:
        dense = M.to_dense()
        min_eig = float(eigvalsh(0.5 * (dense + dense.T))[0])
    else:
        min_eig = _min_eig_inverse_power(M, tol=power_tol, maxiter=power_maxiter)
    return OperatorCertificate(True, min_eig > 0.0, min_eig, tol_sym)


def _min_eig_inverse_power(M: BlockOperator, tol: float, maxiter: int) -> float:
    S = M.to_sparse().tocsr()
    n = M.dims.total
    diag = S.diagonal()
    row_abs = np.abs(S).sum(axis=1)
    gersh = float(np.min(diag - (row_abs - np.abs(diag))))
    # hug the Gershgorin bound: a tiny gap keeps the shifted solve definite
    # while leaving the target eigenvalue well separated for the iteration
    shift = gersh - max(1e-10, 1e-8 * M.absmax())
    lu = spla.splu(sp.csc_matrix(S - shift * sp.identity(n, format="csc")))
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    theta = float(v @ (S @ v))
    for it in range(1, maxiter + 1):
        v = lu.solve(v)
        v /= np.linalg.norm(v)
        theta_new = float(v @ (S @ v))
        if abs(theta_new - theta) <= tol * max(1.0, abs(theta_new)):
            return theta_new
        theta = theta_new
    raise EigenConvergenceError(
        f"inverse power iteration did not converge in {maxiter} iterations", iterations=maxiter
    )


# ---------------------------------------------------------------------------
# Coordinate-format matrix and manifest I/O.
#
# Block file: a header line "rows cols nnz" followed by nnz lines
# "i j value" with 1-based indices.  Blank lines and lines starting with '#'
# are skipped; duplicate entries are summed.
# Manifest file: "p = ...", "sizes = n1 n2 ...", then one
# "block a b = relative/path" line per stored block (1-based a, b).
# ---------------------------------------------------------------------------


def _data_lines(path: str) -> Iterable[tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def read_coo_matrix(path: str) -> sp.csr_array:
    """Read one block from a coordinate-format text file."""
    lines = iter(_data_lines(path))
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ValueError(f"{path}: empty matrix file") from None
    fields = header.split()
    if len(fields) != 3:
        raise ValueError(f"{path}:{lineno}: header must be 'rows cols nnz', got {header!r}")
    rows, cols, nnz = (int(f) for f in fields)
    ii, jj, vv = [], [], []
    for lineno, line in lines:
        fields = line.split()
        if len(fields) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'i j value', got {line!r}")
        i, j = int(fields[0]), int(fields[1])
        if not (1 <= i <= rows and 1 <= j <= cols):
            raise ValueError(f"{path}:{lineno}: index ({i},{j}) outside {rows}x{cols}")
        ii.append(i - 1)
        jj.append(j - 1)
        vv.append(float(fields[2]))
    if len(vv) != nnz:
        raise ValueError(f"{path}: header promises {nnz} entries, file has {len(vv)}")
    return sp.csr_array(sp.coo_array((vv, (ii, jj)), shape=(rows, cols)))


def write_coo_matrix(path: str, block) -> None:
    coo = sp.coo_array(block) if sp.issparse(block) else sp.coo_array(np.asarray(block, dtype=float))
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for idx in order:
            handle.write(f"{coo.row[idx] + 1} {coo.col[idx] + 1} {coo.data[idx]:.17g}\n")


def read_block_operator(manifest_path: str) -> BlockOperator:
    """Load a block operator described by a manifest file."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    p = None
    sizes = None
    block_paths: dict[tuple[int, int], str] = {}
    for lineno, line in _data_lines(manifest_path):
        if "=" not in line:
            raise ValueError(f"{manifest_path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key_fields = key.split()
        value = value.strip()
        if key_fields == ["p"]:
            p = int(value)
        elif key_fields == ["sizes"]:
            sizes = tuple(int(tok) for tok in value.split())
        elif len(key_fields) == 3 and key_fields[0] == "block":
            a, b = int(key_fields[1]), int(key_fields[2])
            block_paths[(a - 1, b - 1)] = value
        else:
            raise ValueError(f"{manifest_path}:{lineno}: unknown key {key.strip()!r}")
    if p is None or sizes is None:
        raise ValueError(f"{manifest_path}: manifest must define both 'p' and 'sizes'")
    if len(sizes) != p:
        raise ValueError(f"{manifest_path}: p={p} but {len(sizes)} sizes given")
    dims = BlockDims(sizes)
    blocks = {}
    for (a, b), rel in block_paths.items():
        if not (0 <= a < p and 0 <= b < p):
            raise ValueError(f"{manifest_path}: block ({a + 1},{b + 1}) outside p={p}")
        blocks[(a, b)] = read_coo_matrix(os.path.join(base, rel))
    return BlockOperator(dims, blocks)


def write_block_operator(M: BlockOperator, manifest_path: str) -> None:
    base = os.path.dirname(os.path.abspath(manifest_path))
    os.makedirs(base, exist_ok=True)
    stem = os.path.splitext(os.path.basename(manifest_path))[0]
    lines = [f"p = {M.dims.p}", "sizes = " + " ".join(str(n) for n in M.dims.sizes)]
    for (a, b) in sorted(M.blocks):
        rel = f"{stem}_block_{a + 1}_{b + 1}.coo"
        write_coo_matrix(os.path.join(base, rel), M.blocks[(a, b)])
        lines.append(f"block {a + 1} {b + 1} = {rel}")
    with open(manifest_path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def read_block_vector(path: str, dims: BlockDims) -> BlockVector:
    """Read a block vector stored as one value per line, components concatenated."""
    values = []
    for lineno, line in _data_lines(path):
        for tok in line.split():
            values.append(float(tok))
    if len(values) != dims.total:
        raise ValueError(f"{path}: expected {dims.total} values, got {len(values)}")
    return BlockVector.from_flat(dims, np.asarray(values))


def write_block_vector(path: str, x: BlockVector) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for value in x.to_flat():
            handle.write(f"{value:.17g}\n")
