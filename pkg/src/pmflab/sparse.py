"""Canonical sparse matrices and the handful of kernels the rate formulas need.

A :class:`SparseMatrix` is an immutable coordinate-format matrix in canonical
form: entries are sorted by (row, col), duplicates are rejected, and exact
zeros are never stored.  All heavy arithmetic is delegated to scipy CSR
matrices, which are built lazily and cached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class SparseMatrixError(ValueError):
    """Raised for malformed entries: bad indices, duplicates, wrong shapes."""


@dataclass(frozen=True)
class SparseMatrix:
    """Immutable sparse matrix in canonical (sorted, zero-free) COO form.

    Use :meth:`from_entries` or :meth:`from_dense`; the raw constructor
    assumes already-canonical input.
    """

    n_rows: int
    n_cols: int
    entries: tuple[tuple[int, int, float], ...]
    _csr_cache: list = field(default_factory=list, repr=False, compare=False)

    # ------------------------------------------------------------ builders

    @classmethod
    def from_entries(
        cls,
        n_rows: int,
        n_cols: int,
        entries: Iterable[tuple[int, int, float]] = (),
    ) -> "SparseMatrix":
        if n_rows < 0 or n_cols < 0:
            raise SparseMatrixError("matrix dimensions must be nonnegative")
        seen: dict[tuple[int, int], float] = {}
        for row, col, value in entries:
            row = int(row)
            col = int(col)
            value = float(value)
            if not (0 <= row < n_rows and 0 <= col < n_cols):
                raise SparseMatrixError(
                    f"entry ({row}, {col}) outside {n_rows}x{n_cols} matrix"
                )
            if (row, col) in seen:
                raise SparseMatrixError(f"duplicate entry at ({row}, {col})")
            if not np.isfinite(value):
                raise SparseMatrixError(f"non-finite value at ({row}, {col})")
            seen[(row, col)] = value
        canon = tuple(
            (r, c, v) for (r, c), v in sorted(seen.items()) if v != 0.0
        )
        return cls(n_rows, n_cols, canon)

    @classmethod
    def zeros(cls, n_rows: int, n_cols: int) -> "SparseMatrix":
        return cls.from_entries(n_rows, n_cols, ())

    @classmethod
    def identity(cls, n: int, scale: float = 1.0) -> "SparseMatrix":
        return cls.from_entries(n, n, ((i, i, scale) for i in range(n)))

    @classmethod
    def diagonal(cls, values: Sequence[float]) -> "SparseMatrix":
        n = len(values)
        return cls.from_entries(n, n, ((i, i, float(v)) for i, v in enumerate(values)))

    @classmethod
    def from_dense(cls, array) -> "SparseMatrix":
        arr = np.asarray(array, dtype=float)
        if arr.ndim != 2:
            raise SparseMatrixError("from_dense expects a 2-D array")
        rows, cols = np.nonzero(arr)
        return cls.from_entries(
            arr.shape[0], arr.shape[1], zip(rows.tolist(), cols.tolist(), arr[rows, cols].tolist())
        )

    # ------------------------------------------------------------- queries

    @property
    def nnz(self) -> int:
        return len(self.entries)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def is_zero(self) -> bool:
        return not self.entries

    def get(self, row: int, col: int) -> float:
        # nnz is small at desk scale; linear probe via dict would not pay off
        for r, c, v in self.entries:
            if r == row and c == col:
                return v
        return 0.0

    def is_diagonal(self) -> bool:
        return all(r == c for r, c, _ in self.entries)

    def diagonal_values(self) -> np.ndarray:
        d = np.zeros(min(self.n_rows, self.n_cols))
        for r, c, v in self.entries:
            if r == c:
                d[r] = v
        return d

    def tocsr(self) -> sp.csr_matrix:
        if not self._csr_cache:
            if self.entries:
                rows, cols, vals = zip(*self.entries)
            else:
                rows, cols, vals = (), (), ()
            mat = sp.csr_matrix(
                (np.asarray(vals, dtype=float), (rows, cols)),
                shape=(self.n_rows, self.n_cols),
            )
            self._csr_cache.append(mat)
        return self._csr_cache[0]

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        for r, c, v in self.entries:
            out[r, c] = v
        return out

    # ---------------------------------------------------------- transforms

    def with_entry(self, row: int, col: int, value: float) -> "SparseMatrix":
        """Return a copy with entry (row, col) set to ``value`` (0 removes it)."""
        kept = [(r, c, v) for r, c, v in self.entries if (r, c) != (row, col)]
        if value != 0.0:
            kept.append((row, col, float(value)))
        return SparseMatrix.from_entries(self.n_rows, self.n_cols, kept)

    def abs(self) -> "SparseMatrix":
        return SparseMatrix(
            self.n_rows, self.n_cols, tuple((r, c, abs(v)) for r, c, v in self.entries)
        )

    def scale(self, factor: float) -> "SparseMatrix":
        return SparseMatrix.from_entries(
            self.n_rows, self.n_cols, ((r, c, v * factor) for r, c, v in self.entries)
        )

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_entries(
            self.n_cols, self.n_rows, ((c, r, v) for r, c, v in self.entries)
        )

    def add(self, other: "SparseMatrix") -> "SparseMatrix":
        if self.shape != other.shape:
            raise SparseMatrixError("shape mismatch in add")
        acc: dict[tuple[int, int], float] = {}
        for r, c, v in self.entries + other.entries:
            acc[(r, c)] = acc.get((r, c), 0.0) + v
        return SparseMatrix.from_entries(
            self.n_rows, self.n_cols, ((r, c, v) for (r, c), v in acc.items())
        )

    def zero_diagonal(self) -> "SparseMatrix":
        """Copy with every diagonal entry removed."""
        return SparseMatrix(
            self.n_rows,
            self.n_cols,
            tuple((r, c, v) for r, c, v in self.entries if r != c),
        )

    def permute(self, row_perm: Sequence[int], col_perm: Sequence[int] | None = None) -> "SparseMatrix":
        """Relabel rows (and optionally columns) by permutation arrays."""
        rp = list(row_perm)
        cp = list(col_perm) if col_perm is not None else None
        return SparseMatrix.from_entries(
            self.n_rows,
            self.n_cols,
            ((rp[r], c if cp is None else cp[c], v) for r, c, v in self.entries),
        )


# ------------------------------------------------------------------ kernels
#
# The scalar summaries below are the only matrix reductions the rate and
# sparsity formulas consume.  They run in O(nnz), never materialising a
# triple product.


def max_row_sum(mat: SparseMatrix) -> float:
    """Largest row sum of absolute values."""
    if mat.is_zero():
        return 0.0
    sums = np.zeros(mat.n_rows)
    for r, _, v in mat.entries:
        sums[r] += abs(v)
    return float(sums.max())


def max_abs_diagonal(mat: SparseMatrix) -> float:
    """Largest absolute diagonal entry."""
    best = 0.0
    for r, c, v in mat.entries:
        if r == c:
            best = max(best, abs(v))
    return best


def max_row_l2(mat: SparseMatrix, col_weights: np.ndarray | None = None) -> float:
    """Largest row Euclidean norm, optionally with per-column weights.

    Returns ``max_i sqrt(sum_j w_j * M_ij^2)`` with ``w_j = 1`` by default.
    """
    if mat.is_zero():
        return 0.0
    sums = np.zeros(mat.n_rows)
    for r, c, v in mat.entries:
        w = 1.0 if col_weights is None else col_weights[c]
        sums[r] += w * v * v
    return float(np.sqrt(sums.max()))


def sandwich_diagonal(outer: SparseMatrix, middle: SparseMatrix) -> np.ndarray:
    """Diagonal of ``outer @ middle @ outer.T`` without forming the product.

    Entry i equals ``row_i(outer) @ middle @ row_i(outer)``; computed as the
    row sums of ``(outer @ middle) ∘ outer``.
    """
    if outer.n_cols != middle.n_rows or middle.n_rows != middle.n_cols:
        raise SparseMatrixError("shape mismatch in sandwich_diagonal")
    if outer.is_zero() or middle.is_zero():
        return np.zeros(outer.n_rows)
    left = outer.tocsr() @ middle.tocsr()
    prod = left.multiply(outer.tocsr())
    return np.asarray(prod.sum(axis=1)).ravel()


def max_sandwich_diagonal(outer: SparseMatrix, middle: SparseMatrix) -> float:
    d = sandwich_diagonal(outer, middle)
    return float(d.max()) if d.size else 0.0


def sparse_product(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    if a.n_cols != b.n_rows:
        raise SparseMatrixError("shape mismatch in sparse_product")
    prod = (a.tocsr() @ b.tocsr()).tocoo()
    return SparseMatrix.from_entries(
        a.n_rows, b.n_cols, zip(prod.row.tolist(), prod.col.tolist(), prod.data.tolist())
    )


def weighted_gram(factor: SparseMatrix, col_weights: np.ndarray) -> SparseMatrix:
    """``factor @ diag(col_weights) @ factor.T`` as a SparseMatrix."""
    if factor.n_cols != len(col_weights):
        raise SparseMatrixError("shape mismatch in weighted_gram")
    if factor.is_zero():
        return SparseMatrix.zeros(factor.n_rows, factor.n_rows)
    csr = factor.tocsr()
    gram = (csr.multiply(np.asarray(col_weights)[None, :]) @ csr.T).tocoo()
    return SparseMatrix.from_entries(
        factor.n_rows,
        factor.n_rows,
        zip(gram.row.tolist(), gram.col.tolist(), gram.data.tolist()),
    )
