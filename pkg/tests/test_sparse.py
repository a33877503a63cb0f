import numpy as np
import pytest

from pmflab.sparse import (
    SparseMatrix,
    SparseMatrixError,
    max_abs_diagonal,
    max_row_l2,
    max_row_sum,
    max_sandwich_diagonal,
    sandwich_diagonal,
    sparse_product,
    weighted_gram,
)


def random_sparse(rng, n_rows, n_cols, density=0.3, scale=1.0):
    mask = rng.random((n_rows, n_cols)) < density
    vals = rng.normal(0, scale, (n_rows, n_cols)) * mask
    return SparseMatrix.from_dense(vals)


def test_canonical_drops_exact_zeros():
    m = SparseMatrix.from_entries(2, 2, [(0, 0, 1.0), (0, 1, 0.0)])
    assert m.nnz == 1
    assert m.get(0, 1) == 0.0


def test_duplicate_entry_rejected():
    with pytest.raises(SparseMatrixError):
        SparseMatrix.from_entries(2, 2, [(0, 1, 1.0), (0, 1, 2.0)])


def test_out_of_range_rejected():
    with pytest.raises(SparseMatrixError):
        SparseMatrix.from_entries(2, 2, [(2, 0, 1.0)])


def test_insert_remove_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = random_sparse(rng, 5, 5)
        m2 = m.with_entry(2, 3, 7.5).with_entry(2, 3, m.get(2, 3))
        assert m2 == SparseMatrix(m.n_rows, m.n_cols, m.entries)
        assert m2.entries == m.entries


def test_dense_round_trip():
    rng = np.random.default_rng(1)
    m = random_sparse(rng, 4, 6)
    assert SparseMatrix.from_dense(m.to_dense()) == m


def test_row_sum_and_diagonal():
    m = SparseMatrix.from_entries(3, 3, [(0, 0, -2.0), (0, 1, 1.0), (2, 2, 0.5)])
    assert max_row_sum(m) == 3.0
    assert max_abs_diagonal(m) == 2.0
    assert max_row_l2(m) == pytest.approx(np.sqrt(5.0))


def test_zero_diagonal():
    m = SparseMatrix.from_entries(2, 2, [(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)])
    x = m.zero_diagonal()
    assert x.entries == ((0, 1, 2.0),)


def test_sandwich_diagonal_matches_dense():
    rng = np.random.default_rng(2)
    for _ in range(30):
        n = int(rng.integers(1, 8))
        p = random_sparse(rng, n, n)
        q = random_sparse(rng, n, n)
        want = np.diag(p.to_dense() @ q.to_dense() @ p.to_dense().T)
        got = sandwich_diagonal(p, q)
        assert np.allclose(got, want, atol=1e-12)
        assert max_sandwich_diagonal(p, q) == pytest.approx(want.max() if n else 0.0)


def test_sparse_product_matches_dense():
    rng = np.random.default_rng(3)
    a = random_sparse(rng, 4, 5)
    b = random_sparse(rng, 5, 3)
    assert np.allclose(sparse_product(a, b).to_dense(), a.to_dense() @ b.to_dense())


def test_weighted_gram_matches_dense():
    rng = np.random.default_rng(4)
    f = random_sparse(rng, 4, 6)
    w = rng.uniform(0, 2, 6)
    want = f.to_dense() @ np.diag(w) @ f.to_dense().T
    assert np.allclose(weighted_gram(f, w).to_dense(), want, atol=1e-12)


def test_permute_round_trip():
    rng = np.random.default_rng(5)
    m = random_sparse(rng, 6, 6)
    perm = rng.permutation(6)
    inv = np.argsort(perm)
    assert m.permute(perm, perm).permute(inv, inv) == m
