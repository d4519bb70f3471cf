import numpy as np
import pytest
import scipy.sparse as sp

from conic_splitter.exceptions import DimensionError, FactorizationError
from conic_splitter.linalg import (as_csc, build_kkt, dense_ldl, fill_in, ldl_factor, ldl_solve,
                                   symbolic_order)


def random_A(rng, m, n, density=0.2):
    A = sp.random(m, n, density=density, random_state=rng, format="csc")
    A.data = rng.normal(size=A.nnz)
    return A


def test_kkt_blocks(rng):
    A = random_A(rng, 4, 3)
    S = build_kkt(A).toarray()
    np.testing.assert_array_equal(S[:3, :3], np.eye(3))
    np.testing.assert_array_equal(S[3:, 3:], -np.eye(4))
    np.testing.assert_array_equal(S[3:, :3], -A.toarray())
    np.testing.assert_array_equal(S, S.T)


def test_kkt_keeps_explicit_zeros():
    A = sp.csc_matrix((np.array([0.0, 2.0]), np.array([0, 1]), np.array([0, 1, 2])), shape=(2, 2))
    assert A.nnz == 2
    # 2 identity blocks (4) plus A and A^T (2 each), zero included
    assert build_kkt(A).nnz == 8
    assert as_csc(A).nnz == 1


@pytest.mark.parametrize("m,n", [(1, 1), (5, 3), (3, 5), (20, 30)])
def test_factor_matches_dense_oracle(rng, m, n):
    S = build_kkt(random_A(rng, m, n, 0.4))
    f = ldl_factor(S, perm=np.arange(m + n))
    L, D = dense_ldl(S)
    np.testing.assert_allclose(f.L.toarray(), L, atol=1e-12)
    np.testing.assert_allclose(f.D, D, atol=1e-12)


def test_reconstruction_and_inertia(rng):
    for _ in range(20):
        m, n = rng.integers(1, 60, size=2)
        S = build_kkt(random_A(rng, m, n, 0.1))
        f = ldl_factor(S)
        err = sp.linalg.norm(f.reconstruct() - S) / sp.linalg.norm(S)
        assert err <= 1e-10
        assert f.inertia() == (n, m)


def test_solve(rng):
    S = build_kkt(random_A(rng, 40, 25, 0.15))
    f = ldl_factor(S)
    x = rng.normal(size=65)
    rhs = S @ x
    np.testing.assert_allclose(ldl_solve(f, rhs), x, atol=1e-9)
    np.testing.assert_allclose(ldl_solve(f, rhs, refine=True), x, atol=1e-11)
    with pytest.raises(DimensionError):
        ldl_solve(f, np.ones(3))


def test_ordering_is_permutation_and_reduces_fill():
    # arrow matrix: eliminating the hub first fills everything
    d = 30
    S = sp.lil_matrix((d, d))
    S.setdiag(1.0)
    S[0, :] = 1.0
    S[:, 0] = 1.0
    S = S.tocsc()
    perm = symbolic_order(S)
    assert sorted(perm.tolist()) == list(range(d))
    assert fill_in(S, perm) == d - 1
    assert fill_in(S, np.arange(d)) == (d - 1) * (d - 2) // 2 + d - 1
    assert perm[-1] == 0 or perm[-2] == 0


def test_ordering_depends_only_on_pattern(rng):
    A = random_A(rng, 15, 10, 0.3)
    B = A.copy()
    B.data = rng.normal(size=B.nnz)
    np.testing.assert_array_equal(symbolic_order(build_kkt(A)), symbolic_order(build_kkt(B)))


def test_zero_pivot_raises():
    with pytest.raises(FactorizationError):
        ldl_factor(sp.csc_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])), perm=[0, 1])


def test_bad_permutation():
    S = build_kkt(sp.csc_matrix(np.ones((2, 2))))
    with pytest.raises(DimensionError):
        ldl_factor(S, perm=[0, 0, 1, 2])
