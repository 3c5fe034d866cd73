import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sharplp.amalgam import (
    SchurSums,
    amalgam_norm,
    amalgam_operator_bound,
    block_bracket_matrices,
    block_norm_matrix,
    embedding_constant,
    schur_sums,
    x1q_operator_bracket,
)
from sharplp.errors import InvalidArgument, UseNormestBracket
from sharplp.grid import GridFunction, lp_norm, make_grid
from sharplp.normest import exact_norm
from sharplp.operators import OperatorSpec, build_operator, from_kernel, heat, identity


@pytest.fixture(scope="module")
def g16():
    return make_grid(1, 64, 16)


def _indicator(g, lo, hi):
    x = g.coords()[:, 0]
    return GridFunction(g, ((x >= lo) & (x < hi)).astype(float))


def test_pp_amalgam_is_lp(g16):
    rng = np.random.default_rng(0)
    f = GridFunction(g16, rng.standard_normal(g16.size))
    for j in (-2, 0, 2):
        assert amalgam_norm(f, 2, 2, j) == pytest.approx(lp_norm(f, 2), abs=1e-12)


def test_indicator_amalgam(g16):
    f = _indicator(g16, 0, 4)
    assert amalgam_norm(f, 1, 2, 0) == pytest.approx(4.0)
    assert amalgam_norm(f, 2, 2, 0) == pytest.approx(2.0)


def test_embedding_constants():
    assert embedding_constant(2, 2, 3, 2) == 1
    assert embedding_constant(1, 2, -1, 1) == pytest.approx(2**0.5)
    assert embedding_constant(1, math.inf, 2, 2) == 1
    with pytest.raises(InvalidArgument):
        embedding_constant(2, 1, 0, 1)


@pytest.mark.parametrize("j", [-2, -1, 0, 1, 2])
@pytest.mark.parametrize("p,q", [(1, 2), (1, math.inf), (2, 4)])
def test_embedding_holds_on_random_functions(g16, j, p, q):
    rng = np.random.default_rng(j + 10)
    C = embedding_constant(p, q, j, 1)
    for _ in range(10):
        f = GridFunction(g16, rng.standard_normal(g16.size) * (rng.random(g16.size) < 0.3))
        assert amalgam_norm(f, p, q, 0) <= C * amalgam_norm(f, p, q, j) * (1 + 1e-12)


def test_identity_blocks(g16):
    B = block_norm_matrix(identity(g16), 0, 2, 2)
    assert np.allclose(B.entries, np.eye(len(B.partition)))
    S = schur_sums(B)
    assert (S.M1, S.M2) == pytest.approx((1.0, 1.0))
    S1 = schur_sums(B, weightN=1)
    assert (S1.M1, S1.M2) == pytest.approx((1.0, 1.0))


def test_symmetric_blocks_give_equal_sums(g16):
    T = heat(build_operator(OperatorSpec("laplacian", g16)), 0.5)
    S = schur_sums(block_norm_matrix(T, 0, 2, 2), weightN=1)
    assert S.M1 == pytest.approx(S.M2, rel=1e-12)


def test_unsupported_block_pair(g16):
    with pytest.raises(UseNormestBracket):
        block_norm_matrix(identity(g16), 0, 2, 4)


def test_single_block_recovers_exact_norms():
    g = make_grid(1, 16, 1)
    rng = np.random.default_rng(1)
    M = rng.standard_normal((16, 16))
    A = from_kernel(M / g.cell, g, selfadjoint=False)
    # one cube covers the torus, so the block norm is the operator norm
    assert block_norm_matrix(A, 0, 2, 2).entries[0, 0] == pytest.approx(exact_norm(A, 2))
    assert block_norm_matrix(A, 0, 1, 1).entries[0, 0] == pytest.approx(exact_norm(A, 1))


def test_bound_endpoints():
    S = SchurSums(2.0, 8.0)
    assert amalgam_operator_bound(S, 1) == 2.0
    assert amalgam_operator_bound(S, math.inf) == pytest.approx(8.0)
    assert amalgam_operator_bound(S, 2) == pytest.approx(4.0)
    for p in (1, 1.5, 3, math.inf):
        assert amalgam_operator_bound(SchurSums(3.0, 3.0), p) == pytest.approx(3.0)


def test_bracket_blocks_ordered(g16):
    T = heat(build_operator(OperatorSpec("laplacian", g16)), 0.5)
    lo, hi = block_bracket_matrices(T, 0, 1.5)
    assert np.all(lo.entries <= hi.entries * (1 + 1e-12))


def test_x12_bracket_of_identity(g16):
    b = x1q_operator_bracket(identity(g16), 0)
    assert b.lower == pytest.approx(1.0) and b.upper == pytest.approx(1.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_schur_bound_dominates_operator(seed):
    # the Schur-type bound is an upper bound for the X^{p,q}_j norm of a random kernel
    g = make_grid(1, 32, 8)
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((32, 32)) * (rng.random((32, 32)) < 0.2)
    A = from_kernel(K, g, selfadjoint=False)
    S = schur_sums(block_norm_matrix(A, 0, 2, 2))
    bound = amalgam_operator_bound(S, 1)
    for _ in range(5):
        f = GridFunction(g, rng.standard_normal(32))
        assert amalgam_norm(A.apply(f), 1, 2, 0) <= bound * amalgam_norm(f, 1, 2, 0) * (1 + 1e-10)


def test_block_subadditivity_on_sign_kernels():
    g = make_grid(1, 8, 2)
    rng = np.random.default_rng(7)
    for _ in range(20):
        K1 = rng.integers(-1, 2, (8, 8)).astype(float)
        K2 = rng.integers(-1, 2, (8, 8)).astype(float)
        e = lambda K: block_norm_matrix(from_kernel(K, g, selfadjoint=False), 0, 2, 2).entries
        assert np.all(e(K1 + K2) <= e(K1) + e(K2) + 1e-12)


def test_sign_kernel_duality():
    # ||1_Q A 1_Q'||_{1 -> inf} equals the same block of the adjoint, transposed
    g = make_grid(1, 8, 2)
    rng = np.random.default_rng(11)
    for _ in range(30):
        K = rng.integers(-1, 2, (8, 8)).astype(float)
        A = from_kernel(K, g, selfadjoint=False)
        B = block_norm_matrix(A, 0, 1, math.inf).entries
        Bt = block_norm_matrix(A.adjoint(), 0, 1, math.inf).entries
        assert np.allclose(B, Bt.T)
