import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sharplp.errors import InvalidArgument
from sharplp.grid import make_grid
from sharplp.normest import (
    exact_norm,
    interpolated_upper_bound,
    lower_bound_norm,
    norm_bracket,
)
from sharplp.operators import OperatorSpec, build_operator, from_kernel, heat, identity

GOLDEN = (1 + math.sqrt(5)) / 2


def _random(n, seed, hermitian=False):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (X + X.conj().T) / 2 if hermitian else X


def _dense_p_norm_lower(M, p, trials=2000, seed=0):
    """Brute-force lower bound from random vectors, independent of the library."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((M.shape[1], trials)) + 1j * rng.standard_normal((M.shape[1], trials))
    Y = M @ X
    return float((np.sum(np.abs(Y) ** p, 0) ** (1 / p) / np.sum(np.abs(X) ** p, 0) ** (1 / p)).max())


def test_identity_norms():
    I = identity(None, 5)
    for p in (1, 2, math.inf):
        assert exact_norm(I, p) == 1
    assert lower_bound_norm(I, 3.0) == pytest.approx(1.0)
    b = norm_bracket(I, 1.5)
    assert (b.lower, b.upper) == pytest.approx((1.0, 1.0))


def test_jordan_block():
    A = from_kernel(np.array([[1.0, 1.0], [0.0, 1.0]]), selfadjoint=False)
    assert exact_norm(A, 1) == 2
    assert exact_norm(A, math.inf) == 2
    assert exact_norm(A, 2) == pytest.approx(GOLDEN, abs=1e-10)


def test_exact_norm_rejects_general_p():
    with pytest.raises(InvalidArgument):
        exact_norm(identity(None, 2), 3)
    with pytest.raises(InvalidArgument):
        norm_bracket(identity(None, 2), 0.5)


def test_power_method_two_norm():
    A = from_kernel(_random(40, 2, hermitian=True))
    assert lower_bound_norm(A, 2) == pytest.approx(exact_norm(A, 2), abs=1e-6)


@pytest.mark.parametrize("p", [4.0, 4 / 3])
def test_diagonal_kernel(p):
    A = from_kernel(np.diag([3.0, 1.0]))
    assert lower_bound_norm(A, p) == pytest.approx(3.0)
    assert interpolated_upper_bound(A, p) == pytest.approx(3.0)


def test_upper_bound_at_two_is_exact():
    A = from_kernel(_random(16, 3), selfadjoint=False)
    assert interpolated_upper_bound(A, 2) == pytest.approx(exact_norm(A, 2))


def test_symbol_and_dense_routes_agree():
    A = heat(build_operator(OperatorSpec("laplacian", make_grid(1, 128, 16))), 0.3)
    dense = from_kernel(A.kernel(), A.grid)
    for p in (1, 2, math.inf):
        assert exact_norm(A, p) == pytest.approx(exact_norm(dense, p), rel=1e-10)


def test_exact_bracket_width():
    A = from_kernel(_random(12, 4), selfadjoint=False)
    b = norm_bracket(A, 1)
    assert b.width <= 1e-8


def test_heat_bracket_is_ordered():
    A = heat(build_operator(OperatorSpec("fractional", make_grid(1, 128, 16), alpha=0.75)), 0.5)
    b = norm_bracket(A, 1.5)
    assert 0 < b.lower <= b.upper


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.1, 8.0))
def test_bracket_contains_brute_force(seed, p):
    M = _random(6, seed)
    A = from_kernel(M, selfadjoint=False)
    b = norm_bracket(A, p, probes=8, seed=seed)
    assert b.lower <= b.upper * (1 + 1e-12)
    assert _dense_p_norm_lower(M, p, trials=300, seed=seed) <= b.upper * (1 + 1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1.0, 2.0, math.inf]), st.floats(0.1, 10.0))
def test_submultiplicative_and_scale_equivariant(seed, p, c):
    A = _random(8, seed)
    B = _random(8, seed + 1)
    nA = exact_norm(from_kernel(A, selfadjoint=False), p)
    nB = exact_norm(from_kernel(B, selfadjoint=False), p)
    nAB = exact_norm(from_kernel(A @ B, selfadjoint=False), p)
    assert nAB <= nA * nB * (1 + 1e-12)
    assert exact_norm(from_kernel(c * A, selfadjoint=False), p) == pytest.approx(c * nA, rel=1e-12)
