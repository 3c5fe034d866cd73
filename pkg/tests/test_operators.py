import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sharplp.errors import CapacityError, DomainError, InvalidArgument, InvalidOperator
from sharplp.grid import GridFunction, make_grid
from sharplp.operators import (
    BumpSpec,
    LinearGridOperator,
    OperatorSpec,
    PotentialSpec,
    apply_spectral_function,
    build_operator,
    bump_family,
    eigendecompose,
    from_kernel,
    heat,
    identity,
    kato_norm,
    make_bump,
    propagator,
    resolvent_power_quadrature,
    tail_mass_fraction,
)


@pytest.fixture(scope="module")
def lap1():
    return build_operator(OperatorSpec("laplacian", make_grid(1, 128, 16)))


def _random_hermitian(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (X + X.conj().T) / 2


def test_laplacian_multiplies_waves(lap1):
    g = lap1.grid
    x = g.coords()[:, 0]
    wave = GridFunction(g, np.exp(2j * np.pi * x / g.L))
    out = lap1.apply(wave)
    assert np.allclose(out.values, (2 * np.pi / g.L) ** 2 * wave.values, atol=1e-12)


def test_fractional_one_is_laplacian(lap1):
    frac = build_operator(OperatorSpec("fractional", lap1.grid, alpha=1.0))
    assert np.allclose(frac.symbol, lap1.symbol)


def test_constant_potential_shifts_spectrum():
    g = make_grid(1, 64, 8)
    H = build_operator(OperatorSpec("schrodinger", g, V=PotentialSpec("constant", value=5.0)))
    lap = build_operator(OperatorSpec("laplacian", g))
    lam = np.sort(eigendecompose(H).eigenvalues.real)
    assert np.abs(lam - (np.sort(lap.symbol.real.ravel()) + 5)).max() < 1e-8


def test_schrodinger_capacity():
    with pytest.raises(CapacityError):
        build_operator(OperatorSpec("schrodinger", make_grid(1, 8192, 64), V=PotentialSpec("constant")))


def test_custom_kernel_must_be_selfadjoint():
    with pytest.raises(InvalidOperator):
        build_operator(OperatorSpec("custom_kernel", None, matrix=np.array([[1.0, 2.0], [0.0, 1.0]])))


def test_symbol_eigendecomposition_sorted(lap1):
    S = eigendecompose(lap1)
    assert np.array_equal(S.eigenvalues, np.sort(lap1.symbol.real.ravel()))
    assert np.abs(S.matrix() - lap1.matrix()).max() < 1e-10


def test_swap_matrix_eigenvalues():
    S = eigendecompose(from_kernel(np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert np.allclose(S.eigenvalues, [-1, 1])


def test_random_reconstruction():
    M = _random_hermitian(64, 0)
    S = eigendecompose(from_kernel(M))
    lam, U = S.eigenvalues, S.eigenvectors
    assert np.abs((U * lam) @ U.conj().T - M).max() <= 1e-8


def test_eigendecompose_rejects_nonselfadjoint():
    A = LinearGridOperator(None, "kernel", matrix=np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(InvalidOperator):
        eigendecompose(A)


def test_constant_function_is_identity():
    g = make_grid(1, 32, 4)
    H = build_operator(OperatorSpec("schrodinger", g, V=PotentialSpec("gaussian_well", center=(2.0,))))
    one = apply_spectral_function(H, lambda lam: np.ones_like(lam))
    assert np.abs(one.matrix() - np.eye(32)).max() < 1e-12


def test_domain_error():
    H = from_kernel(np.diag([-1.0, 1.0]))
    with pytest.raises(DomainError):
        apply_spectral_function(H, np.sqrt)


def test_propagator_unitary(lap1):
    rng = np.random.default_rng(5)
    f = GridFunction(lap1.grid, rng.standard_normal(128))
    from sharplp.grid import lp_norm

    for A in (lap1, from_kernel(_random_hermitian(32, 1))):
        if A.grid is None:
            v = rng.standard_normal(32)
            U = propagator(A, 0.7).matrix()
            assert np.linalg.norm(U @ v) == pytest.approx(np.linalg.norm(v), rel=1e-12)
        else:
            assert lp_norm(propagator(A, 0.7).apply(f), 2) == pytest.approx(lp_norm(f, 2), rel=1e-12)


def test_heat_kernel_is_gaussian():
    g = make_grid(1, 256, 32)
    t = 1.0
    T = heat(build_operator(OperatorSpec("laplacian", g)), t)
    K = T.kernel()
    col = g.size // 2
    x = g.coords()[:, 0]
    r = np.abs(g.torus_displacement(x, x[col]))
    ref = (4 * math.pi * t) ** -0.5 * np.exp(-(r**2) / (4 * t))
    near = r <= g.L / 4
    rel = np.abs(K[near, col] - ref[near]) / ref[near]
    assert rel.max() < 1e-4
    # about erfc(L / (8 sqrt(t))) of the mass lies beyond L/4, up to sampling of the edge
    assert tail_mass_fraction(T) == pytest.approx(math.erfc(4.0), rel=0.5)


@pytest.mark.parametrize("beta", [1.0, 1.7])
def test_resolvent_quadrature_matches_spectral(beta):
    A = build_operator(OperatorSpec("laplacian", make_grid(1, 128, 64)))
    Q = resolvent_power_quadrature(A, beta)
    ref = (1 + A.symbol.real) ** -beta
    assert np.abs(Q.symbol.real - ref).max() / ref.max() <= 1e-6


def test_resolvent_of_zero_is_identity():
    Q = resolvent_power_quadrature(from_kernel(np.zeros((4, 4))), 1.0)
    assert np.abs(Q.matrix() - np.eye(4)).max() < 1e-10


def test_resolvent_rejects_negative_spectrum():
    with pytest.raises(InvalidOperator):
        resolvent_power_quadrature(from_kernel(np.diag([-1.0, 1.0])), 1.0)


def test_bump_plateau_and_support():
    phi = make_bump(BumpSpec(0.5, 1.0, 2.0, 4.0))
    assert np.all(phi(np.linspace(1, 2, 11)) == 1.0)
    assert np.all(phi(np.array([-3.0, 0.0, 0.5, 4.0, 9.0])) == 0.0)
    assert np.all((phi(np.linspace(0, 5, 200)) >= 0) & (phi(np.linspace(0, 5, 200)) <= 1))


def test_bump_ordering():
    with pytest.raises(InvalidArgument):
        BumpSpec(1.0, 0.5, 2.0, 4.0)


def test_bump_caps():
    spec = BumpSpec(0.5, 1.0, 2.0, 4.0, caps=(1.0, 1e-3))
    with pytest.raises(InvalidArgument):
        make_bump(spec)


def test_bump_family_shares_support():
    spec = BumpSpec(0.5, 1.0, 2.0, 4.0)
    fam = bump_family(spec)
    assert fam[0].spec == spec
    x = np.linspace(0, 5, 501)
    for phi in fam:
        assert np.all(phi(x[(x <= 0.5) | (x >= 4)]) == 0)
    # steeper members have larger seminorms
    assert np.all(np.diff([phi.seminorms[1] for phi in fam]) > 0)


def test_bump_first_seminorm_matches_finite_difference():
    phi = make_bump(BumpSpec(0.5, 1.0, 2.0, 4.0))
    x = np.linspace(0, 5, 200001)
    slope = np.abs(np.diff(phi(x)) / np.diff(x)).max()
    assert slope == pytest.approx(phi.seminorms[1], rel=1e-3)


def test_kato_zero_potential():
    assert kato_norm(PotentialSpec("constant", value=0.0), 0.5, 3) == 0.0


def test_kato_gaussian_well_one_dimension():
    val = kato_norm(PotentialSpec("gaussian_well"), 1.0, 1)
    assert 0 < val <= math.sqrt(math.pi)


def test_kato_coulomb_three_dimensions():
    # |x|^-1 in R^3 centred at the origin: the integral of |y|^-2 over a ball of radius r is 4 pi r
    val = kato_norm(PotentialSpec("inverse_power", alpha=1.0), 0.1, 3, samples=[(0.0, 0.0, 0.0)])
    assert val == pytest.approx(4 * math.pi * 0.1, rel=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.05, 2.0))
def test_heat_semigroup(s, t):
    g = make_grid(1, 64, 8)
    H = build_operator(OperatorSpec("schrodinger", g, V=PotentialSpec("gaussian_well", center=(4.0,))))
    lhs = heat(H, s).matrix() @ heat(H, t).matrix()
    assert np.abs(lhs - heat(H, s + t).matrix()).max() < 1e-10


def test_heat_positivity_and_commutation():
    g = make_grid(1, 64, 8)
    H = build_operator(OperatorSpec("schrodinger", g, V=PotentialSpec("gaussian_well", center=(4.0,))))
    T = heat(H, 0.5).matrix()
    assert np.linalg.eigvalsh((T + T.conj().T) / 2).min() > -1e-14
    Hm = H.matrix()
    assert np.abs(T @ Hm - Hm @ T).max() < 1e-9


def test_operator_bytes_round_trip(lap1):
    back = LinearGridOperator.from_bytes(lap1.to_bytes())
    assert np.array_equal(back.symbol, lap1.symbol)
    I = identity(None, 3)
    assert np.array_equal(LinearGridOperator.from_bytes(I.to_bytes()).matrix(), np.eye(3))
