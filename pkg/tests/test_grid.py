import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sharplp.errors import CapacityError, InvalidArgument, InvalidData, ScaleOutOfRange
from sharplp.grid import (
    GridFunction,
    TorusGrid,
    cube_distance,
    dyadic_partition,
    fourier_transform,
    lp_norm,
    make_grid,
    restrict,
)


def test_make_grid_spacing_and_size():
    assert make_grid(1, 256, 16).h == 1 / 16
    assert make_grid(2, 64, 8).size == 4096


@pytest.mark.parametrize("args", [(1, 100, 16), (1, 256, 12), (3, 8, 8), (1, 4, 4)])
def test_make_grid_rejects_bad_shapes(args):
    with pytest.raises(InvalidArgument):
        make_grid(*args)


def test_make_grid_capacity():
    with pytest.raises(CapacityError):
        make_grid(2, 8192, 8)


def test_lp_norm_of_one_is_one():
    g = make_grid(1, 64, 1)
    f = GridFunction(g, np.ones(64))
    for p in (1, 1.5, 2, 7, math.inf):
        assert lp_norm(f, p) == pytest.approx(1.0, abs=1e-14)


def test_lp_norm_half_cube_indicator():
    g = make_grid(1, 64, 1)
    v = np.zeros(64)
    v[:32] = 1
    assert lp_norm(GridFunction(g, v), 2) == pytest.approx(0.5**0.5, abs=1e-14)


def test_lp_norm_rejects_nan_and_small_p():
    g = make_grid(1, 8, 1)
    v = np.ones(8)
    v[3] = np.nan
    with pytest.raises(InvalidData):
        lp_norm(GridFunction(g, v), 2)
    with pytest.raises(InvalidArgument):
        lp_norm(GridFunction(g, np.ones(8)), 0.5)


def test_parseval_and_inversion():
    rng = np.random.default_rng(1)
    for g in (make_grid(1, 128, 16), make_grid(2, 32, 4)):
        f = GridFunction(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
        F = fourier_transform(f)
        assert lp_norm(F, 2) == pytest.approx(lp_norm(f, 2), rel=1e-12)
        back = fourier_transform(F, "inverse")
        assert np.abs(back.values - f.values).max() < 1e-12


def test_fourier_of_constant_and_wave():
    g = make_grid(1, 64, 8)
    F = fourier_transform(GridFunction(g, np.ones(64)))
    freqs = g.frequencies(shifted=True)[0]
    assert np.argmax(np.abs(F.values)) == np.flatnonzero(freqs == 0)[0]
    assert np.abs(F.values[freqs != 0]).max() < 1e-12
    x = g.coords()[:, 0]
    W = fourier_transform(GridFunction(g, np.exp(2j * np.pi * x / g.L)))
    assert freqs[np.argmax(np.abs(W.values))] == pytest.approx(2 * np.pi / g.L)


def test_fourier_of_gaussian_is_gaussian():
    # the unitary transform maps exp(-x^2/2) to exp(-xi^2/2)
    g = make_grid(1, 256, 32)
    x = g.torus_displacement(g.coords()[:, 0], 0.0)
    F = fourier_transform(GridFunction(g, np.exp(-(x**2) / 2)))
    xi = g.frequencies(shifted=True)[0]
    assert np.abs(F.values - np.exp(-(xi**2) / 2)).max() < 1e-12


def test_partition_counts():
    assert len(dyadic_partition(make_grid(1, 256, 16), 0)) == 16
    P = dyadic_partition(make_grid(2, 64, 8), -1)
    assert len(P) == 16 and P.cubes[0].side == 2.0


def test_partition_scale_out_of_range():
    with pytest.raises(ScaleOutOfRange) as info:
        dyadic_partition(make_grid(1, 256, 16), 5)
    assert (info.value.j_min, info.value.j_max) == (-4, 4)


@pytest.mark.parametrize("d,n,L,j", [(1, 64, 8, 1), (2, 16, 4, 0), (2, 32, 8, -2)])
def test_partition_tiles(d, n, L, j):
    g = make_grid(d, n, L)
    P = dyadic_partition(g, j)
    assert len(P) == int(L * 2**j) ** d
    flat = np.sort(P.members.ravel())
    assert np.array_equal(flat, np.arange(g.size))


def _corner_distance(a, b, side, L):
    """Smallest torus distance between sample points of two closed intervals."""
    pa = a * side + np.linspace(0, side, 33)
    pb = b * side + np.linspace(0, side, 33)
    diff = np.abs(pa[:, None] - pb[None, :]) % L
    return float(np.minimum(diff, L - diff).min())


def test_cube_distance_examples():
    P = dyadic_partition(make_grid(1, 64, 16), 0)
    c = P.cubes
    assert cube_distance(P, c[2], c[2]) == 0
    assert cube_distance(P, c[2], c[3]) == 0
    assert cube_distance(P, c[0], c[3]) == 2
    assert cube_distance(P, c[0], c[15]) == 0  # wraps
    for a in range(16):
        for b in range(16):
            assert P.distances[a, b] == pytest.approx(_corner_distance(a, b, 1.0, 16.0))


def test_cube_distance_foreign_cube():
    P = dyadic_partition(make_grid(1, 64, 16), 0)
    Q = dyadic_partition(make_grid(1, 64, 16), 1)
    with pytest.raises(InvalidArgument):
        cube_distance(P, P.cubes[0], Q.cubes[5])


def test_restrict_idempotent_and_tiles():
    g = make_grid(2, 16, 4)
    rng = np.random.default_rng(0)
    f = GridFunction(g, rng.standard_normal(g.shape))
    P = dyadic_partition(g, 0)
    Q = P.cubes[5]
    once = restrict(f, Q, P)
    assert np.array_equal(restrict(once, Q, P).values, once.values)
    total = sum(restrict(f, q).values for q in P.cubes)
    assert np.allclose(total, f.values)


def test_restrict_measure():
    g = make_grid(1, 64, 8)
    P = dyadic_partition(g, 1)
    r = restrict(GridFunction(g, np.ones(64)), P.cubes[0], P)
    assert lp_norm(r, 1) == pytest.approx(0.5)


def test_serialization_round_trips():
    g = make_grid(2, 8, 2)
    rng = np.random.default_rng(3)
    f = GridFunction(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
    assert np.array_equal(GridFunction.from_bytes(f.to_bytes()).values, f.values)
    assert np.array_equal(GridFunction.from_csv(f.to_csv()).values, f.values)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.floats(1.0, 6.0))
def test_lp_norm_scales_with_constants(log_n, p):
    g = TorusGrid(1, 8 * 2**log_n, 2.0)
    v = np.random.default_rng(log_n).standard_normal(g.n)
    f = GridFunction(g, v)
    assert lp_norm(f.scaled(3.0), p) == pytest.approx(3 * lp_norm(f, p), rel=1e-12)
