import json
import math

import numpy as np
import pytest

from sharplp.errors import InsufficientSpan, InvalidArgument
from sharplp.estimates import (
    ScenarioSpec,
    default_tolerance,
    fit_growth_exponent,
    fourier_decay_check,
    kato_limit_scan,
    kernel_decay_fit,
    periodized_poisson,
    run_scenario,
    theoretical_exponent,
)
from sharplp.grid import make_grid
from sharplp.normest import exact_norm
from sharplp.operators import (
    BumpSpec,
    OperatorSpec,
    PotentialSpec,
    apply_spectral_function,
    build_operator,
    from_kernel,
    heat,
    make_bump,
)

WIDE = make_grid(1, 32768, 1024)


@pytest.fixture(scope="module")
def free_growth():
    spec = ScenarioSpec("free_growth", OperatorSpec("laplacian", WIDE), t_sweep=(8.0, 16.0, 32.0, 64.0, 128.0),
                        t_scaled=True, tolerance=0.1)
    return run_scenario(spec)


def test_theoretical_exponent():
    assert theoretical_exponent(1, 1) == 0.5
    assert theoretical_exponent(3, math.inf) == 1.5
    assert theoretical_exponent(2, 2) == 0
    assert default_tolerance(0.0) == pytest.approx(0.05)


def test_fit_exact_power_law():
    u = np.geomspace(1, 100, 8)
    fit = fit_growth_exponent(zip(u, u**0.5))
    assert fit.s_hat == pytest.approx(0.5, abs=1e-12)
    assert fit.span == pytest.approx(100)


def test_fit_constant_rows():
    assert fit_growth_exponent([(u, 3.0) for u in (1, 2, 4, 8, 16)]).s_hat == pytest.approx(0.0, abs=1e-12)


def test_fit_noisy_linear():
    rng = np.random.default_rng(0)
    u = np.geomspace(1, 1000, 40)
    v = 3 * u * (1 + 0.01 * rng.standard_normal(u.size))
    fit = fit_growth_exponent(zip(u, v))
    assert fit.s_hat == pytest.approx(1.0, abs=0.02)
    assert abs(fit.s_hat - 1.0) <= fit.band + 0.02


def test_fit_insufficient_span():
    with pytest.raises(InsufficientSpan):
        fit_growth_exponent([(1, 1), (2, 2), (3, 3), (4, 4)])
    with pytest.raises(InsufficientSpan):
        fit_growth_exponent([(1, 1), (100, 2)])


def test_free_growth_exponent(free_growth):
    assert free_growth.passed
    assert 0.4 <= free_growth.s_hat <= 0.6
    assert not free_growth.skipped


def test_report_outputs(free_growth):
    lines = free_growth.to_csv().splitlines()
    assert lines[0] == "k,t,u,lower,upper,midpoint,relative_width,tail,used"
    assert len(lines) == 21
    summary = json.loads(free_growth.to_json())
    assert summary["pass"] is True and summary["s"] == 0.5
    assert free_growth.plot_tsv().startswith("log_u\tlog_v\n")


def test_two_norm_does_not_grow():
    spec = ScenarioSpec("free_growth", OperatorSpec("laplacian", WIDE), p=2, t_sweep=(8.0, 16.0, 32.0, 64.0, 128.0),
                        t_scaled=True)
    rep = run_scenario(spec)
    assert rep.s == 0 and rep.passed
    assert all(r["midpoint"] == pytest.approx(1.0, abs=1e-12) for r in rep.rows)


def test_main_growth_on_laplacian():
    spec = ScenarioSpec("main_growth", OperatorSpec("laplacian", WIDE), t_sweep=(8.0, 16.0, 32.0, 64.0, 128.0),
                        t_scaled=True, tolerance=0.1)
    rep = run_scenario(spec)
    assert 0.4 <= rep.s_hat <= 0.6


def test_uniformity_uses_dilations():
    # the uniformity row at scale k measures phi(2^k H), which is the t = 0 growth cell at -k
    H = build_operator(OperatorSpec("laplacian", WIDE))
    bump = BumpSpec(0.5, 1.0, 2.0, 4.0)
    rep = run_scenario(ScenarioSpec("multiplier_uniformity", OperatorSpec("laplacian", WIDE), k_sweep=(-8, -6, -4),
                                    bump=bump), H)
    phi = make_bump(bump)
    for row in rep.rows:
        direct = exact_norm(apply_spectral_function(H, phi, -row["k"]), 1)
        assert row["midpoint"] == pytest.approx(direct, rel=1e-12)
    assert rep.passed


def test_squared_bump_norms_are_ordered():
    # phi^2 <= phi pointwise gives the same ordering on the spectrum in L^2
    H = build_operator(OperatorSpec("laplacian", make_grid(1, 4096, 256)))
    phi = make_bump(BumpSpec(0.5, 1.0, 2.0, 4.0))
    for k in (0, 2, 4):
        one = apply_spectral_function(H, phi, k)
        two = apply_spectral_function(H, lambda x: phi(x) ** 2, k)
        assert exact_norm(two, 2) <= exact_norm(one, 2) + 1e-15


def test_symbol_and_dense_norms_agree():
    g = make_grid(1, 256, 64)
    H = build_operator(OperatorSpec("laplacian", g))
    phi = make_bump(BumpSpec(0.5, 1.0, 2.0, 4.0))
    A = apply_spectral_function(H, lambda mu: phi(mu) * np.exp(-1j * 2.0 * mu), 0)
    dense = from_kernel(A.kernel(), g, selfadjoint=False)
    assert exact_norm(A, 1) == pytest.approx(exact_norm(dense, 1), rel=1e-12)


def test_sobolev_start_is_bessel_potential():
    spec = ScenarioSpec("sobolev", OperatorSpec("laplacian", make_grid(1, 32768, 4096)),
                        t_sweep=(0.0, 2.0, 4.0, 8.0, 16.0, 32.0), tail_tol=1e-2)
    rep = run_scenario(spec)
    first = rep.rows[0]
    assert first["t"] == 0 and first["midpoint"] == pytest.approx(1.0, abs=1e-3)
    assert isinstance(rep.extra["eps_zero_fit"], dict)


def test_scenario_validation():
    with pytest.raises(InvalidArgument):
        ScenarioSpec("nonsense", OperatorSpec("laplacian", WIDE))
    with pytest.raises(InvalidArgument):
        ScenarioSpec("free_growth", OperatorSpec("fractional", WIDE, alpha=0.5))
    with pytest.raises(InvalidArgument):
        ScenarioSpec("kato_limit")


def test_gaussian_decay_exponent():
    T = heat(build_operator(OperatorSpec("laplacian", make_grid(1, 4096, 256))), 1.0)
    assert kernel_decay_fit(T, "stretched").gamma == pytest.approx(2.0, abs=0.05)


def test_poisson_kernel():
    g = make_grid(1, 4096, 256)
    T = heat(build_operator(OperatorSpec("fractional", g, alpha=0.5)), 1.0)
    fit = kernel_decay_fit(T, "algebraic", t=1.0, alpha=0.5, reference=periodized_poisson(g.L, 1.0))
    assert fit.mu == pytest.approx(2.0, abs=0.1)
    assert fit.reference_error <= 1e-3


def test_periodized_poisson_sums_images():
    f = periodized_poisson(16.0, 0.7)
    x = np.array([0.0, 1.3, 5.0])
    M = 20000
    images = sum(0.7 / math.pi / (0.7**2 + (x + 16.0 * m) ** 2) for m in range(-M, M + 1))
    images += 2 * 0.7 / math.pi / (16.0**2 * (M + 0.5))  # images beyond |m| = M
    assert np.allclose(f(x), images, rtol=1e-6)


def test_fourier_decay_gaussian():
    fit = fourier_decay_check(1)
    assert fit.gamma == pytest.approx(2.0, abs=0.05)
    assert fit.derivative["bounded"]
    with pytest.raises(InvalidArgument):
        fourier_decay_check(1, n=1024)


def test_kato_scan_coulomb():
    scan = kato_limit_scan(PotentialSpec("inverse_power", alpha=1.0), 3, (0.4, 0.2, 0.1))
    for r, v in scan.rows:
        assert v / (4 * math.pi * r) == pytest.approx(1.0, abs=0.05)
    assert scan.power == pytest.approx(1.0, abs=0.05)
    with pytest.raises(InvalidArgument):
        kato_limit_scan(PotentialSpec("inverse_power"), 3, (0.1, 0.2))


def test_kato_scenario():
    rep = run_scenario(ScenarioSpec("kato_limit", potential=PotentialSpec("inverse_power", alpha=1.5)))
    assert rep.passed
    assert rep.extra["power"] == pytest.approx(0.5, abs=0.05)
