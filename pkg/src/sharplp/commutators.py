"""Position commutators Ad_l(A) = [x_l, A], their iterates, and exact identities they obey.

Two independent routes compute Ad_l^k(A):

* ``matrix`` -- k-fold X A - A X with X the sawtooth coordinate centered at
  ``center``; an exact derivation, so Leibniz and Duhamel identities hold to
  roundoff.
* ``kernel`` -- multiply the kernel by wrap(x_l - y_l)^k with the difference
  lifted to [-L/2, L/2); this is the R^d meaning used for norms.

The two agree wherever x and y stay within L/4 of the center.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .amalgam import amalgam_operator_lower_bound, x1q_operator_bracket
from .errors import InvalidArgument, NumericalFailure
from .grid import TorusGrid
from .normest import exact_norm
from .operators import (
    LinearGridOperator,
    apply_spectral_function,
    lower_bound_shift,
    spectral_bounds,
)

PANEL_CAP = 1024
GL_ORDER = 16


def sawtooth(grid: TorusGrid, l: int, center=None) -> np.ndarray:
    """x_l - c_l wrapped to [-L/2, L/2), flattened; default center is the grid middle."""
    if not 0 <= l < grid.d:
        raise InvalidArgument(f"coordinate index {l} out of range for d={grid.d}")
    c = grid.L / 2 if center is None else float(np.asarray(center, float).reshape(-1)[l])
    return grid.torus_displacement(grid.coords()[:, l], c)


def lifted_difference(grid: TorusGrid, l: int) -> np.ndarray:
    """wrap(x_l - y_l) for all point pairs, shape (size, size)."""
    x = grid.coords()[:, l]
    return grid.torus_displacement(x[:, None], x[None, :])


def _matrix_ad(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X[:, None] * M - M * X[None, :]


def ad(A: LinearGridOperator, l: int = 0, route: str = "kernel", center=None) -> LinearGridOperator:
    return ad_iterated(A, l, 1, route=route, center=center)


def ad_iterated(A: LinearGridOperator, l: int = 0, k: int = 1, route: str = "matrix",
                center=None) -> LinearGridOperator:
    """Ad_l^k(A) by the chosen route (see module docstring)."""
    if k < 0:
        raise InvalidArgument("commutator order must be nonnegative")
    if A.grid is None:
        raise InvalidArgument("commutators need a grid for the position coordinate")
    if not 0 <= l < A.grid.d:
        raise InvalidArgument(f"coordinate index {l} out of range for d={A.grid.d}")
    if k == 0:
        return A
    M = A.matrix()
    if route == "matrix":
        X = sawtooth(A.grid, l, center)
        out = M
        for _ in range(k):
            out = _matrix_ad(out, X)
    elif route == "kernel":
        out = M * lifted_difference(A.grid, l) ** k
    else:
        raise InvalidArgument(f"unknown route {route!r}")
    return LinearGridOperator(A.grid, "kernel", matrix=out)


def wrap_safe_mask(grid: TorusGrid, center=None) -> np.ndarray:
    """Points within L/4 of the center along every axis, flattened."""
    c = np.full(grid.d, grid.L / 2) if center is None else np.asarray(center, float)
    disp = grid.torus_displacement(grid.coords(), c[None, :])
    return np.all(np.abs(disp) < grid.L / 4, axis=1)


def route_agreement(A: LinearGridOperator, l: int = 0, k: int = 1, center=None) -> float:
    """Max difference of the two routes on the wrap-safe block, relative to the kernel route."""
    a = ad_iterated(A, l, k, "matrix", center).matrix()
    b = ad_iterated(A, l, k, "kernel", center).matrix()
    m = wrap_safe_mask(A.grid, center)
    diff = np.abs(a - b)[np.ix_(m, m)].max(initial=0.0)
    scale = max(np.abs(b).max(initial=0.0), 1e-300)
    return float(diff / scale)


def _rel(lhs: np.ndarray, rhs: np.ndarray, ref: float = 0.0) -> float:
    """Max-norm residual relative to the larger side, or to ``ref`` when that is larger."""
    den = max(np.abs(lhs).max(initial=0.0), np.abs(rhs).max(initial=0.0), ref)
    if den == 0:
        return 0.0
    return float(np.abs(lhs - rhs).max(initial=0.0) / den)


def _natural_scale(grid: TorusGrid, l: int, center, *Ms) -> float:
    """Size of a commutator with the sawtooth: max|x| times max|M|."""
    X = sawtooth(grid, l, center)
    return float(np.abs(X).max() * max(np.abs(M).max(initial=0.0) for M in Ms))


# --------------------------------------------------------------------------- Leibniz


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def leibniz_residual(ops: list[LinearGridOperator], order: int, l: int = 0, center=None) -> float:
    """Ad^order(A_1...A_n) against sum over m of order!/(m_1!...m_n!) Ad^{m_1}(A_1)...Ad^{m_n}(A_n)."""
    if not ops:
        raise InvalidArgument("need at least one factor")
    grid = ops[0].grid
    prod = ops[0].matrix()
    for op in ops[1:]:
        prod = prod @ op.matrix()
    direct = ad_iterated(LinearGridOperator(grid, "kernel", matrix=prod), l, order, "matrix", center).matrix()
    powers = [[ad_iterated(op, l, m, "matrix", center).matrix() for m in range(order + 1)] for op in ops]
    total = np.zeros_like(direct, dtype=complex)
    for ms in _compositions(order, len(ops)):
        coef = math.factorial(order)
        for m in ms:
            coef //= math.factorial(m)
        term = powers[0][ms[0]]
        for i in range(1, len(ops)):
            term = term @ powers[i][ms[i]]
        total = total + coef * term
    return _rel(direct, total)


# --------------------------------------------------------------------------- Duhamel


def _gauss_legendre_panels(f_eig, a: float, b: float, panels: int) -> np.ndarray:
    x, w = np.polynomial.legendre.leggauss(GL_ORDER)
    edges = np.linspace(a, b, panels + 1)
    total = None
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        for xi, wi in zip(x, w):
            term = half * wi * f_eig(mid + half * xi)
            total = term if total is None else total + term
    return total


def duhamel_integral(R: LinearGridOperator, inner: np.ndarray, xi: float, tol: float = 1e-12,
                     cap: int = PANEL_CAP) -> tuple[np.ndarray, int]:
    """int_0^xi e^{-isR} inner e^{-i(xi-s)R} ds by composite Gauss-Legendre.

    The integrand is evaluated in R's eigenbasis, where it is the entrywise
    product of U* inner U with exp(-i s lam_a - i (xi - s) lam_b). Panels
    double until successive results differ by less than ``tol`` relative.
    """
    S = R.spectral()
    lam, U = S._eig
    lam = np.asarray(lam)
    T = U.conj().T @ inner @ U
    la, lb = lam[:, None], lam[None, :]

    def f(s):
        return np.exp(-1j * s * la - 1j * (xi - s) * lb) * T

    if xi == 0:
        return np.zeros_like(inner, dtype=complex), 0
    panels = 1
    prev = _gauss_legendre_panels(f, 0.0, xi, panels)
    while True:
        panels *= 2
        if panels > cap:
            raise NumericalFailure(f"Duhamel quadrature unsettled at {cap} panels")
        cur = _gauss_legendre_panels(f, 0.0, xi, panels)
        scale = max(np.abs(cur).max(initial=0.0), 1e-300)
        if np.abs(cur - prev).max(initial=0.0) <= tol * scale:
            break
        prev = cur
    return U @ cur @ U.conj().T, panels


def verify_duhamel(R: LinearGridOperator, xi: float, l: int = 0, center=None) -> float:
    """Residual of Ad(e^{-i xi R}) = -i int_0^xi e^{-isR} Ad(R) e^{-i(xi-s)R} ds."""
    E = apply_spectral_function(R, lambda lam: np.exp(-1j * xi * lam))
    lhs = ad_iterated(E, l, 1, "matrix", center).matrix()
    adR = ad_iterated(R, l, 1, "matrix", center).matrix()
    integral, _ = duhamel_integral(R, adR, xi)
    rhs = -1j * integral
    return _rel(lhs, rhs, _natural_scale(R.grid, l, center, E.matrix()))


@dataclass(frozen=True)
class ExpansionResiduals:
    base: float
    resolvent: float
    shift: float


def verify_expansion_base(H: LinearGridOperator, t: float, l: int = 0, center=None) -> ExpansionResiduals:
    """Residuals of the first-order commutator expansion for R e^{-itH} R with R = (I+H)^-1.

    base:      Ad(R e R) = Ad(R) e R + R e Ad(R) + i int_0^t e^{-isH} Ad(R) e^{-i(t-s)H} ds,
               using R[x, H]R = -Ad(R) inside the Duhamel term;
    resolvent: R [x, H] R = -Ad(R) on its own.
    H is shifted by c' when its spectrum dips below zero.
    """
    shift = 0.0
    if spectral_bounds(H)[0] < 0:
        shift = lower_bound_shift(H)
        H = H.shifted(shift)
    R = apply_spectral_function(H, lambda lam: 1.0 / (1.0 + lam))
    E = apply_spectral_function(H, lambda lam: np.exp(-1j * t * lam))
    Rm, Em = R.matrix(), E.matrix()
    adR = ad_iterated(R, l, 1, "matrix", center).matrix()
    lhs = ad_iterated(LinearGridOperator(H.grid, "kernel", matrix=Rm @ Em @ Rm), l, 1, "matrix", center).matrix()
    integral, _ = duhamel_integral(H, adR, t)
    rhs = adR @ Em @ Rm + Rm @ Em @ adR + 1j * integral
    base = _rel(lhs, rhs, _natural_scale(H.grid, l, center, Rm))

    Hm = H.matrix()
    adH = ad_iterated(LinearGridOperator(H.grid, "kernel", matrix=Hm), l, 1, "matrix", center).matrix()
    res = _rel(Rm @ adH @ Rm, -adR, _natural_scale(H.grid, l, center, Rm))
    return ExpansionResiduals(base, res, shift)


# --------------------------------------------------------------------------- criterion


@dataclass(frozen=True)
class CommutatorReport:
    l: int
    orders: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    M: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["l", "k", "norm", "fitted_M"])
        for k, v in zip(self.orders, self.norms):
            w.writerow([self.l, k, repr(float(v)), repr(float(self.M))])
        return buf.getvalue()


def commutator_norms(A: LinearGridOperator, l: int = 0, kmax: int | None = None, route: str = "kernel",
                     center=None) -> CommutatorReport:
    d = A.grid.d
    kmax = d // 2 + 1 if kmax is None else kmax
    orders = list(range(kmax + 1))
    norms = [exact_norm(A, 2)]
    for k in orders[1:]:
        norms.append(exact_norm(ad_iterated(A, l, k, route, center), 2))
    M = max((norms[k] ** (1.0 / k) for k in orders[1:]), default=0.0)
    return CommutatorReport(l, orders, norms, float(M))


def criterion_report(A: LinearGridOperator, p: float, j: int = 0, l: int = 0, probes: int = 8,
                     seed: int = 0, center=None):
    """Commutator norms, a measured X^{p,2}_j norm (lower bound) and the shape M^{d(1/p - 1/2)}.

    M is floored at 1, as the criterion is stated for M >= 1.
    """
    if not 1 <= p <= 2:
        raise InvalidArgument("criterion applies for 1 <= p <= 2")
    rep = commutator_norms(A, l, center=center)
    if p == 1:
        measured = x1q_operator_bracket(A, j, seed=seed).lower
    else:
        measured = amalgam_operator_lower_bound(A, p, 2, j, probes=probes, seed=seed)
    bound = max(rep.M, 1.0) ** (A.grid.d * (1.0 / p - 0.5))
    return rep, float(measured), float(bound)


# --------------------------------------------------------------------------- propagator trend


@dataclass(frozen=True)
class TrendReport:
    rows: list
    s_hat: float
    band: float
    bound: float
    passed: bool


def propagator_trend(H: LinearGridOperator, xis=(1, 2, 4, 8, 16), j: int = 0, slack: float = 0.3,
                     tail_tol: float = 1e-6) -> TrendReport:
    """Growth of X^{1,2}_j lower bounds of e^{-i xi R}, R = (I+H)^-1, against 1 + xi.

    Passes when the fitted exponent stays below d/2 + ``slack``. Cells whose
    kernel puts ``tail_tol`` or more of its mass beyond L/4 are refused.
    """
    from .estimates import fit_growth_exponent
    from .operators import tail_mass_fraction

    if spectral_bounds(H)[0] < 0:
        H = H.shifted(lower_bound_shift(H))
    rows = []
    for xi in xis:
        E = apply_spectral_function(H, lambda lam, xi=xi: np.exp(-1j * xi / (1.0 + lam)))
        tail = tail_mass_fraction(E)
        if tail >= tail_tol:
            raise NumericalFailure(f"e^(-i xi R) at xi={xi} is not localized", tail)
        b = x1q_operator_bracket(E, j)
        rows.append({"xi": float(xi), "lower": b.lower, "upper": b.upper, "tail": tail})
    fit = fit_growth_exponent([(1 + r["xi"], r["lower"]) for r in rows], min_rows=4, min_span=8.0)
    bound = H.grid.d / 2 + slack
    return TrendReport(rows, fit.s_hat, fit.band, bound, bool(fit.s_hat <= bound))
