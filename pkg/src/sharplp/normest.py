"""Brackets [lower, upper] for L^p -> L^p operator norms.

The measure weight h^d cancels in p -> p ratios, so everything here works on
the plain action matrix with unweighted vector norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, svds

from .errors import InvalidArgument, NumericalFailure
from .operators import LinearGridOperator

EXACT_P = (1.0, 2.0, math.inf)


@dataclass(frozen=True)
class NormBracket:
    p: float
    lower: float
    upper: float
    lower_method: str
    upper_method: str
    probes: int = 0

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def relative_width(self) -> float:
        mid = self.midpoint
        return self.width / mid if mid > 0 else 0.0


def _check_p(p):
    p = float(p)
    if not p >= 1:
        raise InvalidArgument(f"exponent must lie in [1, inf], got {p}")
    return p


def exact_norm(A: LinearGridOperator, p: float) -> float:
    """Closed-form norm for p in {1, 2, inf}."""
    p = _check_p(p)
    if p not in EXACT_P:
        raise InvalidArgument(f"no closed form for p={p}; use norm_bracket")
    if A.representation == "symbol":
        if p == 2:
            return float(np.abs(A.symbol).max())
        # circulant: every column and row has the same l1 mass
        return float(np.abs(A.convolution_column()).sum())
    if A.representation == "spectral" and p == 2:
        return float(np.abs(A._eig[0]).max(initial=0.0))
    M = A.matrix()
    if p == 1:
        return float(np.abs(M).sum(axis=0).max(initial=0.0))
    if p == math.inf:
        return float(np.abs(M).sum(axis=1).max(initial=0.0))
    if M.size == 0 or not np.any(M):
        return 0.0
    return float(scipy.linalg.svdvals(M)[0])


def _vnorm(v: np.ndarray, p: float) -> np.ndarray:
    """Column-wise l^p norms."""
    a = np.abs(v)
    if math.isinf(p):
        return a.max(axis=0)
    return (a**p).sum(axis=0) ** (1.0 / p)


def _dual_vector(y: np.ndarray, p: float) -> np.ndarray:
    """Norming vector for y in l^p: |y|^(p-1) conj(sign y), columnwise."""
    a = np.abs(y)
    phase = np.exp(-1j * np.angle(y))
    if math.isinf(p):
        out = np.where(a >= a.max(axis=0, keepdims=True) * (1 - 1e-12), phase, 0)
        return out
    if p == 1:
        return phase
    return a ** (p - 1) * phase


def _probe_set(A: LinearGridOperator, rng: np.random.Generator, count: int) -> np.ndarray:
    n = A.size
    cols = []
    cols.append(rng.standard_normal((n, count)) + 1j * rng.standard_normal((n, count)))
    if A.representation == "symbol":
        e = np.zeros((n, 1))
        e[0, 0] = 1.0
        cols.append(e)
    else:
        cols.append(np.eye(n)[:, np.linspace(0, n - 1, min(n, count)).astype(int)])
    # modulated Gaussians on the index line
    x = np.arange(n)
    for width in (max(n / 64, 1.0), max(n / 16, 1.0)):
        for freq in (0.0, 0.25 * math.pi, 0.5 * math.pi):
            cols.append((np.exp(-0.5 * ((x - n / 2) / width) ** 2) * np.exp(1j * freq * x))[:, None])
    return np.concatenate(cols, axis=1)


def _apply(A: LinearGridOperator, V: np.ndarray) -> np.ndarray:
    return A.apply(V)


def _top_singular_vector(A: LinearGridOperator, seed: int) -> np.ndarray | None:
    """Right singular vector of the largest singular value, as one more probe."""
    n = A.size
    if n < 8:
        _, _, vh = np.linalg.svd(A.matrix())
        return vh[0].conj()[:, None]
    Aadj = A.adjoint()
    op = LinearOperator((n, n), matvec=lambda v: A.apply(v), rmatvec=lambda v: Aadj.apply(v), dtype=complex)
    v0 = np.random.default_rng(seed).standard_normal(n).astype(complex)
    try:
        _, _, vh = svds(op, k=1, v0=v0, tol=1e-12, maxiter=50 * n)
    except Exception:  # ARPACK non-convergence only costs us a probe
        return None
    return vh[0].conj()[:, None]


def lower_bound_norm(A: LinearGridOperator, p: float, probes: int = 16, seed: int = 0,
                     iterations: int = 40) -> float:
    """Largest ratio ||A f||_p / ||f||_p over seeded probes and power-method iterates."""
    p = _check_p(p)
    rng = np.random.default_rng(seed)
    q = 1.0 if math.isinf(p) else (math.inf if p == 1 else p / (p - 1))
    Aadj = A.adjoint()

    best = 0.0
    F = _probe_set(A, rng, probes)
    v = _top_singular_vector(A, seed)
    if v is not None:
        F = np.concatenate([F, v], axis=1)
    Y = _apply(A, F)
    ratios = _vnorm(Y, p) / _vnorm(F, p)
    best = max(best, float(ratios.max(initial=0.0)))

    if not A.representation == "symbol" and A.size <= 4096:
        # extreme points for p = 1 and p = inf come straight from the matrix
        M = A.matrix()
        if p == 1:
            best = max(best, float(np.abs(M).sum(axis=0).max()))
        elif math.isinf(p):
            i = int(np.abs(M).sum(axis=1).argmax())
            f = np.exp(-1j * np.angle(M[i]))
            best = max(best, float(np.abs(M @ f).max()))

    # p-norm power method from the best few probes
    order = np.argsort(-ratios)[: min(4, ratios.size)]
    X = F[:, order]
    X = X / _vnorm(X, p)
    stalled = 0
    for _ in range(iterations):
        Y = _apply(A, X)
        ny = _vnorm(Y, p)
        if not np.any(ny > 0):
            break
        top = float(ny.max())
        # the iteration is monotone, so a few steps without progress mean it has settled
        stalled = stalled + 1 if top <= best * (1 + 1e-13) else 0
        best = max(best, top)
        if stalled >= 3:
            break
        Z = _apply(Aadj, _dual_vector(Y, p))
        Xn = _dual_vector(Z, q)
        nx = _vnorm(Xn, p)
        keep = nx > 0
        if not np.any(keep):
            break
        X = Xn[:, keep] / nx[keep]
    return best


def interpolated_upper_bound(A: LinearGridOperator, p: float) -> float:
    """Riesz-Thorin bound from the 1-, 2- and inf-norms."""
    p = _check_p(p)
    n2 = exact_norm(A, 2)
    if p <= 2:
        n1 = exact_norm(A, 1)
        return float(n1 ** (2 / p - 1) * n2 ** (2 - 2 / p))
    ninf = exact_norm(A, math.inf)
    return float(ninf ** (1 - 2 / p) * n2 ** (2 / p))


def norm_bracket(A: LinearGridOperator, p: float, probes: int = 16, seed: int = 0) -> NormBracket:
    p = _check_p(p)
    if p in EXACT_P:
        v = exact_norm(A, p)
        return NormBracket(p, v, v, "exact", "exact", 0)
    upper = interpolated_upper_bound(A, p)
    lower = lower_bound_norm(A, p, probes=probes, seed=seed)
    if lower > upper * (1 + 1e-9) + 1e-300:
        raise NumericalFailure(f"probe lower bound {lower:.6g} exceeds interpolation bound {upper:.6g}")
    return NormBracket(p, min(lower, upper), upper, "probes+power", "riesz-thorin", probes)
