"""Self-adjoint operators on torus grids and their spectral functional calculus.

Operators are held in one of three forms:

* ``symbol``   -- Fourier multiplier g on the FFT-ordered frequency grid,
* ``kernel``   -- dense action matrix M, with continuum kernel K = M / h^d,
* ``spectral`` -- eigenvalues and an orthonormal eigenbasis U, M = U diag U*.

Composition and functions of one operator stay in symbol or spectral form
whenever possible, so a single eigendecomposition serves a whole sweep.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy import integrate

from .errors import (
    CapacityError,
    DomainError,
    InvalidArgument,
    InvalidData,
    InvalidOperator,
    NumericalFailure,
    UnsafeTime,
)
from .grid import GridFunction, TorusGrid

DENSE_CAP = 4096
SELFADJOINT_TOL = 1e-10
MAX_LAGUERRE_NODES = 4096


# --------------------------------------------------------------------------- potentials


@dataclass(frozen=True)
class PotentialSpec:
    """Radial or tabulated potential.

    ``form`` is one of ``inverse_power`` (|x|^-alpha capped at ``cap``),
    ``gaussian_well`` (-depth exp(-|x|^2 / width^2)), ``constant`` and
    ``tabulated``. Distances are torus distances to ``center`` on grids.
    """

    form: str
    alpha: float = 1.0
    cap: float | None = None
    depth: float = 1.0
    width: float = 1.0
    value: float = 0.0
    table: GridFunction | None = None
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.form not in ("inverse_power", "gaussian_well", "constant", "tabulated"):
            raise InvalidArgument(f"unknown potential form {self.form!r}")
        if self.form == "tabulated" and self.table is None:
            raise InvalidArgument("tabulated potential needs a table")
        if self.form == "inverse_power" and self.alpha <= 0:
            raise InvalidArgument("inverse_power exponent must be positive")
        if self.form == "gaussian_well" and self.width <= 0:
            raise InvalidArgument("gaussian_well width must be positive")

    @property
    def radial(self) -> bool:
        return self.form != "tabulated"

    def profile(self, r) -> np.ndarray:
        """Uncapped radial profile v(r) with V(x) = v(|x - center|)."""
        r = np.asarray(r, float)
        if self.form == "inverse_power":
            with np.errstate(divide="ignore"):
                return np.where(r > 0, np.abs(r) ** (-self.alpha), np.inf)
        if self.form == "gaussian_well":
            return -self.depth * np.exp(-(r**2) / self.width**2)
        if self.form == "constant":
            return np.full_like(r, self.value)
        raise InvalidArgument("tabulated potentials have no radial profile")

    def __call__(self, points) -> np.ndarray:
        """Pointwise values at points of shape (m, d), uncapped, free space."""
        pts = np.atleast_2d(np.asarray(points, float))
        if self.form == "tabulated":
            g = self.table.grid
            idx = np.round(pts / g.h).astype(int) % g.n
            return self.table.values.real[tuple(idx.T)]
        c = np.zeros(pts.shape[1]) if self.center is None else np.asarray(self.center, float)
        return self.profile(np.sqrt(((pts - c) ** 2).sum(axis=1)))

    def on_grid(self, grid: TorusGrid) -> np.ndarray:
        """Values at the grid points (flattened), capped for inverse powers."""
        if self.form == "tabulated":
            if self.table.grid != grid:
                raise InvalidArgument("tabulated potential lives on another grid")
            vals = self.table.flat
            if np.abs(vals.imag).max() > 0:
                raise InvalidData("potential must be real")
            return vals.real.copy()
        c = np.zeros(grid.d) if self.center is None else np.asarray(self.center, float)
        r = grid.torus_distance_to(c)
        if self.form == "inverse_power":
            cap = 10.0 / grid.h if self.cap is None else self.cap
            with np.errstate(divide="ignore"):
                return np.minimum(np.where(r > 0, r ** (-self.alpha), np.inf), cap)
        return self.profile(r)


# --------------------------------------------------------------------------- operators


class LinearGridOperator:
    """Linear operator on grid functions in symbol, kernel or spectral form.

    ``grid`` may be None for bare matrices, in which case the cell measure is 1.
    Instances are treated as immutable.
    """

    def __init__(self, grid: TorusGrid | None, representation: str, *, symbol=None,
                 matrix=None, eigenvalues=None, eigenvectors=None, selfadjoint=False):
        self.grid = grid
        self.representation = representation
        self.selfadjoint = bool(selfadjoint)
        self._symbol = None
        self._matrix = None
        self._eig = None
        self._spectral_cache = None
        if representation == "symbol":
            if grid is None:
                raise InvalidArgument("symbol operators need a grid")
            s = np.asarray(symbol, complex).reshape(grid.shape)
            self._symbol = s
        elif representation == "kernel":
            m = np.asarray(matrix)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise InvalidArgument("kernel matrix must be square")
            if grid is not None and m.shape[0] != grid.size:
                raise InvalidArgument(f"matrix size {m.shape[0]} does not match grid size {grid.size}")
            self._matrix = m
        elif representation == "spectral":
            lam = np.asarray(eigenvalues)
            U = np.asarray(eigenvectors)
            if U.shape != (lam.size, lam.size):
                raise InvalidArgument("eigenvector matrix shape mismatch")
            self._eig = (lam, U)
        else:
            raise InvalidArgument(f"unknown representation {representation!r}")

    # -- basic properties

    @property
    def size(self) -> int:
        if self.grid is not None:
            return self.grid.size
        if self._matrix is not None:
            return self._matrix.shape[0]
        return self._eig[0].size

    @property
    def cell(self) -> float:
        return 1.0 if self.grid is None else self.grid.cell

    @property
    def symbol(self) -> np.ndarray:
        if self._symbol is None:
            raise InvalidArgument("operator has no symbol representation")
        return self._symbol

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.spectral()._eig[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self.spectral()._eig[1]

    def convolution_column(self) -> np.ndarray:
        """Action-matrix column at the origin for a symbol operator, c[x] = M[x, 0]."""
        return np.fft.ifftn(self.symbol)

    def matrix(self, cap: int = DENSE_CAP * 4) -> np.ndarray:
        """Dense action matrix M, so that (A f)(x) = sum_y M[x, y] f(y)."""
        if self._matrix is not None:
            return self._matrix
        if self.size > cap:
            raise CapacityError(f"dense matrix of size {self.size} exceeds cap {cap}")
        if self.representation == "symbol":
            self._matrix = _circulant(self.grid, self.convolution_column())
        else:
            lam, U = self._eig
            if np.isrealobj(U) and np.iscomplexobj(lam):
                # two real products are cheaper than one complex one
                self._matrix = (U * lam.real) @ U.T + 1j * ((U * lam.imag) @ U.T)
            else:
                self._matrix = (U * lam) @ U.conj().T
        return self._matrix

    def kernel(self) -> np.ndarray:
        """Continuum kernel K(x, y) = M[x, y] / h^d."""
        return self.matrix() / self.cell

    def is_real(self) -> bool:
        return bool(np.abs(self.matrix().imag).max(initial=0.0) == 0.0) if np.iscomplexobj(self.matrix()) else True

    # -- action

    def apply(self, f):
        """Apply to a GridFunction (returns one) or to a flat array / matrix of columns."""
        if isinstance(f, GridFunction):
            if self.grid is not None and f.grid != self.grid:
                raise InvalidArgument("grid function lives on another grid")
            if f.space != "position":
                raise InvalidArgument("operators act on position-space functions")
            return GridFunction(f.grid, self._apply_flat(f.flat))
        return self._apply_flat(np.asarray(f))

    def _apply_flat(self, v: np.ndarray) -> np.ndarray:
        if self.representation == "symbol" and self._matrix is None:
            d = self.grid.d
            cols = v.reshape(self.grid.shape + v.shape[1:])
            axes = tuple(range(d))
            sym = self._symbol.reshape(self._symbol.shape + (1,) * (v.ndim - 1))
            out = np.fft.ifftn(sym * np.fft.fftn(cols, axes=axes), axes=axes)
            return out.reshape(v.shape)
        if self._matrix is not None:
            return self._matrix @ v
        lam, U = self._eig
        coeff = U.conj().T @ v
        lam_b = lam.reshape((-1,) + (1,) * (v.ndim - 1))
        return U @ (lam_b * coeff)

    # -- spectral form

    def spectral(self) -> "LinearGridOperator":
        """Spectral representation (cached); see ``eigendecompose``."""
        if self.representation == "spectral":
            return self
        if self._spectral_cache is None:
            self._spectral_cache = eigendecompose(self)
        return self._spectral_cache

    # -- algebra

    def adjoint(self) -> "LinearGridOperator":
        if self.representation == "symbol":
            return LinearGridOperator(self.grid, "symbol", symbol=self._symbol.conj(), selfadjoint=self.selfadjoint)
        if self.representation == "spectral":
            lam, U = self._eig
            return LinearGridOperator(self.grid, "spectral", eigenvalues=lam.conj(), eigenvectors=U,
                                      selfadjoint=self.selfadjoint)
        return LinearGridOperator(self.grid, "kernel", matrix=self._matrix.conj().T, selfadjoint=self.selfadjoint)

    def scaled(self, c) -> "LinearGridOperator":
        real = np.isrealobj(c) or np.imag(c) == 0
        sa = self.selfadjoint and real
        if self.representation == "symbol":
            return LinearGridOperator(self.grid, "symbol", symbol=c * self._symbol, selfadjoint=sa)
        if self.representation == "spectral":
            lam, U = self._eig
            return LinearGridOperator(self.grid, "spectral", eigenvalues=c * lam, eigenvectors=U, selfadjoint=sa)
        return LinearGridOperator(self.grid, "kernel", matrix=c * self._matrix, selfadjoint=sa)

    def shifted(self, c: float) -> "LinearGridOperator":
        """A + c I."""
        if self.representation == "symbol":
            return LinearGridOperator(self.grid, "symbol", symbol=self._symbol + c, selfadjoint=self.selfadjoint)
        if self.representation == "spectral":
            lam, U = self._eig
            return LinearGridOperator(self.grid, "spectral", eigenvalues=lam + c, eigenvectors=U,
                                      selfadjoint=self.selfadjoint)
        out = LinearGridOperator(self.grid, "kernel", matrix=self._matrix + c * np.eye(self.size),
                                 selfadjoint=self.selfadjoint)
        if self._spectral_cache is not None:
            lam, U = self._spectral_cache._eig
            out._spectral_cache = LinearGridOperator(self.grid, "spectral", eigenvalues=lam + c,
                                                     eigenvectors=U, selfadjoint=self.selfadjoint)
        return out

    def __matmul__(self, other: "LinearGridOperator") -> "LinearGridOperator":
        _check_compatible(self, other)
        if self.representation == "symbol" and other.representation == "symbol":
            return LinearGridOperator(self.grid, "symbol", symbol=self._symbol * other._symbol)
        if (self.representation == "spectral" and other.representation == "spectral"
                and self._eig[1] is other._eig[1]):
            return LinearGridOperator(self.grid, "spectral", eigenvalues=self._eig[0] * other._eig[0],
                                      eigenvectors=self._eig[1])
        return LinearGridOperator(self.grid, "kernel", matrix=self.matrix() @ other.matrix())

    def __add__(self, other: "LinearGridOperator") -> "LinearGridOperator":
        _check_compatible(self, other)
        sa = self.selfadjoint and other.selfadjoint
        if self.representation == "symbol" and other.representation == "symbol":
            return LinearGridOperator(self.grid, "symbol", symbol=self._symbol + other._symbol, selfadjoint=sa)
        if (self.representation == "spectral" and other.representation == "spectral"
                and self._eig[1] is other._eig[1]):
            return LinearGridOperator(self.grid, "spectral", eigenvalues=self._eig[0] + other._eig[0],
                                      eigenvectors=self._eig[1], selfadjoint=sa)
        return LinearGridOperator(self.grid, "kernel", matrix=self.matrix() + other.matrix(), selfadjoint=sa)

    def __sub__(self, other: "LinearGridOperator") -> "LinearGridOperator":
        return self + other.scaled(-1.0)

    def __repr__(self):
        return f"LinearGridOperator({self.representation}, size={self.size}, grid={self.grid})"

    # -- serialization: tag + (d, n, L) header + payload

    _HEADER = struct.Struct("<4s1sIId")

    def to_bytes(self) -> bytes:
        g = self.grid
        d, n, L = (0, self.size, 0.0) if g is None else (g.d, g.n, g.L)
        if self.representation == "symbol":
            tag, payload = b"S", self._symbol.ravel()
        else:
            tag, payload = b"K", self.kernel().ravel()
        body = np.ascontiguousarray(payload, dtype=complex).view(np.float64).astype("<f8").tobytes()
        return self._HEADER.pack(b"SLOP", tag, d, n, L) + bytes([self.selfadjoint]) + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "LinearGridOperator":
        magic, tag, d, n, L = cls._HEADER.unpack_from(data)
        if magic != b"SLOP":
            raise InvalidData("not a serialized operator")
        off = cls._HEADER.size
        sa = bool(data[off])
        raw = np.frombuffer(data, dtype="<f8", offset=off + 1)
        vals = raw[0::2] + 1j * raw[1::2]
        grid = None if d == 0 else TorusGrid(d, n, L)
        size = n if grid is None else grid.size
        if tag == b"S":
            return cls(grid, "symbol", symbol=vals, selfadjoint=sa)
        if tag == b"K":
            if vals.size != size * size:
                raise InvalidData("kernel payload has wrong length")
            cell = 1.0 if grid is None else grid.cell
            return cls(grid, "kernel", matrix=cell * vals.reshape(size, size), selfadjoint=sa)
        raise InvalidData(f"unknown representation tag {tag!r}")


def _check_compatible(a: LinearGridOperator, b: LinearGridOperator):
    if a.grid != b.grid or a.size != b.size:
        raise InvalidArgument("operators act on different grids")


def _circulant(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    """M[x, y] = c[(x - y) mod n] per axis, for row-major flattened points."""
    n, d = grid.n, grid.d
    idx = np.arange(n)
    diff = (idx[:, None] - idx[None, :]) % n
    if d == 1:
        return c[diff]
    # 2D: M[(x1,x2),(y1,y2)] = c[(x1-y1)%n, (x2-y2)%n]
    m = c[diff[:, None, :, None], diff[None, :, None, :]]
    return m.reshape(n * n, n * n)


def identity(grid: TorusGrid | None, size: int | None = None) -> LinearGridOperator:
    if grid is not None:
        return LinearGridOperator(grid, "symbol", symbol=np.ones(grid.shape), selfadjoint=True)
    return LinearGridOperator(None, "kernel", matrix=np.eye(size), selfadjoint=True)


def multiplication(grid: TorusGrid, values) -> LinearGridOperator:
    """Pointwise multiplication by ``values``."""
    v = np.asarray(values).ravel()
    return LinearGridOperator(grid, "kernel", matrix=np.diag(v), selfadjoint=bool(np.isrealobj(v) or
                                                                                  not np.abs(v.imag).any()))


def from_kernel(K, grid: TorusGrid | None = None, selfadjoint: bool | None = None) -> LinearGridOperator:
    """Wrap a continuum kernel K(x, y); the action matrix is h^d K."""
    K = np.asarray(K)
    cell = 1.0 if grid is None else grid.cell
    if selfadjoint is None:
        selfadjoint = _selfadjoint_defect(K) <= SELFADJOINT_TOL
    return LinearGridOperator(grid, "kernel", matrix=cell * K, selfadjoint=selfadjoint)


def _selfadjoint_defect(K: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(K).max(initial=0.0)))
    return float(np.abs(K - K.conj().T).max(initial=0.0)) / scale


# --------------------------------------------------------------------------- builder


@dataclass(frozen=True)
class OperatorSpec:
    """Declarative description of a concrete operator.

    kind: laplacian, fractional (alpha), polyharmonic (order), schrodinger (V),
    magnetic_schrodinger (A, V) or custom_kernel (matrix).
    """

    kind: str
    grid: TorusGrid | None
    alpha: float = 1.0
    order: int = 1
    V: PotentialSpec | None = None
    A: tuple | None = None
    matrix: np.ndarray | None = field(default=None, repr=False, compare=False)
    dense_cap: int = DENSE_CAP

    def __post_init__(self):
        kinds = ("laplacian", "fractional", "polyharmonic", "schrodinger", "magnetic_schrodinger", "custom_kernel")
        if self.kind not in kinds:
            raise InvalidArgument(f"unknown operator kind {self.kind!r}")
        if self.kind == "fractional" and not self.alpha > 0:
            raise InvalidArgument("fractional exponent must be positive")
        if self.kind == "polyharmonic" and (int(self.order) != self.order or self.order < 1):
            raise InvalidArgument("polyharmonic order must be a positive integer")
        if self.kind == "custom_kernel" and self.matrix is None:
            raise InvalidArgument("custom_kernel needs a matrix")
        if self.kind != "custom_kernel" and self.grid is None:
            raise InvalidArgument(f"{self.kind} needs a grid")

    @property
    def homogeneity(self) -> float | None:
        """Degree m with H(lambda x) scaling as lambda^-m, for symbol kinds."""
        return {"laplacian": 2.0, "fractional": 2.0 * self.alpha,
                "polyharmonic": 2.0 * self.order}.get(self.kind)


def build_operator(spec: OperatorSpec) -> LinearGridOperator:
    g = spec.grid
    if spec.kind in ("laplacian", "fractional", "polyharmonic"):
        xi2 = g.freq_norm() ** 2
        power = {"laplacian": 1.0, "fractional": spec.alpha, "polyharmonic": float(spec.order)}[spec.kind]
        return LinearGridOperator(g, "symbol", symbol=xi2**power, selfadjoint=True)

    if spec.kind == "custom_kernel":
        K = np.asarray(spec.matrix)
        if g is not None and K.shape != (g.size, g.size):
            raise InvalidArgument("custom kernel does not match the grid")
        if _selfadjoint_defect(K) > SELFADJOINT_TOL:
            raise InvalidOperator("custom kernel is not self-adjoint")
        return from_kernel((K + K.conj().T) / 2, g, selfadjoint=True)

    if g.size > spec.dense_cap:
        raise CapacityError(f"{g.size} grid points exceeds dense cap {spec.dense_cap}")
    V = np.zeros(g.size) if spec.V is None else spec.V.on_grid(g)
    if spec.kind == "schrodinger":
        lap = LinearGridOperator(g, "symbol", symbol=g.freq_norm() ** 2).matrix().real
        M = lap + np.diag(V)
    else:
        M = _magnetic_matrix(g, spec.A) + np.diag(V)
    sym = (M + M.conj().T) / 2
    if np.abs(sym - M).max() > SELFADJOINT_TOL * max(1.0, np.abs(M).max()):
        raise NumericalFailure("assembled operator is not self-adjoint", float(np.abs(sym - M).max()))
    if np.iscomplexobj(sym) and not np.abs(sym.imag).any():
        sym = sym.real
    return LinearGridOperator(g, "kernel", matrix=sym, selfadjoint=True)


def _magnetic_matrix(g: TorusGrid, A) -> np.ndarray:
    """Dense matrix of sum_l (i d_l + A_l)^2 by spectral differentiation."""
    if A is None or len(A) != g.d:
        raise InvalidArgument(f"magnetic potential needs {g.d} components")
    freqs = g.frequencies()
    total = np.zeros((g.size, g.size), complex)
    for l in range(g.d):
        k = freqs[l].copy()
        # the Nyquist mode has no real derivative; zeroing it keeps d_l real and skew
        k[np.isclose(np.abs(k), math.pi / g.h)] = 0.0
        D = LinearGridOperator(g, "symbol", symbol=1j * k).matrix().real
        comp = A[l]
        a = comp.on_grid(g) if isinstance(comp, PotentialSpec) else np.asarray(comp, float).ravel()
        P = 1j * D + np.diag(a)
        total += P @ P
    return total


# --------------------------------------------------------------------------- spectral calculus


def eigendecompose(A: LinearGridOperator) -> LinearGridOperator:
    """Spectral form with ascending eigenvalues."""
    if not A.selfadjoint:
        raise InvalidOperator("eigendecomposition requires a self-adjoint operator")
    if A.representation == "spectral":
        return A
    if A.representation == "symbol":
        g = A.grid
        s = A.symbol.ravel()
        if np.abs(s.imag).max() > SELFADJOINT_TOL * max(1.0, np.abs(s).max()):
            raise InvalidOperator("symbol is not real")
        order = np.argsort(s.real, kind="stable")
        # columns are unit-norm Fourier modes e^{i x.xi}
        coords = g.coords()
        freqs = np.stack([f.ravel() for f in g.frequencies()], axis=1)[order]
        U = np.exp(1j * coords @ freqs.T) / math.sqrt(g.size)
        return LinearGridOperator(g, "spectral", eigenvalues=s.real[order], eigenvectors=U, selfadjoint=True)
    M = A.matrix()
    try:
        lam, U = scipy.linalg.eigh(M)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"eigensolver failed: {exc}") from exc
    resid = float(np.abs((U * lam) @ U.conj().T - M).max())
    tol = 1e-8 * (1.0 + float(np.abs(lam).max()))
    if not np.isfinite(resid) or resid > tol:
        raise NumericalFailure("eigendecomposition does not reconstruct the operator", resid)
    return LinearGridOperator(A.grid, "spectral", eigenvalues=lam, eigenvectors=U, selfadjoint=True)


def _evaluate(g: Callable, values: np.ndarray) -> np.ndarray:
    try:
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out = np.asarray(g(values))
    except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
        raise DomainError(f"spectral function undefined on the spectrum: {exc}") from exc
    out = np.broadcast_to(out, values.shape)
    if not np.all(np.isfinite(out)):
        bad = values[~np.isfinite(out)]
        raise DomainError(f"spectral function not finite at spectral values, e.g. {bad[0]!r}")
    return out


def apply_spectral_function(A: LinearGridOperator, g: Callable, k: int = 0) -> LinearGridOperator:
    """g(2^-k A), evaluated pointwise on the symbol or the eigenvalues."""
    if not A.selfadjoint:
        raise InvalidOperator("functional calculus requires a self-adjoint operator")
    scale = 2.0 ** (-k)
    if A.representation == "symbol":
        s = A.symbol.real
        vals = _evaluate(g, scale * s)
        return LinearGridOperator(A.grid, "symbol", symbol=vals, selfadjoint=not np.iscomplexobj(vals)
                                  or not np.abs(np.imag(vals)).any())
    S = A.spectral()
    lam, U = S._eig
    vals = _evaluate(g, scale * lam)
    real = not np.iscomplexobj(vals) or not np.abs(np.imag(vals)).any()
    return LinearGridOperator(A.grid, "spectral", eigenvalues=vals, eigenvectors=U, selfadjoint=real)


def heat(A: LinearGridOperator, t: float) -> LinearGridOperator:
    return apply_spectral_function(A, lambda lam: np.exp(-t * lam))


def propagator(A: LinearGridOperator, t: float) -> LinearGridOperator:
    return apply_spectral_function(A, lambda lam: np.exp(-1j * t * lam))


def spectral_bounds(A: LinearGridOperator) -> tuple[float, float]:
    if A.representation == "symbol":
        s = A.symbol.real
        return float(s.min()), float(s.max())
    lam = A.spectral().eigenvalues.real
    return float(lam[0]), float(lam[-1])


def lower_bound_shift(A: LinearGridOperator, margin: float = 1e-6) -> float:
    """c' = max(0, -min spectrum) + margin, making A + c' I strictly positive."""
    return max(0.0, -spectral_bounds(A)[0]) + margin


def laguerre_rule(m: int, a: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for int_0^inf t^a e^-t f(t) dt, weights divided by Gamma(a + 1).

    Golub-Welsch on the Jacobi matrix of the generalized Laguerre polynomials.
    scipy.special.roots_genlaguerre overflows to NaN above a few hundred nodes;
    here far-out weights simply underflow to zero.
    """
    i = np.arange(m, dtype=float)
    diag = 2 * i + a + 1
    off = np.sqrt((i[1:]) * (i[1:] + a))
    x, V = scipy.linalg.eigh_tridiagonal(diag, off)
    w = V[0] ** 2  # total mass normalized to 1 = Gamma(a + 1) / Gamma(a + 1)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
        raise NumericalFailure(f"Gauss-Laguerre rule with {m} nodes is not representable")
    return x, w


def resolvent_power_quadrature(A: LinearGridOperator, beta: float, nodes: int = 64,
                               tol: float = 1e-8, max_nodes: int = MAX_LAGUERRE_NODES,
                               return_nodes: bool = False):
    """(I + A)^-beta as a Laguerre-weighted superposition of heat operators.

    Uses sum_i w_i e^{-t_i A} / Gamma(beta) with generalized Gauss-Laguerre nodes
    for the weight t^{beta-1} e^{-t}. The node count doubles from ``nodes`` until
    successive results differ by less than ``tol`` in max-norm.
    """
    if beta <= 0:
        raise InvalidArgument("beta must be positive")
    if not A.selfadjoint:
        raise InvalidOperator("resolvent powers need a self-adjoint operator")
    lo, _ = spectral_bounds(A)
    if lo < -1e-10:
        raise InvalidOperator(f"operator has negative spectrum (min {lo:.3e})")

    def superpose(m):
        x, w = laguerre_rule(m, beta - 1.0)
        total = None
        for ti, wi in zip(x, w):
            term = heat(A, ti).scaled(wi)
            total = term if total is None else total + term
        return total

    def as_values(op):
        return op.symbol if op.representation == "symbol" else op._eig[0]

    m = min(nodes, max_nodes)
    prev = superpose(m)
    while True:
        if 2 * m > max_nodes:
            raise NumericalFailure(f"Laguerre quadrature not converged at {m} nodes")
        cur = superpose(2 * m)
        change = float(np.abs(as_values(cur) - as_values(prev)).max())
        m *= 2
        if change < tol:
            break
        prev = cur
    cur.selfadjoint = True
    return (cur, m) if return_nodes else cur


# --------------------------------------------------------------------------- bumps


def _ramp(x):
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _step(x):
    """Smooth step: 0 for x <= 0, 1 for x >= 1."""
    a, b = _ramp(x), _ramp(1.0 - np.asarray(x, float))
    return a / (a + b)


def _step_taylor(u: np.ndarray, order: int) -> np.ndarray:
    """Derivatives 0..order of the smooth step at points u in (0, 1).

    The step is sigma(w) with w = 1/(1-u) - 1/u. Taylor coefficients follow from
    sigma' = sigma (1 - sigma), which stays finite where exp(+-w) would overflow.
    """
    u = np.asarray(u, float)
    j = np.arange(order + 1)[:, None]
    w = 1.0 / (1.0 - u) ** (j + 1) - (-1.0) ** j / u ** (j + 1)
    c = np.zeros((order + 1, u.size))
    P = np.zeros_like(c)
    c[0] = 0.5 * (1.0 + np.tanh(w[0] / 2))
    P[0] = c[0] - c[0] ** 2
    for n in range(1, order + 1):
        c[n] = sum(k * w[k] * P[n - k] for k in range(1, n + 1)) / n
        P[n] = c[n] - sum(c[i] * c[n - i] for i in range(n + 1))
    fact = np.array([math.factorial(n) for n in range(order + 1)], float)
    return c * fact[:, None]


_STEP_SEMINORM_CACHE: dict[int, np.ndarray] = {}


def _step_seminorms(order: int) -> np.ndarray:
    if order not in _STEP_SEMINORM_CACHE:
        u = np.linspace(1e-3, 1 - 1e-3, 200001)
        _STEP_SEMINORM_CACHE[order] = np.abs(_step_taylor(u, order)).max(axis=1)
    return _STEP_SEMINORM_CACHE[order]


@dataclass(frozen=True)
class BumpSpec:
    """Smooth cutoff with support [a, b] and plateau [a1, b1]."""

    a: float
    a1: float
    b1: float
    b: float
    order: int = 8
    caps: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (self.a < self.a1 <= self.b1 < self.b):
            raise InvalidArgument(f"need a < a1 <= b1 < b, got {self.a}, {self.a1}, {self.b1}, {self.b}")
        if self.order < 0:
            raise InvalidArgument("smoothness order must be nonnegative")


class Bump:
    """Callable bump built from exp(-1/x) ramps, with measured seminorms."""

    def __init__(self, spec: BumpSpec):
        self.spec = spec
        self._seminorms = None

    def __call__(self, x):
        s = self.spec
        x = np.asarray(x, float)
        return _step((x - s.a) / (s.a1 - s.a)) * _step((s.b - x) / (s.b - s.b1))

    @property
    def seminorms(self) -> np.ndarray:
        """sup |phi^(i)| for i = 0..order.

        Away from the plateau exactly one ramp varies, so the i-th seminorm is
        the step's i-th seminorm over the steeper ramp width to the i.
        """
        if self._seminorms is None:
            s = self.spec
            unit = _step_seminorms(s.order)
            narrow = min(s.a1 - s.a, s.b - s.b1)
            self._seminorms = unit / narrow ** np.arange(s.order + 1)
        return self._seminorms

    def within_caps(self) -> bool:
        caps = self.spec.caps
        if caps is None:
            return True
        return bool(np.all(self.seminorms[: len(caps)] <= np.asarray(caps) * (1 + 1e-9)))


def make_bump(spec: BumpSpec) -> Bump:
    bump = Bump(spec)
    if spec.caps is not None and not bump.within_caps():
        raise InvalidArgument("bump seminorms exceed the stated caps")
    return bump


def bump_family(spec: BumpSpec, size: int = 5) -> list[Bump]:
    """Members sharing the support of ``spec`` with plateaus shrinking inside it.

    Member 0 is ``spec`` itself; later members widen the plateau, moving each
    edge up to a quarter of the way toward the support edge. Steeper ramps mean
    larger seminorms, so the family's caps are those of its last member.
    """
    members = []
    for i in range(size):
        frac = 0.25 * i / max(size - 1, 1)
        a1 = spec.a1 - frac * (spec.a1 - spec.a)
        b1 = spec.b1 + frac * (spec.b - spec.b1)
        members.append(Bump(BumpSpec(spec.a, a1, b1, spec.b, spec.order, spec.caps)))
    return members


# --------------------------------------------------------------------------- Kato quadrature


def _quad(f, a, b, points=None, epsrel=1e-10, epsabs=1e-13, limit=400):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, points=points, epsrel=epsrel, epsabs=epsabs, limit=limit)
        except integrate.IntegrationWarning as exc:
            val, err = integrate.quad(f, a, b, points=points, epsrel=epsrel, epsabs=epsabs, limit=limit * 4)
            if err > 1e-6 * max(1.0, abs(val)):
                raise NumericalFailure(f"quadrature did not converge: {exc}", err) from exc
    return val, err


def kato_integrand_at(V: PotentialSpec, x, r: float, d: int) -> float:
    """int_{|x-y|<r} k_d(x - y) |V(y)| dy with k_3 = |.|^-1, k_2 = log(1/|.|), k_1 = 1."""
    x = np.asarray(x, float).reshape(-1)
    if x.size != d:
        raise InvalidArgument(f"sample point has dimension {x.size}, expected {d}")
    c = np.zeros(d) if V.center is None else np.asarray(V.center, float)
    if V.form == "constant" and V.value == 0:
        return 0.0

    if d == 1:
        def f(y):
            return float(np.abs(V(np.array([[y]]))[0]))
        pts = [float(c[0])] if x[0] - r < c[0] < x[0] + r else None
        return _quad(f, x[0] - r, x[0] + r, points=pts)[0]

    if not V.radial:
        raise InvalidArgument("tabulated potentials are supported for d = 1 only")
    rho = float(np.linalg.norm(x - c))

    def v(s):
        return float(np.abs(V.profile(s)))

    def shell(s):
        """Angular integral of |V| over the sphere of radius s around x."""
        if rho == 0.0:
            return (4 * math.pi if d == 3 else 2 * math.pi) * v(s)
        if d == 3:
            if s == 0.0:
                return 4 * math.pi * v(rho)
            # with q = |y - c|, q dq = s rho du, so the u-integral becomes a q-integral
            lo, hi = abs(s - rho), s + rho
            return 2 * math.pi / (s * rho) * _quad(lambda q: v(q) * q, lo, hi)[0]
        def g(th):
            return v(math.sqrt(max(s * s + rho * rho + 2 * s * rho * math.cos(th), 0.0)))
        return 2 * _quad(g, 0.0, math.pi)[0]

    if d == 3:
        weight = lambda s: s  # s^2 area times s^-1 kernel
    elif d == 2:
        weight = lambda s: s * math.log(1.0 / s) if s > 0 else 0.0
    else:
        raise InvalidArgument(f"dimension must be 1, 2 or 3, got {d}")
    pts = [rho] if 0 < rho < r else None
    return _quad(lambda s: weight(s) * shell(s), 0.0, r, points=pts)[0]


def kato_norm(V: PotentialSpec, r: float, d: int, samples: Sequence | None = None) -> float:
    """Sup over sample points of the local Kato integral of radius r.

    Default samples: the potential's center and points at distances r/2, r, 2r
    from it along the first axis.
    """
    if not r > 0:
        raise InvalidArgument("radius must be positive")
    if d not in (1, 2, 3):
        raise InvalidArgument(f"dimension must be 1, 2 or 3, got {d}")
    if d == 2 and r >= 1:
        raise InvalidArgument("the logarithmic kernel needs r < 1")
    c = np.zeros(d) if V.center is None else np.asarray(V.center, float)
    if samples is None:
        e = np.zeros(d)
        e[0] = 1.0
        samples = [c + f * r * e for f in (0.0, 0.5, 1.0, 2.0)]
    return max(kato_integrand_at(V, x, r, d) for x in samples)


# --------------------------------------------------------------------------- localization checks


def tail_mass_fraction(A: LinearGridOperator, column: int | None = None) -> float:
    """Fraction of a kernel column's L1 mass farther than L/4 from its source point."""
    g = A.grid
    if g is None:
        raise InvalidArgument("tail mass needs a grid")
    if A.representation == "symbol":
        col = np.abs(A.convolution_column()).ravel()
        src = np.zeros(g.d)
    else:
        column = g.size // 2 if column is None else column
        col = np.abs(A.matrix()[:, column])
        src = g.coords()[column]
    dist = g.torus_distance_to(src)
    total = col.sum()
    if total == 0:
        return 0.0
    return float(col[dist > g.L / 4].sum() / total)


def diagonal_fraction(A: LinearGridOperator, column: int | None = None) -> float:
    """Share of a kernel column's L1 mass sitting on its own grid point."""
    g = A.grid
    if A.representation == "symbol":
        col = np.abs(A.convolution_column()).ravel()
        src = 0
    else:
        src = g.size // 2 if column is None else column
        col = np.abs(A.matrix()[:, src])
    total = col.sum()
    return float(col[src] / total) if total else 0.0


def check_localized(A: LinearGridOperator, tail_tol: float = 1e-6, diag_tol: float = 0.5,
                    what: str = "kernel") -> None:
    """Raise UnsafeTime if the kernel wraps around the torus or is unresolved."""
    tail = tail_mass_fraction(A)
    if tail >= tail_tol:
        raise UnsafeTime(f"{what}: {tail:.2e} of mass beyond L/4 (limit {tail_tol:g})")
    diag = diagonal_fraction(A)
    if diag > diag_tol:
        raise UnsafeTime(f"{what}: {diag:.2f} of mass on the diagonal point; kernel not resolved")
