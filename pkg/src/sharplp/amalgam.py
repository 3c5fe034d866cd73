"""Dyadic amalgam norms X^{p,q}_j, block-norm matrices and Schur-type bounds."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, UseNormestBracket
from .grid import DyadicPartition, GridFunction, dyadic_partition
from .operators import LinearGridOperator


def _conj(p: float) -> float:
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1)


def _lp(a: np.ndarray, p: float, axis) -> np.ndarray:
    a = np.abs(a)
    if math.isinf(p):
        return a.max(axis=axis)
    return (a**p).sum(axis=axis) ** (1.0 / p)


def amalgam_norm(f: GridFunction, p: float, q: float, j: int) -> float:
    """l^p over cubes Q in Q_j of the L^q norm of f on Q."""
    P = dyadic_partition(f.grid, j)
    vals = f.flat[P.members]  # (cubes, points per cube)
    local = _lp(vals, q, axis=1)
    if not math.isinf(q):
        local = local * f.grid.cell ** (1.0 / q)
    return float(_lp(local, p, axis=0))


def embedding_constant(p: float, q: float, j: int, d: int) -> float:
    """max{1, 2^{-jd(1/p - 1/q)}}, the X^{p,q}_j -> X^{p,q}_0 constant."""
    if p > q:
        raise InvalidArgument(f"embedding needs p <= q, got p={p}, q={q}")
    inv = (1.0 / p if not math.isinf(p) else 0.0) - (1.0 / q if not math.isinf(q) else 0.0)
    return float(max(1.0, 2.0 ** (-j * d * inv)))


@dataclass(frozen=True, eq=False)
class BlockNormMatrix:
    """entries[Q, Q'] = ||1_Q A 1_Q'||_{L^p -> L^q} over the cubes of ``partition``."""

    partition: DyadicPartition
    p: float
    q: float
    entries: np.ndarray = field(repr=False)

    @property
    def j(self) -> int:
        return self.partition.j

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["j", "Q", "Qp", "distance", "entry"])
        D = self.partition.distances
        C = self.entries.shape[0]
        for a in range(C):
            for b in range(C):
                w.writerow([self.j, a, b, repr(float(D[a, b])), repr(float(self.entries[a, b]))])
        return buf.getvalue()


def _blocks(A: LinearGridOperator, P: DyadicPartition) -> np.ndarray:
    """Action matrix regrouped as (Q, x in Q, Q', y in Q')."""
    M = A.matrix()
    perm = P.members.ravel()
    C, m = P.members.shape
    return M[np.ix_(perm, perm)].reshape(C, m, C, m)


EXACT_PAIRS = "(1, q) for any q, (p, inf) for any p, and (2, 2)"


def block_norm_matrix(A: LinearGridOperator, j: int, p: float, q: float) -> BlockNormMatrix:
    """Exact block norms via closed forms.

    With measure-weighted norms the block operator norm is cell^(1/q - 1/p)
    times the plain matrix norm, so L^1 -> L^inf is the kernel sup and
    L^1 -> L^2 is the largest weighted column L^2 norm.
    """
    if A.grid is None:
        raise InvalidArgument("block norms need a grid")
    P = dyadic_partition(A.grid, j)
    B = _blocks(A, P)
    cell = A.grid.cell
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    inv_q = 0.0 if math.isinf(q) else 1.0 / q
    factor = cell ** (inv_q - inv_p)
    if p == 1:
        plain = _lp(B, q, axis=1).max(axis=-1)  # largest column norm
    elif math.isinf(q):
        plain = _lp(B, _conj(p), axis=3).max(axis=1)  # largest row dual norm
    elif p == 2 and q == 2:
        plain = np.linalg.svd(B.transpose(0, 2, 1, 3), compute_uv=False)[..., 0]
    else:
        raise UseNormestBracket(f"no closed form for L^{p} -> L^{q} blocks; exact pairs are {EXACT_PAIRS}")
    return BlockNormMatrix(P, float(p), float(q), factor * plain)


def block_bracket_matrices(A: LinearGridOperator, j: int, p: float) -> tuple[BlockNormMatrix, BlockNormMatrix]:
    """Lower and upper bounds for L^p -> L^p' block norms with 1 < p < 2.

    Upper: Riesz-Thorin between the exact (1, inf) and (2, 2) blocks with
    theta = 2/p'. Lower: the ratio at the block's top singular vector.
    """
    if not 1 < p < 2:
        raise InvalidArgument("bracketed blocks are for 1 < p < 2")
    pc = _conj(p)
    theta = 2.0 / pc
    e1 = block_norm_matrix(A, j, 1, math.inf).entries
    e2 = block_norm_matrix(A, j, 2, 2).entries
    upper = e1 ** (1 - theta) * e2**theta
    P = dyadic_partition(A.grid, j)
    B = _blocks(A, P).transpose(0, 2, 1, 3)
    _, _, vh = np.linalg.svd(B)
    v = vh[..., 0, :].conj()  # (C, C, m)
    Bv = np.einsum("abxy,aby->abx", B, v)
    cell = A.grid.cell
    lower = cell ** (1 / pc - 1 / p) * _lp(Bv, pc, axis=-1) / _lp(v, p, axis=-1)
    lower = np.minimum(lower, upper)
    return BlockNormMatrix(P, p, pc, lower), BlockNormMatrix(P, p, pc, upper)


@dataclass(frozen=True)
class SchurSums:
    M1: float
    M2: float
    weightN: int | None = None
    j: int | None = None


def schur_weights(P: DyadicPartition, N: float | None) -> np.ndarray:
    if N is None:
        return np.ones((len(P), len(P)))
    return (1.0 + 2.0**P.j * P.distances) ** N


def schur_sums(B: BlockNormMatrix, weightN: int | None = None) -> SchurSums:
    """M1 = sup over Q' of sum over Q, M2 = sup over Q of sum over Q'."""
    W = schur_weights(B.partition, weightN) * B.entries
    return SchurSums(float(W.sum(axis=0).max()), float(W.sum(axis=1).max()), weightN, B.j)


def amalgam_operator_bound(M: SchurSums, p: float) -> float:
    """M1^(1-theta) M2^theta with 1/p = 1 - theta, so p = 1 gives M1 and p = inf gives M2."""
    theta = 1.0 if math.isinf(p) else 1.0 - 1.0 / p
    return float(M.M1 ** (1 - theta) * M.M2**theta)


@dataclass(frozen=True)
class AmalgamBracket:
    lower: float
    upper: float
    p: float
    q: float
    j: int


def x1q_operator_bracket(A: LinearGridOperator, j: int = 0, q: float = 2, iterations: int = 200,
                         seed: int = 0) -> AmalgamBracket:
    """Bracket for the X^{1,2}_j -> X^{1,2}_j norm of A.

    Single-cube inputs are the extreme points of the X^{1,2} ball, so the norm
    is max over Q' of sup_g sum_Q ||1_Q A 1_Q' g||_2 / ||g||_2. The inner sup
    (a convex function on the sphere) is approached from below by the ascent
    g <- normalize(sum_Q B_Q* B_Q g / ||B_Q g||), which never decreases it.
    The upper side is sum_Q ||B_Q||_2.
    """
    if q != 2:
        raise InvalidArgument("only q = 2 is supported")
    P = dyadic_partition(A.grid, j)
    B = _blocks(A, P)  # (Q, x, Q', y)
    C, m = P.members.shape
    rng = np.random.default_rng(seed)
    lower = 0.0
    upper = 0.0
    for b in range(C):
        col = B[:, :, b, :]  # (Q, x, y)
        blk_norms = np.linalg.svd(col, compute_uv=False)[:, 0]
        upper = max(upper, float(blk_norms.sum()))
        stacked = col.reshape(C * m, m)
        _, _, vh = np.linalg.svd(stacked, full_matrices=False)
        starts = [vh[0].conj()]
        a_best = int(blk_norms.argmax())
        _, _, vb = np.linalg.svd(col[a_best])
        starts.append(vb[0].conj())
        starts.append(rng.standard_normal(m) + 1j * rng.standard_normal(m))
        for g in starts:
            g = g / np.linalg.norm(g)
            val = 0.0
            for _ in range(iterations):
                Bg = np.einsum("axy,y->ax", col, g)
                norms = np.linalg.norm(Bg, axis=1)
                new_val = float(norms.sum())
                if new_val <= 0:
                    break
                live = norms > 0
                grad = np.einsum("axy,ax->y", col[live].conj(), Bg[live] / norms[live, None])
                gn = np.linalg.norm(grad)
                if gn == 0:
                    break
                g = grad / gn
                if new_val - val <= 1e-13 * new_val:
                    val = new_val
                    break
                val = new_val
            lower = max(lower, val)
    return AmalgamBracket(min(lower, upper), upper, 1.0, 2.0, j)


def amalgam_operator_lower_bound(A: LinearGridOperator, p: float, q: float, j: int,
                                 probes: int = 16, seed: int = 0) -> float:
    """max ||A f||_X / ||f||_X over seeded random fields and single-cube inputs."""
    g = A.grid
    P = dyadic_partition(g, j)
    rng = np.random.default_rng(seed)
    F = [rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size) for _ in range(probes)]
    for idx in P.members[: min(len(P), probes)]:
        f = np.zeros(g.size, complex)
        f[idx] = rng.standard_normal(idx.size)
        F.append(f)
    best = 0.0
    for f in F:
        gf = GridFunction(g, f)
        den = amalgam_norm(gf, p, q, j)
        if den > 0:
            best = max(best, amalgam_norm(A.apply(gf), p, q, j) / den)
    return best
