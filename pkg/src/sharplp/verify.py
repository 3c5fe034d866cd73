"""Checks of the heat-operator block estimates across a dyadic time sweep.

For each t the scale j(t) is fixed by 2^-j <= t^(1/m) < 2^(-j+1). The first
estimate bounds sup_Q' sum_Q ||1_Q e^{-tH} 1_Q'||_{p0 -> p0'} by
2^{jd(1/p0 - 1/p0')}; the second bounds the (1 + 2^j dist)^N weighted sum
of L^2 block norms by a constant.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .amalgam import block_bracket_matrices, block_norm_matrix, schur_sums
from .errors import InvalidArgument, UnsafeTime
from .operators import (
    LinearGridOperator,
    OperatorSpec,
    build_operator,
    check_localized,
    heat,
)
from .grid import TorusGrid

UNIFORM_RATIO = 4.0
UNIFORM_SLOPE = 0.1


def default_sweep() -> list[float]:
    return [4.0**-i for i in range(7)]


def scale_for_time(t: float, m: float) -> int:
    """The j with 2^-j <= t^(1/m) < 2^(-j+1)."""
    if t <= 0 or m <= 0:
        raise InvalidArgument("time and order must be positive")
    s = math.log2(t) / m
    r = round(s)
    if abs(s - r) < 1e-12:
        s = r
    return int(math.ceil(-s))


@dataclass(frozen=True)
class AssumptionParams:
    p0: float = 1.0
    m: float = 2.0
    d: int = 1
    t_sweep: tuple = field(default_factory=lambda: tuple(default_sweep()))
    shift: float = 0.0
    j_offset: int = 0
    on_unsafe: str = "skip"
    tail_check: bool = True

    def __post_init__(self):
        if not 1 <= self.p0 < 2:
            raise InvalidArgument("p0 must lie in [1, 2)")
        if self.m <= 0:
            raise InvalidArgument("m must be positive")
        if not self.t_sweep:
            raise InvalidArgument("empty time sweep")
        if self.on_unsafe not in ("skip", "raise"):
            raise InvalidArgument("on_unsafe is 'skip' or 'raise'")

    @property
    def N(self) -> int:
        return self.d // 2 + 1

    @property
    def p0_conj(self) -> float:
        return math.inf if self.p0 == 1 else self.p0 / (self.p0 - 1)

    def j_of(self, t: float) -> int:
        return scale_for_time(t, self.m) + self.j_offset


@dataclass
class AssumptionReport:
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    note: str = "bounds are checked only on the localized part of the sweep; large t is untested"

    def _ratios(self, key):
        return np.array([r[key] for r in self.rows if r.get(key) is not None], float)

    def summary(self, key: str) -> dict:
        vals = self._ratios(key)
        ts = np.array([r["t"] for r in self.rows if r.get(key) is not None], float)
        if vals.size == 0:
            return {"sup": None, "max_over_min": None, "slope": None, "pass": None}
        slope = float(np.polyfit(np.log(ts), np.log(vals), 1)[0]) if vals.size >= 2 else 0.0
        spread = float(vals.max() / vals.min())
        ok = spread <= UNIFORM_RATIO and abs(slope) <= UNIFORM_SLOPE
        return {"sup": float(vals.max()), "max_over_min": spread, "slope": slope, "pass": bool(ok),
                "thresholds": {"max_over_min": UNIFORM_RATIO, "abs_slope": UNIFORM_SLOPE}}

    def to_csv(self) -> str:
        buf = io.StringIO()
        keys = ["t", "j", "lhs_uno", "rhs_uno", "ratio_uno", "width_uno", "lhs_due", "ratio_due"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for r in self.rows:
            w.writerow(["" if r.get(k) is None else repr(r[k]) for k in keys])
        return buf.getvalue()

    def to_json(self) -> str:
        out = {"params": self.params, "skipped_t": self.skipped, "note": self.note,
               "uno": self.summary("ratio_uno"), "due": self.summary("ratio_due")}
        return json.dumps(out, indent=2, sort_keys=True)


def _heat_at(H: LinearGridOperator, t: float, params: AssumptionParams) -> LinearGridOperator:
    A = H.shifted(params.shift) if params.shift else H
    T = heat(A, t)
    if params.tail_check:
        check_localized(T, what=f"heat operator at t={t:g}")
    return T


def _sweep(H, params, fill):
    rep = AssumptionReport(params=_params_dict(params))
    for t in params.t_sweep:
        try:
            T = _heat_at(H, t, params)
        except UnsafeTime:
            if params.on_unsafe == "raise":
                raise
            rep.skipped.append(t)
            continue
        j = params.j_of(t)
        row = {"t": float(t), "j": j}
        fill(row, T, j)
        rep.rows.append(row)
    if not rep.rows:
        raise UnsafeTime(f"no time in the sweep is localized and resolved: {list(params.t_sweep)}")
    return rep


def _params_dict(params: AssumptionParams) -> dict:
    d = asdict(params)
    d["t_sweep"] = list(params.t_sweep)
    d["N"] = params.N
    return d


def uno_row(T: LinearGridOperator, j: int, params: AssumptionParams) -> dict:
    d = T.grid.d
    p0, pc = params.p0, params.p0_conj
    inv_pc = 0.0 if math.isinf(pc) else 1.0 / pc
    rhs = 2.0 ** (j * d * (1.0 / p0 - inv_pc))
    if p0 == 1:
        lhs = schur_sums(block_norm_matrix(T, j, 1, math.inf)).M1
        width = 0.0
    else:
        lo, hi = block_bracket_matrices(T, j, p0)
        lhs = schur_sums(hi).M1
        width = lhs - schur_sums(lo).M1
    return {"lhs_uno": lhs, "rhs_uno": rhs, "ratio_uno": lhs / rhs, "width_uno": width}


def due_row(T: LinearGridOperator, j: int, params: AssumptionParams, N: int | None = None) -> dict:
    N = params.N if N is None else N
    S = schur_sums(block_norm_matrix(T, j, 2, 2), weightN=N)
    return {"lhs_due": S.M1, "ratio_due": S.M1, "lhs_due_M2": S.M2}


def check_uno(H: LinearGridOperator, params: AssumptionParams) -> AssumptionReport:
    return _sweep(H, params, lambda row, T, j: row.update(uno_row(T, j, params)))


def check_due(H: LinearGridOperator, params: AssumptionParams, N: int | None = None) -> AssumptionReport:
    return _sweep(H, params, lambda row, T, j: row.update(due_row(T, j, params, N)))


def check_assumption(H: LinearGridOperator, params: AssumptionParams) -> AssumptionReport:
    def fill(row, T, j):
        row.update(uno_row(T, j, params))
        row.update(due_row(T, j, params))
    return _sweep(H, params, fill)


def check_remark2_equiv(H: LinearGridOperator, params: AssumptionParams) -> list[dict]:
    """Direct and derived sums for the L^1 -> L^2 reformulation, per t.

    holder:  ||1_Q A 1_Q'||_{1->2} <= |Q|^(1/2) ||1_Q A 1_Q'||_{1->inf}, summed;
    split:   ||1_Q e^{-tH} 1_Q'||_{1->inf} <= sum_Q'' ||1_Q e^{-tH/2} 1_Q''||_{2->inf}
             ||1_Q'' e^{-tH/2} 1_Q'||_{1->2}, summed.
    Both derived values must dominate the direct ones.
    """
    if params.p0 != 1:
        raise InvalidArgument("the reformulation check is implemented for p0 = 1")
    rows = []
    skipped = []
    for t in params.t_sweep:
        try:
            T = _heat_at(H, t, params)
            Th = _heat_at(H, t / 2, params)
        except UnsafeTime:
            if params.on_unsafe == "raise":
                raise
            skipped.append(t)
            continue
        j = params.j_of(t)
        d = T.grid.d
        cube = 2.0 ** (-j * d)
        e_uno = block_norm_matrix(T, j, 1, math.inf).entries
        e12 = block_norm_matrix(T, j, 1, 2).entries
        direct_uno = float(e_uno.sum(axis=0).max())
        direct_tre = float(e12.sum(axis=0).max())
        direct_quattro = float(e12.sum(axis=1).max())
        holder_tre = float((cube**0.5 * e_uno).sum(axis=0).max())
        holder_quattro = float((cube**0.5 * e_uno).sum(axis=1).max())
        a = block_norm_matrix(Th, j, 2, math.inf).entries
        b = block_norm_matrix(Th, j, 1, 2).entries
        split_uno = float((a @ b).sum(axis=0).max())
        semigroup = float(np.abs(T.matrix() - Th.matrix() @ Th.matrix()).max())
        rows.append({
            "t": float(t), "j": j,
            "direct_uno": direct_uno, "split_uno": split_uno, "split_ratio": split_uno / direct_uno,
            "direct_tre": direct_tre, "holder_tre": holder_tre, "holder_ratio_tre": holder_tre / direct_tre,
            "direct_quattro": direct_quattro, "holder_quattro": holder_quattro,
            "holder_ratio_quattro": holder_quattro / direct_quattro,
            "rhs_tre": 2.0 ** (j * d * 0.5), "semigroup_residual": semigroup,
        })
    if not rows:
        raise UnsafeTime(f"no time in the sweep is localized and resolved: {list(params.t_sweep)}")
    return rows


def check_scaling_covariance(spec: OperatorSpec, k: int, t: float) -> float:
    """Residual of e^{-tH_k} = S_lam e^{-2^k t H} S_lam^-1 with lam = 2^(k/m).

    Left side: the symbol 2^k g(xi / lam) exponentiated on the grid (n, L).
    Right side: e^{-2^k t H} built on the dilated grid (n, lam L); S_lam maps
    its i-th point to the i-th point of (n, L), so as matrices the dilation is
    the identity on indices. Homogeneity (H_k = H) is checked on top.
    """
    m = spec.homogeneity
    if m is None:
        raise InvalidArgument("scaling covariance needs a homogeneous symbol operator")
    g = spec.grid
    e = k / m
    if abs(e - round(e)) > 1e-12:
        raise InvalidArgument(f"lambda = 2^({k}/{m:g}) is not a power of two")
    lam = 2.0 ** round(e)
    big = TorusGrid(g.d, g.n, g.L * lam)

    H_small = build_operator(spec)
    base = H_small.symbol.real
    freqs = g.frequencies()
    # g(xi / lam) evaluated from the defining formula of the kind
    xi_scaled = np.sqrt(sum((f / lam) ** 2 for f in freqs))
    sym_scaled = xi_scaled ** m
    lhs = LinearGridOperator(g, "symbol", symbol=np.exp(-t * 2.0**k * sym_scaled)).matrix()

    H_big = build_operator(OperatorSpec(spec.kind, big, alpha=spec.alpha, order=spec.order))
    rhs = heat(H_big, 2.0**k * t).matrix()
    homog = LinearGridOperator(g, "symbol", symbol=np.exp(-t * base)).matrix()
    scale = max(np.abs(rhs).max(), 1e-300)
    return float(max(np.abs(lhs - rhs).max(), np.abs(lhs - homog).max()) / scale)


def window_shift_bound(params: AssumptionParams, d: int) -> float:
    """Allowed change of the sup ratio when j moves by one: 2^{d(1/p0 - 1/p0') + N}."""
    inv_pc = 0.0 if math.isinf(params.p0_conj) else 1.0 / params.p0_conj
    return 2.0 ** (d * (1.0 / params.p0 - inv_pc) + params.N)


def weighted_due_sums(T: LinearGridOperator, j: int, N: float) -> tuple[float, float]:
    """(M1, M2) of the weighted L^2 block sums."""
    S = schur_sums(block_norm_matrix(T, j, 2, 2), weightN=N)
    return S.M1, S.M2
