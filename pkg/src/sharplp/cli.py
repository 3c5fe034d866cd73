"""Command-line batch runner: JSON configs in, CSV/JSON reports out.

Config layout::

    {"seed": 0,
     "grid": {"d": 1, "n": 256, "L": 32},
     "scenarios": [{"name": "free", "kind": "free_growth",
                    "operator": {"kind": "laplacian"}, "p": 1, ...}]}

Every key is checked; unknown keys are an error. Scenario grids default to
the top-level ``grid``. Outputs go to ``--out``: one CSV per scenario,
``summary.json`` and ``plotdata/<name>.tsv``. Exit status: 0 if every
scenario passes, 2 if any fails, 1 on errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .commutators import leibniz_residual, verify_duhamel, verify_expansion_base
from .errors import SharpLpError
from .estimates import (
    ScenarioSpec,
    fourier_decay_check,
    run_scenario,
)
from .grid import make_grid
from .operators import BumpSpec, OperatorSpec, PotentialSpec, build_operator
from .verify import AssumptionParams, check_assumption

SUBCOMMANDS = ("check-assumption", "growth", "uniformity", "sobolev", "kernel-decay", "fourier-decay",
               "kato", "commutators", "selftest")

KINDS_FOR = {
    "growth": ("free_growth", "main_growth"),
    "uniformity": ("multiplier_uniformity",),
    "sobolev": ("sobolev",),
    "kernel-decay": ("kernel_decay",),
    "kato": ("kato_limit",),
}

TOP_KEYS = {"seed", "grid", "scenarios"}
GRID_KEYS = {"d", "n", "L"}
OPERATOR_KEYS = {"kind", "grid", "alpha", "order", "V", "A", "matrix", "dense_cap"}
POTENTIAL_KEYS = {"form", "alpha", "cap", "depth", "width", "value", "center"}
BUMP_KEYS = {"a", "a1", "b1", "b", "order"}
SCENARIO_KEYS = {"name", "kind", "operator", "p", "k_sweep", "t_sweep", "bump", "family", "eps", "seed",
                 "t_scaled", "tail_tol", "diag_tol", "tolerance", "probes", "potential", "dim", "radii"}
ASSUMPTION_KEYS = {"name", "operator", "p0", "m", "t_sweep", "shift", "j_offset", "tail_check"}
FOURIER_KEYS = {"name", "k", "n", "L", "order"}
COMMUTATOR_KEYS = {"name", "operator", "t", "xi", "tolerance", "leibniz_tolerance"}
ENTRY_KEYS = {"check-assumption": ASSUMPTION_KEYS, "fourier-decay": FOURIER_KEYS,
              "commutators": COMMUTATOR_KEYS}


class ConfigError(SharpLpError, ValueError):
    """Malformed run configuration."""


# --------------------------------------------------------------------------- config


def _check_keys(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {', '.join(extra)}")


@dataclass
class RunConfig:
    scenarios: list = field(default_factory=list)
    grid: dict | None = None
    seed: int = 0

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        _check_keys(raw, TOP_KEYS, "config")
        if "grid" in raw:
            _check_keys(raw["grid"], GRID_KEYS, "grid")
        scen = raw.get("scenarios", [])
        if not isinstance(scen, list) or not scen:
            raise ConfigError("config needs a nonempty 'scenarios' list")
        return cls(scenarios=scen, grid=raw.get("grid"), seed=int(raw.get("seed", 0)))

    def to_json(self) -> str:
        out = {"scenarios": self.scenarios, "seed": self.seed}
        if self.grid is not None:
            out["grid"] = self.grid
        return canonical_json(out)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def cache_key(fragment) -> str:
    """sha256 of the canonical JSON form of a config fragment."""
    return hashlib.sha256(canonical_json(fragment).encode()).hexdigest()


def _grid(d: dict | None, default: dict | None, where: str):
    g = d if d is not None else default
    if g is None:
        raise ConfigError(f"{where} needs a grid (or a top-level default)")
    _check_keys(g, GRID_KEYS, f"{where}.grid")
    try:
        return make_grid(int(g["d"]), int(g["n"]), float(g["L"]))
    except KeyError as exc:
        raise ConfigError(f"{where}.grid misses {exc}") from exc


def _potential(d: dict | None, where: str) -> PotentialSpec | None:
    if d is None:
        return None
    _check_keys(d, POTENTIAL_KEYS, where)
    kw = dict(d)
    if "center" in kw and kw["center"] is not None:
        kw["center"] = tuple(float(c) for c in kw["center"])
    return PotentialSpec(**kw)


def _operator(d: dict, default_grid: dict | None, where: str) -> OperatorSpec:
    _check_keys(d, OPERATOR_KEYS, where)
    if "kind" not in d:
        raise ConfigError(f"{where} needs a kind")
    kw = {k: v for k, v in d.items() if k not in ("grid", "V", "A", "matrix")}
    grid = None if d["kind"] == "custom_kernel" and "grid" not in d and default_grid is None \
        else _grid(d.get("grid"), default_grid, where)
    V = _potential(d.get("V"), f"{where}.V")
    A = None
    if d.get("A") is not None:
        A = tuple(_potential(c, f"{where}.A") for c in d["A"])
    matrix = None if d.get("matrix") is None else np.asarray(d["matrix"], float)
    return OperatorSpec(grid=grid, V=V, A=A, matrix=matrix, **kw)


def scenario_from_dict(d: dict, default_grid: dict | None, seed: int) -> ScenarioSpec:
    name = d.get("name", d.get("kind", "?"))
    where = f"scenario {name!r}"
    _check_keys(d, SCENARIO_KEYS, where)
    kw = {k: v for k, v in d.items() if k not in ("name", "operator", "bump", "potential")}
    for key in ("k_sweep", "t_sweep", "radii"):
        if key in kw:
            kw[key] = tuple(kw[key])
    if "p" in kw and kw["p"] in ("inf", "Infinity"):
        kw["p"] = math.inf
    kw.setdefault("seed", seed)
    if "operator" in d:
        kw["operator"] = _operator(d["operator"], default_grid, f"{where}.operator")
    if "bump" in d:
        _check_keys(d["bump"], BUMP_KEYS, f"{where}.bump")
        kw["bump"] = BumpSpec(**d["bump"])
    if "potential" in d:
        kw["potential"] = _potential(d["potential"], f"{where}.potential")
    return ScenarioSpec(**kw)


# --------------------------------------------------------------------------- output


def atomic_write(path: str, text: str) -> None:
    """Write to a temp file in the same directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in str(name))


# --------------------------------------------------------------------------- pipelines
# Each returns a result dict: {"name", "pass", "summary", "csv", "tsv"}.


def _estimate(entry: dict, cfg: RunConfig, allowed: tuple) -> dict:
    spec = scenario_from_dict(entry, cfg.grid, cfg.seed)
    if spec.kind not in allowed:
        raise ConfigError(f"kind {spec.kind!r} does not belong to this subcommand (expected {allowed})")
    rep = run_scenario(spec)
    return {"pass": rep.passed, "summary": rep.summary(), "csv": rep.to_csv(), "tsv": rep.plot_tsv()}


def _assumption(entry: dict, cfg: RunConfig) -> dict:
    _check_keys(entry, ASSUMPTION_KEYS, "check-assumption entry")
    op = _operator(entry["operator"], cfg.grid, "check-assumption.operator")
    kw = {k: entry[k] for k in ("p0", "m", "shift", "j_offset", "tail_check") if k in entry}
    if "t_sweep" in entry:
        kw["t_sweep"] = tuple(entry["t_sweep"])
    params = AssumptionParams(d=op.grid.d, **kw)
    rep = check_assumption(build_operator(op), params)
    summary = json.loads(rep.to_json())
    ok = bool(summary["uno"]["pass"] and summary["due"]["pass"])
    return {"pass": ok, "summary": summary, "csv": rep.to_csv(), "tsv": None}


def _fourier(entry: dict, cfg: RunConfig) -> dict:
    _check_keys(entry, FOURIER_KEYS, "fourier-decay entry")
    k = int(entry["k"])
    fit = fourier_decay_check(k, int(entry.get("n", 4096)), float(entry.get("L", 256.0)),
                              int(entry.get("order", 8)))
    target = 2.0 * k / (2.0 * k - 1.0)
    tol = 0.05 if k == 1 else 0.1
    deriv = fit.derivative
    summary = {"k": k, "gamma": fit.exponent, "expected": target, "tolerance": tol, "decades": fit.decades,
               "residual": fit.residual, "derivative": deriv}
    ok = abs(fit.exponent - target) <= tol
    csv_text = "r,abs_kernel\n" + "".join(f"{r!r},{v!r}\n" for r, v in zip(fit.r.tolist(), fit.values.tolist()))
    return {"pass": bool(ok), "summary": summary, "csv": csv_text, "tsv": None}


def _commutators(entry: dict, cfg: RunConfig) -> dict:
    _check_keys(entry, COMMUTATOR_KEYS, "commutators entry")
    H = build_operator(_operator(entry["operator"], cfg.grid, "commutators.operator"))
    tol = float(entry.get("tolerance", 1e-6))
    ltol = float(entry.get("leibniz_tolerance", 1e-8))
    exp = verify_expansion_base(H, float(entry.get("t", 1.0)))
    duh = verify_duhamel(H, float(entry.get("xi", 2.0)))
    R = H.spectral()
    lz = {n: leibniz_residual([R] * n, 2) for n in (2, 3)}
    summary = {"base": exp.base, "resolvent": exp.resolvent, "shift": exp.shift, "duhamel": duh,
               "leibniz": {str(n): v for n, v in lz.items()}, "tolerance": tol, "leibniz_tolerance": ltol}
    ok = exp.base <= tol and exp.resolvent <= tol and duh <= tol and all(v <= ltol for v in lz.values())
    csv_text = "identity,residual\n" + "".join(
        f"{k},{v!r}\n" for k, v in [("base", exp.base), ("resolvent", exp.resolvent), ("duhamel", duh)]
        + [(f"leibniz{n}", v) for n, v in lz.items()])
    return {"pass": bool(ok), "summary": summary, "csv": csv_text, "tsv": None}


def _pipeline(command: str):
    if command in KINDS_FOR:
        allowed = KINDS_FOR[command]
        return lambda entry, cfg: _estimate(entry, cfg, allowed)
    return {"check-assumption": _assumption, "fourier-decay": _fourier, "commutators": _commutators}[command]


def selftest() -> list[tuple[str, bool]]:
    """Quick closed-form checks; each is exact up to roundoff."""
    from .estimates import fit_growth_exponent
    from .operators import apply_spectral_function, identity, make_bump, propagator

    out = []
    g = make_grid(1, 64, 8)
    H = build_operator(OperatorSpec("laplacian", g))
    e = np.exp(2j * np.pi * g.coords()[:, 0] / g.L)
    out.append(("laplacian eigenfunction", bool(np.allclose(H.apply(e), (2 * np.pi / g.L) ** 2 * e))))
    F = build_operator(OperatorSpec("fractional", g, alpha=1.0))
    out.append(("fractional alpha=1", bool(np.allclose(F.symbol, H.symbol))))
    one = apply_spectral_function(H, lambda lam: np.ones_like(lam))
    out.append(("g = 1 gives identity", bool(np.allclose(one.matrix(), identity(g).matrix()))))
    f = np.random.default_rng(0).standard_normal(g.size)
    Uf = propagator(H, 1.0).apply(f)
    out.append(("unitarity", abs(np.linalg.norm(Uf) / np.linalg.norm(f) - 1) < 1e-12))
    b = make_bump(BumpSpec(0.5, 1.0, 2.0, 4.0))
    out.append(("bump plateau and support", bool(b(1.5) == 1.0 and b(0.4) == 0.0)))
    u = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    out.append(("exact power-law fit", abs(fit_growth_exponent(zip(u, u**0.5)).s_hat - 0.5) < 1e-12))
    out.append(("cache key canonical", cache_key({"a": 1, "b": 2}) == cache_key({"b": 2, "a": 1})))
    return out


# --------------------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sharplp", description="Run operator-norm experiments from a JSON config.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        if name != "selftest":
            sp.add_argument("--config", required=True)
        sp.add_argument("--out", default="sharplp-out")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--no-cache", action="store_true")
    return ap


def _run_entry(command, entry, cfg, out, use_cache):
    fn = _pipeline(command)
    key = cache_key({"command": command, "entry": entry, "grid": cfg.grid, "seed": cfg.seed,
                     "version": __version__})
    cache_path = os.path.join(out, ".cache", key + ".json")
    if use_cache and os.path.exists(cache_path):
        with open(cache_path) as fh:
            return json.load(fh)
    res = fn(entry, cfg)
    if use_cache:
        atomic_write(cache_path, json.dumps(res, sort_keys=True))
    return res


def run(argv: list[str] | None = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 1
    if args.command == "selftest":
        results = selftest()
        for name, ok in results:
            print(f"{'PASS' if ok else 'FAIL'}  {name}")
        return 0 if all(ok for _, ok in results) else 2
    try:
        with open(args.config) as fh:
            cfg = RunConfig.from_json(fh.read())
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        ap.print_usage(sys.stderr)
        return 1
    if args.seed is not None:
        cfg.seed = args.seed
    names = [_safe_name(e.get("name", f"{args.command}-{i}")) if isinstance(e, dict) else str(i)
             for i, e in enumerate(cfg.scenarios)]
    if len(set(names)) != len(names):
        print("error: scenario names must be unique", file=sys.stderr)
        return 1

    def one(entry):
        return _run_entry(args.command, entry, cfg, args.out, not args.no_cache)

    try:
        if args.workers > 1:
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(one, cfg.scenarios))
        else:
            results = [one(e) for e in cfg.scenarios]
    except (SharpLpError, KeyError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

    summary = {"command": args.command, "seed": cfg.seed, "version": __version__, "scenarios": {}}
    for name, res in zip(names, results):
        atomic_write(os.path.join(args.out, f"{name}.csv"), res["csv"])
        if res.get("tsv"):
            atomic_write(os.path.join(args.out, "plotdata", f"{name}.tsv"), res["tsv"])
        summary["scenarios"][name] = {"pass": res["pass"], **res["summary"]}
        print(f"{'PASS' if res['pass'] else 'FAIL'}  {args.command}  {name}  {_headline(res['summary'])}")
    atomic_write(os.path.join(args.out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True))
    return 0 if all(r["pass"] for r in results) else 2


def _headline(s: dict) -> str:
    if s.get("fit"):
        f = s["fit"]
        return f"s_hat={f['s_hat']:.4f} +- {f['band']:.4f} (s={s['s']:.3g})"
    for key in ("max_over_min", "fitted", "gamma", "power"):
        if key in s.get("extra", {}):
            return f"{key}={s['extra'][key]}"
        if key in s:
            return f"{key}={s[key]}"
    if "uno" in s:
        return f"uno max/min={s['uno']['max_over_min']}, due max/min={s['due']['max_over_min']}"
    if "base" in s:
        return f"max residual={max(s['base'], s['resolvent'], s['duhamel']):.2e}"
    return ""


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
