"""Config-driven experiment runner.

    dycalc --config exp.json --out results/ [--seed 7] [--threads 2]

One config file describes one experiment.  The runner writes
``report.json`` (sorted keys, floats as %.17g) and ``report.csv`` (the
experiment's data rows) into the output directory.  Exit codes: 0 all
checks passed, 1 a tolerance check failed (named on stderr), 2 the
config is malformed (nothing is written).
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from ._util import derive_seed
from .haar import GridFunction, expand, gram_matrix, reconstruct
from .lattice import Cube, Grid, ScaleWindow, bad_probability, default_gamma
from .spaces import Scalar, rad_norm, r_bound, rhat_bound, space_from_dict, product_of_scalars

COMMANDS = (
    "haar-roundtrip", "decompose", "verify-representation", "t1-independence", "sparse-stopping",
    "sparse-form", "rm-maximal", "rad-norm", "r-bound", "rhat-bound", "multiparam-check", "lift-check",
    "bad-probability",
)

TOP_KEYS = {"command", "seed", "grid", "spaces", "kernel", "params", "tolerances", "outputs", "record_timing"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate_config(cfg):
    _require(isinstance(cfg, dict), "config must be a JSON object")
    extra = set(cfg) - TOP_KEYS
    _require(not extra, f"unknown config keys: {sorted(extra)}")
    _require(cfg.get("command") in COMMANDS, f"command must be one of {list(COMMANDS)}")
    seed = cfg.get("seed", 0)
    _require(isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2 ** 64,
             "seed must be an unsigned 64-bit integer")
    for key in ("params", "tolerances", "kernel", "outputs"):
        if key in cfg:
            _require(isinstance(cfg[key], dict), f"'{key}' must be an object")
    for name, tol in cfg.get("tolerances", {}).items():
        _require(isinstance(tol, (int, float)) and not isinstance(tol, bool) and tol >= 0,
                 f"tolerance '{name}' must be a nonnegative number")
    if "grid" in cfg:
        g = cfg["grid"]
        _require(isinstance(g, dict), "'grid' must be an object")
        for k in ("d", "l_min", "l_max"):
            _require(isinstance(g.get(k), int), f"grid.{k} must be an integer")
        _require(g["l_min"] <= g["l_max"], "grid.l_min must not exceed grid.l_max")
        _require(1 <= g["d"] <= 3, "grid.d must be 1, 2 or 3")
        try:
            Grid.from_dict(g)
        except Exception as exc:
            raise ConfigError(f"bad grid: {exc}") from exc
    if "spaces" in cfg:
        _require(isinstance(cfg["spaces"], list), "'spaces' must be a list of descriptors")
        for s in cfg["spaces"]:
            try:
                space_from_dict(s)
            except Exception as exc:
                raise ConfigError(f"bad space descriptor: {exc}") from exc
    return cfg


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def _fmt_float(x):
    if math.isnan(x) or math.isinf(x):
        return json.dumps(str(x))
    return "%.17g" % x


def dumps_stable(obj, indent=0):
    """JSON text with sorted keys and %.17g floats."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_stable(obj[k], indent + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(dumps_stable(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        return dumps_stable({"re": float(obj.real), "im": float(obj.imag)}, indent)
    if isinstance(obj, np.ndarray):
        return dumps_stable(obj.tolist(), indent)
    return json.dumps(str(obj))


def emit_report(report, out_dir, formats=("json", "csv")):
    """Write report.json / report.csv (and any per-command extra files) into out_dir."""
    if isinstance(formats, str):
        formats = (formats,)
    bad = set(formats) - {"json", "csv"}
    if bad:
        raise ConfigError(f"unknown report formats {sorted(bad)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        p = out / "report.json"
        body = {k: v for k, v in report.items() if k != "rows"}
        # extra payloads get their own files; the report only names them
        body["extra_files"] = sorted(report.get("extra_files", {}))
        p.write_text(dumps_stable(body) + "\n")
        written.append(p)
    if "csv" in formats:
        p = out / "report.csv"
        rows = report.get("rows", [])
        buf = io.StringIO()
        if rows:
            header = list(rows[0].keys())
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_csv_cell(r.get(h)) for h in header])
        p.write_text(buf.getvalue())
        written.append(p)
    for name, payload in report.get("extra_files", {}).items():
        p = out / name
        p.write_text(dumps_stable(payload) + "\n")
        written.append(p)
    return written


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v))
    if isinstance(v, (list, tuple)):
        return " ".join(str(_csv_cell(x)) for x in v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return "" if v is None else str(v)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _grid(cfg, default=None):
    dd = cfg.get("grid") or default or {"d": 1, "l_min": -3, "l_max": 0}
    return Grid.from_dict(dd)


def _spaces(cfg, count, default=None):
    sp = [space_from_dict(s) for s in cfg.get("spaces", [])]
    if not sp:
        return [default or Scalar()] * count
    if len(sp) == 1:
        return sp * count
    if len(sp) != count:
        raise ConfigError(f"expected {count} space descriptors")
    return sp


def _cube_dict(Q: Cube):
    return {"level": Q.level, "corner": list(Q.corner)}


def _check(checks, name, value, tol, mode="le"):
    ok = bool(value <= tol) if mode == "le" else bool(value >= tol)
    checks.append({"name": name, "value": float(value), "tolerance": float(tol), "pass": ok})


def _kernel_and_form(cfg, grid, seed):
    from .represent import SIOForm, kernel_from_dict
    kd = dict(cfg.get("kernel", {"name": "random_cz"}))
    kd.setdefault("seed", seed)
    kd.setdefault("d", grid.d)
    K = kernel_from_dict(kd)
    return SIOForm(K, grid, int(cfg.get("params", {}).get("refine", 1)))


def _random_inputs(T, rng):
    return [GridFunction.random(T.grid, X, rng) for X in T.slot_spaces]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_haar_roundtrip(cfg, seed):
    grid = _grid(cfg)
    space = _spaces(cfg, 1)[0]
    samples = int(cfg.get("params", {}).get("samples", 5))
    rng = np.random.default_rng(seed)
    worst = 0.0
    rows = []
    for s in range(samples):
        f = GridFunction.random(grid, space, rng)
        res = float(np.max(np.abs(reconstruct(expand(f)).values - f.values)))
        worst = max(worst, res)
        rows.append({"sample": s, "residual": res})
    G = gram_matrix(grid)
    gram = float(np.max(np.abs(G - np.eye(len(G)))))
    tol = cfg.get("tolerances", {})
    checks = []
    _check(checks, "roundtrip_residual", worst, tol.get("roundtrip_residual", 1e-12))
    _check(checks, "gram_deviation", gram, tol.get("gram_deviation", 1e-12))
    return {"roundtrip_residual": worst, "gram_deviation": gram}, checks, rows, {}


def cmd_decompose(cfg, seed, verify=False):
    from .represent import decompose, step4_check
    grid = _grid(cfg)
    T = _kernel_and_form(cfg, grid, seed)
    p = cfg.get("params", {})
    gamma = p.get("gamma")
    r = int(p.get("r", 2))
    res = decompose(T, gamma, r)
    rng = np.random.default_rng(derive_seed(seed, "tuples"))
    tests = int(p.get("tests", 2 if not verify else 5))
    rows, worst, step4 = [], 0.0, 0.0
    for t in range(tests):
        fs = _random_inputs(T, rng)
        rel, direct, total = res.residual(fs)
        worst = max(worst, rel)
        if verify:
            a, b = step4_check(res, fs)
            step4 = max(step4, float(abs(a - b)))
        rows.append({"tuple": t, "direct": complex(direct).real, "reconstructed": complex(total).real,
                     "relative_residual": rel})
    manifest = res.manifest()
    coeffs = {}
    for gi, g in enumerate(res.groups):
        terms = []
        for (K, Ps, etas), op in g.spec.sorted_items():
            terms.append({"K": _cube_dict(K), "cubes": [_cube_dict(P) for P in Ps],
                          "etas": [list(e) for e in etas], "coefficient": op.dense()})
        coeffs[f"group_{gi:04d}"] = terms
        manifest["groups"][gi]["coefficient_file"] = "coefficients.json"
        manifest["groups"][gi]["coefficient_key"] = f"group_{gi:04d}"
    tol = cfg.get("tolerances", {})
    checks = []
    _check(checks, "relative_residual", worst, tol.get("relative_residual", 1e-8))
    metrics = {"relative_residual": worst, "groups": len(res.groups), "counts": res.diagnostics["counts"],
               "gamma": res.diagnostics["gamma"], "r": r}
    if verify:
        s3 = res.diagnostics["step3_max_deviation"]
        _check(checks, "step3_deviation", s3, tol.get("step3_deviation", 1e-10))
        _check(checks, "step4_deviation", step4, tol.get("step4_deviation", 1e-10))
        metrics.update(step3_deviation=s3, step4_deviation=step4)
        if p.get("omega_average"):
            from .represent import average_over_omega
            fs = _random_inputs(T, rng)
            av = average_over_omega(T, fs, p.get("omega_gamma", gamma), int(p.get("omega_r", r)),
                                    p.get("omega_mode", "enumerate"), seed)
            dev = abs(av.value - av.direct) / max(abs(av.direct), 1e-300)
            metrics["omega_average"] = av.to_dict()
            if av.exact:
                _check(checks, "omega_average_relative", dev, tol.get("omega_average_relative", 1e-8))
    return metrics, checks, rows, {"manifest.json": manifest, "coefficients.json": coeffs}


def cmd_verify_representation(cfg, seed):
    return cmd_decompose(cfg, seed, verify=True)


def cmd_t1_independence(cfg, seed):
    from .haar import signatures
    from .represent import cube_vec, t1_pairing
    grid = _grid(cfg)
    T = _kernel_and_form(cfg, grid, seed)
    cs = cfg.get("params", {}).get("C", [2.0 * math.sqrt(grid.d), 4.0 * math.sqrt(grid.d)])
    rows, worst = [], 0.0
    for Q in grid.all_cubes():
        if Q.level <= grid.l_min:
            continue
        for eta in signatures(grid.d):
            vals = [t1_pairing(T, [1.0] * T.n, cube_vec(grid, Q, eta), Q, c).dense() for c in cs]
            dev = max(float(np.max(np.abs(v - vals[0]))) for v in vals)
            worst = max(worst, dev)
            rows.append({"level": Q.level, "corner": list(Q.corner), "eta": list(eta), "deviation": dev})
    checks = []
    _check(checks, "c_deviation", worst, cfg.get("tolerances", {}).get("c_deviation", 1e-10))
    return {"c_deviation": worst, "C": list(cs)}, checks, rows, {}


def cmd_sparse_stopping(cfg, seed):
    from .sparse import build_stopping, stopping_sparsity_holds
    grid = _grid(cfg)
    p = cfg.get("params", {})
    n, trials = int(p.get("n", 2)), int(p.get("trials", 10))
    rng = np.random.default_rng(seed)
    Q0 = grid.root_cubes()[0]
    rows, failures = [], 0
    for t in range(trials):
        fs = []
        for _ in range(n):
            f = GridFunction.zeros(grid)
            f.values[grid.slices(Q0)] = rng.exponential(size=f.values[grid.slices(Q0)].shape) ** 3
            fs.append(f)
        res = build_stopping(fs, Q0)
        ok = stopping_sparsity_holds(res)
        failures += 0 if ok else 1
        for S in res.collection.cubes:
            ch = res.collection.children[S]
            rows.append({"trial": t, "level": S.level, "corner": list(S.corner),
                         "children_units": sum(C.units ** C.d for C in ch), "units": S.units ** S.d})
    checks = []
    _check(checks, "sparsity_failures", failures, 0)
    return {"trials": trials, "sparsity_failures": failures}, checks, rows, {}


def cmd_sparse_form(cfg, seed):
    from .sparse import build_stopping, sparse_form, sparse_form_rows
    grid = _grid(cfg)
    p = cfg.get("params", {})
    n = int(p.get("n", 2))
    rng = np.random.default_rng(seed)
    fs = [GridFunction.random(grid, Scalar(), rng) for _ in range(n + 1)]
    if "cubes" in p:
        cubes = [grid.cube(int(c["level"]), tuple(c["index"])) for c in p["cubes"]]
    else:
        cubes = build_stopping(fs[:n], grid.root_cubes()[0]).collection.cubes if grid.roots == (1,) * grid.d \
            else grid.root_cubes()
    val = sparse_form(cubes, fs)
    rows = [{"level": Q.level, "corner": list(Q.corner), "measure": m, "product_of_averages": pa}
            for Q, m, pa in sparse_form_rows(cubes, fs)]
    return {"sparse_form": val, "cubes": len(rows)}, [], rows, {}


def cmd_rm_maximal(cfg, seed):
    from .rmf import RMConfig, rm_maximal
    grid = _grid(cfg)
    p = cfg.get("params", {})
    n = int(p.get("n", 3))
    J = tuple(p.get("J", [1]))
    v = int(p.get("v", n + 1))
    cfg_rm = RMConfig(product_of_scalars(n + 1), J, v, budget=int(p.get("budget", 8)), seed=seed)
    rng = np.random.default_rng(seed)
    fs = [GridFunction.random(grid, Scalar(), rng) for _ in J]
    M = rm_maximal(fs, cfg_rm, grid)
    centers = grid.cell_centers().reshape(-1, grid.d)
    rows = [{"x": list(c), "rm": float(val)} for c, val in zip(centers, M.values.ravel())]
    return {"max": float(M.values.max()), "path": M.metadata["path"]}, [], rows, {}


def cmd_rad_norm(cfg, seed):
    p = cfg.get("params", {})
    space = _spaces(cfg, 1)[0]
    rng = np.random.default_rng(seed)
    if "vectors" in p:
        xs = np.asarray(p["vectors"], dtype=float).reshape(-1, space.dim)
    else:
        xs = space.random(rng, (int(p.get("K", 6)),))
    est = rad_norm(xs, space, p.get("mode", "auto"), seed)
    rows = [{"k": k, "norm": float(space.norm(x))} for k, x in enumerate(xs)]
    return {"rad_norm": est.to_dict()}, [], rows, {}


def _random_family(cfg, seed, n):
    from .model_ops import MultilinearOperator
    p = cfg.get("params", {})
    sp = _spaces(cfg, n + 1)
    ins, out = sp[:n], sp[n]
    rng = np.random.default_rng(seed)
    if "scalars" in p:
        return [MultilinearOperator.scalar(float(a), n) for a in p["scalars"]]
    size = int(p.get("family_size", 3))
    shp = (out.dim,) + tuple(X.dim for X in ins)
    return [MultilinearOperator(rng.standard_normal(shp), ins, out) for _ in range(size)]


def cmd_r_bound(cfg, seed):
    p = cfg.get("params", {})
    n = int(p.get("n", 2))
    fam = _random_family(cfg, seed, n)
    varpi = product_of_scalars(n + 1) if n >= 3 else None
    res = r_bound(fam, varpi, budget=int(p.get("budget", 4)), seed=seed)
    return {"r_bound": res.value, "exact": res.exact}, [], [], {}


def cmd_rhat_bound(cfg, seed):
    p = cfg.get("params", {})
    fam = _random_family(cfg, seed, 2)
    res = rhat_bound(fam, budget=int(p.get("budget", 4)), seed=seed, N=int(p.get("N", 2)))
    return {"rhat_bound": res.value, "exact": res.exact}, [], [], {}


def _random_multiparam(rng, g1, g2):
    from .model_ops import MultiParamShiftSpec
    M = MultiParamShiftSpec((g1, g2), ((0, 0), (1, 0), (0, 1)), ((1, 3), (1, 2)))
    K1s = [K for L in range(g1.l_min + 1, g1.l_max + 1) for K in g1.cubes(L)]
    K2s = [K for L in range(g2.l_min + 1, g2.l_max + 1) for K in g2.cubes(L)]
    for K1 in K1s:
        for K2 in K2s:
            for c1 in g1.children(K1):
                for c2 in g2.children(K2):
                    key = ((K1, K2), ((K1, K2), (c1, K2), (K1, c2)),
                           (((1,), (1,)), ((0,), (1,)), ((1,), (0,))))
                    M.add(key, rng.standard_normal())
    return M


def cmd_multiparam_check(cfg, seed):
    from .model_ops import ProductFunction, apply_iterated, apply_multiparam_shift
    p = cfg.get("params", {})
    trials = int(p.get("trials", 5))
    g1 = _grid(cfg, {"d": 1, "l_min": -2, "l_max": 0})
    g2 = Grid.from_dict(p.get("grid2", {"d": 1, "l_min": -2, "l_max": 0}))
    rng = np.random.default_rng(seed)
    worst, rows = 0.0, []
    for t in range(trials):
        M = _random_multiparam(rng, g1, g2)
        fs = [ProductFunction.random(M.pgrid, rng=rng) for _ in range(2)]
        dev = float(np.max(np.abs(apply_multiparam_shift(M, fs).values - apply_iterated(M, fs).values)))
        worst = max(worst, dev)
        rows.append({"trial": t, "deviation": dev})
    checks = []
    _check(checks, "nesting_deviation", worst, cfg.get("tolerances", {}).get("nesting_deviation", 1e-12))
    return {"nesting_deviation": worst}, checks, rows, {}


def random_bilinear_shift(rng, grid, complexity=(1, 0, 1), canc=(1, 3)):
    """Random scalar bilinear shift filling every admissible key of the grid."""
    from .model_ops import ShiftSpec
    S = ShiftSpec(grid, complexity, canc)
    one = (0,) * grid.d
    eta = (1,) + (0,) * (grid.d - 1)
    etas = tuple(eta if (s + 1) in canc else one for s in range(3))
    for L in range(grid.l_min, grid.l_max + 1):
        # cancellative cubes must be strictly coarser than the finest cells
        if any(L - k <= grid.l_min for s, k in enumerate(complexity) if (s + 1) in canc):
            continue
        if any(L - k < grid.l_min for k in complexity):
            continue
        for K in grid.cubes(L):
            for Ps in itertools.product(*[grid.descendants(K, k) for k in complexity]):
                S.add((K, tuple(Ps), etas), rng.standard_normal())
    return S


def cmd_lift_check(cfg, seed):
    from .model_ops import lift_shift_family, shift_form, stack_rad2
    p = cfg.get("params", {})
    grid = _grid(cfg, {"d": 1, "l_min": -3, "l_max": 0})
    Ns = p.get("N", [1, 2, 3])
    seeds = int(p.get("seeds", 3))
    worst, rows = 0.0, []
    for N in Ns:
        for s in range(seeds):
            rng = np.random.default_rng(derive_seed(seed, N, s))
            sh = [[[random_bilinear_shift(rng, grid) for _ in range(N)] for _ in range(N)] for _ in range(N)]
            eps = np.exp(1j * rng.uniform(0, 2 * np.pi, (N, N, N)))
            f1 = [[GridFunction.random(grid, rng=rng) for _ in range(N)] for _ in range(N)]
            f2 = [[GridFunction.random(grid, rng=rng) for _ in range(N)] for _ in range(N)]
            f3 = [[GridFunction.random(grid, rng=rng) for _ in range(N)] for _ in range(N)]
            lhs = sum(eps[t, u, v] * shift_form(sh[t][u][v], [f1[t][u], f2[u][v]], f3[t][v])
                      for t in range(N) for u in range(N) for v in range(N))
            L = lift_shift_family(sh, eps)
            rhs = shift_form(L, [stack_rad2(f1, N, grid, Scalar()), stack_rad2(f2, N, grid, Scalar())],
                             stack_rad2(f3, N, grid, Scalar()))
            dev = float(abs(lhs - rhs))
            worst = max(worst, dev)
            rows.append({"N": N, "seed": s, "deviation": dev})
    checks = []
    _check(checks, "lift_deviation", worst, cfg.get("tolerances", {}).get("lift_deviation", 1e-12))
    return {"lift_deviation": worst}, checks, rows, {}


def cmd_bad_probability(cfg, seed):
    p = cfg.get("params", {})
    alpha, n, d = float(p.get("alpha", 1.0)), int(p.get("n", 2)), int(p.get("d", 1))
    gamma = float(p.get("gamma", default_gamma(alpha, d, n)))
    rs = p.get("r", list(range(1, 13)))
    trials = int(p.get("trials", 10000))
    mode = p.get("mode", "mc")
    win = p.get("window", [0, 12])
    window = ScaleWindow(int(win[0]), int(win[1]))
    rows = []
    for r in rs:
        est = bad_probability(gamma, int(r), trials, seed, d, window, mode=mode)
        rows.append({"r": int(r), "p_bad": est.value, "stderr": est.stderr, "exact": est.exact})
    return {"gamma": gamma, "estimates": rows}, [], rows, {}


HANDLERS = {
    "haar-roundtrip": cmd_haar_roundtrip,
    "decompose": cmd_decompose,
    "verify-representation": cmd_verify_representation,
    "t1-independence": cmd_t1_independence,
    "sparse-stopping": cmd_sparse_stopping,
    "sparse-form": cmd_sparse_form,
    "rm-maximal": cmd_rm_maximal,
    "rad-norm": cmd_rad_norm,
    "r-bound": cmd_r_bound,
    "rhat-bound": cmd_rhat_bound,
    "multiparam-check": cmd_multiparam_check,
    "lift-check": cmd_lift_check,
    "bad-probability": cmd_bad_probability,
}


def run(cfg, seed=None):
    """Execute one experiment; returns the report dict."""
    validate_config(cfg)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    t0 = time.perf_counter()
    metrics, checks, rows, extra = HANDLERS[cfg["command"]](cfg, seed)
    report = {
        "command": cfg["command"],
        "config": dict(cfg, seed=seed),
        "metrics": metrics,
        "checks": checks,
        "pass": all(c["pass"] for c in checks),
        "rows": rows,
        "extra_files": extra,
    }
    if cfg.get("record_timing"):
        report["wall_clock_seconds"] = time.perf_counter() - t0
    return report


def _threads(arg):
    val = arg if arg is not None else os.environ.get("DYCALC_THREADS")
    if val is None:
        return 1
    n = int(val)
    if n < 1:
        raise ConfigError("thread count must be positive")
    return n


def main(argv=None):
    ap = argparse.ArgumentParser(prog="dycalc", description="Dyadic representation experiments")
    ap.add_argument("--config", required=True, help="experiment config (JSON)")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (fallback: DYCALC_THREADS)")
    args = ap.parse_args(argv)
    try:
        _threads(args.threads)
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if args.seed is not None and not (0 <= args.seed < 2 ** 64):
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        validate_config(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        report = run(cfg, args.seed)
    except ValueError as exc:
        # parameter values the experiment itself rejects (bad J, empty goodness, ...)
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        emit_report(report, args.out, tuple(cfg.get("outputs", {}).get("formats", ("json", "csv"))))
    except OSError as exc:
        print(f"cannot write report: {exc}", file=sys.stderr)
        return 2
    failed = [c["name"] for c in report["checks"] if not c["pass"]]
    if failed:
        print("tolerance failure: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
