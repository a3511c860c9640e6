"""Command-line front end.

Subcommands ``smooth``, ``table``, ``cv``, ``validate`` and ``bench``.  A
JSON config (``--config``) supplies any of the keys in :data:`SCHEMA`;
command-line flags override it.  Exit codes: 0 success, 2 configuration
error, 3 solver failure, 4 I/O failure.  Errors are reported on stderr
as one JSON object with ``category``, ``module`` and ``message``.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import experiments as E
from . import linear, plq
from .constrained import IPOptions, smooth_constrained_nonlinear
from .errors import ConfigError, KalsmoothError
from .linear import assemble
from .model import LinearStateSpace, vanderpol_model, ship_model, ship_truth
from .nonlinear import GNOptions, smooth_nonlinear
from .robust import smooth_l1_laplace
from .sparse import SparsePenaltySpec, sparse_smooth_lasso, sparse_smooth_penalized

OUTPUT_ENV = "KALSMOOTH_OUTPUT_DIR"
DEFAULT_OUTPUT = "kalsmooth-out"

COMMANDS = ("smooth", "table", "cv", "bench")
METHODS = ("linear", "gn", "l1", "constrained", "plq", "sparse")
TABLES = ("robust-linear", "robust-vdp")
INITS = ("propagate", "seeded", "continuation")


def _positive(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0


def _nonneg(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0


def _count(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 2


def _number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


# per-scenario model parameters: name -> (check, description)
_COMMON = {"N": (_count, "an integer >= 2"), "sigma2": (_positive, "positive"), "R": (_positive, "positive"),
           "Q0": (_positive, "positive")}
SCENARIOS = {
    "sine": dict(_COMMON, T=(_positive, "positive")),
    "box": dict(_COMMON, T=(_positive, "positive")),
    "variable-box": dict(_COMMON, T=(_positive, "positive"), alpha=(_nonneg, "nonnegative"),
                         beta=(_number, "a number")),
    "robust-linear": dict(_COMMON),
    "vanderpol": {"N": (_count, "an integer >= 2"), "dt": (_positive, "positive"), "mu": (_nonneg, "nonnegative"),
                  "Q0": (_positive, "positive"), "Q": (_positive, "positive"), "R": (_positive, "positive"),
                  "scheme": (lambda v: v in ("implicit", "explicit"), "'implicit' or 'explicit'")},
    "ship": {"N": (_count, "an integer >= 2"), "sigma2": (_positive, "positive")},
}
LINEAR_SCENARIOS = ("sine", "box", "variable-box", "robust-linear")
CONSTRAINED_SCENARIOS = ("box", "variable-box", "ship")

SCHEMA = {
    "command": "one of " + ", ".join(COMMANDS),
    "scenario": "scenario name (smooth: " + ", ".join(SCENARIOS) + "; table: " + ", ".join(TABLES) + ")",
    "method": "smoother for smooth: " + ", ".join(METHODS),
    "model": "object of scenario parameters",
    "noise": "object {p, base_var, phi}: measurement-noise mixture override",
    "penalty": "object {process, measurement}: PLQ penalty names such as 'huber(1.5)'",
    "sparse": "object {lam | tau, weights}: weights per state component",
    "solver": "object {max_iter, tol}",
    "init": "Van der Pol initialization: " + ", ".join(INITS),
    "cv": "object {samples, n_lam, n_eps, train_frac}",
    "bench": "object {n, sizes, repeats}",
    "output": "output directory",
    "seed": "base RNG seed (integer >= 0)",
    "reps": "replications (integer >= 1)",
    "scale": "positive scale factor applied to default replications / samples",
}

_SUBKEYS = {
    "noise": {"p": _nonneg, "base_var": _positive, "phi": _positive},
    "penalty": {"process": lambda v: isinstance(v, str), "measurement": lambda v: isinstance(v, str)},
    "sparse": {"lam": _positive, "tau": _nonneg,
               "weights": lambda v: isinstance(v, list) and all(_nonneg(x) for x in v)},
    "solver": {"max_iter": lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
               "tol": _positive},
    "cv": {"samples": lambda v: isinstance(v, int) and v >= 4, "n_lam": lambda v: isinstance(v, int) and v >= 1,
           "n_eps": lambda v: isinstance(v, int) and v >= 1, "train_frac": lambda v: _positive(v) and v < 1},
    "bench": {"n": lambda v: isinstance(v, int) and v >= 1,
              "sizes": lambda v: isinstance(v, list) and len(v) >= 1 and all(_count(x) for x in v),
              "repeats": lambda v: isinstance(v, int) and v >= 1},
}


def validate(config):
    """Return the list of problems with ``config`` (empty when valid)."""
    errors = []
    if not isinstance(config, dict):
        return ["config must be a JSON object"]
    for key in config:
        if key not in SCHEMA:
            errors.append(f"unknown key {key!r}; allowed keys: {', '.join(sorted(SCHEMA))}")
    command = config.get("command")
    if command not in COMMANDS:
        errors.append(f"command must be one of {', '.join(COMMANDS)}, got {command!r}")
    scenario = config.get("scenario")
    method = config.get("method")
    if command == "smooth":
        if scenario not in SCENARIOS:
            errors.append(f"scenario must be one of {', '.join(SCENARIOS)}, got {scenario!r}")
        if method not in METHODS:
            errors.append(f"unknown method {method!r}; available methods: {', '.join(METHODS)}")
        if scenario in SCENARIOS and method in METHODS:
            if method in ("linear", "plq", "sparse") and scenario not in LINEAR_SCENARIOS:
                errors.append(f"method {method!r} needs a linear scenario ({', '.join(LINEAR_SCENARIOS)})")
            if method == "constrained" and scenario not in CONSTRAINED_SCENARIOS:
                errors.append(f"method 'constrained' needs a constrained scenario ({', '.join(CONSTRAINED_SCENARIOS)})")
    elif command == "table":
        if scenario not in TABLES:
            errors.append(f"table scenario must be one of {', '.join(TABLES)}, got {scenario!r}")
    model = config.get("model", {})
    if not isinstance(model, dict):
        errors.append("model must be an object")
    elif command == "smooth" and scenario in SCENARIOS:
        allowed = SCENARIOS[scenario]
        for k, v in model.items():
            if k not in allowed:
                errors.append(f"unknown model parameter model.{k} for scenario {scenario!r}; "
                              f"allowed: {', '.join(sorted(allowed))}")
            elif not allowed[k][0](v):
                errors.append(f"model.{k} must be {allowed[k][1]}, got {v!r}")
    elif model and command != "smooth":
        errors.append("model parameters are only used by the smooth command")
    for section, checks in _SUBKEYS.items():
        if section not in config:
            continue
        val = config[section]
        if not isinstance(val, dict):
            errors.append(f"{section} must be an object")
            continue
        for k, v in val.items():
            if k not in checks:
                errors.append(f"unknown key {section}.{k}; allowed: {', '.join(sorted(checks))}")
            elif v is not None and not checks[k](v):
                errors.append(f"{section}.{k} has invalid value {v!r}")
    noise = config.get("noise")
    if isinstance(noise, dict) and noise.get("p", 0) and noise.get("phi") is None:
        errors.append("noise.phi is required when noise.p > 0")
    if isinstance(noise, dict) and _number(noise.get("p", 0)) and noise.get("p", 0) > 1:
        errors.append("noise.p must lie in [0, 1]")
    pen = config.get("penalty")
    if isinstance(pen, dict):
        for k in ("process", "measurement"):
            if isinstance(pen.get(k), str):
                try:
                    plq.from_name(pen[k])
                except KalsmoothError as exc:
                    errors.append(f"penalty.{k}: {exc}")
    if method == "sparse" and command == "smooth":
        sp = config.get("sparse", {})
        if not isinstance(sp, dict) or (sp.get("lam") is None) == (sp.get("tau") is None):
            errors.append("sparse needs exactly one of sparse.lam or sparse.tau")
    if "init" in config and config["init"] not in INITS:
        errors.append(f"init must be one of {', '.join(INITS)}, got {config['init']!r}")
    if "seed" in config and not (isinstance(config["seed"], int) and not isinstance(config["seed"], bool)
                                 and config["seed"] >= 0):
        errors.append(f"seed must be a nonnegative integer, got {config['seed']!r}")
    if "reps" in config and not (isinstance(config["reps"], int) and config["reps"] >= 1):
        errors.append(f"reps must be an integer >= 1, got {config['reps']!r}")
    if "scale" in config and not _positive(config["scale"]):
        errors.append(f"scale must be positive, got {config['scale']!r}")
    if "output" in config and not isinstance(config["output"], str):
        errors.append("output must be a string path")
    return errors


# -- output helpers ---------------------------------------------------------------


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def svg_plot(path, series, title="", width=640, height=360):
    """Minimal SVG line chart.

    ``series`` is a list of ``(label, x, y, style)`` where ``style`` is
    ``"line"``, ``"dash"`` or ``"dots"``.
    """
    colors = ["#000000", "#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    xs = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    ok = np.isfinite(ys)
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = (float(np.min(ys[ok])), float(np.max(ys[ok]))) if ok.any() else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    m = 40

    def px(x):
        return m + (x - x0) / (x1 - x0) * (width - 2 * m)

    def py(y):
        return height - m - (y - y0) / (y1 - y0) * (height - 2 * m)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" fill="none" stroke="#999"/>']
    for i, (label, x, y, style) in enumerate(series):
        c = colors[i % len(colors)]
        pts = [(px(a), py(b)) for a, b in zip(np.asarray(x, float), np.asarray(y, float)) if np.isfinite(b)]
        if style == "dots":
            out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2" fill="none" stroke="{c}"/>' for a, b in pts]
        else:
            dash = ' stroke-dasharray="6,4"' if style == "dash" else ""
            d = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline points="{d}" fill="none" stroke="{c}" stroke-width="1.5"{dash}/>')
        out.append(f'<text x="{width - m - 4}" y="{m + 14 + 14 * i}" text-anchor="end" font-size="11" '
                   f'fill="{c}">{label}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


# -- smooth -----------------------------------------------------------------------


def _scenario(config):
    """Build ``(model, truth, times, constraints, z)`` for a smooth run."""
    name = config["scenario"]
    params = dict(config.get("model", {}))
    seed = config.get("seed", 0)
    noise = config.get("noise")
    mix = E.NoiseMixtureSpec(**noise) if noise else None
    cons = None
    if name == "sine":
        mdl, truth, t = E.sine_scenario(**params)
    elif name == "box":
        mdl, truth, t, cons = E.box_scenario(**params)
    elif name == "variable-box":
        mdl, truth, t, cons = E.variable_box_scenario(**params)
    elif name == "robust-linear":
        mdl, truth = E.robust_linear_scenario(**params)
        t = 4 * np.pi / mdl.N * np.arange(1, mdl.N + 1)
        mix = mix or E.NoiseMixtureSpec(0.1, 0.25, 100.0)
    elif name == "vanderpol":
        mdl = vanderpol_model(**params)
        truth = E.vdp_truth(mdl, seed, 0)
        t = mdl.times
    else:
        mdl, cons = ship_model(**params)
        t = mdl.times
        truth = ship_truth(t)
    _, z = E.simulate(mdl, seed, noise=mix, truth=truth)
    return mdl.with_measurements(z), truth, t, cons, z


def _solver_opts(config):
    s = config.get("solver", {})
    gn = GNOptions(max_iter=s.get("max_iter", 100), tol=s.get("tol"))
    ip = IPOptions(max_iter=s.get("max_iter", 100))
    return gn, ip


def _run_method(config, mdl, cons):
    method = config["method"]
    gn, ip = _solver_opts(config)
    if config["scenario"] == "vanderpol" and method in ("gn", "l1"):
        return E.smooth_vdp(mdl, method=method, init=config.get("init", "continuation"), opts=gn)[0]
    if config["scenario"] == "ship" and method in ("gn", "constrained"):
        return E.smooth_ship(mdl, cons if method == "constrained" else None, opts=gn, ip_opts=ip)[0]
    if method == "linear":
        return linear.smooth(mdl)
    if method == "gn":
        return smooth_nonlinear(mdl, opts=gn)[0]
    if method == "l1":
        return smooth_l1_laplace(mdl, opts=gn, ip_opts=ip)[0]
    if method == "constrained":
        if isinstance(mdl, LinearStateSpace):
            return E.solve_box(mdl, cons, ip)
        return smooth_constrained_nonlinear(mdl, cons, opts=gn, ip_opts=ip)[0]
    if method == "plq":
        pen = config.get("penalty", {})
        return plq.smooth_plq(mdl, plq.from_name(pen.get("process", "l2")),
                              plq.from_name(pen.get("measurement", "l2")), ip)
    sp = config.get("sparse", {})
    W = np.asarray(sp.get("weights", [1.0] * mdl.n), dtype=float)
    spec = SparsePenaltySpec(W=W, lam=sp.get("lam"), tau=sp.get("tau"))
    sys_ = assemble(mdl)
    return sparse_smooth_penalized(sys_, spec, ip) if spec.lam is not None else sparse_smooth_lasso(sys_, spec)


def _diagnostic_rows(sol):
    rows = []
    for i, entry in enumerate(sol.trace):
        if isinstance(entry, dict):
            d = entry
        else:
            d = {"objective": entry.objective, "model_decrease": entry.model_decrease, "step": entry.step,
                 "backtracks": entry.backtracks}
            d.update({k: v for k, v in (entry.extra or {}).items() if np.isscalar(v)})
        rows.append((i, d))
    keys = []
    for _, d in rows:
        keys += [k for k in d if k not in keys and np.isscalar(d[k])]
    return keys, [[i] + [d.get(k, "") for k in keys] for i, d in rows]


def cmd_smooth(config, out):
    mdl, truth, t, cons, z = _scenario(config)
    sol = _run_method(config, mdl, cons)
    n = sol.x.shape[1]
    m = max(len(zk) for zk in z)
    header = ["k", "t"] + [f"x_{i + 1}" for i in range(n)] + [f"z_{j + 1}" for j in range(m)] + \
             [f"truth_{i + 1}" for i in range(n)]
    rows = []
    for k in range(len(t)):
        zk = list(z[k]) + [""] * (m - len(z[k]))
        rows.append([k + 1, float(t[k])] + [float(v) for v in sol.x[k]] + [float(v) if v != "" else v for v in zk]
                    + [float(v) for v in truth[k]])
    paths = {"estimate": os.path.join(out, "estimate.csv"), "diagnostics": os.path.join(out, "diagnostics.csv"),
             "summary": os.path.join(out, "summary.csv"), "plot": os.path.join(out, "estimate.svg")}
    _write_rows(paths["estimate"], header, rows)
    keys, drows = _diagnostic_rows(sol)
    _write_rows(paths["diagnostics"], ["iteration"] + keys, drows)
    summary = [("method", config["method"]), ("scenario", config["scenario"]), ("status", sol.status),
               ("iterations", sol.iterations), ("objective", float(sol.objective)),
               ("residual_norm", float(sol.residual_norm)), ("mse", E.mse(sol.x, truth))]
    if "max_violation" in sol.info:
        summary.append(("max_violation", float(sol.info["max_violation"])))
    _write_rows(paths["summary"], ["field", "value"], summary)
    comp = 1 if config["scenario"] not in ("vanderpol", "ship") else 0
    comp = 3 if config["scenario"] == "ship" else comp
    series = [("truth", t, truth[:, comp], "line"), ("estimate", t, sol.x[:, comp], "dash")]
    if config["scenario"] != "ship":
        series.insert(1, ("measurements", t, [zk[0] for zk in z], "dots"))
    svg_plot(paths["plot"], series, title=f"{config['scenario']} / {config['method']}")
    return dict(summary), paths


# -- table / cv / bench -------------------------------------------------------------


def cmd_table(config, out):
    scale = config.get("scale", 1.0)
    reps = config.get("reps", max(1, int(round(100 * scale))))
    seed = config.get("seed", 0)
    if config["scenario"] == "robust-linear":
        report = E.run_robust_linear_table(replications=reps, seed=seed)
    else:
        report = E.run_robust_vdp_table(replications=reps, seed=seed, init=config.get("init", "continuation"))
    report.meta["scale"] = scale
    name = config["scenario"].replace("-", "_")
    paths = E.write_report(report, out, name)
    print(report.format_table())
    return {"replications": reps}, paths


def cmd_cv(config, out):
    scale = config.get("scale", 1.0)
    cv = config.get("cv", {})
    samples = cv.get("samples", max(4, int(round(500 * scale))))
    res = E.run_vapnik_cv(samples=samples, n_lam=cv.get("n_lam", 5), n_eps=cv.get("n_eps", 10),
                          seed=config.get("seed", 0), train_frac=cv.get("train_frac", 0.65))
    paths = {"scores": os.path.join(out, "cv_scores.csv"), "fit": os.path.join(out, "cv_fit.csv"),
             "summary": os.path.join(out, "cv_summary.csv"), "plot": os.path.join(out, "cv_fit.svg")}
    rows = [[float(l2), float(eps), float(res.scores[i, j])]
            for i, l2 in enumerate(res.grid_lam2) for j, eps in enumerate(res.grid_eps)]
    rows += [[float(l2), "", float(res.gaussian_scores[i])] for i, l2 in enumerate(res.grid_lam2)]
    _write_rows(paths["scores"], ["lam2", "eps", "validation_mse"], rows)
    _write_rows(paths["fit"], ["k", "t", "truth", "z", "train", "vapnik", "gaussian"],
                [[k + 1, float(res.times[k]), float(res.truth[k]), float(res.z[k]), int(res.train[k]),
                  float(res.fit[k]), float(res.gaussian_fit[k])] for k in range(len(res.times))])
    summary = [("lam2", res.lam2), ("eps", res.eps), ("support_vectors", res.support_vectors),
               ("n_train", res.n_train), ("validation_mse", res.validation_mse),
               ("gaussian_lam2", res.gaussian_lam2), ("gaussian_validation_mse", res.gaussian_validation_mse),
               ("samples", samples), ("seed", config.get("seed", 0)), ("rng", E.RNG_NAME)]
    _write_rows(paths["summary"], ["field", "value"], summary)
    svg_plot(paths["plot"], [("truth", res.times, res.truth, "line"),
                             ("measurements", res.times, np.clip(res.z, -2, 4), "dots"),
                             ("vapnik", res.times, res.fit, "dash"),
                             ("gaussian", res.times, res.gaussian_fit, "dash")], title="Vapnik vs quadratic loss")
    return dict(summary), paths


def cmd_bench(config, out):
    b = config.get("bench", {})
    sizes = b.get("sizes", [1000, 4000])
    times = E.bench_scaling(n=b.get("n", 3), sizes=sizes, repeats=b.get("repeats", 7), seed=config.get("seed", 0))
    path = os.path.join(out, "bench.csv")
    _write_rows(path, ["N", "seconds"], [[N, s] for N, s in times.items()])
    result = {f"N={N}": s for N, s in times.items()}
    if len(sizes) >= 2:
        result["ratio"] = times[sizes[-1]] / times[sizes[0]]
    return result, {"bench": path}


RUNNERS = {"smooth": cmd_smooth, "table": cmd_table, "cv": cmd_cv, "bench": cmd_bench}


# -- argument handling ------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="base RNG seed")
    common.add_argument("--reps", type=int, help="number of replications")
    common.add_argument("--scale", type=float, help="scale factor for default replications / samples")
    common.add_argument("--out", dest="output", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")

    parser = argparse.ArgumentParser(prog="kalsmooth", description="Kalman smoothing as structured optimization")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("smooth", parents=[common], help="run one smoother on a scenario")
    p.add_argument("--scenario", choices=sorted(SCENARIOS))
    p.add_argument("--method", help="one of " + ", ".join(METHODS))
    p.add_argument("--init", choices=INITS, help="Van der Pol initialization")
    p.add_argument("--process-penalty", help="PLQ penalty on process residuals")
    p.add_argument("--measurement-penalty", help="PLQ penalty on measurement residuals")
    p.add_argument("--lam", type=float, help="sparse penalty weight")
    p.add_argument("--tau", type=float, help="sparse constraint radius")
    p = sub.add_parser("table", parents=[common], help="Monte Carlo robustness table")
    p.add_argument("--scenario", choices=TABLES)
    p.add_argument("--init", choices=INITS, help="Van der Pol initialization")
    p = sub.add_parser("cv", parents=[common], help="Vapnik cross validation")
    p.add_argument("--samples", type=int)
    p = sub.add_parser("bench", parents=[common], help="block-tridiagonal solve timing")
    p.add_argument("--n", type=int)
    p.add_argument("--sizes", type=int, nargs="+")
    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config_path", metavar="CONFIG")
    return parser


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def merge_args(config, args):
    """Overlay command-line flags on a config dict."""
    config = dict(config)
    config["command"] = args.command
    for key in ("seed", "reps", "scale", "output", "scenario", "method", "init"):
        val = getattr(args, key, None)
        if val is not None:
            config[key] = val
    pen = {k: v for k, v in (("process", getattr(args, "process_penalty", None)),
                             ("measurement", getattr(args, "measurement_penalty", None))) if v is not None}
    if pen:
        config["penalty"] = dict(config.get("penalty", {}), **pen)
    sp = {k: v for k, v in (("lam", getattr(args, "lam", None)), ("tau", getattr(args, "tau", None))) if v is not None}
    if sp:
        config["sparse"] = dict(config.get("sparse", {}), **sp)
    if getattr(args, "samples", None) is not None:
        config["cv"] = dict(config.get("cv", {}), samples=args.samples)
    bench = {k: v for k, v in (("n", getattr(args, "n", None)), ("sizes", getattr(args, "sizes", None)))
             if v is not None}
    if bench:
        config["bench"] = dict(config.get("bench", {}), **bench)
    return config


def _raising_module(exc):
    """Name of the innermost package module in the traceback (``errors`` excluded)."""
    name = "cli"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("kalsmooth.") and mod != "kalsmooth.errors":
            name = mod.rsplit(".", 1)[-1]
        tb = tb.tb_next
    return name


def _error(category, module, message):
    print(json.dumps({"category": category, "module": module, "message": message}), file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            try:
                errors = validate(load_config(args.config_path))
            except OSError as exc:
                _error("io", "cli", str(exc))
                return 4
            if errors:
                print(json.dumps({"ok": False, "errors": errors}, indent=2))
                return 2
            print(json.dumps({"ok": True}))
            return 0
        config = load_config(args.config) if args.config else {}
        config = merge_args(config, args)
        errors = validate(config)
        if errors:
            raise ConfigError("; ".join(errors))
        out = config.get("output") or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
        os.makedirs(out, exist_ok=True)
        t0 = time.time()
        result, paths = RUNNERS[config["command"]](config, out)
        meta = {"config": config, "seed": config.get("seed", 0), "scale": config.get("scale", 1.0),
                "rng": E.RNG_NAME, "version": E.package_version(), "elapsed_seconds": time.time() - t0,
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}
        with open(os.path.join(out, f"{config['command']}_meta.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        print(json.dumps({"ok": True, "result": result, "files": paths}, default=float))
        return 0
    except ConfigError as exc:
        _error("config", "cli", str(exc))
        return 2
    except KalsmoothError as exc:
        _error(exc.category, _raising_module(exc), f"{type(exc).__name__}: {exc}")
        return 3
    except OSError as exc:
        _error("io", "cli", str(exc))
        return 4
