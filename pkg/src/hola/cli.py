"""Config-driven command line: ``sample``, ``rate``, ``plan`` and ``check``.

Configs are flat ``key = value`` files; ``#`` starts a comment, lists are
comma separated and matrix rows are separated by ``;``. Every key is
validated against the command and target; unknown keys are errors.

Exit codes: 0 success, 1 failed derivative check, 2 configuration error,
3 chain divergence, 4 numerical precondition failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import potentials
from .constants import c_bar, c_tilde, derive_constants, mixing_time
from .diagnostics import QuadratureReference, block_labels, gaussian_w2, jackknife_se
from .experiments import (
    QuantileCache,
    Sweep,
    SweepPoint,
    coupled_run,
    coupled_w2,
    oracle_variance_sweep,
    oracle_w2_sweep,
    pooled_tv,
    pooled_w2,
    simulate_ensemble,
    stratified_start,
)
from .samplers import NOISE_MODES, SCHEMES, DivergenceError, PreconditionError, SamplerConfig, run_chain

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_PRECONDITION = 4

METRICS = ("w2_gaussian", "w2_1d", "tv_1d", "variance_bias")
RATE_MODES = ("sampling", "oracle", "coupled")


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def fmt(v):
    """Round-trip float formatting (17 significant digits)."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        arr = np.asarray(v)
        if arr.ndim == 2:
            return ";".join(",".join(fmt(x) for x in row) for row in arr.tolist())
        return ",".join(fmt(x) for x in arr.tolist())
    return str(v)


# value parsers -------------------------------------------------------------

def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {s}")
    return int(v)


def _floats(s):
    return [float(t) for t in s.split(",") if t.strip()]


def _matrix(s):
    rows = [_floats(r) for r in s.split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("matrix rows must have equal length")
    return np.array(rows)


def _choice(options):
    def parse(s):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s

    return parse


def _text(s):
    return s


# target registry ----------------------------------------------------------

def _gaussian(cfg):
    mean = np.array(cfg.get("mean", [0.0]))
    prec = cfg.get("precision")
    if prec is None:
        prec = np.eye(mean.size)
    if np.shape(prec) != (mean.size, mean.size):
        raise ConfigError("precision", f"must be {mean.size}x{mean.size} to match mean")
    try:
        return potentials.gaussian_model(mean, prec)
    except ValueError as exc:
        raise ConfigError("precision", str(exc)) from None


def _double_well(cfg):
    return potentials.double_well_model(int(cfg.get("dim", 1)))


def _logcosh(cfg):
    return potentials.logcosh_model()


def _logistic(cfg):
    if "data" not in cfg:
        raise ConfigError("data", "logistic target needs a data CSV path")
    data = potentials.load_logistic_csv(cfg["data"], cfg.get("prior_scale", 1.0))
    return potentials.logistic_model(data)


# name -> (builder, target-specific keys)
TARGETS = {
    "gaussian": (_gaussian, {"mean": _floats, "precision": _matrix}),
    "double_well": (_double_well, {"dim": _int}),
    "logcosh": (_logcosh, {}),
    "logistic": (_logistic, {"data": _text, "prior_scale": _float}),
}

COMMAND_KEYS = {
    "sample": {
        "target": _text, "scheme": _choice(SCHEMES), "gamma": _float, "steps": _int,
        "burn_in": _int, "seed": _int, "noise_mode": _choice(NOISE_MODES), "x0": _floats,
        "thin": _int, "out": _text,
    },
    "rate": {
        "target": _text, "scheme": _choice(SCHEMES), "gammas": _floats,
        "metric": _choice(METRICS), "steps": _int, "replicas": _int, "seed": _int,
        "mode": _choice(RATE_MODES), "noise_mode": _choice(NOISE_MODES), "burn_time": _float,
        "bins": _int, "range": _floats, "refine": _int, "thin_time": _float, "out": _text,
    },
    "plan": {
        "m": _float, "L1": _float, "L2": _float, "L": _float, "d": _int,
        "x0_dist": _float, "epsilon": _floats, "out": _text,
    },
    "check": {"target": _text, "points": _matrix, "h": _float, "tol": _float, "out": _text},
}

DEFAULTS = {
    "sample": {"scheme": "hola", "burn_in": 0, "seed": 0, "noise_mode": "two_noise", "thin": 1,
               "out": "chain.csv"},
    "rate": {"mode": "sampling", "replicas": 100, "seed": 0, "noise_mode": "two_noise",
             "burn_time": 8.0, "bins": 100, "refine": 8, "out": "rate.csv"},
    "plan": {"out": "plan.csv"},
    "check": {"tol": 1e-4, "out": "check.csv"},
}

REQUIRED = {
    "sample": ("target", "gamma", "steps"),
    "rate": ("target", "scheme", "gammas", "metric"),
    "plan": ("m", "L1", "L2", "L", "d"),
    "check": ("target",),
}


def read_config(path):
    """Raw ``key -> string`` pairs from a flat config file."""
    raw = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        if not key:
            raise ConfigError("", f"line {lineno} has an empty key")
        if key in raw:
            raise ConfigError(key, f"duplicate key on line {lineno}")
        raw[key] = value
    return raw


def resolve_config(command, raw):
    """Type-check raw values against the command schema and the target's keys."""
    schema = dict(COMMAND_KEYS[command])
    if "target" in schema:
        name = raw.get("target")
        if name is None:
            raise ConfigError("target", "missing")
        if name not in TARGETS:
            raise ConfigError("target", f"unknown target {name!r}; choose from {', '.join(TARGETS)}")
        schema.update(TARGETS[name][1])
    cfg = dict(DEFAULTS[command])
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(key, f"unknown key for '{command}'")
        try:
            cfg[key] = schema[key](value)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    for key in REQUIRED[command]:
        if key not in cfg:
            raise ConfigError(key, "missing")
    return cfg


def build_model(cfg):
    builder = TARGETS[cfg["target"]][0]
    try:
        return builder(cfg)
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError("target", str(exc)) from None


def config_echo(cfg):
    return "# config: " + " ".join(f"{k}={fmt(cfg[k])}" for k in sorted(cfg))


def _write(path, lines):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# commands -----------------------------------------------------------------

def cmd_sample(cfg, out_dir):
    """Run one chain and write ``step,x1..xd`` rows; returns an exit code."""
    model = build_model(cfg)
    x0 = cfg.get("x0", [0.0] * model.dim)
    if len(x0) != model.dim:
        raise ConfigError("x0", f"needs {model.dim} coordinates")
    try:
        config = SamplerConfig(
            scheme=cfg["scheme"], gamma=cfg["gamma"], n_steps=cfg["steps"], burn_in=cfg["burn_in"],
            seed=cfg["seed"], noise_mode=cfg["noise_mode"], initial_point=tuple(x0), thin=cfg["thin"],
        )
    except ValueError as exc:
        raise ConfigError("gamma/steps/burn_in/seed", str(exc)) from None
    out = run_chain(config, model)
    header = "step," + ",".join(f"x{i + 1}" for i in range(model.dim))
    lines = [header]
    for step, row in zip(out.steps, out.samples):
        lines.append(f"{int(step)}," + ",".join(fmt(v) for v in row))
    lines.append(config_echo(cfg))
    div = f"true step={out.divergence_step}" if out.diverged else "false"
    lines.append(f"# diverged: {div}")
    _write(out_dir / cfg["out"], lines)
    if out.diverged:
        print(f"chain diverged at step {out.divergence_step}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _rate_point(cfg, model, gamma, index, shared):
    """Error and jackknife s.e. at one step size."""
    metric = cfg["metric"]
    seed = cfg["seed"] + index
    replicas = cfg["replicas"]
    per_chain = int(math.ceil(cfg["steps"] / replicas))
    burn = int(math.ceil(cfg["burn_time"] / gamma))
    if cfg["mode"] == "coupled":
        ref = shared["reference"]
        fine, coarse = coupled_run(model, [cfg["scheme"]], gamma, cfg["refine"], replicas, per_chain,
                                   burn, seed, stratified_start(ref, replicas))
        return coupled_w2(coarse[cfg["scheme"]][..., 0], fine[..., 0])
    starts = stratified_start(shared["reference"], replicas) if "reference" in shared else None
    thin = max(1, int(round(cfg["thin_time"] / gamma))) if "thin_time" in cfg else 1
    samples = simulate_ensemble(model, cfg["scheme"], gamma, replicas, per_chain, burn, seed,
                                starts=starts, noise_mode=cfg["noise_mode"], thin=thin)
    if metric == "w2_1d":
        return pooled_w2(samples[..., 0], shared["quantiles"])
    if metric == "tv_1d":
        return pooled_tv(samples[..., 0], shared["reference"], cfg["bins"], shared["range"])
    # w2_gaussian: Bures distance of the pooled moments to the target
    mean, cov = model.mean, np.linalg.inv(model.precision)
    labels = block_labels(replicas)

    def w2(sel):
        flat = samples[sel].reshape(-1, model.dim)
        return gaussian_w2(flat.mean(axis=0), np.atleast_2d(np.cov(flat.T)), mean, cov)

    loo = [w2(labels != g) for g in range(20)]
    return w2(np.ones(replicas, bool)), float(jackknife_se(loo))


def _rate_sweep(cfg, model, threads):
    gammas = sorted(cfg["gammas"])
    if len(gammas) < 3:
        raise ConfigError("gammas", "need at least three step sizes")
    if len(set(gammas)) != len(gammas):
        raise ConfigError("gammas", "step sizes must be distinct")
    for g in gammas:
        if not 0 < g < 1:
            raise ConfigError("gammas", f"step size {g} outside (0, 1)")
    metric, mode = cfg["metric"], cfg["mode"]
    if mode == "oracle":
        if cfg["target"] != "gaussian" or cfg["scheme"] not in ("ula", "hola_lipschitz"):
            raise ConfigError("mode", "oracle mode needs a gaussian target and scheme ula or hola_lipschitz")
        try:
            if metric == "variance_bias":
                if model.dim != 1:
                    raise ConfigError("metric", "variance_bias needs a 1-D target")
                return oracle_variance_sweep(cfg["scheme"], gammas, a=float(model.precision[0, 0]))
            if metric == "w2_gaussian":
                return oracle_w2_sweep(cfg["scheme"], gammas, model.mean, model.precision)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise PreconditionError(str(exc)) from None
        raise ConfigError("metric", f"oracle mode supports w2_gaussian or variance_bias, not {metric}")
    if metric == "variance_bias":
        raise ConfigError("metric", "variance_bias is only available in oracle mode")
    if "steps" not in cfg:
        raise ConfigError("steps", "missing")
    if cfg["replicas"] % 20:
        raise ConfigError("replicas", "must be a multiple of 20 (jackknife blocks)")
    shared = {}
    if metric == "w2_gaussian":
        if cfg["target"] != "gaussian":
            raise ConfigError("metric", "w2_gaussian needs a gaussian target")
    else:
        if model.dim != 1:
            raise ConfigError("metric", f"{metric} needs a 1-D target")
        shared["reference"] = QuadratureReference(model.energy)
        shared["quantiles"] = QuantileCache(shared["reference"])
        if metric == "tv_1d":
            rng_ = cfg.get("range", [shared["reference"].lo, shared["reference"].hi])
            if len(rng_) != 2 or not rng_[0] < rng_[1]:
                raise ConfigError("range", "needs two increasing values")
            shared["range"] = rng_
    if mode == "coupled":
        if metric != "w2_1d":
            raise ConfigError("mode", "coupled mode measures w2_1d only")
        if not model.constants.lipschitz:
            raise ConfigError("mode", "coupled mode needs a target with globally Lipschitz gradient")
    if "w2_1d" == metric:
        # warm the quantile cache serially so worker threads only read it
        n = int(math.ceil(cfg["steps"] / cfg["replicas"])) * cfg["replicas"]
        shared["quantiles"](n)
        shared["quantiles"](n - n // 20)
    jobs = list(enumerate(gammas))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda job: _rate_point(cfg, model, job[1], job[0], shared), jobs))
    sw = Sweep(cfg["scheme"], metric)
    for (i, g), (err, se) in sorted(zip(jobs, results)):
        sw.points.append(SweepPoint(g, err, se))
    return sw


def cmd_rate(cfg, out_dir, threads=1):
    """Sweep step sizes, write ``gamma,metric,error,stderr`` plus the fit."""
    model = build_model(cfg)
    sw = _rate_sweep(cfg, model, threads)
    lines = ["gamma,metric,error,stderr"]
    for p in sw.points:
        lines.append(f"{fmt(p.gamma)},{sw.metric},{fmt(p.error)},{fmt(p.stderr)}")
    try:
        fit = sw.fit()
        lines.append(f"# fit: slope={fmt(fit.slope)} intercept={fmt(fit.intercept)} r2={fmt(fit.r2)}")
        print(f"slope {fit.slope:.4f}  r2 {fit.r2:.4f}")
    except ValueError as exc:
        lines.append(f"# fit: unavailable ({exc})")
    lines.append(config_echo(cfg))
    _write(out_dir / cfg["out"], lines)
    return EXIT_OK


def cmd_plan(cfg, out_dir):
    """Tabulate the explicit constants (and mixing plans when asked)."""
    try:
        k = derive_constants(cfg["m"], cfg["L1"], cfg["L2"], cfg["L"], cfg["d"])
    except ValueError as exc:
        raise ConfigError("m/L1/L2/L/d", str(exc)) from None
    rows = [("m_tilde", k.m_tilde), ("gamma_max", k.gamma_max), ("q1", k.q1), ("q2", k.q2)]
    rows += [(f"c{i}", k.c[i]) for i in range(1, 15)]
    if "x0_dist" in cfg:
        r = cfg["x0_dist"]
        rows += [("c_bar", c_bar(k, r)), ("c_tilde", c_tilde(k, r))]
        for eps in cfg.get("epsilon", []):
            try:
                plan = mixing_time(k, r, eps)
            except ValueError as exc:
                raise ConfigError("epsilon", str(exc)) from None
            rows += [(f"mixing_n[eps={fmt(eps)}]", plan.n), (f"mixing_gamma[eps={fmt(eps)}]", plan.gamma)]
    elif "epsilon" in cfg:
        raise ConfigError("x0_dist", "needed to plan a mixing time")
    lines = ["name,value"] + [f"{name},{fmt(v)}" for name, v in rows]
    lines.append(config_echo(cfg))
    _write(out_dir / cfg["out"], lines)
    for name, v in rows:
        print(f"{name:>24}  {fmt(v)}")
    return EXIT_OK


def _default_points(d):
    base = np.array([0.3 * (-1) ** i * (i + 1) for i in range(d)])
    return np.stack([base, -0.5 * base + 0.1, np.full(d, 1.3)])


def cmd_check(cfg, out_dir):
    """Finite-difference certificate of the analytic derivative stack."""
    model = build_model(cfg)
    points = cfg.get("points")
    points = _default_points(model.dim) if points is None else points
    if points.shape[1] != model.dim:
        raise ConfigError("points", f"needs {model.dim} coordinates per row")
    lines = ["point,quantity,rel_error,tol,pass"]
    ok = True
    for i, x in enumerate(points):
        try:
            rep = potentials.finite_diff_check(model, x, h=cfg.get("h"), tol=cfg["tol"])
        except ValueError as exc:
            raise ConfigError("h", str(exc)) from None
        for name in ("grad", "hess", "vec_lap_grad", "hess_grad"):
            err = getattr(rep, name)
            good = bool(np.isfinite(err) and err <= rep.tol)
            ok &= good
            lines.append(f"{i},{name},{fmt(err)},{fmt(rep.tol)},{fmt(good)}")
    lines.append(config_echo(cfg))
    _write(out_dir / cfg["out"], lines)
    print("all derivative checks passed" if ok else "derivative check FAILED")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


COMMANDS = {"sample": cmd_sample, "rate": cmd_rate, "plan": cmd_plan, "check": cmd_check}


def build_parser():
    p = argparse.ArgumentParser(prog="hola", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override or add a config entry (repeatable)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = read_config(args.config) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(item, "--set expects KEY=VALUE")
            key, value = (t.strip() for t in item.split("=", 1))
            raw[key] = value
        if args.seed is not None:
            if "seed" not in COMMAND_KEYS[args.command]:
                raise ConfigError("seed", f"'{args.command}' takes no seed")
            raw["seed"] = str(args.seed)
        cfg = resolve_config(args.command, raw)
        if args.command == "rate":
            return cmd_rate(cfg, args.out, threads=args.threads)
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
