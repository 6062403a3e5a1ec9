"""Command-line entry point: ``densityprice {simulate,diagnose,estimate,price,validate}``.

All settings live in one JSON config with five blocks (generator, mesh,
diagnostics, pricing, output). Keys are addressed with a flat dotted
namespace, so ``--set pricing.r=0.03`` overrides one value. Unknown keys are
rejected before anything is computed.

Exit codes: 0 ok, 1 usage, 2 input error, 3 validation failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .diagnostics import DiagnosticsConfig, diagnose
from .experiment import experiment_summary, lambda_direct, lambda_per_path, martingale_check, \
    to_densities, write_summary_csv
from .limit_law import estimate_limit_law
from .market_sim import gen_gbm, gen_jump_diffusion, load_ensemble, make_mesh
from .pricing import PricingConfig, pricing_pipeline

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_VALIDATION = 0, 1, 2, 3

DEFAULTS = {
    "generator": {
        "model": "gbm", "s0": 100.0, "mu": 0.08, "sigma": 0.2, "jump_intensity": 0.0,
        "jumps": [], "seed": 0, "n_paths": 100_000,
    },
    "mesh": {"kind": "uniform", "t0": 0.0, "T": 1.0, "k": 256, "delta": None},
    "diagnostics": {
        "eps_grid": [0.2, 0.1, 0.05, 0.02, 0.01], "tau": 0.05, "calm_ratio": 0.25,
        "refine_factor": 4, "zero_floor": 1e-10, "margin": 1e-3,
        "contiguity_threshold": 1e-3, "bound_b": None,
    },
    "pricing": {
        "strikes": [80.0, 100.0, 120.0], "r": 0.05, "mode": "fair",
        "convergence_k": [16, 64, 256], "force_calm": False, "n_draws": None, "seed": 0,
        "s_t0": None, "tolerance": 0.005,
    },
    "output": {"dir": "out", "formats": ["csv"], "ensemble": None},
}


class ConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for input errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# config ----------------------------------------------------------------------

def _check_keys(user: dict) -> None:
    for block, body in user.items():
        if block not in DEFAULTS:
            raise ConfigError(f"unknown config block {block!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"config block {block!r} must be an object")
        for key in body:
            if key not in DEFAULTS[block]:
                raise ConfigError(f"unknown config key '{block}.{key}'")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the config file, then ``--set`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        _check_keys(user)
        for block, body in user.items():
            cfg[block].update(body)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.split(".")
        if len(parts) != 2:
            raise ConfigError(f"--set key must look like block.key, got {key!r}")
        _check_keys({parts[0]: {parts[1]: None}})
        cfg[parts[0]][parts[1]] = _parse_value(value)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    g, m, p = cfg["generator"], cfg["mesh"], cfg["pricing"]
    if g["model"] not in ("gbm", "jump_diffusion"):
        raise ConfigError(f"generator.model must be 'gbm' or 'jump_diffusion', got {g['model']!r}")
    for key in ("s0", "n_paths"):
        if not (isinstance(g[key], (int, float)) and g[key] > 0):
            raise ConfigError(f"generator.{key} must be > 0, got {g[key]!r}")
    if not g["sigma"] >= 0:
        raise ConfigError(f"generator.sigma must be >= 0, got {g['sigma']!r}")
    if m["kind"] not in ("uniform", "geometric"):
        raise ConfigError(f"mesh.kind must be 'uniform' or 'geometric', got {m['kind']!r}")
    if m["kind"] == "geometric" and m["delta"] is None:
        raise ConfigError("mesh.delta is required for a geometric mesh")
    if not m["T"] > m["t0"]:
        raise ConfigError("mesh.T must exceed mesh.t0")
    if p["mode"] not in ("raw", "fair"):
        raise ConfigError(f"pricing.mode must be 'raw' or 'fair', got {p['mode']!r}")
    if not p["strikes"] or any(not x > 0 for x in p["strikes"]):
        raise ConfigError("pricing.strikes must be a non-empty list of positive numbers")
    for kind in cfg["output"]["formats"]:
        if kind not in ("csv", "npz"):
            raise ConfigError(f"output.formats entries must be 'csv' or 'npz', got {kind!r}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# number formatting -------------------------------------------------------------

def fmt(x) -> str:
    return "None" if x is None else f"{x:.10g}"


def rounded(obj):
    """Round every float to 10 significant digits so JSON matches the printed tables."""
    if isinstance(obj, float):
        return float(f"{obj:.10g}") if math.isfinite(obj) else None
    if isinstance(obj, np.floating):
        return rounded(float(obj))
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(rounded(obj), indent=2) + "\n")


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: dict, outputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["generator"]["seed"],
        "versions": {"densityprice": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "outputs": {p.name: _digest(p) for p in outputs},
    }
    (out / f"manifest_{command}.json").write_text(json.dumps(manifest, indent=2) + "\n")


# shared steps --------------------------------------------------------------------

def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["output"]["dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _simulate(cfg: dict, threads: int | None):
    g, m = cfg["generator"], cfg["mesh"]
    param = m["k"] if m["kind"] == "uniform" else m["delta"]
    mesh = make_mesh(m["kind"], float(m["t0"]), float(m["T"]), param)
    if g["model"] == "gbm":
        return gen_gbm(g["s0"], g["mu"], g["sigma"], mesh, g["n_paths"], g["seed"], threads)
    return gen_jump_diffusion(g["s0"], g["mu"], g["sigma"], g["jump_intensity"],
                              [tuple(j) for j in g["jumps"]], mesh, g["n_paths"], g["seed"],
                              threads)


def _ensemble(args, cfg: dict):
    path = args.ensemble or cfg["output"]["ensemble"]
    if path is None:
        return _simulate(cfg, args.threads)
    if not Path(path).is_file():
        raise FileNotFoundError(f"ensemble file not found: {path}")
    return load_ensemble(path)


def _diag_config(cfg: dict) -> DiagnosticsConfig:
    d = cfg["diagnostics"]
    return DiagnosticsConfig(tuple(d["eps_grid"]), d["calm_ratio"], d["refine_factor"],
                             d["zero_floor"], d["tau"], d["margin"], d["contiguity_threshold"],
                             d["bound_b"])


def _pricing_config(cfg: dict) -> PricingConfig:
    p = cfg["pricing"]
    return PricingConfig(tuple(float(x) for x in p["strikes"]), p["r"], p["mode"],
                         cfg["diagnostics"]["tau"], tuple(p["convergence_k"]), p["force_calm"],
                         p["n_draws"], p["seed"], p["s_t0"])


# commands ------------------------------------------------------------------------

def cmd_simulate(args, cfg) -> int:
    out = _out_dir(cfg)
    ens = _simulate(cfg, args.threads)
    files = []
    if "csv" in cfg["output"]["formats"]:
        files.append(out / "ensemble.csv")
        ens.to_csv(files[-1])
    if "npz" in cfg["output"]["formats"]:
        files.append(out / "ensemble.npz")
        ens.to_npz(files[-1])
    _write_manifest(out, "simulate", cfg, files)
    print(f"wrote {ens.n_paths} paths on k={ens.mesh.k} intervals to "
          + ", ".join(str(f) for f in files))
    return EXIT_OK


def cmd_diagnose(args, cfg) -> int:
    out = _out_dir(cfg)
    ens = _ensemble(args, cfg)
    rep = diagnose(ens, _diag_config(cfg))
    report = rounded(json.loads(rep.to_json()))
    _write_json(out / "diagnostics.json", report)
    rep.curves_csv(out / "lindeberg_curves.csv")
    _write_manifest(out, "diagnose", cfg, [out / "diagnostics.json", out / "lindeberg_curves.csv"])
    print(f"k={report['k']}  k_coarse={report['k_coarse']}  sum_2h2={fmt(report['sum_2h2'])}"
          f"  sup_h2={fmt(report['sup_h2'])}")
    print(f"{'eps':>12} {'lindeberg_Y':>18} {'lindeberg_U':>18} {'coarse_Y':>18}")
    coarse = report["lindeberg_Y_coarse"] or [None] * len(report["eps_grid"])
    for row in zip(report["eps_grid"], report["lindeberg_Y"], report["lindeberg_U"], coarse):
        print(" ".join(f"{fmt(v):>18}" if i else f"{fmt(v):>12}" for i, v in enumerate(row)))
    for key, val in report["verdicts"].items():
        print(f"{key}={json.dumps(val)}")
    for note in report["notes"]:
        print(f"note: {note}")
    return EXIT_OK


def cmd_estimate(args, cfg) -> int:
    out = _out_dir(cfg)
    ens = _ensemble(args, cfg)
    exp = to_densities(ens)
    law = estimate_limit_law(exp, cfg["diagnostics"]["tau"])
    law_d = rounded(law.to_dict())
    summ = experiment_summary(exp)
    _write_json(out / "limit_law.json", law_d)
    _write_json(out / "experiment_summary.json", summ)
    write_summary_csv(summ, out / "experiment_summary.csv")
    _write_manifest(out, "estimate", cfg, [out / "limit_law.json", out / "experiment_summary.json",
                                           out / "experiment_summary.csv"])
    print(f"mu_interval={fmt(law_d['mu_interval'])}  sigma2_interval={fmt(law_d['sigma2_interval'])}"
          f"  a_factor={fmt(rounded(summ['a_factor']))}")
    for side in ("atoms_t0", "atoms_T"):
        for a in law_d[side]:
            print(f"{side}: y={fmt(a['y'])}  mass={fmt(a['mass'])}  intensity={fmt(a['intensity'])}")
    return EXIT_OK


def _run_pricing(args, cfg):
    ens = _ensemble(args, cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = pricing_pipeline(ens, _pricing_config(cfg), _diag_config(cfg))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return ens, res


def _price_report(res) -> dict:
    quotes = []
    for q, o in zip(res.quotes, res.oracle_prices):
        d = q.to_dict()
        d.pop("law")
        d["oracle_price"] = o
        d["rel_err"] = abs(q.price - o) / o if o else None
        quotes.append(d)
    body = res.to_dict()
    body["quotes"] = quotes
    for d in body["p2_quotes"]:
        d.pop("law")
    return rounded(body)


def _print_quotes(report: dict) -> None:
    print(f"branch={'calm' if report['calm_branch'] else 'non-calm'}"
          f"  sigma2_interval={fmt(report['law']['sigma2_interval'])}"
          f"  mu_interval={fmt(report['law']['mu_interval'])}")
    print(f"{'X':>8} {'price':>18} {'buyer_lower_bound':>18} {'oracle':>18} {'rel_err':>18}")
    for q in report["quotes"]:
        bound = q["fair_buyer_lower_bound"] if q["mode"] == "fair" else q["buyer_lower_bound"]
        price = q["fair_trader_price"] if q["mode"] == "fair" else q["trader_price"]
        print(f"{fmt(q['X']):>8} {fmt(price):>18} {fmt(bound):>18} "
              f"{fmt(q['oracle_price']):>18} {fmt(q['rel_err']):>18}")
    for note in report["warnings"]:
        print(f"note: {note}")


def _oracle_failures(report: dict, tol: float) -> list[str]:
    bad = []
    for q in report["quotes"]:
        if q["rel_err"] is None or q["rel_err"] >= tol:
            bad.append(f"X={fmt(q['X'])}: rel_err {fmt(q['rel_err'])} >= {fmt(tol)}")
    return bad


def cmd_price(args, cfg) -> int:
    out = _out_dir(cfg)
    _, res = _run_pricing(args, cfg)
    report = _price_report(res)
    _write_json(out / "quotes.json", report)
    res.convergence_csv(out / "convergence.csv")
    _write_manifest(out, "price", cfg, [out / "quotes.json", out / "convergence.csv"])
    _print_quotes(report)
    if args.validate:
        bad = _oracle_failures(report, cfg["pricing"]["tolerance"])
        for line in bad:
            print(f"FAIL {line}", file=sys.stderr)
        if bad:
            return EXIT_VALIDATION
        print("validation passed")
    return EXIT_OK


def cmd_validate(args, cfg) -> int:
    out = _out_dir(cfg)
    ens, res = _run_pricing(args, cfg)
    exp = to_densities(ens)
    checks = {
        "telescoping": float(np.max(np.abs(lambda_per_path(exp) - lambda_direct(exp)))),
        "reciprocal": float(np.max(np.abs((1 + exp.Y) * (1 + exp.U) - 1))),
        "martingale": martingale_check(exp).max_deviation,
        "mean_one": float(np.max(np.abs(exp.p.mean(axis=0) - 1))),
    }
    limits = {"telescoping": 1e-10, "reciprocal": 1e-12, "martingale": 1e-12, "mean_one": 1e-12}
    report = _price_report(res)
    failures = _oracle_failures(report, cfg["pricing"]["tolerance"])
    failures += [f"{k}: {fmt(v)} > {fmt(limits[k])}" for k, v in checks.items() if v > limits[k]]
    body = rounded({"identities": checks, "limits": limits, "quotes": report["quotes"],
                    "failures": failures, "passed": not failures})
    _write_json(out / "validation.json", body)
    _write_manifest(out, "validate", cfg, [out / "validation.json"])
    _print_quotes(report)
    for k, v in body["identities"].items():
        print(f"{k}: {fmt(v)} (limit {fmt(limits[k])})")
    for line in failures:
        print(f"FAIL {line}", file=sys.stderr)
    print("validation passed" if not failures else "validation failed")
    return EXIT_OK if not failures else EXIT_VALIDATION


COMMANDS = {"simulate": cmd_simulate, "diagnose": cmd_diagnose, "estimate": cmd_estimate,
            "price": cmd_price, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="densityprice", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="BLOCK.KEY=VALUE", help="override one config value")
        p.add_argument("--threads", type=int, default=os.cpu_count(),
                       help="worker threads for path generation")
        p.add_argument("--out", help="output directory (same as output.dir)")
        if name != "simulate":
            p.add_argument("--ensemble", help="ensemble CSV or NPZ; simulated from the config if omitted")
        if name == "price":
            p.add_argument("--validate", action="store_true",
                           help="exit 3 unless every quote matches its oracle")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not hasattr(args, "ensemble"):
        args.ensemble = None
    try:
        overrides = list(args.overrides)
        if args.out:
            overrides.append(f"output.dir={json.dumps(args.out)}")
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
