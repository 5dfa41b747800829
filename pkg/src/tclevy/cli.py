"""Command-line front end: ``tclevy {simulate,density,loglik,fit,check} --config FILE``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import traceback
import warnings

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION, ConfigError, RunConfig, parse_config
from .estimate import fit_mle
from .levy import Zero
from .likelihood import (MAX_EXACT_DIM, ModelParams, characteristic_function, composite_log_likelihood,
                         log_likelihood, marginal_density_grid)
from .montecarlo import empirical_cf, empirical_density, simulate_returns
from .prm import Deterministic
from .timechange import VolSpec

log = logging.getLogger("tclevy")

COMMANDS = ("simulate", "density", "loglik", "fit", "check")
CHECK_U = ((0.5, 0.0), (0.0, 0.5), (0.3, 0.3), (0.4, -0.4), (1.0, 0.5))


def parse_grid(text: str):
    try:
        lo, hi, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be LO:HI:STEP, got {text!r}") from None
    return [lo, hi, step]


def grid_points(lo: float, hi: float, step: float) -> np.ndarray:
    if not (step > 0 and hi > lo):
        raise ConfigError("density.grid", "need LO < HI and STEP > 0")
    k = int(np.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(k + 1)


def read_returns(data: dict) -> np.ndarray:
    with open(data["path"], newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError("data.path", "empty data file")
    header = rows[0]
    col = 0 if data.get("column") is None else header.index(data["column"]) if data["column"] in header else None
    if col is None:
        raise ConfigError("data.column", f"column {data['column']!r} not in header {header}")
    try:
        X = np.array([float(r[col]) for r in rows[1:] if r])
    except ValueError as exc:
        raise ConfigError("data.path", f"non-numeric return: {exc}") from exc
    if X.size == 0:
        raise ConfigError("data.path", "no returns in data file")
    return X


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _header(cfg: RunConfig, command: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "version": __version__}


def cmd_simulate(cfg: RunConfig, out: str) -> int:
    s = cfg.section("simulate")
    sim = simulate_returns(cfg.params, s["n"], s["n_paths"], seed=cfg.seed,
                           keep_latent=s["latents"], threads=cfg.threads)
    sim.to_csv(os.path.join(out, "returns.csv"), latents=s["latents"])
    _dump(os.path.join(out, "simulate.json"),
          {**_header(cfg, "simulate"), "n": s["n"], "n_paths": s["n_paths"], "seed": cfg.seed,
           "files": ["returns.csv"]})
    return 0


def cmd_density(cfg: RunConfig, out: str) -> int:
    x = grid_points(*cfg.section("density")["grid"])
    dens, diag = marginal_density_grid(x, cfg.params, cfg.quad, return_diagnostics=True)
    with open(os.path.join(out, "density.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "density"])
        for xi, fi in zip(x, dens):
            w.writerow([repr(float(xi)), repr(float(fi))])
    _dump(os.path.join(out, "density.json"), {**_header(cfg, "density"), "diagnostics": diag})
    return 0


def _require_data(cfg: RunConfig) -> np.ndarray:
    if cfg.data is None:
        raise ConfigError("data", "this command needs a data section")
    return read_returns(cfg.data)


def cmd_loglik(cfg: RunConfig, out: str) -> int:
    X = _require_data(cfg)
    if X.size <= MAX_EXACT_DIM:
        ll, diag = log_likelihood(X, cfg.params, q=cfg.quad, return_diagnostics=True)
        mode = "exact"
    else:
        block = cfg.section("loglik")["block"]
        ll, diag = composite_log_likelihood(X, cfg.params, block, q=cfg.quad, return_diagnostics=True)
        mode = f"composite(block={block})"
    _dump(os.path.join(out, "loglik.json"),
          {**_header(cfg, "loglik"), "loglik": ll, "n": int(X.size), "mode": mode, "diagnostics": diag})
    return 0


def cmd_fit(cfg: RunConfig, out: str) -> int:
    X = _require_data(cfg)
    f = cfg.section("fit")
    res = fit_mle(X, cfg.params, f["free"], cfg.quad, f["block"], max_iter=f["max_iter"])
    _dump(os.path.join(out, "fit.json"), {**_header(cfg, "fit"), **res.to_dict()})
    return 0


def run_checks(params: ModelParams, quad, n_paths: int, seed: int, threads: int = 1) -> list:
    """Closed-form Normal degeneration plus Monte Carlo checks of the density and joint characteristic function."""
    results = []
    rng = np.random.default_rng(seed)
    for n in (1, 2, 3):
        tau = rng.uniform(0.3, 2.0, n)
        gamma = rng.uniform(0.0, 1.0, n)
        p = ModelParams(rng.normal(), rng.normal(0, 0.3), rng.normal(0, 0.3), params.delta, Zero(), Zero(),
                        VolSpec(1.0, 1.0, 1.0))
        ts = tau + gamma
        X = rng.normal(p.mu * p.delta + p.beta * ts + p.rho * gamma, np.sqrt(ts))
        exact = float(np.sum(-0.5 * np.log(2 * np.pi * ts)
                             - (X - p.mu * p.delta - p.beta * ts - p.rho * gamma) ** 2 / (2 * ts)))
        ll = log_likelihood(X, p, Deterministic(tau=tau, gamma=gamma), quad)
        err = abs(ll - exact)
        results.append({"name": f"normal_degeneration_n{n}", "error": err, "tolerance": 1e-6,
                        "passed": bool(err <= 1e-6)})
    # Monte Carlo vs exact density at n = 1 over the central 99% of the mass
    fine = np.linspace(-40.0, 40.0, 4001)
    f_fine = marginal_density_grid(fine, params, quad)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f_fine[1:] + f_fine[:-1]) * np.diff(fine))])
    grid = np.linspace(*np.interp([0.005, 0.995], cdf, fine), 20)
    one = simulate_returns(params, 1, n_paths, seed=np.random.SeedSequence([seed, 1]), threads=threads)
    kde, se, h = empirical_density(one.returns[:, 0], grid, quad.kde_bandwidth)
    z = np.abs(kde - marginal_density_grid(grid, params, quad)) / se
    results.append({"name": "mc_vs_exact_density_n1", "max_z": float(z.max()), "bandwidth": h,
                    "tolerance": 4.0, "passed": bool(np.all(z <= 4.0))})
    sim = simulate_returns(params, 2, n_paths, seed=seed, threads=threads)
    U = np.array(CHECK_U)
    cf, se_re, se_im = empirical_cf(sim.returns, U)
    exact = characteristic_function(params, U, q=quad)
    z = np.maximum(np.abs(cf.real - exact.real) / se_re, np.abs(cf.imag - exact.imag) / se_im)
    results.append({"name": "mc_vs_analytic_cf_n2", "max_z": float(z.max()), "tolerance": 4.0,
                    "passed": bool(np.all(z <= 4.0))})
    return results


def cmd_check(cfg: RunConfig, out: str) -> int:
    results = run_checks(cfg.params, cfg.quad, cfg.section("check")["n_paths"], cfg.seed, cfg.threads)
    ok = all(r["passed"] for r in results)
    _dump(os.path.join(out, "check.json"), {**_header(cfg, "check"), "passed": ok, "results": results})
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']}")
    return 0 if ok else 1


HANDLERS = {"simulate": cmd_simulate, "density": cmd_density, "loglik": cmd_loglik,
            "fit": cmd_fit, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tclevy", description="Time-changed Levy return model toolkit.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default=".", help="output directory (created if missing)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--threads", type=int, help="cap on worker threads")
    ap.add_argument("--grid", type=parse_grid, help="density grid LO:HI:STEP")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _apply_overrides(cfg_path: str, args) -> RunConfig:
    cfg = parse_config(cfg_path)
    raw = json.loads(cfg.to_json())
    changed = False
    if args.seed is not None:
        raw["seed"] = args.seed
        changed = True
    if args.threads is not None:
        raw["threads"] = args.threads
        changed = True
    if args.grid is not None:
        raw["density"]["grid"] = args.grid
        changed = True
    if not changed:
        return cfg
    from .config import build
    return build(raw)


def _join_grid(argv):
    # "--grid -8:8:0.1" would otherwise read the negative bound as an option
    argv = list(sys.argv[1:] if argv is None else argv)
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--grid" and i + 1 < len(argv):
            out.append(f"--grid={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(_join_grid(argv))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        os.makedirs(args.out, exist_ok=True)
        cfg = _apply_overrides(args.config, args)
        with open(os.path.join(args.out, "config.json"), "w") as fh:
            fh.write(cfg.to_json() + "\n")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            status = HANDLERS[args.command](cfg, args.out)
        for w in caught:
            log.warning("%s: %s", w.category.__name__, w.message)
        return status
    except Exception as exc:                       # noqa: BLE001 - every failure becomes error JSON
        err = {"schema_version": SCHEMA_VERSION, "command": args.command, "error": type(exc).__name__,
               "message": str(exc)}
        if isinstance(exc, ConfigError):
            err["field"] = exc.path
        log.debug("%s", traceback.format_exc())
        print(json.dumps(err, sort_keys=True))
        try:
            _dump(os.path.join(args.out, "error.json"), err)
        except OSError:
            pass
        return 2


if __name__ == "__main__":
    sys.exit(main())
