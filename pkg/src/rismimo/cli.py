"""Command-line driver: ``rismimo {rate,optimize,sweep,validate}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .alternating import optimize_joint
from .config import SCHEMES, ConfigError, load_config, run_statistics
from .experiments import CSV_HEADER, evaluate_scheme, parse_sweep, ris_active, run_sweep, validation_report
from .linalg import LinAlgFailure
from .large_system import FixedPointNotConverged
from .persist import save_matrix

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VALIDATION = 0, 2, 3, 4

log = logging.getLogger("rismimo")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML scenario file (defaults when omitted)")
    common.add_argument("--seed", type=int, help="seed for phases and Monte Carlo (overrides mc.seed)")
    common.add_argument("--workers", type=int, default=1, help="worker threads")
    common.add_argument("--out", help="output directory")
    common.add_argument("--trials", type=int, help="Monte-Carlo trials (overrides mc.trials)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rismimo", description="Ergodic rate analysis and design for RIS-assisted MIMO links.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("rate", parents=[common], help="analytic and Monte-Carlo rate of one scheme")
    r.add_argument("--scheme", choices=SCHEMES, help="defaults to the config's scheme (uniform_random)")
    sub.add_parser("optimize", parents=[common], help="joint covariance and phase design")
    s = sub.add_parser("sweep", parents=[common], help="sweep power, RIS size or RIS position")
    s.add_argument("--sweep", required=True, metavar="VAR=V1,V2,...", help="power_dbm, ris_elements or ris_position_m")
    s.add_argument("--scheme", default=None, help="comma-separated schemes (default: optimized,uniform_random)")
    s.add_argument("--no-timing", action="store_true", help="write wall_ms as 0 so reruns are byte-identical")
    sub.add_parser("validate", parents=[common], help="run the cross-check suite")
    return p


def _settings(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be nonnegative")
        cfg = cfg.replace(scenario=cfg.scenario.replace(seed=args.seed))
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials", "must be >= 1")
        cfg = cfg.replace(scenario=cfg.scenario.replace(mc_trials=args.trials))
    if args.workers < 1:
        raise ConfigError("--workers", "must be >= 1")
    return cfg


def _public(row: dict) -> dict:
    return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in row.items() if not k.startswith("_")}


def cmd_rate(args) -> int:
    cfg = _settings(args)
    scheme = args.scheme or cfg.scheme
    t0 = time.perf_counter()
    row = evaluate_scheme(cfg, scheme, cfg.scenario.seed, cfg.scenario.mc_trials, workers=args.workers)
    row["wall_ms"] = int(round((time.perf_counter() - t0) * 1000))
    row["status"] = "ok"
    out = _public(row)
    out["mc_trials"] = row["_trials"]
    analytic = out["rate_analytic_bits"]
    text = "n/a" if analytic is None else f"{analytic:.6f}"
    print(f"{scheme}: analytic {text} bits/use, Monte Carlo {out['rate_mc_bits']:.6f} +- {out['rate_mc_stderr']:.6f}")
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "rate.json").write_text(json.dumps(out, indent=2) + "\n")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _settings(args)
    stats = run_statistics(cfg)
    opt = cfg.optimize
    j = optimize_joint(
        stats, cfg.scenario.seed, tol=opt.tol, max_outer=opt.max_outer, restarts=opt.restarts,
        workers=args.workers, phase_kw={"step": opt.step},
    )
    d = Path(args.out or "out")
    d.mkdir(parents=True, exist_ok=True)
    lam, U = np.linalg.eigh(j.Q.Q)
    order = np.argsort(lam)[::-1]
    lam, U = np.clip(lam[order], 0.0, None), U[:, order]
    save_matrix(d / "Q.mat", j.Q.Q)
    save_matrix(d / "Q_eigenvectors.mat", U)
    (d / "Q_eigenvalues.txt").write_text("".join(f"{float(x)!r}\n" for x in lam))
    (d / "theta.txt").write_text("".join(f"{float(x)!r}\n" for x in j.theta.theta))
    (d / "trace.csv").write_text(
        "outer_iter,rate_bits\n" + "".join(f"{i},{float(r / np.log(2.0))!r}\n" for i, r in enumerate(j.rates))
    )
    meta = {
        "rate_bits": j.rate_bits,
        "outer_iterations": j.outer_iterations,
        "converged": j.converged,
        "fp_iterations": j.fp_iterations,
        "restart": j.restart,
        "restart_rates_bits": [r / np.log(2.0) for r in j.restart_rates],
        "theta_relevant": ris_active(stats),
        "seed": cfg.scenario.seed,
        "budget": stats.power_budget,
        "files": ["Q.mat", "Q_eigenvectors.mat", "Q_eigenvalues.txt", "theta.txt", "trace.csv"],
    }
    (d / "optimize.json").write_text(json.dumps(meta, indent=2) + "\n")
    note = "" if meta["theta_relevant"] else " (phases irrelevant: RIS links are zero)"
    print(f"optimized rate {j.rate_bits:.6f} bits/use after {j.outer_iterations} outer iterations{note}; wrote {d}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _settings(args)
    var, values = parse_sweep(args.sweep)
    schemes = [s.strip() for s in (args.scheme or "optimized,uniform_random").split(",") if s.strip()]
    bad = [s for s in schemes if s not in SCHEMES]
    if bad or not schemes:
        raise ConfigError("--scheme", f"unknown scheme(s) {', '.join(bad) or '(none)'}")
    path = run_sweep(
        cfg, var, values, schemes, cfg.scenario.seed, cfg.scenario.mc_trials,
        args.out or "out", workers=args.workers, timing=not args.no_timing,
    )
    print(f"wrote {path} ({len(values) * len(schemes)} rows, columns: {','.join(CSV_HEADER)})")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _settings(args)
    report = validation_report(cfg, cfg.scenario.seed, cfg.scenario.mc_trials)
    for c in report:
        mark = "PASS" if c["passed"] else "FAIL"
        tol = "" if c["tolerance"] is None else f" (tol {c['tolerance']:.3g})"
        print(f"{mark} {c['name']}: error {c['error']:.3g}{tol} {c['detail']}".rstrip())
    ok = all(c["passed"] for c in report)
    payload = {"passed": ok, "checks": report}
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "validate.json").write_text(json.dumps(payload, indent=2, allow_nan=True) + "\n")
    return EXIT_OK if ok else EXIT_VALIDATION


COMMANDS = {"rate": cmd_rate, "optimize": cmd_optimize, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LinAlgFailure, FixedPointNotConverged, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
