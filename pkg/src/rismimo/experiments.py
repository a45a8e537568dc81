"""Scheme evaluation, parameter sweeps and the cross-check suite behind the CLI."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .alternating import initial_phases, optimize_joint, perfect_csit_rates
from .channel import SystemDims, link_trace_targets, sample_channels, zero_link
from .config import SCHEMES, ConfigError, RunConfig, run_statistics
from .covariance import optimize_covariance
from .large_system import (
    asymptotic_rate,
    fixed_point_residual,
    rate_no_direct,
    rate_no_ris,
    rate_rayleigh,
    stieltjes_product,
)
from .linalg import check_hermitian
from .phase import phase_gradient
from .rate import PhaseVector, TransmitCovariance, apply_replacements, deterministic_rate, monte_carlo_rate, rate_at_scalars
from .results import NATS_PER_BIT

__all__ = [
    "CSV_HEADER",
    "SWEEP_VARS",
    "evaluate_scheme",
    "apply_sweep",
    "parse_sweep",
    "run_sweep",
    "validation_report",
]

CSV_HEADER = [
    "sweep_var",
    "sweep_value",
    "scheme",
    "rate_analytic_bits",
    "rate_mc_bits",
    "rate_mc_stderr",
    "outer_iters",
    "fp_iters_total",
    "wall_ms",
    "status",
]

SWEEP_VARS = {
    "power_dbm": ("transmit power P", "dBm"),
    "ris_elements": ("RIS elements L", "count"),
    "ris_position_m": ("RIS x-coordinate d", "m"),
}

SCHEME_LABELS = {
    "optimized": "statistical CSIT, optimized Q and Theta",
    "uniform_random": "no CSIT, Q = (budget/N) I, random Theta",
    "no_ris": "without RIS, optimized Q",
    "perfect_csit_mc": "perfect CSIT, per-realization optimization (Monte Carlo)",
}


def _link_active(link) -> bool:
    return bool(np.any(link.Hbar)) or (bool(np.any(link.R)) and bool(np.any(link.T)))


def ris_active(stats) -> bool:
    """Whether the phases can influence the rate (both RIS hops present)."""
    return _link_active(stats.link1) and _link_active(stats.link2)


def _stats_err(values: np.ndarray) -> tuple[float, float]:
    mean = math.fsum(values) / values.size
    if values.size < 2:
        return mean, 0.0
    var = math.fsum((values - mean) ** 2) / (values.size - 1)
    return mean, math.sqrt(var / values.size)


def evaluate_scheme(cfg: RunConfig, scheme: str, seed: int, trials: int, workers: int = 1) -> dict:
    """Analytic and Monte-Carlo rate (bits) of one scheme on one scenario.

    Returns a row dict with the CSV columns other than ``sweep_var``,
    ``sweep_value`` and ``wall_ms``, plus the designed ``Q`` and ``theta``
    under ``"_Q"`` and ``"_theta"``. Numerical failures propagate.
    """
    if scheme not in SCHEMES:
        raise ConfigError("scheme", f"unknown scheme {scheme!r}")
    stats = run_statistics(cfg)
    n, L = stats.dims.n, stats.dims.l
    opt = cfg.optimize
    row = {"scheme": scheme, "outer_iters": 0, "fp_iters_total": 0}
    if scheme == "uniform_random":
        Q = TransmitCovariance.uniform(n, stats.power_budget)
        theta = initial_phases(L, seed)
        det = deterministic_rate(stats, Q, theta)
        row["fp_iters_total"] = det.solution.iterations
        analytic = det.nats
    elif scheme == "optimized":
        j = optimize_joint(stats, seed, tol=opt.tol, max_outer=opt.max_outer, restarts=opt.restarts, phase_kw={"step": opt.step})
        Q, theta, analytic = j.Q, j.theta, j.rate
        row.update(outer_iters=j.outer_iterations, fp_iters_total=j.fp_iterations)
    elif scheme == "no_ris":
        stats = stats.with_links(link1=zero_link(stats.link1), link2=zero_link(stats.link2))
        theta = PhaseVector.zeros(L)
        cv = optimize_covariance(stats, theta, tol=opt.tol)
        Q, analytic = cv.Q, cv.rate
        row.update(outer_iters=cv.iterations, fp_iters_total=cv.fp_iterations)
    else:  # perfect_csit_mc
        r = perfect_csit_rates(stats, trials, seed, tol=opt.tol, workers=workers)
        mean, err = _stats_err(r)
        row.update(rate_analytic_bits=float("nan"), rate_mc_bits=mean / NATS_PER_BIT, rate_mc_stderr=err / NATS_PER_BIT)
        row.update(_Q=None, _theta=None, _trials=trials)
        return row
    mc = monte_carlo_rate(stats, Q, theta, trials=trials, seed=seed, workers=workers)
    row.update(
        rate_analytic_bits=analytic / NATS_PER_BIT,
        rate_mc_bits=mc.bits,
        rate_mc_stderr=mc.stderr_bits,
        _Q=Q,
        _theta=theta,
        _trials=trials,
        _relevant_theta=ris_active(stats),
    )
    return row


def parse_sweep(text: str) -> tuple[str, list[float]]:
    """``"var=v1,v2,..."`` into the variable name and a strictly increasing value list."""
    if "=" not in text:
        raise ConfigError("--sweep", "expected <var>=<v1,v2,...>")
    var, _, rest = text.partition("=")
    var = var.strip()
    if var not in SWEEP_VARS:
        raise ConfigError("--sweep", f"unknown sweep variable {var!r}; expected one of {', '.join(SWEEP_VARS)}")
    try:
        values = [float(t) for t in rest.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError("--sweep", f"bad value list {rest!r}") from exc
    if not values:
        raise ConfigError("--sweep", "no values given")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError("--sweep", "values must be strictly increasing")
    if var == "ris_elements" and any(v != int(v) or v < 1 for v in values):
        raise ConfigError("--sweep", "ris_elements values must be positive integers")
    return var, values


def apply_sweep(cfg: RunConfig, var: str, value: float) -> RunConfig:
    sc = cfg.scenario
    if var == "power_dbm":
        sc = sc.replace(p_dbm=float(value))
    elif var == "ris_elements":
        sc = sc.replace(dims=SystemDims(sc.dims.n, int(value), sc.dims.k))
    elif var == "ris_position_m":
        sc = sc.replace(ris_pos=(float(value), sc.ris_pos[1]))
    else:
        raise ConfigError("--sweep", f"unknown sweep variable {var!r}")
    return cfg.replace(scenario=sc)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _sweep_value_str(var, value) -> str:
    return str(int(value)) if var == "ris_elements" else repr(float(value))


def run_sweep(
    cfg: RunConfig,
    var: str,
    values: list[float],
    schemes: list[str],
    seed: int,
    trials: int,
    out_dir: str | Path,
    workers: int = 1,
    timing: bool = True,
) -> Path:
    """Evaluate every (value, scheme) pair and write ``sweep.csv`` and ``sweep.json``.

    Points run concurrently on ``workers`` threads; rows are written in
    sweep order as soon as all earlier rows are done. A failing point is
    recorded in its ``status`` column and the sweep goes on.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(v, s) for v in values for s in schemes]

    def job(item):
        v, s = item
        t0 = time.perf_counter()
        try:
            row = evaluate_scheme(apply_sweep(cfg, var, v), s, seed, trials)
            row["status"] = "ok"
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            row = {"scheme": s, "status": f"failed: {type(exc).__name__}: {exc}"}
        row["wall_ms"] = int(round((time.perf_counter() - t0) * 1000)) if timing else 0
        row["sweep_var"], row["sweep_value"] = var, _sweep_value_str(var, v)
        return row

    csv_path = out / "sweep.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        fh.flush()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = pool.map(job, jobs)
                for row in rows:
                    writer.writerow([_fmt(row.get(c)) for c in CSV_HEADER])
                    fh.flush()
        else:
            for item in jobs:
                row = job(item)
                writer.writerow([_fmt(row.get(c)) for c in CSV_HEADER])
                fh.flush()

    label, unit = SWEEP_VARS[var]
    meta = {
        "csv": csv_path.name,
        "x": {"column": "sweep_value", "variable": var, "label": label, "unit": unit},
        "y": {
            "columns": ["rate_analytic_bits", "rate_mc_bits"],
            "error_column": "rate_mc_stderr",
            "unit": "bits per channel use",
        },
        "schemes": {s: SCHEME_LABELS[s] for s in schemes},
        "values": values,
        "seed": seed,
        "mc_trials": trials,
        "dims": {"n": cfg.scenario.dims.n, "l": cfg.scenario.dims.l, "k": cfg.scenario.dims.k},
    }
    (out / "sweep.json").write_text(json.dumps(meta, indent=2) + "\n")
    return csv_path


# --- cross-checks ---------------------------------------------------------


def _check(name, error, tol, detail=""):
    error = float(error)
    return {"name": name, "passed": bool(np.isfinite(error) and error <= tol), "error": error, "tolerance": tol, "detail": detail}


def _without(stats, *idx):
    return stats.with_links(**{f"link{i}": zero_link(stats.link(i)) for i in idx})


def _rayleigh(stats):
    return stats.with_links(**{f"link{i}": stats.link(i).replace(Hbar=np.zeros_like(stats.link(i).Hbar)) for i in range(3)})


def validation_report(cfg: RunConfig, seed: int, trials: int | None = None) -> list[dict]:
    """Run the cross-check suite on the configured scenario.

    Each entry holds ``name``, ``passed``, the measured ``error`` and its
    ``tolerance``. Checks that raise are reported as failed.
    """
    stats = run_statistics(cfg)
    d = stats.dims
    trials = cfg.scenario.mc_trials if trials is None else trials
    Q = TransmitCovariance.uniform(d.n, stats.power_budget)
    theta = initial_phases(d.l, seed)
    eff = apply_replacements(stats, Q, theta)
    report = []

    def guarded(name, fn):
        try:
            report.append(fn())
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            report.append({"name": name, "passed": False, "error": float("nan"), "tolerance": None, "detail": f"{type(exc).__name__}: {exc}"})

    def trace_norm():
        worst, where = 0.0, ""
        scatter = (d.n, d.n, d.l)
        for i, link in enumerate(stats.links):
            if i in cfg.zero_links:
                continue
            rx, tx = link.shape
            targets = link_trace_targets(rx, tx, link.kappa, link.gamma, scatter[i])
            got = (np.trace(link.R).real, np.trace(link.T).real, np.linalg.norm(link.Hbar) ** 2)
            for label, g, t in zip(("tr R", "tr T", "tr HH^H"), got, targets):
                err = abs(g - t) / t if t else abs(g)
                if err > worst:
                    worst, where = err, f"link{i} {label}"
        return _check("trace_normalization", worst, 1e-8, where)

    def hermitian():
        worst = 0.0
        for link in stats.links:
            for M in (link.R, link.T):
                check_hermitian(M, rtol=1e-12)
                w = np.linalg.eigvalsh(M)
                if w[-1] > 0:
                    worst = max(worst, -w[0] / w[-1])
        return _check("correlation_psd", worst, 1e-10)

    def fixed_point():
        res = asymptotic_rate(eff)
        sol = res.solution
        r = fixed_point_residual(sol.vector, eff)
        scale = np.maximum(np.abs(sol.vector), 1e-300)
        return _check("fixed_point_residual", float(np.max(np.abs(r) / scale)), 1e-9, f"{sol.iterations} iterations")

    def reduction(name, reduced, fn):
        def run():
            a = asymptotic_rate(reduced).nats
            b = fn(reduced).nats
            return _check(name, abs(a - b) / max(1.0, abs(a)), 1e-10)

        return run

    def dual_path():
        a = deterministic_rate(stats, Q, theta).nats
        b = asymptotic_rate(eff).nats
        return _check("dual_path", abs(a - b) / max(1.0, abs(a)), 1e-9)

    def gradient():
        sol = asymptotic_rate(eff).solution
        g = phase_gradient(stats, Q, theta, sol).dtheta
        # fourth-order stencil: physical-scale rates are large next to their
        # phase derivatives, so a wider step keeps rounding out of the check
        h = 1e-3
        fd = np.empty(d.l)

        def at(l, dt):
            t = theta.theta.copy()
            t[l] += dt
            return rate_at_scalars(stats, Q, t, sol)[0]

        for l in range(d.l):
            fd[l] = (8 * (at(l, h) - at(l, -h)) - (at(l, 2 * h) - at(l, -2 * h))) / (12 * h)
        scale = np.max(np.abs(fd))
        if scale == 0:
            return _check("phase_gradient_fd", np.max(np.abs(g)), 1e-12, "rate does not depend on the phases")
        return _check("phase_gradient_fd", np.max(np.abs(g - fd)) / scale, 1e-5)

    def stieltjes():
        # unit-gain, scatter-only links 1 and 2 with the configured correlations
        def unit(link):
            tx = link.T.shape[0]
            trT = np.trace(link.T).real
            T = link.T * (tx / trT) if trT > 0 else np.eye(tx)
            R = link.R if np.trace(link.R).real > 0 else np.eye(link.R.shape[0])
            return link.replace(R=R, T=T, Hbar=np.zeros_like(link.Hbar))

        s = stats.with_links(link1=unit(stats.link1), link2=unit(stats.link2))
        omega = 1.0
        de = stieltjes_product(s, omega)
        vals = np.empty(200)
        for t in range(200):
            _, H1, H2 = sample_channels(s, np.random.default_rng([seed, t]))
            B = H2 @ H1
            vals[t] = np.mean(1.0 / (np.linalg.eigvalsh(B @ B.conj().T) + omega))
        mc = float(np.mean(vals))
        return _check("stieltjes_mc", abs(de - mc) / mc, 0.02, f"omega=1, 200 trials, {de:.6g} vs {mc:.6g}")

    def mc_agreement():
        a = deterministic_rate(stats, Q, theta)
        mc = monte_carlo_rate(stats, Q, theta, trials=trials, seed=seed)
        allowed = max(0.02 * abs(mc.nats), 3 * mc.stderr_nats)
        return _check("analytic_vs_mc", abs(a.nats - mc.nats) / allowed if allowed else abs(a.nats - mc.nats), 1.0,
                      f"{a.bits:.6g} vs {mc.bits:.6g} +- {mc.stderr_bits:.3g} bits (error in units of the allowance)")

    guarded("trace_normalization", trace_norm)
    guarded("correlation_psd", hermitian)
    guarded("fixed_point_residual", fixed_point)
    guarded("reduction_no_ris", reduction("reduction_no_ris", _without(eff, 1, 2), rate_no_ris))
    guarded("reduction_no_direct", reduction("reduction_no_direct", _without(eff, 0), rate_no_direct))
    rayleigh_name = "reduction_rayleigh"
    guarded(rayleigh_name, reduction(rayleigh_name, _rayleigh(eff), rate_rayleigh))
    guarded("dual_path", dual_path)
    guarded("phase_gradient_fd", gradient)
    guarded("stieltjes_mc", stieltjes)
    guarded("analytic_vs_mc", mc_agreement)
    return report
