"""Joint design of the transmit covariance and the RIS phases."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSampler, SystemStatistics
from .covariance import optimize_covariance, waterfill
from .large_system import FixedPointNotConverged, solve_fixed_point
from .phase import channel_gradient, optimize_phases, projected_step
from .rate import PhaseVector, TransmitCovariance, apply_replacements, rate_at_scalars

__all__ = ["JointResult", "optimize_joint", "initial_phases", "optimize_instantaneous", "perfect_csit_rates"]

log = logging.getLogger(__name__)


@dataclass
class JointResult:
    Q: TransmitCovariance
    theta: PhaseVector
    rates: list = field(default_factory=list)  # nats; entry 0 is the starting point
    outer_iterations: int = 0
    converged: bool = False
    fp_iterations: int = 0
    restart: int = 0
    restart_rates: list = field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.rates[-1]

    @property
    def rate_bits(self) -> float:
        return self.rate / np.log(2.0)


def initial_phases(L: int, seed: int, restart: int = 0) -> PhaseVector:
    """Uniform random starting phases; restart ``r`` uses stream ``(seed, r)``."""
    return PhaseVector.random(L, np.random.default_rng([seed, restart]))


def _run(stats, theta0, tol, max_outer, phase_kw, cov_kw, restart) -> JointResult:
    Q = TransmitCovariance.uniform(stats.dims.n, stats.power_budget)
    theta = theta0
    sol = solve_fixed_point(apply_replacements(stats, Q, theta))
    if not sol.converged:
        raise FixedPointNotConverged("fixed point at the starting point did not converge")
    fp_its = sol.iterations
    rate, _ = rate_at_scalars(stats, Q, theta, sol)
    rates = [rate]
    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        ph = optimize_phases(stats, Q, theta, init=sol, tol=tol, **phase_kw)
        cv = optimize_covariance(stats, ph.theta, Q, init=ph.solution, tol=tol, **cov_kw)
        fp_its += ph.fp_iterations + cv.fp_iterations
        theta, Q, sol = ph.theta, cv.Q, cv.solution
        new_rate = cv.rate
        rates.append(new_rate)
        if abs(new_rate - rate) < tol:
            converged = True
            break
        rate = new_rate
    else:
        log.warning("alternating optimization hit the outer cap (%d)", max_outer)
    return JointResult(Q=Q, theta=theta, rates=rates, outer_iterations=it, converged=converged, fp_iterations=fp_its, restart=restart)


def optimize_joint(
    stats: SystemStatistics,
    seed: int = 0,
    tol: float = 1e-5,
    max_outer: int = 100,
    restarts: int = 3,
    workers: int = 1,
    phase_kw: dict | None = None,
    cov_kw: dict | None = None,
) -> JointResult:
    """Alternate phase ascent (fixed ``Q``) and covariance waterfilling (fixed phases).

    Starts from uniform power and random phases. With ``restarts > 1`` the
    loop is run from several random phase draws and the best result is
    kept; ties go to the lowest restart index, so the output depends only on
    ``seed``.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    phase_kw = dict(phase_kw or {})
    cov_kw = dict(cov_kw or {})
    L = stats.dims.l

    def job(r):
        return _run(stats, initial_phases(L, seed, r), tol, max_outer, phase_kw, cov_kw, r)

    if workers > 1 and restarts > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(restarts)))
    else:
        results = [job(r) for r in range(restarts)]
    best = max(results, key=lambda res: (res.rate, -res.restart))
    best.restart_rates = [res.rate for res in results]
    return best


def _channel_rate(H0, H1, H2, sigma2, Q, v) -> float:
    H = H0 + (H2 * v) @ H1
    M = np.eye(H.shape[0]) + H @ Q @ H.conj().T / sigma2
    return float(np.linalg.slogdet(M)[1])


def optimize_instantaneous(
    H0, H1, H2, sigma2: float, budget: float, theta0, tol: float = 1e-5, max_outer: int = 100,
    step: float = 0.1, max_iter: int = 500, max_halvings: int = 20,
) -> tuple[float, np.ndarray, PhaseVector]:
    """Maximize ``log det(I + H Q H^H / sigma2)`` for one known realization.

    Same alternation as :func:`optimize_joint`, with the channel itself in
    place of the statistics: phase ascent on the exact gradient, then
    waterfilling on ``H^H H / sigma2``. Returns ``(rate_nats, Q, theta)``.
    """
    N = H0.shape[1]
    Q = np.eye(N) * (budget / N)
    th = theta0 if isinstance(theta0, PhaseVector) else PhaseVector(theta0)
    rate = _channel_rate(H0, H1, H2, sigma2, Q, th.phasors)
    for _ in range(max_outer):
        start = rate
        for _ in range(max_iter):
            p = channel_gradient(H0, H1, H2, sigma2, Q, th.phasors)
            scale = np.max(np.abs(p))
            if scale == 0:
                break
            delta, moved = step, False
            for _ in range(max_halvings + 1):
                cand = projected_step(th, np.conj(p) / scale, delta)
                r = _channel_rate(H0, H1, H2, sigma2, Q, cand.phasors)
                if r >= rate:
                    moved = True
                    break
                delta *= 0.5
            if not moved:
                break
            change, th, rate = r - rate, cand, r
            if change < tol:
                break
        H = H0 + (H2 * th.phasors) @ H1
        Qn = waterfill(H.conj().T @ H / sigma2, budget).Q.Q
        r = _channel_rate(H0, H1, H2, sigma2, Qn, th.phasors)
        if r >= rate:
            Q, rate = Qn, r
        if abs(rate - start) < tol:
            break
    return rate, Q, th


def perfect_csit_rates(stats: SystemStatistics, trials: int, seed: int, tol: float = 1e-5, workers: int = 1) -> np.ndarray:
    """Per-realization optimized rates (nats) when each channel draw is known.

    Trial ``t`` draws its channel and starting phases from the stream
    ``(seed, t)``, so the output does not depend on ``workers``.
    """
    sampler = ChannelSampler(stats)
    L = stats.dims.l

    def job(t):
        rng = np.random.default_rng([seed, t])
        H0, H1, H2 = sampler.draw(rng)
        theta0 = PhaseVector.random(L, rng)
        return optimize_instantaneous(H0, H1, H2, stats.sigma2, stats.power_budget, theta0, tol=tol)[0]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(job, range(trials))))
    return np.array([job(t) for t in range(trials)])
