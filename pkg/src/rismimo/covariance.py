"""Transmit covariance design for fixed RIS phases."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import SystemStatistics
from .large_system import FixedPointNotConverged, FixedPointSolution, solve_fixed_point
from .linalg import hermitize
from .rate import TransmitCovariance, apply_replacements, assemble_F, rate_at_scalars

__all__ = ["WaterfillingResult", "waterfill", "CovarianceResult", "optimize_covariance"]

log = logging.getLogger(__name__)

ZERO_EIG = 1e-12  # relative to the largest eigenvalue


@dataclass
class WaterfillingResult:
    Q: TransmitCovariance
    mu: float
    eigenvalues: np.ndarray  # of F, descending
    powers: np.ndarray  # aligned with ``eigenvalues``
    active_count: int
    degenerate: bool = False


def _active_set(lam: np.ndarray, budget: float) -> tuple[float, int]:
    """Waterlevel for eigenvalues sorted in descending order (all > 0).

    With ``m`` active modes, ``1/mu = (budget + sum_{k<m} 1/lam_k) / m``; the
    consistent ``m`` is the largest one whose weakest mode still gets
    positive power.
    """
    inv = 1.0 / lam
    csum = np.cumsum(inv)
    best = 1
    for m in range(1, lam.size + 1):
        level = (budget + csum[m - 1]) / m
        if level - inv[m - 1] > 0:
            best = m
        else:
            break
    level = (budget + csum[best - 1]) / best
    return 1.0 / level, best


def waterfill(F, budget: float) -> WaterfillingResult:
    """Rate-maximizing ``Q`` for ``log det(I + F Q)`` subject to ``tr Q <= budget``.

    Power levels are ``(1/mu - 1/lambda_k)^+`` on the eigenvectors of ``F``.
    An ``F`` without positive eigenvalues returns uniform power and sets
    ``degenerate``.
    """
    if not budget > 0:
        raise ValueError("budget must be positive")
    F = hermitize(np.asarray(F, dtype=complex))
    n = F.shape[0]
    lam, U = np.linalg.eigh(F)
    order = np.argsort(lam)[::-1]
    lam, U = lam[order], U[:, order]
    if lam[0] <= 0:
        Q = TransmitCovariance(np.eye(n) * (budget / n), budget)
        return WaterfillingResult(Q, mu=np.inf, eigenvalues=lam, powers=np.full(n, budget / n), active_count=0, degenerate=True)
    usable = int(np.sum(lam > ZERO_EIG * lam[0]))
    mu, m = _active_set(lam[:usable], budget)
    powers = np.zeros(n)
    powers[:m] = 1.0 / mu - 1.0 / lam[:m]
    # absorb rounding so the budget is met exactly
    powers[:m] *= budget / powers[:m].sum()
    Q = hermitize((U * powers) @ U.conj().T)
    return WaterfillingResult(TransmitCovariance(Q, budget), mu=mu, eigenvalues=lam, powers=powers, active_count=m)


@dataclass
class CovarianceResult:
    Q: TransmitCovariance
    rates: list = field(default_factory=list)  # nats
    iterations: int = 0
    converged: bool = False
    solution: FixedPointSolution | None = None
    fp_iterations: int = 0

    @property
    def rate(self) -> float:
        # a non-converged run returns its best iterate
        return self.rates[-1] if self.converged else max(self.rates)


def optimize_covariance(
    stats: SystemStatistics,
    theta,
    Q_init=None,
    tol: float = 1e-5,
    max_iter: int = 200,
    init=None,
) -> CovarianceResult:
    """Alternate fixed-point solves and waterfilling on ``F`` for fixed phases.

    Stops when the rate changes by less than ``tol`` nats. If the cap is hit,
    the best iterate seen is returned with ``converged=False``.
    """
    budget = stats.power_budget
    n = stats.dims.n
    Q = Q_init if Q_init is not None else TransmitCovariance.uniform(n, budget)
    if not isinstance(Q, TransmitCovariance):
        Q = TransmitCovariance(Q, budget)

    sol = solve_fixed_point(apply_replacements(stats, Q, theta), init)
    if not sol.converged:
        raise FixedPointNotConverged("fixed point at the initial covariance did not converge")
    fp_its = sol.iterations
    rate, _ = rate_at_scalars(stats, Q, theta, sol)
    rates = [rate]
    best = (rate, Q, sol)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        F = assemble_F(stats, theta, sol).F
        Q = waterfill(F, budget).Q
        sol = solve_fixed_point(apply_replacements(stats, Q, theta), sol)
        fp_its += sol.iterations
        if not sol.converged:
            log.warning("fixed point did not converge at covariance iteration %d", it)
            break
        new_rate, _ = rate_at_scalars(stats, Q, theta, sol)
        rates.append(new_rate)
        if new_rate > best[0]:
            best = (new_rate, Q, sol)
        if abs(new_rate - rate) < tol:
            converged = True
            break
        rate = new_rate
    else:
        log.warning("covariance optimization hit the iteration cap (%d)", max_iter)
    if not converged:
        rate, Q, sol = best
    return CovarianceResult(Q=Q, rates=rates, iterations=it, converged=converged, solution=sol, fp_iterations=fp_its)
