"""RIS phase optimization for a fixed transmit covariance.

The derivative of the rate with respect to the phasor ``v_l = exp(j theta_l)``
is taken with ``conj(v_l)`` replaced by ``1 / v_l`` and with the fixed-point
scalars held constant. On the unit circle this gives
``dR/dtheta_l = Re(1j * v_l * p_l)``, and ``conj(p_l) = 1j * v_l * dR/dtheta_l``
is the ascent direction fed to the projected step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import SystemStatistics
from .large_system import FixedPointNotConverged, FixedPointSolution, solve_fixed_point
from .rate import (
    PhaseVector,
    _cov,
    _phases,
    apply_replacements,
    assemble_F,
    rate_at_scalars,
)

__all__ = [
    "PhaseGradient",
    "PhaseResult",
    "phase_gradient",
    "phase_gradient_literal",
    "phase_gradient_no_direct",
    "phase_gradient_perfect_csit",
    "channel_gradient",
    "theta_derivative",
    "projected_step",
    "optimize_phases",
]

log = logging.getLogger(__name__)

# |dR/dtheta| below this (relative to max(1, |R|)) is treated as roundoff
GRADIENT_FLOOR = 1e-13


@dataclass
class PhaseGradient:
    p: np.ndarray  # dR/dv_l, complex, length L
    at: PhaseVector

    @property
    def dtheta(self) -> np.ndarray:
        return theta_derivative(self.p, self.at)

    @property
    def ascent(self) -> np.ndarray:
        return np.conj(self.p)


def theta_derivative(p, theta) -> np.ndarray:
    """Map ``dR/dv_l`` to ``dR/dtheta_l`` through ``dv/dtheta = j v``."""
    return np.real(1j * _phases(theta).phasors * np.asarray(p))


def _scalars(stats, Q, theta, solution):
    if solution is None:
        solution = solve_fixed_point(apply_replacements(stats, Q, theta))
    if isinstance(solution, FixedPointSolution) and not solution.converged:
        raise FixedPointNotConverged("phase gradient needs a converged fixed point")
    return np.maximum(getattr(solution, "vector", solution), 0.0)


def phase_gradient(stats: SystemStatistics, Q, theta, solution=None) -> PhaseGradient:
    """``dR/dv_l`` for all ``l`` at once, by reverse-mode accumulation.

    Every matrix below has an adjoint ``Xb`` with ``dR = tr(Xb dX)``; the
    gradient is ``Thb[l, l] - v_l**-2 * Thtb[l, l]`` where ``Thb`` and
    ``Thtb`` are the adjoints of ``Theta`` and of ``Theta^H`` (treated as an
    independent matrix). Agrees with :func:`phase_gradient_literal`.
    """
    th = _phases(theta)
    x = _scalars(stats, Q, th, solution)
    e0, e1, e2, te0, te1, te2 = x
    Qm = _cov(Q)
    fm = assemble_F(stats, th, x)
    v = th.phasors
    N = stats.dims.n
    R0, H0 = stats.link0.R, stats.link0.Hbar
    R1, H1 = stats.link1.R, stats.link1.Hbar
    H2 = stats.link2.Hbar

    Th, Tht = np.diag(v), np.diag(v.conj())
    A = fm.A
    F1i = np.linalg.inv(fm.F1)
    F1hi = F1i.conj().T  # F1^{-H}
    P2 = np.linalg.inv(fm.Phi2)
    E = P2 @ H2  # K x L
    D = E.conj().T  # L x K
    G0 = fm.G0
    M0 = e0 * R0 @ G0
    Psi = fm.Psi  # K x N
    Psih = Psi.conj().T  # N x K
    Fb = Qm @ np.linalg.inv(np.eye(N) + fm.F @ Qm)

    X1 = H1 @ Fb @ H1.conj().T  # L x L
    X0 = H0 @ Fb @ H0.conj().T  # K x K
    Y = H0 @ Fb @ H1.conj().T  # K x L
    Z = H1 @ Fb @ H0.conj().T  # L x K
    Psihb = -M0 @ Psi @ Fb  # adjoint of Psi^H, K x N
    Psib = -Fb @ Psih @ M0  # adjoint of Psi, N x K
    M0b = -Psi @ Fb @ Psih  # K x K

    F2b = M0 + X0 + Psihb @ H0.conj().T + H0 @ Psib - e0**2 * R0 @ G0 @ M0b @ R0 @ G0
    S = D @ F2b @ E  # L x L

    ThA = Tht @ A @ Th
    F1ib = ThA @ X1 + Tht @ D @ Y + Tht @ D @ Psihb @ H1.conj().T - e1 * Tht @ S @ Th @ R1
    F1hib = Z @ E @ Th + H1 @ Psib @ E @ Th
    F1b = F1i - F1i @ F1ib @ F1i
    F1hb = -F1hi @ F1hib @ F1hi

    Thb = (
        X1 @ F1i @ Tht @ A
        + F1hi @ Z @ E
        + F1hi @ H1 @ Psib @ E
        - e1 * R1 @ F1i @ Tht @ S
        + e1 * R1 @ F1b @ Tht @ A
        + e1 * F1hb @ R1 @ Tht @ A
    )
    Thtb = (
        A @ Th @ X1 @ F1i
        + D @ Y @ F1i
        + D @ Psihb @ H1.conj().T @ F1i
        - e1 * S @ Th @ R1 @ F1i
        + e1 * A @ Th @ R1 @ F1b
        + e1 * A @ Th @ F1hb @ R1
    )
    p = np.diag(Thb) - v**-2 * np.diag(Thtb)
    return PhaseGradient(p=np.asarray(p), at=th)


def phase_gradient_literal(stats: SystemStatistics, Q, theta, solution=None) -> PhaseGradient:
    """Element-by-element transcription of the closed-form derivative.

    ``O(L^4)``; kept as a reference for :func:`phase_gradient`.
    """
    th = _phases(theta)
    x = _scalars(stats, Q, th, solution)
    e0, e1, e2, te0, te1, te2 = x
    Qm = _cov(Q)
    fm = assemble_F(stats, th, x)
    v = th.phasors
    L, N = stats.dims.l, stats.dims.n
    R0, H0 = stats.link0.R, stats.link0.Hbar
    R1, H1 = stats.link1.R, stats.link1.Hbar
    H2 = stats.link2.Hbar
    H0h, H1h, H2h = H0.conj().T, H1.conj().T, H2.conj().T

    Th, Tht = np.diag(v), np.diag(v.conj())
    A = fm.A  # Hbar2^H Phi2^{-1} Hbar2 + te2 T2
    F1i = np.linalg.inv(fm.F1)
    F1hi = F1i.conj().T
    F2 = fm.F2
    P2 = np.linalg.inv(fm.Phi2)
    G0 = fm.G0  # (I + e0 F2 R0)^{-1}
    QG = Qm @ np.linalg.inv(np.eye(N) + fm.F @ Qm)
    left = H0h @ F2 + H1h @ F1i @ Tht @ H2h @ P2  # N x K
    right = F2 @ H0 + P2 @ H2 @ Th @ F1hi @ H1  # K x N

    p = np.zeros(L, dtype=complex)
    for l in range(L):
        Ell = np.zeros((L, L))
        Ell[l, l] = 1.0
        w = v[l] ** -2
        F3 = Tht @ A @ Ell - w * Ell @ A @ Th
        F4 = e1 * P2 @ H2 @ (
            w * Th @ R1 @ F1i @ Ell - Ell @ R1 @ F1i @ Tht + e1 * Th @ R1 @ F1i @ F3 @ R1 @ F1i @ Tht
        ) @ H2h @ P2
        dF = (
            -e1 * H1h @ F1i @ F3 @ R1 @ F1i @ Tht @ A @ Th @ H1
            + H1h @ F1i @ F3 @ H1
            + H0h @ F4 @ H0
            - e1 * H1h @ F1i @ F3 @ R1 @ F1i @ Tht @ H2h @ P2 @ H0
            - w * H1h @ F1i @ Ell @ H2h @ P2 @ H0
            - e1 * H0h @ P2 @ H2 @ Th @ F1hi @ R1 @ F3 @ F1hi @ H1
            + H0h @ P2 @ H2 @ Ell @ F1hi @ H1
            - (H0h @ F4 - e1 * H1h @ F1i @ F3 @ R1 @ F1i @ Tht @ H2h @ P2 - w * H1h @ F1i @ Ell @ H2h @ P2)
            @ (e0 * R0 @ G0) @ right
            - left @ (e0 * R0 @ G0)
            @ (F4 @ H0 - e1 * P2 @ H2 @ Th @ F1hi @ R1 @ F3 @ F1hi @ H1 + P2 @ H2 @ Ell @ F1hi @ H1)
            + e0**2 * left @ R0 @ G0 @ F4 @ R0 @ G0 @ right
        )
        p[l] = (
            e1 * np.trace(F1i @ F3 @ R1)
            + e0 * np.trace(G0 @ F4 @ R0)
            + np.trace(QG @ dF)
        )
    return PhaseGradient(p=p, at=th)


def phase_gradient_no_direct(stats: SystemStatistics, Q, theta, solution=None) -> PhaseGradient:
    """Reduced derivative for statistics without a direct link."""
    th = _phases(theta)
    x = _scalars(stats, Q, th, solution)
    e1 = x[1]
    Qm = _cov(Q)
    fm = assemble_F(stats, th, x)
    v = th.phasors
    L, N = stats.dims.l, stats.dims.n
    R1, H1 = stats.link1.R, stats.link1.Hbar
    H1h = H1.conj().T
    Th, Tht = np.diag(v), np.diag(v.conj())
    A = fm.A
    F1i = np.linalg.inv(fm.F1)
    QG = Qm @ np.linalg.inv(np.eye(N) + fm.F @ Qm)
    p = np.zeros(L, dtype=complex)
    for l in range(L):
        Ell = np.zeros((L, L))
        Ell[l, l] = 1.0
        F3 = Tht @ A @ Ell - v[l] ** -2 * Ell @ A @ Th
        inner = -e1 * H1h @ F1i @ F3 @ R1 @ F1i @ Tht @ A @ Th @ H1 + H1h @ F1i @ F3 @ H1
        p[l] = np.trace(QG @ inner) + e1 * np.trace(F1i @ F3 @ R1)
    return PhaseGradient(p=p, at=th)


def channel_gradient(H0, H1, H2, sigma2: float, Q, v) -> np.ndarray:
    """``dR/dv_l`` of ``log det(I + H Q H^H / sigma2)`` with ``H = H0 + H2 diag(v) H1``."""
    Qm = _cov(Q)
    N = Qm.shape[0]
    H = H0 + (H2 * v) @ H1
    F = H.conj().T @ H / sigma2
    QG = Qm @ np.linalg.inv(np.eye(N) + F @ Qm)
    # tr(QG (H^H H2 E_ll H1 - v_l^-2 H1^H E_ll H2^H H)) / sigma2 for every l
    a = np.einsum("ij,li,jl->l", QG, H1, H.conj().T @ H2, optimize=True)
    b = np.einsum("ij,lj,li->l", QG, H1.conj(), H2.conj().T @ H, optimize=True)
    return (a - v**-2 * b) / sigma2


def phase_gradient_perfect_csit(stats: SystemStatistics, Q, theta) -> PhaseGradient:
    """Gradient when the channel equals its LoS part (every Rician factor infinite)."""
    th = _phases(theta)
    p = channel_gradient(stats.link0.Hbar, stats.link1.Hbar, stats.link2.Hbar, stats.sigma2, Q, th.phasors)
    return PhaseGradient(p=p, at=th)


def projected_step(theta, direction, step: float) -> PhaseVector:
    """Move each phasor along ``direction`` and project back to the unit circle.

    New phasor ``exp(j arg(v_l + step * direction_l))``; where the sum is
    exactly zero the previous angle is kept.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    th = _phases(theta)
    z = th.phasors + step * np.asarray(direction)
    new = np.where(z == 0, th.theta, np.angle(z))
    return PhaseVector(new)


@dataclass
class PhaseResult:
    theta: PhaseVector
    rates: list = field(default_factory=list)  # nats, one per accepted iterate
    iterations: int = 0
    converged: bool = False
    solution: FixedPointSolution | None = None
    fp_iterations: int = 0

    @property
    def rate(self) -> float:
        return self.rates[-1]


def optimize_phases(
    stats: SystemStatistics,
    Q,
    theta_init,
    step: float = 0.1,
    tol: float = 1e-5,
    max_iter: int = 500,
    max_halvings: int = 20,
    init=None,
) -> PhaseResult:
    """Projected gradient ascent on the RIS phases for fixed ``Q``.

    The ascent direction ``conj(p)`` is scaled to unit max-modulus before
    the step. A trial step that lowers the rate is retried with half the step size,
    up to ``max_halvings`` times, so the rate trace is nondecreasing. Stops
    when the rate changes by less than ``tol`` (nats), when no trial step
    improves the rate, or when the gradient is at roundoff level.
    """
    th = _phases(theta_init)
    sol = solve_fixed_point(apply_replacements(stats, Q, th), init)
    if not sol.converged:
        raise FixedPointNotConverged("fixed point at the initial phases did not converge")
    fp_its = sol.iterations
    rate, _ = rate_at_scalars(stats, Q, th, sol)
    rates = [rate]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = phase_gradient(stats, Q, th, sol)
        if np.max(np.abs(grad.p)) <= GRADIENT_FLOOR * max(1.0, abs(rate)):
            converged = True
            break
        # unit max-modulus direction, so ``step`` is roughly the largest
        # per-element rotation in radians whatever the gradient scale
        direction = grad.ascent / np.max(np.abs(grad.p))
        delta = step
        accepted = None
        for _ in range(max_halvings + 1):
            cand = projected_step(th, direction, delta)
            cand_sol = solve_fixed_point(apply_replacements(stats, Q, cand), sol)
            fp_its += cand_sol.iterations
            if cand_sol.converged:
                cand_rate, _ = rate_at_scalars(stats, Q, cand, cand_sol)
                if cand_rate >= rate:
                    accepted = (cand, cand_sol, cand_rate)
                    break
            delta *= 0.5
        if accepted is None:
            converged = True
            break
        th, sol, new_rate = accepted
        change = new_rate - rate
        rate = new_rate
        rates.append(rate)
        if abs(change) < tol:
            converged = True
            break
    else:
        log.warning("phase optimization hit the iteration cap (%d)", max_iter)
    return PhaseResult(theta=th, rates=rates, iterations=it, converged=converged, solution=sol, fp_iterations=fp_its)
