"""Rate of a given (Q, Theta): large-system approximation and Monte-Carlo estimate."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSampler, SystemStatistics
from .large_system import (
    FixedPointSolution,
    SolverStepFailure,
    _require_converged,
    solve_fixed_point,
)
from .linalg import (
    LinAlgFailure,
    check_hermitian,
    hermitian_sqrt,
    hermitize,
    logdet_general,
    logdet_hpd,
    solve_general,
    solve_general_h,
)
from .results import RateResult

__all__ = [
    "PhaseVector",
    "TransmitCovariance",
    "FMatrices",
    "apply_replacements",
    "assemble_F",
    "deterministic_rate",
    "rate_at_scalars",
    "monte_carlo_rate",
    "instantaneous_rates",
]

MC_CHUNK = 64
TWO_PI = 2.0 * np.pi


class PhaseVector:
    """RIS phase shifts stored as angles in [0, 2pi); phasors have unit modulus by construction."""

    __slots__ = ("theta",)

    def __init__(self, theta):
        theta = np.mod(np.asarray(theta, dtype=float).ravel(), TWO_PI)
        if not np.all(np.isfinite(theta)):
            raise ValueError("phase angles must be finite")
        self.theta = theta

    @classmethod
    def zeros(cls, L: int) -> "PhaseVector":
        return cls(np.zeros(L))

    @classmethod
    def random(cls, L: int, rng: np.random.Generator) -> "PhaseVector":
        return cls(rng.uniform(0.0, TWO_PI, size=L))

    @classmethod
    def from_phasors(cls, v) -> "PhaseVector":
        return cls(np.angle(np.asarray(v)))

    @property
    def phasors(self) -> np.ndarray:
        return np.exp(1j * self.theta)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.phasors)

    def __len__(self):
        return self.theta.size

    def __repr__(self):
        return f"PhaseVector({np.array2string(self.theta, precision=4)})"


def _phases(theta) -> PhaseVector:
    return theta if isinstance(theta, PhaseVector) else PhaseVector(theta)


@dataclass(frozen=True, eq=False)
class TransmitCovariance:
    Q: np.ndarray
    budget: float

    def __post_init__(self):
        Q = check_hermitian(np.asarray(self.Q, dtype=complex), rtol=1e-10)
        w = np.linalg.eigvalsh(hermitize(Q))
        if w.size and w[0] < -1e-10 * max(abs(w[-1]), 1e-300):
            raise ValueError("transmit covariance must be positive semidefinite")
        tr = float(np.real(np.trace(Q)))
        if tr > self.budget * (1 + 1e-10):
            raise ValueError(f"tr Q = {tr:.6g} exceeds the budget {self.budget:.6g}")
        object.__setattr__(self, "Q", hermitize(Q))

    @classmethod
    def uniform(cls, n: int, budget: float) -> "TransmitCovariance":
        return cls(np.eye(n) * (budget / n), budget)


def _cov(Q) -> np.ndarray:
    return Q.Q if isinstance(Q, TransmitCovariance) else np.asarray(Q, dtype=complex)


def apply_replacements(stats: SystemStatistics, Q, theta) -> SystemStatistics:
    """Fold ``Q`` and ``Theta`` into the link statistics.

    ``T0 -> Q^{1/2} T0 Q^{1/2}``, ``Hbar0 -> Hbar0 Q^{1/2}`` (same for link 1),
    ``T2 -> Theta^H T2 Theta``, ``Hbar2 -> Hbar2 Theta``. ``stats`` is not
    modified.
    """
    Qh = hermitian_sqrt(_cov(Q), rtol=1e-10)
    v = _phases(theta).phasors
    l0, l1, l2 = stats.links
    return stats.with_links(
        link0=l0.replace(T=hermitize(Qh @ l0.T @ Qh), Hbar=l0.Hbar @ Qh),
        link1=l1.replace(T=hermitize(Qh @ l1.T @ Qh), Hbar=l1.Hbar @ Qh),
        link2=l2.replace(T=v.conj()[:, None] * l2.T * v[None, :], Hbar=l2.Hbar * v[None, :]),
    )


@dataclass
class FMatrices:
    """``F`` (N x N) and the factors it is built from, for a fixed Theta and scalars.

    ``A = Hbar2^H Phi2^{-1} Hbar2 + te2 T2`` on the original (unrotated)
    link-2 statistics; ``ThA = Theta^H A Theta``; ``Psi`` is the
    ``K x N`` factor appearing in the last term of ``F``.
    """

    F: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    Phi2: np.ndarray
    A: np.ndarray
    ThA: np.ndarray
    Psi: np.ndarray
    G0: np.ndarray  # (I + e0 F2 R0)^{-1}


def assemble_F(stats: SystemStatistics, theta, x) -> FMatrices:
    """Build ``F``, ``F1``, ``F2`` and ``Phi2`` at the scalars ``x``.

    ``F`` is Hermitian in exact arithmetic; the assembled matrix is checked
    to that (relative 1e-9) and then symmetrized.
    """
    e0, e1, e2, te0, te1, te2 = (max(float(s), 0.0) for s in getattr(x, "vector", x))
    d = stats.dims
    K, L = d.k, d.l
    v = _phases(theta).phasors
    R0, T0, H0 = stats.link0.R, stats.link0.T, stats.link0.Hbar
    R1, T1, H1 = stats.link1.R, stats.link1.T, stats.link1.Hbar
    R2, T2, H2 = stats.link2.R, stats.link2.T, stats.link2.Hbar

    Phi2 = stats.sigma2 * np.eye(K) + e2 * R2
    Phi2_H2 = solve_general(Phi2, H2)
    A = H2.conj().T @ Phi2_H2 + te2 * T2
    ThA = v.conj()[:, None] * A * v[None, :]
    F1 = np.eye(L) + e1 * ThA @ R1
    Phi2_H2Th = Phi2_H2 * v[None, :]  # Phi2^{-1} Hbar2 Theta
    try:
        F1inv_ThH2h_Phi2inv = solve_general(F1, Phi2_H2Th.conj().T)
        F1h_H1 = solve_general_h(F1, H1)
    except LinAlgFailure as exc:
        raise SolverStepFailure(f"F1: {exc}") from exc
    F2 = solve_general(Phi2, np.eye(K)) - e1 * Phi2_H2Th @ R1 @ F1inv_ThH2h_Phi2inv
    # Psi^H = Hbar0^H F2 + Hbar1^H F1^{-1} Theta^H Hbar2^H Phi2^{-1}
    Psi = F2 @ H0 + Phi2_H2Th @ F1h_H1
    try:
        G0 = solve_general(np.eye(K) + e0 * F2 @ R0, np.eye(K))
    except LinAlgFailure as exc:
        raise SolverStepFailure(f"I + e0 F2 R0: {exc}") from exc
    F = (
        H1.conj().T @ solve_general(F1, ThA @ H1)
        + H0.conj().T @ F2 @ H0
        + H1.conj().T @ F1inv_ThH2h_Phi2inv @ H0
        + H0.conj().T @ Phi2_H2Th @ F1h_H1
        + te0 * T0
        + te1 * T1
        - Psi.conj().T @ (e0 * R0 @ G0) @ Psi
    )
    check_hermitian(F, rtol=1e-9)
    return FMatrices(F=hermitize(F), F1=F1, F2=F2, Phi2=Phi2, A=A, ThA=ThA, Psi=Psi, G0=G0)


def rate_at_scalars(stats: SystemStatistics, Q, theta, x, fm: FMatrices | None = None) -> tuple[float, dict]:
    """Rate in the (Q, Theta) form at fixed scalars ``x`` (no fixed-point solve)."""
    xv = getattr(x, "vector", x)
    e0, e1, e2, te0, te1, te2 = (max(float(s), 0.0) for s in xv)
    d = stats.dims
    if fm is None:
        fm = assemble_F(stats, theta, xv)
    Qm = _cov(Q)
    terms = {
        "logdet_rx": logdet_hpd(np.eye(d.k) + (e2 / stats.sigma2) * stats.link2.R, rtol=1e-12),
        "logdet_ris": logdet_general(fm.F1),
        "logdet_direct": logdet_general(np.eye(d.k) + e0 * fm.F2 @ stats.link0.R),
        "logdet_tx": logdet_general(np.eye(d.n) + fm.F @ Qm),
        "e0te0": -d.n * e0 * te0,
        "e1te1": -d.n * e1 * te1,
        "e2te2": -d.l * e2 * te2,
    }
    return float(sum(terms.values())), terms


def deterministic_rate(stats: SystemStatistics, Q, theta, init=None, **solve_kw) -> RateResult:
    """Large-system rate of ``(Q, Theta)``, in nats.

    The scalars are solved on the replaced statistics; the rate itself is
    evaluated through ``F`` on the original ones.
    """
    sol = solve_fixed_point(apply_replacements(stats, Q, theta), init, **solve_kw)
    _require_converged(sol)
    value, terms = rate_at_scalars(stats, Q, theta, sol)
    return RateResult(nats=value, provenance="analytic", terms=terms, solution=sol)


def _chunk_rates(sampler, stats, Qh, v, seed, chunk_index, size) -> np.ndarray:
    rng = np.random.default_rng([seed, chunk_index])
    H0, H1, H2 = sampler.draw(rng, size)
    H = H0 + (H2 * v[None, None, :]) @ H1
    G = H @ Qh
    M = np.eye(stats.dims.k) + (G @ np.conj(np.swapaxes(G, -1, -2))) / stats.sigma2
    sign, logabs = np.linalg.slogdet(M)
    return logabs


def instantaneous_rates(stats: SystemStatistics, Q, theta, trials: int, seed: int, workers: int = 1) -> np.ndarray:
    """Per-realization ``log det(I + H Q H^H / sigma2)`` (nats) for ``trials`` draws.

    Trials are grouped in fixed chunks of 64, chunk ``c`` drawing from the
    stream seeded by ``(seed, c)``; the output does not depend on ``workers``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sampler = ChannelSampler(stats)
    Qh = hermitian_sqrt(_cov(Q), rtol=1e-10)
    v = _phases(theta).phasors
    sizes = [min(MC_CHUNK, trials - s) for s in range(0, trials, MC_CHUNK)]

    def job(c):
        return _chunk_rates(sampler, stats, Qh, v, seed, c, sizes[c])

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(c) for c in range(len(sizes))]
    return np.concatenate(parts)


def monte_carlo_rate(stats: SystemStatistics, Q, theta, trials: int = 2000, seed: int = 0, workers: int = 1) -> RateResult:
    """Monte-Carlo ergodic rate of ``H0 + H2 Theta H1`` (nats) with its standard error."""
    r = instantaneous_rates(stats, Q, theta, trials, seed, workers)
    mean = math.fsum(r) / r.size
    if r.size > 1:
        var = math.fsum((r - mean) ** 2) / (r.size - 1)
        stderr = math.sqrt(var / r.size)
    else:
        stderr = 0.0
    return RateResult(nats=mean, provenance="monte_carlo", stderr_nats=stderr, trials=int(r.size))
