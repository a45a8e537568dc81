"""Large-system (deterministic-equivalent) rate of the RIS-assisted channel.

The statistics passed in here are *effective* statistics: the transmit
covariance and the RIS phases have already been folded into ``T_i`` and
``Hbar_i`` (see :func:`rismimo.rate.apply_replacements`), so the rate
evaluated is that of ``H0 + H2 H1`` with identity input covariance.

The general result couples six scalars ``(e0, e1, e2, te0, te1, te2)``
through the matrices built by :func:`assemble_auxiliary`. The special cases
(no RIS, no direct link, all-Rayleigh) have their own reduced equation
systems, implemented separately so they can serve as cross-checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .channel import SystemStatistics
from .linalg import (
    LinAlgFailure,
    hermitian_inv_sqrt,
    hermitian_sqrt,
    hermitize,
    logdet_general,
    logdet_hpd,
    solve_general,
    solve_general_h,
)
from .results import RateResult

__all__ = [
    "FixedPointSolution",
    "AuxiliaryMatrices",
    "FixedPointNotConverged",
    "SolverStepFailure",
    "damped_fixed_point",
    "assemble_auxiliary",
    "fixed_point_rhs",
    "fixed_point_residual",
    "solve_fixed_point",
    "asymptotic_rate",
    "rate_from_scalars",
    "rate_no_ris",
    "rate_no_direct",
    "rate_rayleigh",
    "stieltjes_product",
]

log = logging.getLogger(__name__)

SCALAR_NAMES = ("e0", "e1", "e2", "te0", "te1", "te2")

DEFAULT_TOL = 1e-10
DEFAULT_STEP_TOL = 1e-12
DEFAULT_MAX_ITER = 5000
DEFAULT_DAMPING = 0.5
MIN_DAMPING = 1.0 / 64.0
POLISH_SWITCH = 1e-2


class FixedPointNotConverged(RuntimeError):
    pass


class SolverStepFailure(LinAlgFailure):
    """A matrix needed by the fixed-point equations is singular."""


@dataclass
class FixedPointSolution:
    e0: float
    e1: float
    e2: float
    te0: float
    te1: float
    te2: float
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    residual_trace: list = field(default_factory=list, repr=False)

    @classmethod
    def from_vector(cls, x, **kw) -> "FixedPointSolution":
        return cls(*(float(v) for v in x), **kw)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.e0, self.e1, self.e2, self.te0, self.te1, self.te2])


@dataclass
class AuxiliaryMatrices:
    Phi0: np.ndarray
    Phi1: np.ndarray
    Phi2: np.ndarray
    Psi0: np.ndarray
    Psi1: np.ndarray
    Psi2: np.ndarray
    Xi0: np.ndarray
    Omega: np.ndarray
    Pi01: np.ndarray
    Pi11: np.ndarray
    Pi12: np.ndarray
    Pi21: np.ndarray
    Pi31: np.ndarray
    Pi32: np.ndarray
    Pi33: np.ndarray


def _tr(A, B) -> float:
    """Real part of tr(A @ B) without forming the product."""
    return float(np.real(np.sum(A * B.T)))


def _step(what, fn, *args):
    try:
        return fn(*args)
    except (LinAlgFailure, np.linalg.LinAlgError) as exc:
        raise SolverStepFailure(f"{what}: {exc}") from exc


def _relative_residual(x, r) -> np.ndarray:
    scale = np.maximum(np.abs(x), np.abs(r))
    out = np.zeros_like(scale)
    nz = scale > 0
    out[nz] = np.abs(r - x)[nz] / scale[nz]
    return out


def damped_fixed_point(
    rhs,
    x0,
    *,
    damping: float = DEFAULT_DAMPING,
    tol: float = DEFAULT_TOL,
    step_tol: float = DEFAULT_STEP_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    polish: bool = True,
):
    """Iterate ``x <- (1 - a) x + a rhs(x)`` on nonnegative scalars.

    Residuals and updates are measured relative to the size of each scalar,
    since the scalars of a physical scenario span many orders of magnitude.
    ``a`` is halved (down to 1/64) whenever the residual grows. A component
    whose right-hand side is exactly zero is set to zero outright.

    The coupled systems here have Jacobian eigenvalues close to +1 and -1 at
    once, which no damping factor can fix, so once the residual is below
    ``POLISH_SWITCH`` the root of ``rhs(x) - x`` is polished with MINPACK's
    hybrid Newton method in relatively scaled coordinates. The polished
    point is accepted only if it meets ``tol``; otherwise plain damped
    iteration continues. Right-hand-side evaluations made by the polish
    count toward the iteration total.

    Returns ``(x, iterations, residual, converged, trace)``.
    """
    x = np.maximum(np.asarray(x0, dtype=float), 0.0)
    alpha = damping
    prev = np.inf
    trace = []
    it = 0
    while it < max_iter:
        it += 1
        r = np.maximum(np.asarray(rhs(x), dtype=float), 0.0)
        if not np.all(np.isfinite(r)):
            raise SolverStepFailure("fixed-point right-hand side is not finite")
        res = float(np.max(_relative_residual(x, r)))
        trace.append(res)
        if res < tol:
            return r, it, res, True, trace
        if polish and res < POLISH_SWITCH:
            polish = False
            y, used, y_res = _newton_polish(rhs, r, max_iter - it)
            it += used
            if y_res < tol:
                trace.append(y_res)
                return y, it, y_res, True, trace
            if y_res < res:
                x, prev = y, y_res
                continue
        if res > prev:
            alpha = max(alpha / 2.0, MIN_DAMPING)
        prev = res
        x_new = np.where(r == 0.0, 0.0, (1.0 - alpha) * x + alpha * r)
        update = float(np.max(_relative_residual(x, x_new)))
        x = x_new
        if update < step_tol and res < 100 * tol:
            return x, it, res, True, trace
    return x, it, prev, False, trace


def _newton_polish(rhs, x, budget: int):
    """Root of ``rhs(x) - x`` near ``x`` by ``scipy.optimize.root(method="hybr")``.

    Structurally zero components stay fixed at zero. Returns the point, the
    number of ``rhs`` calls spent and its relative residual.
    """
    active = x > 0
    scale = np.where(active, x, 1.0)
    calls = 0

    def full(y):
        v = np.zeros_like(x)
        v[active] = np.maximum(y, 0.0) * scale[active]
        return v

    def F(y):
        nonlocal calls
        calls += 1
        v = full(y)
        return ((np.asarray(rhs(v), dtype=float) - v) / scale)[active]

    if not np.any(active) or budget < 2:
        return x, 0, np.inf
    try:
        with np.errstate(all="ignore"):
            sol = optimize.root(F, np.ones(int(active.sum())), method="hybr",
                                options={"xtol": 1e-14, "maxfev": min(budget, 400)})
    except (LinAlgFailure, np.linalg.LinAlgError, ValueError):
        return x, calls, np.inf
    y = full(sol.x)
    try:
        r = np.maximum(np.asarray(rhs(y), dtype=float), 0.0)
    except (LinAlgFailure, np.linalg.LinAlgError):
        return x, calls + 1, np.inf
    if not np.all(np.isfinite(r)):
        return x, calls + 1, np.inf
    return r, calls + 1, float(np.max(_relative_residual(y, r)))


# ---------------------------------------------------------------------------
# General (six-scalar) system
# ---------------------------------------------------------------------------


def assemble_auxiliary(x, stats: SystemStatistics) -> AuxiliaryMatrices:
    """Build the auxiliary matrices for the scalars ``x = (e0, e1, e2, te0, te1, te2)``."""
    e0, e1, e2, te0, te1, te2 = (max(float(v), 0.0) for v in x)
    d = stats.dims
    N, L, K = d.n, d.l, d.k
    R0, T0, H0 = stats.link0.R, stats.link0.T, stats.link0.Hbar
    R1, T1, H1 = stats.link1.R, stats.link1.T, stats.link1.Hbar
    R2, T2, H2 = stats.link2.R, stats.link2.T, stats.link2.Hbar
    IK, IL, IN = np.eye(K), np.eye(L), np.eye(N)

    Phi2 = stats.sigma2 * IK + e2 * R2
    Phi2_H2 = _step("Phi2", solve_general, Phi2, H2)  # Phi2^{-1} H2bar
    Phi2_inv = _step("Phi2", solve_general, Phi2, IK)
    Psi2 = H2.conj().T @ Phi2_H2 + te2 * T2
    Phi1 = IL + e1 * Psi2 @ R1
    # Phi1^{-1} H2bar^H Phi2^{-1}, shared by Psi1, Pi11, Pi21
    Phi1inv_H2h_Phi2inv = _step("Phi1", solve_general, Phi1, Phi2_H2.conj().T)
    Psi1 = Phi2_inv - e1 * Phi2_H2 @ R1 @ Phi1inv_H2h_Phi2inv
    Phi0 = IK + e0 * Psi1 @ R0
    Phi1h_H1 = _step("Phi1", solve_general_h, Phi1, H1)  # Phi1^{-H} H1bar
    Psi0 = Psi1 @ H0 + Phi2_H2 @ Phi1h_H1
    Phi0inv_Psi0 = _step("Phi0", solve_general, Phi0, Psi0)
    Xi0 = H0 - e0 * R0 @ Phi0inv_Psi0
    Phi1inv_Psi2 = _step("Phi1", solve_general, Phi1, Psi2)
    Omega = (
        H1.conj().T @ Phi1inv_Psi2 @ H1
        + Psi0.conj().T @ Xi0
        + H0.conj().T @ Phi2_H2 @ Phi1h_H1
        + te0 * T0
        + te1 * T1
    )

    W = _step("I + Omega", hermitian_inv_sqrt, IN + Omega, 1e-9)
    # e0 R0 Phi0^{-1} and e1 R1 Phi1^{-1} are Hermitian PSD in exact arithmetic
    A0 = _step("e0 R0 Phi0^-1", hermitian_sqrt, e0 * solve_general_h(Phi0, R0).conj().T, 1e-9)
    A1 = _step("e1 R1 Phi1^-1", hermitian_sqrt, e1 * solve_general_h(Phi1, R1).conj().T, 1e-9)

    Pi01 = Phi0inv_Psi0 @ W
    Pi11 = Phi1inv_H2h_Phi2inv @ A0
    Pi12 = solve_general(Phi1, Psi2 @ H1 + Phi2_H2.conj().T @ Xi0) @ W
    Pi21 = (Phi1h_H1 - e1 * R1 @ Phi1inv_H2h_Phi2inv @ Xi0) @ W
    Pi31 = Phi2_H2 @ A1
    Pi32 = Psi1 @ A0
    Pi33 = (Phi2_H2 @ Phi1h_H1 + Psi1 @ Xi0) @ W
    return AuxiliaryMatrices(Phi0, Phi1, Phi2, Psi0, Psi1, Psi2, Xi0, Omega, Pi01, Pi11, Pi12, Pi21, Pi31, Pi32, Pi33)


def fixed_point_rhs(x, stats: SystemStatistics, aux: AuxiliaryMatrices | None = None) -> np.ndarray:
    """Right-hand sides of the six coupled equations at the scalars ``x``."""
    if aux is None:
        aux = assemble_auxiliary(x, stats)
    e1 = max(float(x[1]), 0.0)
    d = stats.dims
    N, L = d.n, d.l
    R0, T0 = stats.link0.R, stats.link0.T
    R1, T1 = stats.link1.R, stats.link1.T
    R2, T2 = stats.link2.R, stats.link2.T
    a = aux
    G = _step("I + Omega", solve_general, np.eye(N) + a.Omega, np.eye(N))

    def pp(P):
        return P @ P.conj().T

    e0_new = _tr(G, T0) / N
    e1_new = _tr(G, T1) / N
    e2_new = _tr(
        e1 * solve_general_h(a.Phi1, R1).conj().T + e1**2 * R1 @ pp(a.Pi11) @ R1 + pp(a.Pi21),
        T2,
    ) / L
    te0_new = _tr(solve_general(a.Phi0, a.Psi1) - pp(a.Pi01), R0) / N
    te1_new = _tr(solve_general(a.Phi1, a.Psi2) - pp(a.Pi11) - pp(a.Pi12), R1) / N
    te2_new = _tr(solve_general(a.Phi2, np.eye(d.k)) - pp(a.Pi31) - pp(a.Pi32) - pp(a.Pi33), R2) / L
    return np.array([e0_new, e1_new, e2_new, te0_new, te1_new, te2_new])


def fixed_point_residual(x, stats: SystemStatistics, aux: AuxiliaryMatrices | None = None) -> np.ndarray:
    """``rhs_k(x) - x_k`` for the six equations (absolute, not relative)."""
    return fixed_point_rhs(x, stats, aux) - np.asarray(x, dtype=float)


def solve_fixed_point(
    stats: SystemStatistics,
    init=None,
    *,
    damping: float = DEFAULT_DAMPING,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    polish: bool = True,
) -> FixedPointSolution:
    """Solve the six-scalar system by damped iteration.

    Starts from all ones unless ``init`` (a solution or a 6-vector) is given.
    A non-converged result is flagged, never raised; consumers that need a
    converged point check ``converged``.
    """
    x0 = np.ones(6) if init is None else np.asarray(getattr(init, "vector", init), dtype=float)
    x, it, res, ok, trace = damped_fixed_point(
        lambda v: fixed_point_rhs(v, stats), x0, damping=damping, tol=tol, max_iter=max_iter, polish=polish
    )
    if not ok:
        log.warning("fixed point did not converge after %d iterations (residual %.3e)", it, res)
    return FixedPointSolution.from_vector(x, iterations=it, residual=res, converged=ok, residual_trace=trace)


def _require_converged(sol: FixedPointSolution):
    if not sol.converged:
        raise FixedPointNotConverged(
            f"fixed point not converged after {sol.iterations} iterations (residual {sol.residual:.3e})"
        )


def rate_from_scalars(x, stats: SystemStatistics, aux: AuxiliaryMatrices | None = None) -> tuple[float, dict]:
    """Evaluate the seven-term rate expression at given scalars (no convergence check)."""
    if aux is None:
        aux = assemble_auxiliary(x, stats)
    e0, e1, e2, te0, te1, te2 = (max(float(v), 0.0) for v in x)
    d = stats.dims
    terms = {
        "logdet_rx": logdet_hpd(np.eye(d.k) + (e2 / stats.sigma2) * stats.link2.R, rtol=1e-12),
        "logdet_ris": logdet_general(np.eye(d.l) + e1 * aux.Psi2 @ stats.link1.R),
        "logdet_direct": logdet_general(np.eye(d.k) + e0 * aux.Psi1 @ stats.link0.R),
        "logdet_tx": logdet_general(np.eye(d.n) + aux.Omega),
        "e0te0": -d.n * e0 * te0,
        "e1te1": -d.n * e1 * te1,
        "e2te2": -d.l * e2 * te2,
    }
    return float(sum(terms.values())), terms


def asymptotic_rate(stats: SystemStatistics, solution: FixedPointSolution | None = None, **solve_kw) -> RateResult:
    """Large-system rate (nats) of the effective channel ``H0 + H2 H1``."""
    sol = solution if solution is not None else solve_fixed_point(stats, **solve_kw)
    _require_converged(sol)
    value, terms = rate_from_scalars(sol.vector, stats)
    return RateResult(nats=value, provenance="analytic", terms=terms, solution=sol)


# ---------------------------------------------------------------------------
# Reduced systems
# ---------------------------------------------------------------------------


def _solve_reduced(rhs, n, solve_kw) -> tuple[np.ndarray, FixedPointSolution | None, dict]:
    x, it, res, ok, trace = damped_fixed_point(rhs, np.ones(n), **solve_kw)
    if not ok:
        raise FixedPointNotConverged(f"reduced fixed point not converged after {it} iterations (residual {res:.3e})")
    return x, {"iterations": it, "residual": res}


def _no_ris_parts(x, link0, sigma2):
    e0, te0 = x
    R0, T0, H0 = link0.R, link0.T, link0.Hbar
    K, N = H0.shape
    S = sigma2 * np.eye(K) + e0 * R0
    M = np.eye(N) + te0 * T0 + H0.conj().T @ np.linalg.solve(S, H0)
    return S, M


def rate_no_ris(stats: SystemStatistics, **solve_kw) -> RateResult:
    """Single-hop Rician MIMO rate using link 0 only (two coupled scalars)."""
    link0, sigma2 = stats.link0, stats.sigma2
    R0, T0, H0 = link0.R, link0.T, link0.Hbar
    K, N = H0.shape

    def rhs(x):
        e0, te0 = x
        S, M = _no_ris_parts(x, link0, sigma2)
        V = sigma2 * np.eye(K) + e0 * R0 + H0 @ np.linalg.solve(np.eye(N) + te0 * T0, H0.conj().T)
        return np.array([_tr(np.linalg.inv(M), T0) / N, _tr(np.linalg.inv(V), R0) / N])

    x, info = _solve_reduced(rhs, 2, solve_kw)
    e0, te0 = x
    S, M = _no_ris_parts(x, link0, sigma2)
    terms = {
        "logdet_rx": logdet_hpd(np.eye(K) + (e0 / sigma2) * R0, rtol=1e-12),
        "logdet_tx": logdet_hpd(M, rtol=1e-9),
        "e0te0": -N * e0 * te0,
    }
    return RateResult(nats=float(sum(terms.values())), provenance="analytic", terms=terms,
                      solution={"e0": e0, "te0": te0, **info})


def _no_direct_parts(x, link1, link2, sigma2):
    e1, e2, te1, te2 = x
    R1, T1, H1 = link1.R, link1.T, link1.Hbar
    R2, T2, H2 = link2.R, link2.T, link2.Hbar
    L, N = H1.shape
    K = H2.shape[0]
    Phi2 = sigma2 * np.eye(K) + e2 * R2
    Phi2inv = np.linalg.inv(Phi2)
    Psi2 = H2.conj().T @ Phi2inv @ H2 + te2 * T2
    Phi1 = np.eye(L) + e1 * Psi2 @ R1
    Phi1inv = np.linalg.inv(Phi1)
    M = np.eye(N) + H1.conj().T @ Phi1inv @ Psi2 @ H1 + te1 * T1
    # Pi Pi^H without the square root
    PP = Phi1inv.conj().T @ H1 @ np.linalg.solve(M, H1.conj().T) @ Phi1inv
    return Phi2inv, Psi2, Phi1inv, M, PP


def _no_direct_rhs(x, link1, link2, sigma2):
    e1, e2, te1, te2 = x
    R1, T1 = link1.R, link1.T
    R2, T2, H2 = link2.R, link2.T, link2.Hbar
    L, N = link1.Hbar.shape
    Phi2inv, Psi2, Phi1inv, M, PP = _no_direct_parts(x, link1, link2, sigma2)
    B = Phi2inv @ H2
    return np.array([
        _tr(np.linalg.inv(M), T1) / N,
        _tr(e1 * R1 @ Phi1inv + PP, T2) / L,
        _tr(Phi1inv @ Psi2 - Psi2 @ PP @ Psi2, R1) / N,
        _tr(Phi2inv - e1 * B @ R1 @ Phi1inv @ B.conj().T - B @ PP @ B.conj().T, R2) / L,
    ])


def rate_no_direct(stats: SystemStatistics, **solve_kw) -> RateResult:
    """Two-hop Rician product-channel rate using links 1 and 2 (four scalars)."""
    link1, link2, sigma2 = stats.link1, stats.link2, stats.sigma2
    x, info = _solve_reduced(lambda v: _no_direct_rhs(v, link1, link2, sigma2), 4, solve_kw)
    e1, e2, te1, te2 = x
    L, N = link1.Hbar.shape
    K = link2.Hbar.shape[0]
    _, Psi2, _, M, _ = _no_direct_parts(x, link1, link2, sigma2)
    terms = {
        "logdet_rx": logdet_hpd(np.eye(K) + (e2 / sigma2) * link2.R, rtol=1e-12),
        "logdet_ris": logdet_general(np.eye(L) + e1 * Psi2 @ link1.R),
        "logdet_tx": logdet_hpd(M, rtol=1e-9),
        "e1te1": -N * e1 * te1,
        "e2te2": -L * e2 * te2,
    }
    return RateResult(nats=float(sum(terms.values())), provenance="analytic", terms=terms,
                      solution={"e1": e1, "e2": e2, "te1": te1, "te2": te2, **info})


def stieltjes_product(stats: SystemStatistics, omega: float, **solve_kw) -> float:
    """Deterministic equivalent of ``E (1/K) tr(H2 H1 H1^H H2^H + omega I)^{-1}``.

    Only links 1 and 2 of ``stats`` are used. The value is the normalized
    trace of the deterministic equivalent of the resolvent, the matrix whose
    trace against ``R2`` defines ``te2``. With ``Hbar2 = 0`` it reduces to
    ``(1/K) tr(e2 R2 + omega I)^{-1}``; the LoS terms are needed otherwise.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    link1, link2 = stats.link1, stats.link2
    x, _ = _solve_reduced(lambda v: _no_direct_rhs(v, link1, link2, omega), 4, solve_kw)
    e1 = x[0]
    Phi2inv, _, Phi1inv, _, PP = _no_direct_parts(x, link1, link2, omega)
    B = Phi2inv @ link2.Hbar
    G = Phi2inv - e1 * B @ link1.R @ Phi1inv @ B.conj().T - B @ PP @ B.conj().T
    K = link2.Hbar.shape[0]
    return float(np.real(np.trace(G))) / K


def _rayleigh_parts(x, stats):
    e0, e1, e2, te0, te2 = x
    d = stats.dims
    N, L, K = d.n, d.l, d.k
    M = np.eye(N) + te0 * stats.link0.T + (L / N) * e2 * te2 * stats.link1.T
    S = stats.sigma2 * np.eye(K) + e0 * stats.link0.R + e1 * e2 * stats.link2.R
    J = np.eye(L) + e1 * te2 * stats.link2.T @ stats.link1.R
    return M, S, J


def rate_rayleigh(stats: SystemStatistics, **solve_kw) -> RateResult:
    """Rate when every LoS component is zero (five scalars).

    Here ``e2`` is normalized differently from the general system: the
    general ``e2`` equals ``e1 * e2`` of this one.
    """
    if any(np.any(link.Hbar != 0) for link in stats.links):
        raise ValueError("rate_rayleigh requires all LoS components to be zero")
    d = stats.dims
    N, L, K = d.n, d.l, d.k
    R0, T0 = stats.link0.R, stats.link0.T
    R1, T1 = stats.link1.R, stats.link1.T
    R2, T2 = stats.link2.R, stats.link2.T

    def rhs(x):
        e0, e1, e2, te0, te2 = x
        M, S, J = _rayleigh_parts(x, stats)
        Minv, Sinv = np.linalg.inv(M), np.linalg.inv(S)
        return np.array([
            _tr(Minv, T0) / N,
            _tr(Minv, T1) / N,
            _tr(np.linalg.inv(J), T2 @ R1) / L,
            _tr(Sinv, R0) / N,
            _tr(Sinv, R2) / L,
        ])

    x, info = _solve_reduced(rhs, 5, solve_kw)
    e0, e1, e2, te0, te2 = x
    M, S, J = _rayleigh_parts(x, stats)
    B = stats.sigma2 * np.eye(K) + e1 * e2 * R2
    terms = {
        "logdet_rx": logdet_hpd(np.eye(K) + (e1 * e2 / stats.sigma2) * R2, rtol=1e-12),
        "logdet_direct": logdet_general(np.eye(K) + e0 * np.linalg.solve(B, R0)),
        "logdet_ris": logdet_general(J),
        "logdet_tx": logdet_hpd(M, rtol=1e-9),
        "e0te0": -N * e0 * te0,
        "e1e2te2": -2.0 * L * e1 * e2 * te2,
    }
    return RateResult(nats=float(sum(terms.values())), provenance="analytic", terms=terms,
                      solution=dict(zip(("e0", "e1", "e2", "te0", "te2"), map(float, x)), **info))
