import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg as sla
from scipy import optimize

from rismimo.channel import ScenarioConfig, build_statistics, zero_link
from rismimo.large_system import (
    assemble_auxiliary,
    asymptotic_rate,
    fixed_point_residual,
    fixed_point_rhs,
    rate_no_direct,
    rate_no_ris,
    rate_rayleigh,
    solve_fixed_point,
    stieltjes_product,
)
from rismimo.rate import TransmitCovariance, apply_replacements, deterministic_rate

from helpers import random_stats, rayleigh, without_direct, without_ris

inv = np.linalg.inv


def _h(A):
    return A.conj().T


def _oracle(x, s):
    """Straight-line transcription with explicit inverses and scipy's sqrtm."""
    e0, e1, e2, te0, te1, te2 = x
    N, L, K = s.dims.n, s.dims.l, s.dims.k
    R0, T0, H0 = s.link0.R, s.link0.T, s.link0.Hbar
    R1, T1, H1 = s.link1.R, s.link1.T, s.link1.Hbar
    R2, T2, H2 = s.link2.R, s.link2.T, s.link2.Hbar
    Phi2 = s.sigma2 * np.eye(K) + e2 * R2
    Psi2 = _h(H2) @ inv(Phi2) @ H2 + te2 * T2
    Phi1 = np.eye(L) + e1 * Psi2 @ R1
    Psi1 = inv(Phi2) - e1 * inv(Phi2) @ H2 @ R1 @ inv(Phi1) @ _h(H2) @ inv(Phi2)
    Phi0 = np.eye(K) + e0 * Psi1 @ R0
    Psi0 = Psi1 @ H0 + inv(Phi2) @ H2 @ inv(_h(Phi1)) @ H1
    Xi0 = H0 - e0 * R0 @ inv(Phi0) @ Psi0
    Omega = (
        _h(H1) @ inv(Phi1) @ Psi2 @ H1
        + _h(Psi0) @ Xi0
        + _h(H0) @ inv(Phi2) @ H2 @ inv(_h(Phi1)) @ H1
        + te0 * T0
        + te1 * T1
    )
    W = inv(sla.sqrtm(np.eye(N) + Omega))
    S0 = sla.sqrtm(e0 * R0 @ inv(Phi0))
    S1 = sla.sqrtm(e1 * R1 @ inv(Phi1))
    Pi01 = inv(Phi0) @ Psi0 @ W
    Pi11 = inv(Phi1) @ _h(H2) @ inv(Phi2) @ S0
    Pi12 = inv(Phi1) @ (Psi2 @ H1 + _h(H2) @ inv(Phi2) @ Xi0) @ W
    Pi21 = (inv(_h(Phi1)) @ H1 - e1 * R1 @ inv(Phi1) @ _h(H2) @ inv(Phi2) @ Xi0) @ W
    Pi31 = inv(Phi2) @ H2 @ S1
    Pi32 = Psi1 @ S0
    Pi33 = (inv(Phi2) @ H2 @ inv(_h(Phi1)) @ H1 + Psi1 @ Xi0) @ W
    mats = dict(Phi0=Phi0, Phi1=Phi1, Phi2=Phi2, Psi0=Psi0, Psi1=Psi1, Psi2=Psi2, Xi0=Xi0, Omega=Omega,
                Pi01=Pi01, Pi11=Pi11, Pi12=Pi12, Pi21=Pi21, Pi31=Pi31, Pi32=Pi32, Pi33=Pi33)

    def pp(P):
        return P @ _h(P)

    G = inv(np.eye(N) + Omega)
    rhs = np.real([
        np.trace(G @ T0) / N,
        np.trace(G @ T1) / N,
        np.trace((e1 * R1 @ inv(Phi1) + e1**2 * R1 @ pp(Pi11) @ R1 + pp(Pi21)) @ T2) / L,
        np.trace((inv(Phi0) @ Psi1 - pp(Pi01)) @ R0) / N,
        np.trace((inv(Phi1) @ Psi2 - pp(Pi11) - pp(Pi12)) @ R1) / N,
        np.trace((inv(Phi2) - pp(Pi31) - pp(Pi32) - pp(Pi33)) @ R2) / L,
    ])
    return mats, rhs


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_auxiliary_matches_transcription(seed):
    rng = np.random.default_rng(seed)
    s = random_stats(3, 3, 3, rng)
    x = rng.uniform(0.2, 1.5, 6)
    aux = assemble_auxiliary(x, s)
    mats, rhs = _oracle(x, s)
    for name, ref in mats.items():
        got = getattr(aux, name)
        assert np.max(np.abs(got - ref)) < 1e-12 * max(1.0, np.max(np.abs(ref))), name
    assert np.allclose(fixed_point_rhs(x, s), rhs, rtol=1e-12, atol=1e-13)


def test_auxiliary_at_zero_scalars():
    rng = np.random.default_rng(4)
    s = rayleigh(random_stats(3, 2, 4, rng, sigma2=0.5))
    aux = assemble_auxiliary(np.zeros(6), s)
    assert np.allclose(aux.Phi0, np.eye(4))
    assert np.allclose(aux.Phi1, np.eye(2))
    assert np.allclose(aux.Phi2, 0.5 * np.eye(4))
    assert np.allclose(aux.Psi1, 2 * np.eye(4))
    for name in ("Psi0", "Psi2", "Xi0", "Omega", "Pi01", "Pi11", "Pi12", "Pi21", "Pi31", "Pi32", "Pi33"):
        assert not np.any(np.abs(getattr(aux, name)) > 1e-15), name


def test_auxiliary_e2_only():
    rng = np.random.default_rng(5)
    s = rayleigh(random_stats(3, 3, 3, rng, sigma2=0.2))
    aux = assemble_auxiliary([0, 0, 0.7, 0, 0, 0], s)
    assert np.allclose(aux.Phi2, 0.2 * np.eye(3) + 0.7 * s.link2.R, atol=1e-14)
    assert np.allclose(aux.Psi1, inv(aux.Phi2), atol=1e-12)
    assert np.allclose(aux.Omega, 0)


def test_residual_simple_cases():
    rng = np.random.default_rng(6)
    s = rayleigh(random_stats(3, 3, 3, rng))
    s = s.with_links(**{f"link{i}": zero_link(s.link(i)) for i in range(3)})
    assert np.allclose(fixed_point_residual(np.zeros(6), s), 0.0)
    s1 = s.with_links(link0=s.link0.replace(T=np.eye(3)))
    r = fixed_point_residual(np.zeros(6), s1)
    assert r[0] == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(r[1:], 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_converged_residual(seed):
    s = random_stats(4, 4, 4, np.random.default_rng(seed))
    sol = solve_fixed_point(s)
    assert sol.converged
    x = sol.vector
    r = np.abs(fixed_point_residual(x, s))
    assert np.all(r < 1e-9 * np.maximum(1.0, np.abs(x)))
    assert np.all(x >= 0)


def test_zero_channels_converge_immediately():
    s = random_stats(3, 3, 3, np.random.default_rng(0))
    s = s.with_links(**{f"link{i}": zero_link(s.link(i)) for i in range(3)})
    sol = solve_fixed_point(s)
    assert sol.converged and sol.iterations <= 2
    assert np.all(sol.vector == 0)
    assert asymptotic_rate(s).nats == pytest.approx(0.0, abs=1e-14)


def _no_ris_oracle(link0, sigma2):
    R0, T0, H0 = link0.R, link0.T, link0.Hbar
    K, N = H0.shape

    def eqs(x):
        e0, te0 = x
        A = inv(np.eye(N) + te0 * T0 + _h(H0) @ inv(sigma2 * np.eye(K) + e0 * R0) @ H0)
        B = inv(sigma2 * np.eye(K) + e0 * R0 + H0 @ inv(np.eye(N) + te0 * T0) @ _h(H0))
        return [np.trace(A @ T0).real / N - e0, np.trace(B @ R0).real / N - te0]

    e0, te0 = optimize.fsolve(eqs, [1.0, 1.0], xtol=1e-12)
    rate = (
        np.linalg.slogdet(np.eye(K) + e0 / sigma2 * R0)[1]
        + np.linalg.slogdet(np.eye(N) + te0 * T0 + _h(H0) @ inv(sigma2 * np.eye(K) + e0 * R0) @ H0)[1]
        - N * e0 * te0
    )
    return rate


@pytest.mark.parametrize("seed", range(3))
def test_no_ris_against_fsolve(seed):
    s = random_stats(4, 3, 5, np.random.default_rng(seed))
    ref = _no_ris_oracle(s.link0, s.sigma2)
    assert rate_no_ris(s).nats == pytest.approx(ref, rel=1e-10)


def test_iid_rayleigh_scalar_oracle():
    # R = I, T = t I, square: e = t/(1 + t te), te = 1/(sigma2 + e)
    n, t, sigma2 = 4, 0.8, 0.3
    s = rayleigh(random_stats(n, 2, n, np.random.default_rng(1), sigma2=sigma2))
    s = s.with_links(link0=s.link0.replace(R=np.eye(n), T=t * np.eye(n)),
                     link1=zero_link(s.link1), link2=zero_link(s.link2))
    # substitute te into e: e (sigma2 + e) + t e = t (sigma2 + e)
    e = max(np.roots([1.0, sigma2 + t - t, -t * sigma2]).real)
    te = 1.0 / (sigma2 + e)
    ref = n * (np.log1p(e / sigma2) + np.log1p(t * te) - e * te)
    assert asymptotic_rate(s).nats == pytest.approx(ref, rel=1e-10)
    assert rate_no_ris(s).nats == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_reductions(n):
    rng = np.random.default_rng(100 + n)
    s = random_stats(n, n, n, rng)
    cases = [
        (without_ris(s), rate_no_ris),
        (without_direct(s), rate_no_direct),
        (rayleigh(s), rate_rayleigh),
    ]
    for stats, reduced in cases:
        full = asymptotic_rate(stats).nats
        red = reduced(stats).nats
        assert abs(full - red) <= 1e-10 * max(1.0, abs(red)), reduced.__name__


def test_rayleigh_reduction_rejects_los():
    s = random_stats(2, 2, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        rate_rayleigh(s)


def test_stieltjes_zero_links():
    s = random_stats(3, 3, 4, np.random.default_rng(0))
    s = s.with_links(link1=zero_link(s.link1), link2=zero_link(s.link2))
    for omega in (0.1, 1.0, 7.0):
        assert stieltjes_product(s, omega) == pytest.approx(1.0 / omega, rel=1e-12)
    with pytest.raises(ValueError):
        stieltjes_product(s, 0.0)


def test_stieltjes_large_omega():
    # m(w) = 1/w - E tr(B)/(K w^2) + O(w^-3)
    s = random_stats(3, 4, 3, np.random.default_rng(2))
    l1, l2 = s.link1, s.link2
    K = 3
    # E tr(H2 H1 H1^H H2^H) for independent Kronecker links with LoS
    EG = l1.Hbar @ _h(l1.Hbar) + np.trace(l1.T).real / l1.shape[1] * l1.R
    EB = np.trace(l2.Hbar @ EG @ _h(l2.Hbar)).real + np.trace(l2.R).real * np.trace(l2.T @ EG).real / l2.shape[1]
    omega = 1e6
    m = stieltjes_product(s, omega)
    assert m == pytest.approx(1 / omega, rel=1e-3)
    approx = 1 / omega - EB / (K * omega**2)
    assert abs(m - approx) < 1e-3 * EB / (K * omega**2)


def test_stieltjes_matches_monte_carlo_small():
    from rismimo.channel import sample_channels

    # correlated links with LoS on both hops
    s = random_stats(16, 16, 16, np.random.default_rng(3), gains=(1.0, 1 / 16, 1 / 16))
    _, H1, H2 = sample_channels(s, np.random.default_rng(9), batch=400)
    B = H2 @ H1
    eig = np.linalg.eigvalsh(B @ B.conj().transpose(0, 2, 1))
    for omega in (0.5, 1.0, 2.0):
        mc = np.mean(1.0 / (eig + omega))
        assert stieltjes_product(s, omega) == pytest.approx(mc, rel=0.01)


def test_damping_independence():
    s = random_stats(4, 4, 4, np.random.default_rng(8))
    a = solve_fixed_point(s, damping=0.5).vector
    b = solve_fixed_point(s, damping=0.2).vector
    c = solve_fixed_point(s, damping=0.9, polish=False, max_iter=20000).vector
    assert np.allclose(a, b, rtol=1e-8, atol=0)
    assert np.allclose(a, c, rtol=1e-8, atol=0)


def test_default_scenario_converges():
    s = build_statistics(ScenarioConfig())
    Q = TransmitCovariance.uniform(s.dims.n, s.power_budget)
    res = deterministic_rate(s, Q, np.zeros(s.dims.l))
    assert res.solution.converged
    assert 50 < res.bits < 100
    eff = apply_replacements(s, Q, np.zeros(s.dims.l))
    r = np.abs(fixed_point_residual(res.solution.vector, eff))
    assert np.all(r <= 1e-9 * np.abs(res.solution.vector))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(1.05, 5.0))
def test_rate_monotone_in_power(seed, c):
    rng = np.random.default_rng(seed)
    s = random_stats(3, 3, 3, rng)
    theta = rng.uniform(0, 2 * np.pi, 3)
    Q = TransmitCovariance.uniform(3, 3.0)
    lo = deterministic_rate(s, Q, theta).nats
    hi = deterministic_rate(s, TransmitCovariance(c * Q.Q, c * Q.budget), theta).nats
    assert hi > lo


def test_rayleigh_rate_monotone_in_ris_gain():
    s = rayleigh(random_stats(4, 4, 4, np.random.default_rng(11)))
    rates = [asymptotic_rate(s.with_links(link1=s.link1.replace(T=g * s.link1.T))).nats for g in (0.5, 1, 2, 4)]
    assert np.all(np.diff(rates) > 0)
