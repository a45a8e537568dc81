"""Random test instances shared across test modules."""

import numpy as np

from rismimo.channel import LinkStatistics, SystemDims, SystemStatistics, zero_link


def random_hpd(n, rng, scale=1.0, trace=None):
    B = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    A = B @ B.conj().T + 0.1 * np.eye(n)
    A = 0.5 * (A + A.conj().T)
    if trace is not None:
        A *= trace / np.real(np.trace(A))
    return A * scale


def random_link(rows, cols, rng, gain=1.0, los=True):
    R = random_hpd(rows, rng, trace=rows)
    T = random_hpd(cols, rng, trace=cols**2 * gain / 2)
    H = (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) * np.sqrt(gain / 2)
    if not los:
        H = np.zeros_like(H)
    return LinkStatistics(R=R, T=T, Hbar=H, kappa=1.0, gamma=gain)


def random_stats(n, l, k, rng, sigma2=0.1, los=True, gains=(0.3, 1.0, 1.0)):
    dims = SystemDims(n, l, k)
    return SystemStatistics(
        dims=dims,
        link0=random_link(k, n, rng, gains[0], los),
        link1=random_link(l, n, rng, gains[1], los),
        link2=random_link(k, l, rng, gains[2], los),
        sigma2=sigma2,
        power_budget=float(n),
    )


def without_ris(stats):
    return stats.with_links(link1=zero_link(stats.link1), link2=zero_link(stats.link2))


def without_direct(stats):
    return stats.with_links(link0=zero_link(stats.link0))


def rayleigh(stats):
    return stats.with_links(**{f"link{i}": link.replace(Hbar=np.zeros_like(link.Hbar)) for i, link in enumerate(stats.links)})


def random_covariance(n, budget, rng):
    Q = random_hpd(n, rng)
    return Q * (budget / np.real(np.trace(Q)))
