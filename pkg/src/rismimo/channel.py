"""Statistical CSIT for the three links and channel sampling.

Link indices follow the usual convention of the system model:

* link 0 -- BS to user, ``K x N``
* link 1 -- BS to RIS,  ``L x N``
* link 2 -- RIS to user, ``K x L``

Each link carries ``H = R^{1/2} X T^{1/2} + Hbar``; the large-scale gain and
the Rician split are absorbed into ``T`` and ``Hbar``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .linalg import check_hermitian, hermitian_sqrt, hermitize

__all__ = [
    "SystemDims",
    "ArrayGeometry",
    "LinkStatistics",
    "SystemStatistics",
    "ScenarioConfig",
    "correlation_from_angles",
    "path_loss_db",
    "path_loss_linear",
    "dbm_to_watts",
    "los_allones",
    "link_trace_targets",
    "build_link",
    "build_statistics",
    "sample_channels",
    "zero_link",
]

QUADRATURE_POINTS = 4096
# Gaussian mass beyond 12 standard deviations is below 1e-32.
_SPREAD_WINDOW = 12.0


@dataclass(frozen=True)
class SystemDims:
    n: int  # BS antennas
    l: int  # RIS elements
    k: int  # user antennas

    def __post_init__(self):
        for name in ("n", "l", "k"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"dims.{name} must be >= 1")

    def link_shape(self, link: int) -> tuple[int, int]:
        """(rows, cols) of the channel matrix of ``link``."""
        return {0: (self.k, self.n), 1: (self.l, self.n), 2: (self.k, self.l)}[link]


@dataclass(frozen=True)
class ArrayGeometry:
    ds: float = 1.0  # antenna spacing in wavelengths
    eta_deg: float = 0.0  # mean angle
    delta_deg: float = 5.0  # RMS angle spread

    def __post_init__(self):
        if not self.ds > 0:
            raise ValueError("antenna spacing must be positive")
        if not self.delta_deg > 0:
            raise ValueError("angle spread must be positive")
        if not -180.0 <= self.eta_deg <= 180.0:
            raise ValueError("mean angle must lie in [-180, 180] degrees")


@dataclass(frozen=True, eq=False)
class LinkStatistics:
    R: np.ndarray
    T: np.ndarray
    Hbar: np.ndarray
    kappa: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        R = np.asarray(self.R, dtype=complex)
        T = np.asarray(self.T, dtype=complex)
        Hbar = np.asarray(self.Hbar, dtype=complex)
        check_hermitian(R, rtol=1e-12)
        check_hermitian(T, rtol=1e-12)
        if Hbar.shape != (R.shape[0], T.shape[0]):
            raise ValueError(f"LoS matrix shape {Hbar.shape} does not match R {R.shape} / T {T.shape}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "Hbar", Hbar)

    @property
    def shape(self) -> tuple[int, int]:
        return self.Hbar.shape

    def replace(self, **changes) -> "LinkStatistics":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class SystemStatistics:
    """The three links plus noise power and total transmit power budget."""

    dims: SystemDims
    link0: LinkStatistics
    link1: LinkStatistics
    link2: LinkStatistics
    sigma2: float
    power_budget: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("noise power must be positive")
        if not self.power_budget > 0:
            raise ValueError("power budget must be positive")
        for i, link in enumerate(self.links):
            if link.shape != self.dims.link_shape(i):
                raise ValueError(f"link{i} has shape {link.shape}, expected {self.dims.link_shape(i)}")

    @property
    def links(self) -> tuple[LinkStatistics, LinkStatistics, LinkStatistics]:
        return (self.link0, self.link1, self.link2)

    def link(self, i: int) -> LinkStatistics:
        return self.links[i]

    def replace(self, **changes) -> "SystemStatistics":
        return dataclasses.replace(self, **changes)

    def with_links(self, **links: LinkStatistics) -> "SystemStatistics":
        return dataclasses.replace(self, **links)


def _default_arrays() -> dict:
    return {
        "link0": {"tx": ArrayGeometry(1.0, 10.0, 5.0), "rx": ArrayGeometry(1.0, 0.0, 30.0)},
        "link1": {"tx": ArrayGeometry(1.0, 0.0, 5.0), "rx": ArrayGeometry(1.0, 0.0, 20.0)},
        "link2": {"tx": ArrayGeometry(1.0, 0.0, 30.0), "rx": ArrayGeometry(1.0, 0.0, 5.0)},
    }


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario description; the defaults are the reference simulation setup."""

    dims: SystemDims = SystemDims(8, 8, 8)
    bs_pos: tuple[float, float] = (0.0, 10.0)
    ris_pos: tuple[float, float] = (40.0, 10.0)
    user_pos: tuple[float, float] = (80.0, 10.0)
    p_dbm: float = 10.0
    noise_dbm: float = -94.0
    bandwidth_hz: float = 10e6  # carried for bookkeeping only
    gt_dbi: float = 5.0
    gr_dbi: float = 5.0
    kappa: tuple[float, float, float] = (1.0, 1.0, 1.0)
    arrays: dict = field(default_factory=_default_arrays)
    mc_trials: int = 2000
    seed: int = 0
    # total budget is budget_scale * P; budget_scale=None means N
    budget_scale: float | None = None

    def __post_init__(self):
        pts = [tuple(self.bs_pos), tuple(self.ris_pos), tuple(self.user_pos)]
        if len(set(pts)) != 3:
            raise ValueError("BS, RIS and user positions must be pairwise distinct")
        if int(self.mc_trials) < 1:
            raise ValueError("mc.trials must be >= 1")
        if any(k < 0 for k in self.kappa):
            raise ValueError("Rician factors must be nonnegative")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    @property
    def distances(self) -> tuple[float, float, float]:
        bs, ris, ue = (np.asarray(p, dtype=float) for p in (self.bs_pos, self.ris_pos, self.user_pos))
        return (
            float(np.linalg.norm(ue - bs)),
            float(np.linalg.norm(ris - bs)),
            float(np.linalg.norm(ue - ris)),
        )


def correlation_from_angles(size: int, geom: ArrayGeometry, points: int = QUADRATURE_POINTS) -> np.ndarray:
    """Spatial correlation of a uniform linear array under a Gaussian angular spread.

    Entry ``(m, n)`` is the Gaussian-weighted average over the angle ``phi``
    (degrees, truncated to [-180, 180]) of
    ``exp(2j*pi*ds*(m-n)*sin(pi*phi/180))``, computed with a composite
    trapezoid rule on ``points`` nodes.  The nodes cover the part of
    [-180, 180] within 12 spreads of the mean, so narrow spreads are still
    resolved.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    eta, delta = geom.eta_deg, geom.delta_deg
    if not delta > 0:
        raise ValueError("angle spread must be positive")
    lo = max(-180.0, eta - _SPREAD_WINDOW * delta)
    hi = min(180.0, eta + _SPREAD_WINDOW * delta)
    phi = np.linspace(lo, hi, points)
    h = phi[1] - phi[0]
    weights = np.full(points, h)
    weights[[0, -1]] *= 0.5
    weights *= np.exp(-((phi - eta) ** 2) / (2.0 * delta**2)) / np.sqrt(2.0 * np.pi * delta**2)

    # Toeplitz: only the offsets m - n = 0..size-1 are needed.
    offsets = np.arange(size)
    phase = 2j * np.pi * geom.ds * np.outer(offsets, np.sin(np.pi * phi / 180.0))
    first_col = np.exp(phase) @ weights
    idx = np.subtract.outer(np.arange(size), np.arange(size))
    C = np.where(idx >= 0, first_col[np.abs(idx)], np.conj(first_col[np.abs(idx)]))
    C = hermitize(C)
    # clamp roundoff-negative eigenvalues
    w, U = np.linalg.eigh(C)
    if w[0] < 0:
        C = hermitize((U * np.clip(w, 0.0, None)) @ U.conj().T)
    return C


def path_loss_db(distance_m: float, gt_dbi: float = 5.0, gr_dbi: float = 5.0) -> float:
    if distance_m < 1.0:
        raise ValueError(f"path-loss model needs distance >= 1 m, got {distance_m}")
    return gt_dbi + gr_dbi - 37.5 - 22.0 * np.log10(distance_m)


def path_loss_linear(distance_m: float, gt_dbi: float = 5.0, gr_dbi: float = 5.0) -> float:
    return float(10.0 ** (path_loss_db(distance_m, gt_dbi, gr_dbi) / 10.0))


def dbm_to_watts(x_dbm: float) -> float:
    return float(10.0 ** ((x_dbm - 30.0) / 10.0))


def los_allones(rows: int, cols: int, target_trace: float) -> np.ndarray:
    """All-one LoS direction scaled so that ``tr(H H^H) == target_trace``."""
    if target_trace < 0:
        raise ValueError("target trace must be nonnegative")
    c = np.sqrt(target_trace / (rows * cols))
    return np.full((rows, cols), c, dtype=complex)


def link_trace_targets(n_rx: int, n_tx: int, kappa: float, gamma: float, scatter_dim: int) -> tuple[float, float, float]:
    """Trace targets ``(tr R, tr T, tr Hbar Hbar^H)`` for one link.

    ``scatter_dim`` is the dimension whose inverse is the variance of the
    random entries (N for links 0 and 1, L for link 2); in all three links
    it equals the transmit dimension.
    """
    return (
        float(n_rx),
        scatter_dim**2 * gamma / (kappa + 1.0),
        kappa / (kappa + 1.0) * n_rx * n_tx * gamma,
    )


def _rescale(C: np.ndarray, target: float) -> np.ndarray:
    tr = float(np.real(np.trace(C)))
    if target == 0.0:
        return np.zeros_like(C)
    return C * (target / tr)


def build_link(n_rx: int, n_tx: int, rx: ArrayGeometry, tx: ArrayGeometry, kappa: float, gamma: float) -> LinkStatistics:
    tr_R, tr_T, tr_los = link_trace_targets(n_rx, n_tx, kappa, gamma, n_tx)
    R = _rescale(correlation_from_angles(n_rx, rx), tr_R)
    T = _rescale(correlation_from_angles(n_tx, tx), tr_T)
    return LinkStatistics(R=R, T=T, Hbar=los_allones(n_rx, n_tx, tr_los), kappa=kappa, gamma=gamma)


def build_statistics(cfg: ScenarioConfig) -> SystemStatistics:
    """Assemble the statistical CSIT of a scenario.

    Distances come from the three positions, gains from the log-distance
    path-loss model, correlations from the angular-spread integral (rescaled
    to their exact trace targets), and LoS components from all-one matrices.
    """
    d = cfg.dims
    gammas = [path_loss_linear(dist, cfg.gt_dbi, cfg.gr_dbi) for dist in cfg.distances]
    sizes = [(d.k, d.n), (d.l, d.n), (d.k, d.l)]
    links = []
    for i, (n_rx, n_tx) in enumerate(sizes):
        arr = cfg.arrays[f"link{i}"]
        links.append(build_link(n_rx, n_tx, arr["rx"], arr["tx"], float(cfg.kappa[i]), gammas[i]))
    p = dbm_to_watts(cfg.p_dbm)
    scale = d.n if cfg.budget_scale is None else cfg.budget_scale
    return SystemStatistics(
        dims=d,
        link0=links[0],
        link1=links[1],
        link2=links[2],
        sigma2=dbm_to_watts(cfg.noise_dbm),
        power_budget=scale * p,
    )


def zero_link(link: LinkStatistics) -> LinkStatistics:
    """A link whose channel is identically zero (R, T and Hbar all zero)."""
    return link.replace(R=np.zeros_like(link.R), T=np.zeros_like(link.T), Hbar=np.zeros_like(link.Hbar))


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


class _LinkSampler:
    def __init__(self, link: LinkStatistics, variance_dim: int):
        self.sqrt_R = hermitian_sqrt(link.R, rtol=1e-12)
        self.sqrt_T = hermitian_sqrt(link.T, rtol=1e-12)
        self.Hbar = link.Hbar
        self.scale = 1.0 / np.sqrt(variance_dim)

    def draw(self, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
        shape = self.Hbar.shape if batch is None else (batch, *self.Hbar.shape)
        X = self.scale * _complex_normal(rng, shape)
        return self.sqrt_R @ X @ self.sqrt_T + self.Hbar


class ChannelSampler:
    """Pre-factored sampler; reuse it across many draws of the same statistics."""

    def __init__(self, stats: SystemStatistics):
        d = stats.dims
        self._links = (
            _LinkSampler(stats.link0, d.n),
            _LinkSampler(stats.link1, d.n),
            _LinkSampler(stats.link2, d.l),
        )

    def draw(self, rng: np.random.Generator, batch: int | None = None):
        return tuple(s.draw(rng, batch) for s in self._links)


def sample_channels(stats: SystemStatistics, rng: np.random.Generator, batch: int | None = None):
    """Draw ``(H0, H1, H2)``; with ``batch`` each has a leading batch axis."""
    return ChannelSampler(stats).draw(rng, batch)
