"""YAML scenario files.

Every key is optional; missing keys take the reference defaults of
:class:`~rismimo.channel.ScenarioConfig`. Unknown keys and bad values raise
:class:`ConfigError` naming the dotted key path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .channel import ArrayGeometry, ScenarioConfig, SystemDims, build_statistics, zero_link

__all__ = ["ConfigError", "RunConfig", "OptimizeSettings", "load_config", "parse_config", "run_statistics"]

SCHEMES = ("optimized", "uniform_random", "no_ris", "perfect_csit_mc")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class OptimizeSettings:
    tol: float = 1e-5
    restarts: int = 3
    max_outer: int = 100
    step: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    optimize: OptimizeSettings = field(default_factory=OptimizeSettings)
    scheme: str = "uniform_random"
    zero_links: tuple = ()
    trace_scale: tuple = (1.0, 1.0, 1.0)  # fault injection on tr T_i, for validation tests

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _take(node, path, allowed):
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ConfigError(path, "expected a mapping")
    for key in node:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")
    return node


def _num(node, key, path, default, *, integer=False, positive=False, nonneg=False):
    full = f"{path}.{key}"
    if key not in node:
        return default
    val = node[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(full, f"expected a number, got {val!r}")
    if integer:
        if float(val) != int(val):
            raise ConfigError(full, f"expected an integer, got {val!r}")
        val = int(val)
    else:
        val = float(val)
        if not np.isfinite(val):
            raise ConfigError(full, "must be finite")
    if positive and not val > 0:
        raise ConfigError(full, "must be positive")
    if nonneg and val < 0:
        raise ConfigError(full, "must be nonnegative")
    return val


def _point(node, key, path, default):
    full = f"{path}.{key}"
    if key not in node:
        return default
    val = node[key]
    if not isinstance(val, (list, tuple)) or len(val) != 2:
        raise ConfigError(full, "expected [x, y] in meters")
    out = []
    for i, c in enumerate(val):
        if isinstance(c, bool) or not isinstance(c, (int, float)):
            raise ConfigError(f"{full}[{i}]", f"expected a number, got {c!r}")
        out.append(float(c))
    return tuple(out)


def parse_config(raw: dict | None) -> RunConfig:
    """Build a :class:`RunConfig` from an already-parsed mapping."""
    base = ScenarioConfig()
    top = _take(
        raw, "", {"dims", "geometry", "power", "gains", "rician", "arrays", "mc", "optimize", "scheme", "scenario", "faults"}
    )

    d = _take(top.get("dims"), "dims", {"n", "l", "k"})
    dims = SystemDims(
        _num(d, "n", "dims", base.dims.n, integer=True, positive=True),
        _num(d, "l", "dims", base.dims.l, integer=True, positive=True),
        _num(d, "k", "dims", base.dims.k, integer=True, positive=True),
    )

    g = _take(top.get("geometry"), "geometry", {"bs", "ris", "user"})
    p = _take(top.get("power"), "power", {"p_dbm", "noise_dbm", "bandwidth_hz", "budget_scale"})
    budget_scale = base.budget_scale
    if p.get("budget_scale") is not None:
        budget_scale = _num(p, "budget_scale", "power", None, positive=True)
    gn = _take(top.get("gains"), "gains", {"gt_dbi", "gr_dbi"})
    r = _take(top.get("rician"), "rician", {"kappa0", "kappa1", "kappa2"})
    kappa = tuple(_num(r, f"kappa{i}", "rician", base.kappa[i], nonneg=True) for i in range(3))

    a = _take(top.get("arrays"), "arrays", {"link0", "link1", "link2"})
    arrays = {}
    for link, sides in base.arrays.items():
        ln = _take(a.get(link), f"arrays.{link}", {"tx", "rx"})
        arrays[link] = {}
        for side, geom in sides.items():
            path = f"arrays.{link}.{side}"
            s = _take(ln.get(side), path, {"ds", "eta_deg", "delta_deg"})
            try:
                arrays[link][side] = ArrayGeometry(
                    _num(s, "ds", path, geom.ds, positive=True),
                    _num(s, "eta_deg", path, geom.eta_deg),
                    _num(s, "delta_deg", path, geom.delta_deg, positive=True),
                )
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(path, str(exc)) from exc

    m = _take(top.get("mc"), "mc", {"trials", "seed"})
    o = _take(top.get("optimize"), "optimize", {"tol", "restarts", "max_outer", "step"})
    opt = OptimizeSettings(
        tol=_num(o, "tol", "optimize", 1e-5, positive=True),
        restarts=_num(o, "restarts", "optimize", 3, integer=True, positive=True),
        max_outer=_num(o, "max_outer", "optimize", 100, integer=True, positive=True),
        step=_num(o, "step", "optimize", 0.1, positive=True),
    )

    scheme = top.get("scheme", "uniform_random")
    if scheme not in SCHEMES:
        raise ConfigError("scheme", f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")

    sc = _take(top.get("scenario"), "scenario", {"zero_links"})
    zl = sc.get("zero_links", [])
    if not isinstance(zl, (list, tuple)) or any(isinstance(i, bool) or i not in (0, 1, 2) for i in zl):
        raise ConfigError("scenario.zero_links", "expected a list drawn from 0, 1, 2")

    f = _take(top.get("faults"), "faults", {"trace_scale"})
    ts = _take(f.get("trace_scale"), "faults.trace_scale", {"link0", "link1", "link2"})
    trace_scale = tuple(_num(ts, f"link{i}", "faults.trace_scale", 1.0, positive=True) for i in range(3))

    try:
        scenario = ScenarioConfig(
            dims=dims,
            bs_pos=_point(g, "bs", "geometry", base.bs_pos),
            ris_pos=_point(g, "ris", "geometry", base.ris_pos),
            user_pos=_point(g, "user", "geometry", base.user_pos),
            p_dbm=_num(p, "p_dbm", "power", base.p_dbm),
            noise_dbm=_num(p, "noise_dbm", "power", base.noise_dbm),
            bandwidth_hz=_num(p, "bandwidth_hz", "power", base.bandwidth_hz, positive=True),
            gt_dbi=_num(gn, "gt_dbi", "gains", base.gt_dbi),
            gr_dbi=_num(gn, "gr_dbi", "gains", base.gr_dbi),
            kappa=kappa,
            arrays=arrays,
            mc_trials=_num(m, "trials", "mc", base.mc_trials, integer=True, positive=True),
            seed=_num(m, "seed", "mc", base.seed, integer=True, nonneg=True),
            budget_scale=budget_scale,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("geometry", str(exc)) from exc
    return RunConfig(scenario=scenario, optimize=opt, scheme=scheme, zero_links=tuple(sorted(set(zl))), trace_scale=trace_scale)


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML scenario file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"invalid YAML in {path}: {exc}") from exc
    return parse_config(raw)


def run_statistics(cfg: RunConfig):
    """Statistics for ``cfg`` with zeroed links and trace faults applied."""
    stats = build_statistics(cfg.scenario)
    links = {}
    for i, link in enumerate(stats.links):
        if i in cfg.zero_links:
            link = zero_link(link)
        elif cfg.trace_scale[i] != 1.0:
            link = link.replace(T=link.T * cfg.trace_scale[i])
        links[f"link{i}"] = link
    return stats.with_links(**links)
