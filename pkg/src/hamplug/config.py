"""Run configuration: one INI file with sections, overridable by ``section.key=value``."""

from __future__ import annotations

import configparser
import copy
import io
import math
from pathlib import Path

from .geometry import Dimension, DimensionError
from .host import EllipsoidHost, build_flow_box, insert_plug
from .plug import EntryRegion, PlugGeometry
from .trap import TrapProfile
from .volume import PsiProfile, VolumeModel

DEFAULTS: dict[str, dict[str, object]] = {
    "geometry": {"n": 3},
    "plug": {"delta": 1.0, "eps": 1.0, "lam": 0.5},
    "trap": {"c": 0.5, "Z": 0.76, "sigma": 0.1, "plateau": 0.5, "ell_b": 0.25,
             "ell_c": 0.35, "k": 0.05, "a": 1.0},
    # psi plateau / support as fractions of eps
    "psi": {"plateau": 0.125, "support": 0.5},
    "host": {"orbit": 1, "chart_delta": 0.45, "chart_eps": 0.55, "mu": 0.3, "nu": 0.5,
             "t_max": 1000.0, "nearby": 50},
    "tolerances": {"residual": 1e-10, "integrator": 1e-10, "trap": 1e-12, "matching": 1e-6,
                   "volume": 1e-6, "identity": 1e-8, "graph": 1e-8, "fd_gradient": 1e-6},
    "run": {"seed": 0, "workers": 1, "t_max": 1e4, "residual_points": 1000,
            "matching_entries": 100, "grid": 100_000, "shell_points": 1000,
            "volume_samples": 100, "volume_T": 1.0, "positivity_samples": 10_000,
            "trap_refine": 2, "trap_points": 3, "trap_probe": 200.0, "tube_radius": 0.1},
}


class ConfigError(ValueError):
    pass


def _coerce(default, raw: str, where: str):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


class Config:
    """Validated parameters; build domain objects with the ``profile()``-style helpers."""

    def __init__(self, values: dict | None = None):
        self.values = copy.deepcopy(DEFAULTS if values is None else values)
        self.validate()

    # -- access
    def __getitem__(self, key: str):
        sec, _, name = key.partition(".")
        return self.values[sec][name]

    def set(self, key: str, raw) -> None:
        sec, dot, name = key.partition(".")
        if not dot or sec not in DEFAULTS or name not in DEFAULTS[sec]:
            raise ConfigError(f"{key}: unknown setting")
        default = DEFAULTS[sec][name]
        self.values[sec][name] = _coerce(default, str(raw), key) if isinstance(raw, str) else type(default)(raw)

    def override(self, assignments) -> "Config":
        for a in assignments or ():
            key, eq, raw = a.partition("=")
            if not eq:
                raise ConfigError(f"{a}: expected section.key=value")
            self.set(key.strip(), raw.strip())
        self.validate()
        return self

    def as_dict(self) -> dict:
        return copy.deepcopy(self.values)

    # -- validation
    def validate(self) -> None:
        v = self.values
        try:
            Dimension(v["geometry"]["n"])
        except DimensionError as exc:
            raise ConfigError(f"geometry.n: {exc}") from None
        for key in ("plug.delta", "plug.eps", "plug.lam", "trap.c", "trap.Z", "trap.sigma",
                    "trap.ell_b", "trap.ell_c", "host.chart_delta", "host.chart_eps", "host.mu",
                    "host.nu", "host.t_max", "run.t_max", "run.volume_T", "run.tube_radius",
                    "run.trap_probe"):
            if not self[key] > 0 or not math.isfinite(self[key]):
                raise ConfigError(f"{key}: must be positive and finite, got {self[key]!r}")
        for key, val in v["tolerances"].items():
            if not 0 < val < 1:
                raise ConfigError(f"tolerances.{key}: must lie in (0, 1), got {val!r}")
        if not 0 <= self["trap.a"] <= 1:
            raise ConfigError("trap.a: must lie in [0, 1]")
        if not 0 <= self["trap.k"] <= 0.1:
            raise ConfigError("trap.k: must lie in [0, 0.1]")
        if not 0 <= self["trap.plateau"] < 1:
            raise ConfigError("trap.plateau: must lie in [0, 1)")
        if not self["trap.ell_c"] > self["trap.ell_b"]:
            raise ConfigError("trap.ell_c: must exceed trap.ell_b")
        if not 0 < self["psi.plateau"] < self["psi.support"] <= 1:
            raise ConfigError("psi.plateau / psi.support: need 0 < plateau < support <= 1")
        if not 1 <= self["host.orbit"] <= v["geometry"]["n"]:
            raise ConfigError(f"host.orbit: must lie in 1..{v['geometry']['n']}")
        for key in ("run.residual_points", "run.matching_entries", "run.grid", "run.shell_points",
                    "run.volume_samples", "run.positivity_samples", "run.workers",
                    "run.trap_points", "host.nearby"):
            if self[key] < 1:
                raise ConfigError(f"{key}: must be at least 1")
        if self["run.trap_refine"] < 0:
            raise ConfigError("run.trap_refine: must be non-negative")
        # nesting of the plug boxes and the placed support
        try:
            self.geometry()
        except ValueError as exc:
            raise ConfigError(f"plug.lam: {exc}") from None
        g = self.geometry()
        reach = self["host.mu"] * (g.delta + g.trapped_radius() * math.sqrt(g.profile.m))
        if reach > self["host.chart_delta"] or self["host.nu"] * self["plug.eps"] > self["host.chart_eps"]:
            raise ConfigError("host.mu / host.nu: plug box does not fit inside the chart")

    # -- builders
    def profile(self) -> TrapProfile:
        t = self.values["trap"]
        return TrapProfile(n=self["geometry.n"], c=t["c"], Z=t["Z"], sigma=t["sigma"],
                           plateau=t["plateau"], ell_b=t["ell_b"], ell_c=t["ell_c"], k=t["k"],
                           a=t["a"])

    def geometry(self) -> PlugGeometry:
        p = self.values["plug"]
        return PlugGeometry(self.profile(), p["delta"], p["eps"], p["lam"])

    def psi(self) -> PsiProfile:
        e = self["plug.eps"]
        return PsiProfile(e, self["psi.plateau"] * e, self["psi.support"] * e)

    def volume_model(self) -> VolumeModel:
        return VolumeModel(self.geometry(), self.psi())

    def host(self) -> EllipsoidHost:
        return EllipsoidHost(self["geometry.n"])

    def inserted(self, offset=None):
        host = self.host()
        chart = build_flow_box(host, self["host.orbit"], self["host.chart_delta"], self["host.chart_eps"])
        return insert_plug(host, chart, self.geometry(), mu=self["host.mu"], nu=self["host.nu"],
                           offset=offset)

    def entry_region(self) -> EntryRegion:
        g = self.geometry()
        r = g.trapped_radius()
        return EntryRegion(tuple([r] * g.profile.m), 0.1 * r, points=self["run.trap_points"])


def load_config(path: str | Path | None = None, overrides=None) -> Config:
    values = copy.deepcopy(DEFAULTS)
    if path is not None:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
        for sec in cp.sections():
            if sec not in DEFAULTS:
                raise ConfigError(f"[{sec}]: unknown section")
            for key, raw in cp.items(sec):
                if key not in DEFAULTS[sec]:
                    raise ConfigError(f"{sec}.{key}: unknown setting")
                values[sec][key] = _coerce(DEFAULTS[sec][key], raw, f"{sec}.{key}")
    cfg = Config.__new__(Config)
    cfg.values = values
    cfg.validate()
    return cfg.override(overrides)


def dump_config(cfg: Config) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for sec, kv in cfg.values.items():
        cp[sec] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in kv.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
