"""Experiment configuration: nested dataclasses read from flat ``dotted.key = value`` text."""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, get_type_hints

import numpy as np

from .problems import G_PRESETS, HEXT_PRESETS, M0_PRESETS
from .rom import VARIANTS

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "apply_overrides",
    "dump_config",
    "stage_seed",
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class MeshCfg:
    n_div: int = 8


@dataclass
class TimeCfg:
    T: float = 0.5
    tau: float = 1e-3
    tau_online: float = 1e-3


@dataclass
class ModelCfg:
    alpha: float = 1.4
    m0_preset: str = "relaxation"
    g_preset: str = "relaxation"
    hext_preset: str = "zero"


@dataclass
class ParamCfg:
    s: int = 1


@dataclass
class SamplingCfg:
    n_snapshots: int = 32
    n_test: int = 10
    seed: int = 0


@dataclass
class PodCfg:
    eps_sq_m: float = 1e-5
    eps_sq_v: float = 1e-5
    eps_sq_lambda: float = 1e-5


@dataclass
class OnlineCfg:
    variant: str = "SS-OG-3x"
    dims: tuple = (6, 12, 18, 24, 30)
    init_space: str = "magnetization"
    taus: tuple = (1e-2, 5e-3, 2.5e-3)
    tau_ref: float = 6.25e-4
    tau_J: int = 30


@dataclass
class SgCfg:
    threshold: float = 1e-3
    degree: int = 1
    thresholds: tuple = (1.0, 0.3, 0.1, 0.03, 0.01, 0.003)
    rb_eps_sq: tuple = (1e-1, 1e-6)


@dataclass
class HrefCfg:
    n_divs: tuple = (4, 8, 16)
    ref_n_div: int = 32
    y: float = 0.7


@dataclass
class ExperimentConfig:
    mesh: MeshCfg = field(default_factory=MeshCfg)
    time: TimeCfg = field(default_factory=TimeCfg)
    model: ModelCfg = field(default_factory=ModelCfg)
    param: ParamCfg = field(default_factory=ParamCfg)
    sampling: SamplingCfg = field(default_factory=SamplingCfg)
    pod: PodCfg = field(default_factory=PodCfg)
    online: OnlineCfg = field(default_factory=OnlineCfg)
    sg: SgCfg = field(default_factory=SgCfg)
    href: HrefCfg = field(default_factory=HrefCfg)

    def validate(self) -> "ExperimentConfig":
        pos = {
            "mesh.n_div": self.mesh.n_div,
            "time.T": self.time.T,
            "time.tau": self.time.tau,
            "time.tau_online": self.time.tau_online,
            "model.alpha": self.model.alpha,
            "param.s": self.param.s,
            "sampling.n_snapshots": self.sampling.n_snapshots,
            "sampling.n_test": self.sampling.n_test,
            "online.tau_ref": self.online.tau_ref,
            "online.tau_J": self.online.tau_J,
            "sg.threshold": self.sg.threshold,
            "sg.degree": self.sg.degree,
            "href.ref_n_div": self.href.ref_n_div,
        }
        for key, val in pos.items():
            if not val > 0:
                raise ConfigError(f"{key}: must be positive, got {val}")
        for key, vals in {
            "online.dims": self.online.dims,
            "online.taus": self.online.taus,
            "sg.thresholds": self.sg.thresholds,
            "href.n_divs": self.href.n_divs,
        }.items():
            if not vals or any(not v > 0 for v in vals):
                raise ConfigError(f"{key}: must be a nonempty list of positive values")
        if self.sampling.seed < 0:
            raise ConfigError("sampling.seed: must be nonnegative")
        for key in ("eps_sq_m", "eps_sq_v", "eps_sq_lambda"):
            v = getattr(self.pod, key)
            if not 0 < v < 1:
                raise ConfigError(f"pod.{key}: must lie in (0, 1), got {v}")
        if any(not 0 < v < 1 for v in self.sg.rb_eps_sq):
            raise ConfigError("sg.rb_eps_sq: tolerances must lie in (0, 1)")
        choices = {
            "model.m0_preset": (self.model.m0_preset, M0_PRESETS),
            "model.g_preset": (self.model.g_preset, G_PRESETS),
            "model.hext_preset": (self.model.hext_preset, HEXT_PRESETS),
            "online.variant": (self.online.variant, VARIANTS),
            "online.init_space": (self.online.init_space, ("velocity", "magnetization", "full")),
        }
        for key, (val, allowed) in choices.items():
            if val not in allowed:
                raise ConfigError(f"{key}: {val!r} not in {sorted(allowed)}")
        for key, tau in (("time.tau", self.time.tau), ("time.tau_online", self.time.tau_online)):
            n = self.time.T / tau
            if abs(n - round(n)) > 1e-9 * max(n, 1.0) or round(n) < 1:
                raise ConfigError(f"{key}: T / tau = {n:g} must be a positive integer")
        return self


def _convert(raw: str, typ, key: str):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        if typ is tuple:
            return tuple(float(v) if any(c in v for c in ".eE") else int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
    raise ConfigError(f"{key}: unsupported type {typ}")


def _section_types(cfg: ExperimentConfig):
    out = {}
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        hints = get_type_hints(type(section))
        for g in fields(section):
            out[f"{f.name}.{g.name}"] = hints[g.name]
    return out


def apply_overrides(cfg: ExperimentConfig, items: dict) -> ExperimentConfig:
    """Return a copy of ``cfg`` with dotted-key string values applied."""
    cfg = dataclasses.replace(cfg, **{f.name: dataclasses.replace(getattr(cfg, f.name)) for f in fields(cfg)})
    types = _section_types(cfg)
    for key, raw in items.items():
        if key == "pod.eps_sq":
            for q in ("m", "v", "lambda"):
                setattr(cfg.pod, f"eps_sq_{q}", _convert(raw, float, key))
            continue
        if key not in types:
            raise ConfigError(f"{key}: unknown configuration key")
        section, name = key.split(".")
        setattr(getattr(cfg, section), name, _convert(str(raw), types[key], key))
    return cfg


def parse_config_text(text: str) -> dict:
    items = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key in items:
            raise ConfigError(f"{key}: duplicated on line {lineno}")
        items[key] = val
    return items


def load_config(path=None, overrides: dict | None = None, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    if path is not None:
        cfg = apply_overrides(cfg, parse_config_text(Path(path).read_text()))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()


def _fmt(v: Any) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        for g in fields(section):
            lines.append(f"{f.name}.{g.name} = {_fmt(getattr(section, g.name))}")
    return "\n".join(lines) + "\n"


def stage_seed(root: int, stage: str) -> np.random.SeedSequence:
    """Independent, reproducible seed for a named stage derived from the root seed."""
    return np.random.SeedSequence(root, spawn_key=(zlib.crc32(stage.encode()),))
