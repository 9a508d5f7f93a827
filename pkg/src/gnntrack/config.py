"""Single JSON pipeline configuration with ``section.key=value`` overrides."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dml import DmlConfig
from .errors import ConfigError
from .gnn import GnnConfig
from . import synth


@dataclass
class PipelineConfig:
    seed: int = 0
    alpha: float = 2.0          # neighborhood multiplier, 2 or 4 in practice
    threshold: float = 0.5      # edge activation threshold
    preset: str = "desk"
    dml: DmlConfig = field(default_factory=DmlConfig)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    synth: dict = field(default_factory=dict)   # overrides on top of the preset

    def __post_init__(self):
        self.propagate_seed()

    def propagate_seed(self):
        """Every stochastic component draws from the top-level seed."""
        self.dml.seed = self.seed
        self.gnn.seed = self.seed

    def synth_config(self, seed=None):
        try:
            cfg = synth.preset(self.preset, **{**self.synth, "seed": self.seed if seed is None else seed})
            cfg.validate()
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"synth: {e}") from None
        return cfg

    def validate(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        self.gnn.validate()
        for k in ("kappa", "m", "d_dml", "epochs", "batches_per_epoch"):
            if getattr(self.dml, k) < 1:
                raise ConfigError(f"dml.{k} must be positive")
        if self.dml.m < 2:
            raise ConfigError("dml.m must be at least 2 to form positive pairs")
        self.synth_config()
        return self

    def to_dict(self):
        return {"seed": self.seed, "alpha": self.alpha, "threshold": self.threshold,
                "preset": self.preset, "dml": self.dml.to_dict(), "gnn": self.gnn.to_dict(),
                "synth": {k: list(v) if isinstance(v, tuple) else v for k, v in self.synth.items()}}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        dml = _build(DmlConfig, d.pop("dml", {}), "dml")
        gnn = _build(GnnConfig, d.pop("gnn", {}), "gnn")
        try:
            return cls(dml=dml, gnn=gnn, **d).validate()
        except TypeError as e:
            raise ConfigError(str(e)) from None


def _build(kind, values, section):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name: f for f in dataclasses.fields(kind)}
    unknown = set(values) - set(names)
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    return kind(**kw)


def load_config(path=None, overrides=()):
    """Read a JSON config (or defaults) and apply ``key=value`` overrides.

    Override values are parsed as JSON when possible, else taken as strings:
    ``gnn.epochs=3``, ``synth.n_cells=20``, ``preset=high_motion``.
    """
    data = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}:{e.lineno}: {e.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be an object")
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        *sections, leaf = key.split(".")
        node = data
        for s in sections:
            node = node.setdefault(s, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {s} is not a section")
        node[leaf] = value
    return PipelineConfig.from_dict(data)
