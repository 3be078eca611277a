"""Experiment configuration: a YAML-backed dataclass with range checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

KINDS = ("pack", "correlate", "clt", "boundary", "cones", "nn", "oracle")
MODES = ("infinite", "finite")
SUBSTRATES = ("continuum", "lattice")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    kind: str
    dimension: int = 1
    mode: str = "infinite"
    substrate: str = "continuum"
    tau: float = 1.0
    lambdas: list = field(default_factory=lambda: [64.0])
    boxes: Optional[list] = None  # [[lo...], [hi...]] pairs in unit coordinates
    house: Optional[list] = None  # region A as a list of [lo, hi] box pairs
    replicates: int = 100
    seed: int = 12345
    options: dict = field(default_factory=dict)
    out: str = "results"

    def __post_init__(self):
        self.lambdas = [float(v) for v in self.lambdas]
        self.tau = float(self.tau)
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.substrate not in SUBSTRATES:
            raise ConfigError(f"substrate must be one of {SUBSTRATES}")
        if not isinstance(self.dimension, int) or not 1 <= self.dimension <= 3:
            raise ConfigError("dimension must be 1, 2 or 3")
        if self.substrate == "continuum" and not (math.isfinite(self.tau) and self.tau > 0):
            raise ConfigError("continuum experiments need a finite tau > 0")
        if self.substrate == "lattice" and self.kind != "pack":
            raise ConfigError(f"the {self.kind} experiment runs on the continuum substrate only")
        if not isinstance(self.replicates, int) or self.replicates < 1:
            raise ConfigError("replicates must be a positive integer")
        if not self.lambdas or any(not (v > 0 and math.isfinite(v)) for v in self.lambdas):
            raise ConfigError("lambdas must be a nonempty list of positive reals")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 63:
            raise ConfigError("seed must be an integer in [0, 2^63)")
        if self.kind == "boundary" and len(self.lambdas) < 3:
            raise ConfigError("boundary scaling needs at least three lambda values")
        if self.kind == "nn" and self.tau != 1.0:
            raise ConfigError("nn experiments use the unit-intensity spatial input (tau = 1)")
        for name, spec in (("boxes", self.boxes), ("house", self.house)):
            if spec is None:
                continue
            for pair in spec:
                if len(pair) != 2 or any(len(c) != self.dimension for c in pair):
                    raise ConfigError(f"{name} entries must be [lo, hi] corners of length d")
                if any(h <= l for l, h in zip(*pair)):
                    raise ConfigError(f"{name} boxes need strictly positive sides")
        if not isinstance(self.options, dict):
            raise ConfigError("options must be a mapping")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json_dict(self) -> dict[str, Any]:
        """``to_dict`` with an unbounded tau written as the string ``"inf"``."""
        d = self.to_dict()
        if math.isinf(self.tau):
            d["tau"] = "inf"
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "kind" not in data:
            raise ConfigError("config needs a 'kind'")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_yaml())

    def option(self, name: str, default):
        return self.options.get(name, default)
