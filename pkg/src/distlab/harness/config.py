"""Experiment configuration files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

SCHEMA_VERSION = 1
KINDS = ("distcb", "squarecb", "fastcb", "odisco", "pdisco", "eluder", "proptest")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    env: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    out: str = "results"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version!r} (expected {SCHEMA_VERSION})")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if not isinstance(self.env, dict) or not isinstance(self.params, dict):
            raise ConfigError("env and params must be JSON objects")
        for key in ("K", "N", "batch"):
            v = self.params.get(key)
            if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < 0):
                raise ConfigError(f"{key} must be a non-negative integer, got {v!r}")
        delta = self.params.get("delta")
        if delta is not None and not (isinstance(delta, (int, float)) and 0 < delta < 1):
            raise ConfigError(f"delta must lie in (0, 1), got {delta!r}")
        if not self.seeds or any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {"kind", "env", "params", "seeds", "out", "schema_version"}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        if "kind" not in obj:
            raise ConfigError("config is missing 'kind'")
        obj = dict(obj)
        obj.setdefault("schema_version", SCHEMA_VERSION)
        return cls(**obj)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, excluding the output path and seeds."""
        d = self.to_dict()
        d.pop("out")
        d.pop("seeds")
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def parse_seeds(text: str) -> list[int]:
    """``"0..9"`` (inclusive range) or a comma list such as ``"1,4,7"``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split(".."))
            seeds = list(range(lo, hi + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse seeds {text!r}") from None
    if not seeds:
        raise ConfigError(f"seed list {text!r} is empty")
    return seeds
