"""Synthetic directional traces calibrated to published per-trace medians.

Interarrival times are log-normal around the profile's median; sizes are the
median plus Laplace noise, rounded and clamped to Ethernet frame bounds. The
generator is a stand-in for real captures: it matches medians, nothing more.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .seeding import derive_seed, rng
from .trace import ClientKind, Direction, DirectionalTrace, TraceLabel, trace_from_arrays

MIN_FRAME = 54
MAX_FRAME = 1514


@dataclass(frozen=True)
class ClassProfile:
    name: str
    direction: Direction
    median_dt: float
    median_sz: float
    sigma_log_dt: float = 1.0
    sz_spread: float = 200.0
    # descriptive fields, carried into the trace label
    application: str | None = None
    client_kind: ClientKind = ClientKind.STANDARD
    tunnel: str | None = None
    reference_duration: float | None = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("profile name must be non-empty")
        if not self.median_dt > 0:
            raise ValueError(f"{self.name}: median_dt must be > 0")
        if not MIN_FRAME <= self.median_sz <= MAX_FRAME:
            raise ValueError(f"{self.name}: median_sz must be in [{MIN_FRAME}, {MAX_FRAME}]")
        if self.sigma_log_dt < 0 or self.sz_spread < 0:
            raise ValueError(f"{self.name}: dispersion must be >= 0")

    def label(self) -> TraceLabel:
        return TraceLabel(self.name, self.client_kind, self.tunnel)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassProfile":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown profile fields: {sorted(extra)}")
        d = dict(d)
        d["direction"] = Direction(d["direction"])
        if "client_kind" in d:
            d["client_kind"] = ClientKind(d["client_kind"])
        return cls(**d)


@dataclass(frozen=True)
class SynthConfig:
    n_packets: int
    seed: int
    profiles: tuple[ClassProfile, ...]

    def __post_init__(self):
        if self.n_packets < 2:
            raise ValueError("n_packets must be >= 2")
        object.__setattr__(self, "profiles", tuple(self.profiles))


def sample_trace(profile: ClassProfile, n: int, seed: int) -> DirectionalTrace:
    if n < 2:
        raise ValueError("a trace needs at least 2 packets")
    gen = rng(seed)
    if profile.sigma_log_dt > 0:
        dt = gen.lognormal(np.log(profile.median_dt), profile.sigma_log_dt, size=n - 1)
    else:
        dt = np.full(n - 1, profile.median_dt)
    if profile.sz_spread > 0:
        noise = gen.laplace(0.0, profile.sz_spread / 2.0, size=n)
    else:
        noise = np.zeros(n)
    sizes = np.clip(np.round(profile.median_sz + noise), MIN_FRAME, MAX_FRAME).astype(int)
    times = np.concatenate([[0.0], np.cumsum(dt)])
    return trace_from_arrays(times, sizes, profile.direction, profile.label())


def build_corpus(cfg: SynthConfig) -> list[DirectionalTrace]:
    if not cfg.profiles:
        raise ValueError("no profiles given")
    return [sample_trace(p, cfg.n_packets, derive_seed(cfg.seed, i))
            for i, p in enumerate(cfg.profiles)]


def load_profiles(source: str | Path) -> list[ClassProfile]:
    """Read profiles from a JSON file (a list, or ``{"profiles": [...]}``)."""
    doc = json.loads(Path(source).read_text(encoding="utf-8"))
    return profiles_from_doc(doc)


def profiles_from_doc(doc) -> list[ClassProfile]:
    items = doc["profiles"] if isinstance(doc, dict) else doc
    if not isinstance(items, list) or not items:
        raise ValueError("profile file holds no profiles")
    profiles = [ClassProfile.from_dict(d) for d in items]
    names = [p.name for p in profiles]
    if len(set(names)) != len(names):
        raise ValueError("profile names must be unique")
    return profiles


def builtin_profiles(name: str) -> list[ClassProfile]:
    """Profiles shipped with the package, e.g. ``"paper_table2"``."""
    res = resources.files("crypto_aegis") / "profiles" / f"{name}.json"
    return profiles_from_doc(json.loads(res.read_text(encoding="utf-8")))

