"""Experiment configuration read from TOML.

A config file has top-level keys plus optional tables::

    seed = 7
    constellation = "qpsk"
    snr_db = [14.0, 15.0]

    [channel]
    spectrum_kind = "conditioned"
    kappa = 50.0

    [layout]          # N = users * antennas_per_user, M = round(N / beta)
    users = 2
    groups = 2
    antennas_per_user = 96
    beta = 1.5
    block_length = 33

    [[codes]]         # one entry per group
    kind = "regular"
    dv = 3
    dc = 9
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .channel import ChannelSpec
from .detector import DetectorConfig

__all__ = ["CodeSpec", "ConfigError", "Layout", "SimConfig", "load_config", "parse_snr_list"]


class ConfigError(ValueError):
    pass


@dataclass
class Layout:
    users: int = 2
    groups: int = 2
    antennas_per_user: int = 96
    beta: float = 1.5
    block_length: int = 1

    @property
    def n(self) -> int:
        return self.users * self.antennas_per_user

    @property
    def m(self) -> int:
        return int(round(self.n / self.beta))


@dataclass
class CodeSpec:
    kind: str = "regular"
    dv: int = 3
    dc: int = 6
    lambda_profile: dict | None = None
    rho_profile: dict | None = None
    seed: int = 0
    depth: int = 3

    def key(self, n: int) -> str:
        if self.kind == "regular":
            return f"reg_n{n}_dv{self.dv}_dc{self.dc}_s{self.seed}_d{self.depth}"
        if self.kind == "none":
            return f"uncoded_n{n}"
        blob = json.dumps([self.lambda_profile, self.rho_profile], sort_keys=True)
        return f"irr_n{n}_{hashlib.sha1(blob.encode()).hexdigest()[:10]}_s{self.seed}_d{self.depth}"


@dataclass
class SimConfig:
    seed: int = 0
    constellation: str = "qpsk"
    snr_db: list = field(default_factory=lambda: [10.0])
    mode: str = "uncoded"                  # uncoded | coded | genie
    channel_kind: str = "conditioned"      # conditioned | iid
    kappa: float = 1.0
    layout: Layout = field(default_factory=Layout)
    gammas: list = field(default_factory=lambda: [1.0, 1.0])
    codes: list = field(default_factory=list)
    frames: int = 100                      # per-SNR frame budget
    target_frame_errors: int = 100
    reuse: int = 1                         # frames per channel draw
    workers: int = 1
    chunk: int = 16                        # frames per worker task
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    # se-validate
    se_seeds: int = 100
    se_iters: int = 10
    # transfer measurement for threshold prediction
    transfer_rho: list = field(default_factory=lambda: [0.05, 30.0, 48])
    transfer_trials: int = 10
    code_cache: str = ""
    target_split: list | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        lay = self.layout
        if min(lay.users, lay.groups, lay.antennas_per_user, lay.block_length) < 1:
            raise ConfigError("layout counts must be positive")
        if lay.users % lay.groups:
            raise ConfigError(f"groups ({lay.groups}) must divide users ({lay.users})")
        if lay.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.mode not in ("uncoded", "coded", "genie"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.channel_kind not in ("iid", "conditioned"):
            raise ConfigError(f"unknown channel kind {self.channel_kind!r}")
        if len(self.gammas) != lay.groups:
            raise ConfigError(f"{len(self.gammas)} gammas for {lay.groups} groups")
        if self.mode == "coded" and len(self.codes) != lay.groups:
            raise ConfigError(f"coded mode needs one code per group, got {len(self.codes)}")
        if self.frames < 1 or self.target_frame_errors < 1 or self.reuse < 1 or self.workers < 1:
            raise ConfigError("frames, target_frame_errors, reuse and workers must be >= 1")
        if not self.snr_db:
            raise ConfigError("empty snr list")

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def m(self) -> int:
        return self.layout.m

    @property
    def channel(self) -> ChannelSpec:
        return ChannelSpec(self.m, self.n, self.channel_kind, self.kappa, self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_snr_list(text) -> list:
    """``"6:0.5:10"`` (start:step:stop, inclusive), ``"6,7,8"`` or a single number."""
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    text = str(text).strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3 or parts[1] <= 0 or parts[2] < parts[0]:
                raise ConfigError(f"bad snr range {text!r}; expected start:step:stop")
            start, step, stop = parts
            count = int(round((stop - start) / step)) + 1
            vals = [round(start + i * step, 10) for i in range(count)]
            return [v for v in vals if v <= stop + 1e-9]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot parse snr list {text!r}") from exc


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    return cls(**data)


def from_dict(data: dict) -> SimConfig:
    data = dict(data)
    try:
        chan = data.pop("channel", {})
        if chan:
            unknown = set(chan) - {"spectrum_kind", "kappa"}
            if unknown:
                raise ConfigError(f"unknown keys in [channel]: {sorted(unknown)}")
            data["channel_kind"] = chan.get("spectrum_kind", "conditioned")
            data["kappa"] = float(chan.get("kappa", 1.0))
        if "layout" in data:
            data["layout"] = _build(Layout, data["layout"], "[layout]")
        if "detector" in data:
            data["detector"] = _build(DetectorConfig, data["detector"], "[detector]")
        if "codes" in data:
            data["codes"] = [_build(CodeSpec, c, "[[codes]]") for c in data["codes"]]
        if "snr_db" in data:
            data["snr_db"] = parse_snr_list(data["snr_db"])
        return _build(SimConfig, data, "config")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> SimConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(data)
