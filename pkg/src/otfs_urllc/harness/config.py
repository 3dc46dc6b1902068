"""Experiment configuration loaded from a YAML key/value file.

Every section is optional; omitted keys take the defaults below, which
reproduce the M=8, N=4 QPSK, K=32 setup.  Example::

    seed: 7
    grid: {M: 8, N: 4, carrier_hz: 4.0e9, delta_f_hz: 15.0e3}
    channel: {p_count: 4, l_max: 5, k_max: 2, rho: 0.6,
              eps_min: -2, eps_max: 2, veps_min: -2, veps_max: 2}
    link: {K: 32, order: 4, nmse: 0.01, tau: 5}     # P0 defaults to K
    train: {n_examples: 20000, seq_len: 55, snr_db: 15.0,
            lr: 1.0e-3, batch_size: 64, max_iters: 12000, patience: 20, eval_every: 100,
            receiver: estimate}
    sweep: {snr_grid_db: [5, 10, 15, 20], n_channels: 100,
            schemes: [ddcl, ddcl_theory, mmse_baseline, zf_baseline, perfect_icsi]}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..channel import EvolutionParams
from ..ddcl.training import TrainHyper
from ..errors import ConfigError, OtfsError
from ..otfs import SUPPORTED_ORDERS, GridConfig

RECEIVER_CSI = ("estimate", "true")
SCHEMES = ("ddcl", "ddcl_theory", "mmse_baseline", "zf_baseline", "perfect_icsi")


@dataclass(frozen=True)
class LinkConfig:
    K: int = 32
    P0: float | None = None
    order: int = 4
    nmse: float = 0.01
    tau: int = 5

    @property
    def power(self) -> float:
        return float(self.K) if self.P0 is None else float(self.P0)


@dataclass(frozen=True)
class TrainConfig:
    n_examples: int = 20000
    seq_len: int = 55
    snr_db: float = 15.0
    lr: float = 1e-3
    batch_size: int = 64
    max_iters: int = 12000
    patience: int = 20
    eval_every: int = 100
    val_fraction: float = 0.1
    receiver: str = "estimate"

    def hyper(self) -> TrainHyper:
        return TrainHyper(lr=self.lr, batch_size=self.batch_size, max_iters=self.max_iters,
                          patience=self.patience, eval_every=self.eval_every,
                          val_fraction=self.val_fraction, receiver=self.receiver)


@dataclass(frozen=True)
class SweepConfig:
    snr_grid_db: tuple = (5.0, 10.0, 15.0, 20.0)
    n_channels: int = 100
    n_frames_per_point: int = 100000
    max_frames_per_point: int = 10**8
    min_errors: int = 100
    schemes: tuple = SCHEMES
    perfect_iters: int = 300
    perfect_lr: float = 0.01
    # baselines use the transmitted K = MN stream layout with this constellation
    baseline_order: int = 4
    # channel the ddcl receiver builds its MMSE from: the current-frame estimate or the truth
    ddcl_receiver: str = "estimate"


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    channel: EvolutionParams = field(default_factory=EvolutionParams)
    link: LinkConfig = field(default_factory=LinkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0

    def __post_init__(self):
        MN = self.grid.MN
        if not 1 <= self.link.K <= MN:
            raise ConfigError(f"link.K must lie in [1, {MN}], got {self.link.K}")
        if self.link.order not in SUPPORTED_ORDERS or self.sweep.baseline_order not in SUPPORTED_ORDERS:
            raise ConfigError(f"modulation orders must be in {SUPPORTED_ORDERS}")
        if self.link.tau < 1:
            raise ConfigError("link.tau must be >= 1")
        if self.link.nmse < 0:
            raise ConfigError("link.nmse must be >= 0")
        if self.link.power <= 0:
            raise ConfigError("link.P0 must be positive")
        if self.channel.l_max >= MN:
            raise ConfigError(f"channel.l_max must be < MN = {MN}")
        if self.train.seq_len <= self.link.tau:
            raise ConfigError("train.seq_len must exceed link.tau")
        if self.train.n_examples < 1:
            raise ConfigError("train.n_examples must be >= 1")
        if not self.sweep.snr_grid_db:
            raise ConfigError("sweep.snr_grid_db must be nonempty")
        bad = set(self.sweep.schemes) - set(SCHEMES)
        if bad:
            raise ConfigError(f"unknown schemes {sorted(bad)}; choose from {SCHEMES}")
        if self.train.receiver not in RECEIVER_CSI:
            raise ConfigError(f"train.receiver must be one of {RECEIVER_CSI}")
        if self.sweep.ddcl_receiver not in RECEIVER_CSI:
            raise ConfigError(f"sweep.ddcl_receiver must be one of {RECEIVER_CSI}")
        if self.sweep.n_channels < 1 or self.sweep.n_frames_per_point < 1:
            raise ConfigError("sweep.n_channels and sweep.n_frames_per_point must be >= 1")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"grid": GridConfig, "channel": EvolutionParams, "link": LinkConfig,
             "train": TrainConfig, "sweep": SweepConfig}


def config_from_dict(d: dict | None) -> ExperimentConfig:
    d = dict(d or {})
    kwargs = {}
    try:
        for name, cls in _SECTIONS.items():
            sec = d.pop(name, None) or {}
            if not isinstance(sec, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            known = {f.name for f in dataclasses.fields(cls)}
            unknown = set(sec) - known
            if unknown:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
            sec = {k: tuple(v) if isinstance(v, list) else v for k, v in sec.items()}
            kwargs[name] = cls(**sec)
        if "seed" in d:
            kwargs["seed"] = int(d.pop("seed"))
        if d:
            raise ConfigError(f"unknown top-level keys: {sorted(d)}")
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (OtfsError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v

    return yaml.safe_dump(plain(cfg.to_dict()), sort_keys=False)
