"""Delay-Doppler channel synthesis and frame-to-frame evolution.

Each resolvable path contributes ``h * exp(-2j pi k l / MN) * Delta^k Pi^l``
to the time-domain channel, where ``Pi`` is the forward cyclic shift and
``Delta = diag(exp(2j pi i / MN))``.  Across frames the gains follow a
first-order Gauss-Markov process and the integer delay/Doppler indices take
rounded uniform random-walk steps, clamped to their supports.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import blob
from .errors import InvalidDimensionError, InvalidPathError
from .otfs import GridConfig, isfft_operator, sfft_operator


@dataclass(frozen=True)
class PathSet:
    gains: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=complex).reshape(-1)
        l = np.asarray(self.delays, dtype=np.int64).reshape(-1)
        k = np.asarray(self.dopplers, dtype=np.int64).reshape(-1)
        if not (g.size == l.size == k.size) or g.size < 1:
            raise InvalidPathError("path arrays must be nonempty and equally sized")
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "delays", l)
        object.__setattr__(self, "dopplers", k)

    @property
    def P(self) -> int:
        return self.gains.size

    def __iter__(self):
        return iter(zip(self.gains, self.delays, self.dopplers))


@dataclass(frozen=True)
class EvolutionParams:
    """Path statistics.  Defaults are the M=8, N=4 desk-scale setup."""

    p_count: int = 4
    l_max: int = 5
    k_max: int = 2
    rho: float = 0.6
    eps_min: int = -2
    eps_max: int = 2
    veps_min: int = -2
    veps_max: int = 2

    def __post_init__(self):
        if self.p_count < 1:
            raise InvalidPathError(f"need at least one path, got {self.p_count}")
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidPathError(f"rho must lie in [0, 1], got {self.rho}")
        if self.eps_min > self.eps_max or self.veps_min > self.veps_max:
            raise InvalidPathError("offset bounds must satisfy min <= max")
        if self.l_max < 0 or self.k_max < 0:
            raise InvalidPathError("l_max and k_max must be nonnegative")


@dataclass(frozen=True)
class DdChannel:
    grid: GridConfig
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        H = np.asarray(self.matrix, dtype=complex)
        if H.shape != (self.grid.MN, self.grid.MN):
            raise InvalidDimensionError(f"channel must be {self.grid.MN}x{self.grid.MN}, got {H.shape}")
        object.__setattr__(self, "matrix", H)


@dataclass(frozen=True)
class BuildOperators:
    permutation: np.ndarray = field(repr=False)
    phase: np.ndarray = field(repr=False)

    @classmethod
    def for_size(cls, MN: int) -> "BuildOperators":
        return cls(permutation=np.roll(np.eye(MN), 1, axis=0), phase=np.diag(np.exp(2j * np.pi * np.arange(MN) / MN)))


def complex_normal(rng: np.random.Generator, var: float, size) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    return np.sqrt(var / 2.0) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def init_paths(params: EvolutionParams, rng: np.random.Generator) -> PathSet:
    P = params.p_count
    gains = complex_normal(rng, 1.0 / P, P)
    delays = rng.integers(0, params.l_max, size=P, endpoint=True)
    dopplers = rng.integers(-params.k_max, params.k_max, size=P, endpoint=True)
    return PathSet(gains, delays, dopplers)


def evolve(paths: PathSet, params: EvolutionParams, rng: np.random.Generator) -> PathSet:
    P = paths.P
    eps = np.rint(rng.uniform(params.eps_min, params.eps_max, P)).astype(np.int64)
    veps = np.rint(rng.uniform(params.veps_min, params.veps_max, P)).astype(np.int64)
    innovation = complex_normal(rng, 1.0 / params.p_count, P)
    rho = params.rho
    gains = rho * paths.gains + np.sqrt(1.0 - rho * rho) * innovation
    delays = np.clip(paths.delays + eps, 0, params.l_max)
    dopplers = np.clip(paths.dopplers + veps, -params.k_max, params.k_max)
    return PathSet(gains, delays, dopplers)


def build_time_channel(paths: PathSet, grid: GridConfig) -> np.ndarray:
    """Time-domain channel matrix as a sum of phase-rotated cyclic shifts."""
    MN = grid.MN
    if np.any(paths.delays < 0) or np.any(paths.delays >= MN):
        raise InvalidPathError(f"delay indices must lie in [0, {MN - 1}], got {paths.delays.tolist()}")
    rows = np.arange(MN)
    H = np.zeros((MN, MN), dtype=complex)
    for h, l, k in paths:
        # Delta^k Pi^l has entry exp(2j pi k i / MN) at (i, i - l mod MN)
        phase = np.exp(2j * np.pi * ((k * rows - k * l) % MN) / MN)
        H[rows, (rows - l) % MN] += h * phase
    return H


def to_dd(H_T: np.ndarray, grid: GridConfig) -> DdChannel:
    H_T = np.asarray(H_T, dtype=complex)
    if H_T.shape != (grid.MN, grid.MN):
        raise InvalidDimensionError(f"time-domain channel must be {grid.MN}x{grid.MN}, got {H_T.shape}")
    return DdChannel(grid, sfft_operator(grid) @ H_T @ isfft_operator(grid))


def corrupt_estimate(H: DdChannel, nmse: float, rng: np.random.Generator) -> DdChannel:
    """Add white CN noise with ``E||e||_F^2 = nmse * ||H||_F^2``."""
    if nmse < 0:
        raise ValueError(f"nmse must be nonnegative, got {nmse}")
    if nmse == 0:
        return H
    MN = H.grid.MN
    energy = np.linalg.norm(H.matrix) ** 2
    e = complex_normal(rng, nmse * energy / (MN * MN), (MN, MN))
    return DdChannel(H.grid, H.matrix + e)


def channel_sequence(params: EvolutionParams, grid: GridConfig, length: int, seed) -> list[tuple[PathSet, DdChannel]]:
    """Consecutive frames of an evolving channel; ``seed`` may be an int or a Generator."""
    if length < 1:
        raise ValueError(f"sequence length must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    paths = init_paths(params, rng)
    out = []
    for t in range(length):
        if t:
            paths = evolve(paths, params, rng)
        out.append((paths, to_dd(build_time_channel(paths, grid), grid)))
    return out


def save_sequence(path, seq, params: EvolutionParams, seed) -> None:
    grid = seq[0][1].grid
    blob.write_blob(
        path,
        "channel_sequence",
        1,
        {"M": grid.M, "N": grid.N, "P": params.p_count, "seed": seed,
         "carrier_hz": grid.carrier_hz, "delta_f_hz": grid.delta_f_hz},
        {
            "H_dd": np.stack([ch.matrix for _, ch in seq]),
            "gains": np.stack([p.gains for p, _ in seq]),
            "delays": np.stack([p.delays for p, _ in seq]),
            "dopplers": np.stack([p.dopplers for p, _ in seq]),
        },
    )


def load_sequence(path) -> tuple[dict, list[tuple[PathSet, DdChannel]]]:
    header, arr = blob.read_blob(path, "channel_sequence")
    meta = header["meta"]
    grid = GridConfig(meta["M"], meta["N"], meta["carrier_hz"], meta["delta_f_hz"])
    seq = [
        (PathSet(g, l, k), DdChannel(grid, H))
        for g, l, k, H in zip(arr["gains"], arr["delays"], arr["dopplers"], arr["H_dd"])
    ]
    return meta, seq
