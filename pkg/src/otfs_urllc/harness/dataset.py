"""Training and held-out data cut from simulated channel sequences."""

from __future__ import annotations

import numpy as np

from ..channel import EvolutionParams, build_time_channel, corrupt_estimate, evolve, init_paths, to_dd
from ..ddcl.data import TrainingSet
from ..otfs import GridConfig
from .config import ExperimentConfig

# stream ids mixed into SeedSequence so train and test data never share draws
TRAIN_STREAM = 0
TEST_STREAM = 1


def simulate_frames(params: EvolutionParams, grid: GridConfig, n_seq: int, seq_len: int,
                    nmse: float, rng: np.random.Generator):
    """True and estimated DD channels, each ``(n_seq, seq_len, MN, MN)``."""
    MN = grid.MN
    truth = np.empty((n_seq, seq_len, MN, MN), dtype=complex)
    est = np.empty_like(truth)
    for s in range(n_seq):
        paths = init_paths(params, rng)
        for t in range(seq_len):
            if t:
                paths = evolve(paths, params, rng)
            H = to_dd(build_time_channel(paths, grid), grid)
            truth[s, t] = H.matrix
            est[s, t] = corrupt_estimate(H, nmse, rng).matrix
    return truth, est


def make_windows(grid, tau, truth, est, n_examples=None, meta=None) -> TrainingSet:
    n_seq, seq_len = truth.shape[:2]
    seq, time = np.meshgrid(np.arange(n_seq), np.arange(tau, seq_len), indexing="ij")
    seq, time = seq.ravel(), time.ravel()
    if n_examples is not None:
        seq, time = seq[:n_examples], time[:n_examples]
    return TrainingSet(grid, tau, est, truth, seq, time, dict(meta or {}))


def gen_dataset(cfg: ExperimentConfig, n_examples: int | None = None, stream: int = TRAIN_STREAM,
                seq_len: int | None = None) -> TrainingSet:
    """Windows of ``tau`` estimated past frames paired with the true current frame.

    Deterministic in ``(cfg, stream)``.  Sequences are drawn until
    ``n_examples`` windows exist; surplus windows of the last sequence are dropped.
    """
    n = cfg.train.n_examples if n_examples is None else n_examples
    L = cfg.train.seq_len if seq_len is None else seq_len
    tau = cfg.link.tau
    per_seq = L - tau
    n_seq = -(-n // per_seq)
    rng = np.random.default_rng([cfg.seed, stream])
    truth, est = simulate_frames(cfg.channel, cfg.grid, n_seq, L, cfg.link.nmse, rng)
    meta = {"seed": cfg.seed, "stream": stream, "nmse": cfg.link.nmse, "P": cfg.channel.p_count}
    return make_windows(cfg.grid, tau, truth, est, n, meta)


def gen_test_set(cfg: ExperimentConfig, n_channels: int | None = None) -> TrainingSet:
    """Held-out windows: one per independent sequence, so test channels are independent."""
    n = cfg.sweep.n_channels if n_channels is None else n_channels
    return gen_dataset(cfg, n, TEST_STREAM, seq_len=cfg.link.tau + 1)
