"""FER-versus-SNR sweeps over held-out channels, CSV output and plotting.

Every Monte Carlo call draws from its own ``SeedSequence`` keyed by
``(seed, scheme, snr index, channel, round)``, so results do not depend on
the worker count or evaluation order.  Set ``OTFS_URLLC_WORKERS`` to spread
channels over processes.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..ddcl.network import NetworkParams
from ..ddcl.training import predict_batch
from ..errors import ConfigError, SingularChannelError
from ..link import ci95_halfwidth, fer_theory, monte_carlo_fer
from ..otfs import make_constellation
from .baselines import SweepRow, perfect_icsi_precoder
from .config import SCHEMES, ExperimentConfig
from .dataset import gen_test_set

log = logging.getLogger(__name__)

WORKERS_ENV = "OTFS_URLLC_WORKERS"
CSV_HEADER = ("scheme", "snr_db", "fer", "ci95", "n_frames", "seed")
SWEEP_STREAM = 2


def required_frames(fer: float) -> int:
    """Smallest frame count exceeding ``10^(xi+1)`` for a FER at level ``10^-xi``."""
    xi = math.ceil(-math.log10(fer) - 1e-12)
    return 10 ** (xi + 1) + 1


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def _mc_job(args):
    H, H_hat, P, sigma2, order, n, key, equalizer = args
    c = make_constellation(order)
    rng = np.random.default_rng(np.random.SeedSequence(key))
    try:
        return monte_carlo_fer(H, H_hat, P, sigma2, c, n, rng, equalizer=equalizer).errors
    except SingularChannelError:
        return None


def _run_jobs(jobs, pool):
    if pool is None:
        return [_mc_job(j) for j in jobs]
    return list(pool.map(_mc_job, jobs, chunksize=max(1, len(jobs) // 16)))


def _adaptive_mc(scheme_id, snr_idx, snr_db, name, cfg, channels, order, sigma2, equalizer, pool):
    """Pooled FER over ``channels`` (list of ``(H, H_hat, P)``), grown until the trial rule holds."""
    sw = cfg.sweep
    n_ch = len(channels)
    total_target = sw.n_frames_per_point
    errors, per_ch_done, rnd = 0, 0, 0
    invalid = False
    while True:
        per_ch = max(1, -(-total_target // n_ch)) - per_ch_done
        jobs = [(H, Hh, P, sigma2, order, per_ch, (cfg.seed, SWEEP_STREAM, scheme_id, snr_idx, i, rnd), equalizer)
                for i, (H, Hh, P) in enumerate(channels)]
        counts = _run_jobs(jobs, pool)
        if any(cnt is None for cnt in counts):
            invalid = True
            counts = [cnt for cnt in counts if cnt is not None]
        errors += sum(counts)
        per_ch_done += per_ch
        rnd += 1
        n = per_ch_done * len(counts) if counts else 0
        if n == 0:
            return SweepRow(name, snr_db, float("nan"), 0.0, 0, valid=False)
        fer = errors / n
        enough = errors >= sw.min_errors and n >= required_frames(fer)
        if enough or n >= sw.max_frames_per_point:
            break
        want = sw.min_errors / fer if errors else 10 * n
        total_target = int(min(max(required_frames(fer) if errors else 0, want, 2 * n), sw.max_frames_per_point))
    if invalid:
        log.warning("%s at %.1f dB: rank-deficient channels excluded", name, snr_db)
    if errors == 0:
        log.info("%s at %.1f dB: no errors in %d frames, reporting rule-of-three bound", name, snr_db, n)
        bound = ci95_halfwidth(0, n)
        return SweepRow(name, snr_db, bound, bound, n, 0, censored=True, valid=not invalid)
    if n < required_frames(fer):
        log.warning("%s at %.1f dB: frame cap reached before the trial rule was met", name, snr_db)
    return SweepRow(name, snr_db, fer, ci95_halfwidth(errors, n), n, errors, valid=not invalid)


def run_sweep(cfg: ExperimentConfig, trained: NetworkParams | None = None, n_channels: int | None = None):
    """Evaluate every configured scheme at every SNR point; returns ``SweepRow`` list.

    Precoded schemes use ``cfg.link`` (K, order, P0); the unprecoded
    baselines send MN QPSK-or-``baseline_order`` symbols at the same
    per-symbol energy, so the data rate matches when
    ``K log2(order) = MN log2(baseline_order)``.  The baselines and
    ``perfect_icsi`` equalize with the true channel; the ddcl rows use the
    current-frame estimate unless ``sweep.ddcl_receiver`` is ``"true"``.
    """
    schemes = tuple(cfg.sweep.schemes)
    if {"ddcl", "ddcl_theory"} & set(schemes) and trained is None:
        raise ConfigError("ddcl schemes requested but no trained model was given")
    test = gen_test_set(cfg, n_channels)
    n = len(test)
    idx = np.arange(n)
    truth = test.truth[test.seq, test.time]
    est = test.estimates[test.seq, test.time]
    K, P0, order = cfg.link.K, cfg.link.power, cfg.link.order
    c = make_constellation(order)
    MN = cfg.grid.MN
    if trained is not None and trained.shape.K != K:
        raise ConfigError(f"model emits K={trained.shape.K} streams but link.K={K}")
    P_ddcl = predict_batch(trained, test.histories(idx), P0) if trained is not None else None
    rx = est if cfg.sweep.ddcl_receiver == "estimate" else truth
    ident = np.eye(MN, dtype=complex)

    workers = _workers()
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    rows = []
    try:
        for si, snr_db in enumerate(cfg.sweep.snr_grid_db):
            sigma2 = 10.0 ** (-float(snr_db) / 10.0)
            for name in schemes:
                sid = SCHEMES.index(name)
                if name == "ddcl":
                    ch = [(truth[i], rx[i], P_ddcl[i]) for i in range(n)]
                    row = _adaptive_mc(sid, si, snr_db, name, cfg, ch, order, sigma2, "mmse", pool)
                elif name == "ddcl_theory":
                    f = [fer_theory(truth[i], P_ddcl[i], sigma2, c, rx[i]) for i in range(n)]
                    row = SweepRow(name, snr_db, float(np.mean(f)), 0.0, 0)
                elif name == "perfect_icsi":
                    ch = [(truth[i], truth[i],
                           perfect_icsi_precoder(truth[i], sigma2, c, P0, cfg.sweep.perfect_iters, K=K,
                                                 lr=cfg.sweep.perfect_lr).matrix)
                          for i in range(n)]
                    row = _adaptive_mc(sid, si, snr_db, name, cfg, ch, order, sigma2, "mmse", pool)
                else:
                    kind = name.split("_")[0]
                    ch = [(truth[i], truth[i], ident) for i in range(n)]
                    row = _adaptive_mc(sid, si, snr_db, name, cfg, ch, cfg.sweep.baseline_order, sigma2, kind, pool)
                log.info("%-13s %5.1f dB  FER %.4g +- %.2g (%d frames)", name, snr_db, row.fer, row.ci95, row.n_frames)
                rows.append(row)
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def rows_to_csv(rows, seed: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.scheme, repr(float(r.snr_db)), repr(float(r.fer)), repr(float(r.ci95)), r.n_frames, seed])
    return buf.getvalue()


def write_csv(path, rows, seed: int) -> None:
    Path(path).write_text(rows_to_csv(rows, seed))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ConfigError(f"{path}: expected header {','.join(CSV_HEADER)}")
        out = []
        for rec in reader:
            out.append({"scheme": rec["scheme"], "snr_db": float(rec["snr_db"]), "fer": float(rec["fer"]),
                        "ci95": float(rec["ci95"]), "n_frames": int(rec["n_frames"]), "seed": int(rec["seed"])})
        return out


def plot_csv(csv_path, out_path, title: str | None = None) -> None:
    """Log-scale FER-versus-SNR chart with one line per scheme."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    recs = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for scheme in dict.fromkeys(r["scheme"] for r in recs):
        pts = sorted((r["snr_db"], r["fer"]) for r in recs if r["scheme"] == scheme and r["fer"] > 0)
        if pts:
            x, y = zip(*pts)
            ax.semilogy(x, y, marker="o", label=scheme)
    ax.set_xlabel("receive SNR (dB)")
    ax.set_ylabel("FER")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
