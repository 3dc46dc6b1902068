"""Command-line entry point: ``otfs-urllc <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .. import blob
from ..ddcl.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..ddcl.data import TrainingSet
from ..ddcl.training import train
from ..errors import ConfigError, OtfsError
from ..link import fer_theory
from ..otfs import make_constellation
from .config import ExperimentConfig, load_config
from .dataset import gen_dataset
from .sweep import plot_csv, run_sweep, write_csv

log = logging.getLogger("otfs_urllc")

PAIR_KIND = "theory_pair"


def save_pair(path, H, P, H_hat=None) -> None:
    """Store a channel/precoder pair (and optional estimate) for ``eval-theory``."""
    arrays = {"H": np.asarray(H, dtype=complex), "P": np.asarray(P, dtype=complex)}
    if H_hat is not None:
        arrays["H_hat"] = np.asarray(H_hat, dtype=complex)
    blob.write_blob(path, PAIR_KIND, 1, {}, arrays)


def load_pair(path):
    _, arrays = blob.read_blob(path, PAIR_KIND)
    return arrays["H"], arrays["P"], arrays.get("H_hat")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _sigma2(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    ds = gen_dataset(cfg, args.n_examples)
    ds.save(args.out)
    print(f"wrote {len(ds)} examples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.data:
        ds = TrainingSet.load(args.data)
        if ds.tau != cfg.link.tau or ds.grid.MN != cfg.grid.MN:
            raise ConfigError(f"{args.data} does not match the configured grid/tau")
    else:
        ds = gen_dataset(cfg)
    sigma2 = _sigma2(cfg.train.snr_db)
    history = []
    params = train(ds, cfg.train.hyper(), sigma2, make_constellation(cfg.link.order), cfg.seed,
                   cfg.link.K, cfg.link.power, history=history)
    iters = history[-1][0] if history else 0
    save_checkpoint(args.out, Checkpoint(params, cfg.link.power, cfg.link.order, cfg.seed, iters, sigma2))
    best = min(h[2] for h in history)
    print(f"wrote {args.out} after {iters} iterations (best validation FER {best:.6g})")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    params = None
    if {"ddcl", "ddcl_theory"} & set(cfg.sweep.schemes):
        if not args.model:
            raise ConfigError("the ddcl schemes need a trained checkpoint; pass --model PATH")
        if not Path(args.model).is_file():
            raise ConfigError(f"checkpoint not found: {args.model}")
    if args.model:
        ckpt = load_checkpoint(args.model)
        params = ckpt.params
    rows = run_sweep(cfg, params, args.n_channels)
    write_csv(args.out, rows, cfg.seed)
    print(f"wrote {len(rows)} rows to {args.out}")
    if args.plot:
        plot_csv(args.out, args.plot)
    return 0


def cmd_eval_theory(args) -> int:
    H, P, H_hat = load_pair(args.pair)
    sigma2 = args.sigma2 if args.sigma2 is not None else _sigma2(args.snr_db)
    c = make_constellation(args.order)
    print(repr(float(fer_theory(H, P, sigma2, c, H_hat))))
    return 0


def cmd_plot(args) -> int:
    plot_csv(args.csv, args.out, args.title)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML experiment config (defaults when omitted)")
    common.add_argument("--seed", type=int, help="override the config seed")

    p = argparse.ArgumentParser(prog="otfs-urllc", description="Predictive OTFS precoding experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="simulate a training set")
    g.add_argument("-o", "--out", required=True)
    g.add_argument("-n", "--n-examples", type=int, help="override train.n_examples")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train the predictive precoder")
    t.add_argument("-d", "--data", help="dataset from gen-data (generated on the fly when omitted)")
    t.add_argument("-o", "--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", parents=[common], help="FER versus SNR for every configured scheme")
    s.add_argument("-m", "--model", help="checkpoint from train")
    s.add_argument("-o", "--out", required=True, help="CSV path")
    s.add_argument("--plot", help="also write a chart to this image path")
    s.add_argument("--n-channels", type=int, help="override sweep.n_channels")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval-theory", help="closed-form FER of a stored channel/precoder pair")
    e.add_argument("pair", help="file written by save_pair")
    snr = e.add_mutually_exclusive_group(required=True)
    snr.add_argument("--snr-db", type=float)
    snr.add_argument("--sigma2", type=float)
    e.add_argument("--order", type=int, default=4)
    e.set_defaults(func=cmd_eval_theory)

    pl = sub.add_parser("plot", help="chart a sweep CSV")
    pl.add_argument("csv")
    pl.add_argument("-o", "--out", required=True)
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OtfsError, OSError, ValueError, ArithmeticError) as exc:
        print(f"otfs-urllc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
