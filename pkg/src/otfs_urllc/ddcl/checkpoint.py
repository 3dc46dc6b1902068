"""Versioned checkpoint files for trained network parameters."""

from __future__ import annotations

from dataclasses import dataclass

from .. import blob
from .network import NetShape, NetworkParams

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    params: NetworkParams
    P0: float
    order: int
    seed: int
    iterations: int
    sigma2: float

    @property
    def shape(self) -> NetShape:
        return self.params.shape


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    s = ckpt.shape
    meta = {
        "M": s.M, "N": s.N, "K": s.K, "tau": s.tau, "hidden": s.hidden,
        "filters": s.filters, "kernel": s.kernel,
        "P0": ckpt.P0, "order": ckpt.order, "seed": ckpt.seed,
        "iterations": ckpt.iterations, "sigma2": ckpt.sigma2,
    }
    blob.write_blob(path, "ddcl_checkpoint", FORMAT_VERSION, meta, ckpt.params.tensors)


def load_checkpoint(path) -> Checkpoint:
    header, arrays = blob.read_blob(path, "ddcl_checkpoint")
    if header["version"] > FORMAT_VERSION:
        raise ValueError(f"{path}: checkpoint format v{header['version']} is newer than supported v{FORMAT_VERSION}")
    m = header["meta"]
    shape = NetShape(m["M"], m["N"], m["K"], m["tau"], m["hidden"], m["filters"], m["kernel"])
    return Checkpoint(NetworkParams(shape, arrays), m["P0"], m["order"], m["seed"], m["iterations"], m["sigma2"])
