"""Unsupervised training of the precoder network against the closed-form FER."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..errors import TrainingDivergenceError
from ..link import Precoder, fer_value_and_grad
from ..otfs import Constellation
from .data import HistoryWindow, TrainingSet, map_input
from .network import NetShape, NetworkParams, backward, forward, forward_cached, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 1e-3
    batch_size: int = 64
    max_iters: int = 2000
    patience: int = 20
    eval_every: int = 50
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_batch: int = 256
    # equalizer inside the cost: built from the current-frame estimate or the true channel
    receiver: str = "estimate"

    def __post_init__(self):
        if self.receiver not in ("estimate", "true"):
            raise ValueError(f"receiver must be 'estimate' or 'true', got {self.receiver!r}")


def _as_batch(batch):
    if isinstance(batch, TrainingSet):
        batch = batch.batch(np.arange(len(batch)))
    if len(batch) == 2:
        return batch[0], batch[1], None
    return tuple(batch)


def cost(params: NetworkParams, batch, sigma2: float, c: Constellation, P0: float) -> float:
    """Mean closed-form FER of the predicted precoders on the true channels.

    ``batch`` is a :class:`TrainingSet`, an ``(inputs, true_channels)`` pair,
    or an ``(inputs, true_channels, estimates)`` triple; with estimates the
    MMSE equalizer is built from them while the SINR uses the true channels.
    """
    x, H, H_hat = _as_batch(batch)
    P = forward(params, x, P0)
    fer, _ = fer_value_and_grad(H, P, sigma2, c, H_hat)
    return float(np.mean(fer))


def cost_and_gradient(params: NetworkParams, batch, sigma2: float, c: Constellation, P0: float):
    x, H, H_hat = _as_batch(batch)
    P, cache = forward_cached(params, x, P0)
    B = P.shape[0]
    fer, g_P = fer_value_and_grad(H, P, sigma2, c, H_hat, upstream=np.full(B, 1.0 / B))
    J = float(np.mean(fer))
    if not np.isfinite(J) or not np.all(np.isfinite(g_P)):
        raise TrainingDivergenceError("non-finite cost or precoder gradient")
    grad = backward(params, cache, g_P)
    if not grad.all_finite():
        raise TrainingDivergenceError("non-finite parameter gradient")
    return J, grad


def gradient(params: NetworkParams, batch, sigma2: float, c: Constellation, P0: float) -> NetworkParams:
    return cost_and_gradient(params, batch, sigma2, c, P0)[1]


def dataset_cost(params, data: TrainingSet, sigma2, c, P0, chunk: int = 256, receiver: str = "true") -> float:
    total = 0.0
    n = len(data)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        x, H, H_hat = _as_batch(data.batch(idx, receiver == "estimate"))
        fer, _ = fer_value_and_grad(H, forward(params, x, P0), sigma2, c, H_hat)
        total += float(np.sum(fer))
    return total / n


class Adam:
    def __init__(self, params: NetworkParams, hyper: TrainHyper):
        self.h = hyper
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: NetworkParams, grad: NetworkParams) -> NetworkParams:
        h = self.h
        self.t += 1
        bc1 = 1.0 - h.beta1**self.t
        bc2 = 1.0 - h.beta2**self.t
        out = {}
        for n in params.names:
            g = grad[n]
            m = self.m.tensors[n] = h.beta1 * self.m[n] + (1 - h.beta1) * g
            v = self.v.tensors[n] = h.beta2 * self.v[n] + (1 - h.beta2) * g * g
            out[n] = params[n] - h.lr * (m / bc1) / (np.sqrt(v / bc2) + h.adam_eps)
        return NetworkParams(params.shape, out)


def split_train_val(n: int, fraction: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_val = int(math.ceil(fraction * n)) if n >= 10 else 0
    if n_val == 0:
        return perm, perm
    return perm[n_val:], perm[:n_val]


def train(dataset: TrainingSet, hyper: TrainHyper, sigma2: float, c: Constellation, seed: int,
          K: int, P0: float | None = None, init: NetworkParams | None = None,
          history: list | None = None) -> NetworkParams:
    """Adam on the mean closed-form FER with validation-based early stopping.

    With ``hyper.receiver == "estimate"`` the cost equalizes with each
    example's current-frame estimate, matching deployment; ``"true"`` uses
    the true channel for the equalizer as well.

    Returns the parameters with the lowest validation cost seen, initial
    parameters included, so the result never validates worse than the start.
    With fewer than 10 examples the training examples double as validation.
    Each evaluation appends ``(iteration, mean recent train cost, val cost)``
    to ``history`` when given.
    """
    P0 = float(K) if P0 is None else P0
    rng = np.random.default_rng(seed)
    shape = NetShape(dataset.grid.M, dataset.grid.N, K, dataset.tau)
    params = init_params(shape, rng) if init is None else init.copy()
    tr_idx, val_idx = split_train_val(len(dataset), hyper.val_fraction, rng)
    val = dataset.subset(val_idx)

    best = params.copy()
    with_est = hyper.receiver == "estimate"
    best_val = dataset_cost(params, val, sigma2, c, P0, hyper.eval_batch, hyper.receiver)
    if not np.isfinite(best_val):
        raise TrainingDivergenceError("initial validation cost is not finite")
    if history is not None:
        history.append((0, float("nan"), best_val))
    opt = Adam(params, hyper)
    stale = 0
    order = np.empty(0, dtype=np.int64)
    recent = []
    for it in range(1, hyper.max_iters + 1):
        if order.size < hyper.batch_size:
            order = np.concatenate([order, rng.permutation(tr_idx)])
        idx, order = order[: hyper.batch_size], order[hyper.batch_size :]
        J, grad = cost_and_gradient(params, dataset.batch(idx, with_est), sigma2, c, P0)
        recent.append(J)
        params = opt.step(params, grad)
        if it % hyper.eval_every == 0 or it == hyper.max_iters:
            v = dataset_cost(params, val, sigma2, c, P0, hyper.eval_batch, hyper.receiver)
            if not np.isfinite(v):
                raise TrainingDivergenceError(f"validation cost diverged at iteration {it}")
            train_mean = float(np.mean(recent))
            recent = []
            if history is not None:
                history.append((it, train_mean, v))
            log.info("iter %d train %.4g val %.4g", it, train_mean, v)
            if v < best_val:
                best_val, best, stale = v, params.copy(), 0
            else:
                stale += 1
                if stale >= hyper.patience:
                    log.info("early stop at iteration %d (best val %.4g)", it, best_val)
                    break
    return best


def predict(params: NetworkParams, history, P0: float) -> Precoder:
    """Precoder for the next frame from a window of past channel estimates."""
    x = map_input(history, params.shape.tau)
    P = forward(params, x, P0)
    return Precoder(P, P0)


def predict_batch(params: NetworkParams, histories: np.ndarray, P0: float) -> np.ndarray:
    """Precoder matrices for a complex ``(B, tau, MN, MN)`` stack of histories."""
    return forward(params, map_input(histories, params.shape.tau), P0)
