"""Reference schemes the trained precoder is compared against."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import OptimizationFailureError, SingularChannelError
from ..link import Precoder, fer_value_and_grad, monte_carlo_fer
from ..otfs import Constellation, make_dft


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    snr_db: float
    fer: float
    ci95: float
    n_frames: int
    errors: int = 0
    # True when no errors were seen and ``fer`` is the rule-of-three upper bound
    censored: bool = False
    valid: bool = True

    def __post_init__(self):
        if self.valid and not 0.0 <= self.fer <= 1.0:
            raise ValueError(f"fer must lie in [0, 1], got {self.fer}")
        if self.ci95 < 0:
            raise ValueError("ci95 must be nonnegative")


def _mat(x):
    return x.matrix if hasattr(x, "matrix") else np.asarray(x, dtype=complex)


def baseline_no_precoder_fer(H, sigma2: float, c: Constellation, kind: str, n_frames: int, rng,
                             P0: float | None = None, snr_db: float = float("nan")) -> SweepRow:
    """Unprecoded link with an MMSE or ZF receiver that knows the true channel.

    A rank-deficient channel under ZF yields a row with ``valid=False``.
    """
    Hm = _mat(H)
    P = Precoder.scaled_identity(Hm.shape[0], P0)
    try:
        r = monte_carlo_fer(Hm, Hm, P, sigma2, c, n_frames, rng, equalizer=kind)
    except SingularChannelError:
        return SweepRow(f"{kind}_baseline", snr_db, float("nan"), 0.0, 0, valid=False)
    return SweepRow(f"{kind}_baseline", snr_db, r.fer_estimate, r.ci95, r.n_frames, r.errors)


def _project(P, P0):
    return P * np.sqrt(P0) / np.linalg.norm(P)


def icsi_starts(H, K: int, P0: float) -> list[np.ndarray]:
    """Deterministic starting points: identity columns, and the K strongest
    right singular directions of ``H`` mixed by a K-point DFT so every stream
    sees the same average gain."""
    Hm = _mat(H)
    MN = Hm.shape[0]
    ident = np.eye(MN, K, dtype=complex)
    V = np.linalg.svd(Hm)[2].conj().T[:, :K]
    return [_project(ident, P0), _project(V @ make_dft(K), P0)]


def perfect_icsi_precoder(H, sigma2: float, c: Constellation, P0: float, iters: int, K: int | None = None,
                          lr: float = 0.01, init=None) -> Precoder:
    """Direct minimization of the closed-form FER over ``||P||_F^2 = P0``.

    Adam steps on ``log FER`` followed by projection back onto the sphere;
    the best iterate seen (including the start) is returned.  Without
    ``init`` the better of :func:`icsi_starts` is used.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    Hm = _mat(H)
    if init is not None:
        starts = [_project(_mat(init), P0)]
    else:
        starts = icsi_starts(Hm, Hm.shape[0] if K is None else K, P0)

    def objective(P):
        f, g = fer_value_and_grad(Hm, P, sigma2, c)
        f = float(f)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise OptimizationFailureError("FER objective became non-finite")
        return f, g

    scored = [(objective(P), P) for P in starts]
    (best_f, g), P = min(scored, key=lambda t: t[0][0])
    best_P = P
    f = best_f
    m = np.zeros_like(P)
    v = np.zeros(P.shape)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, iters + 1):
        if f <= 0.0:
            break
        # tangent component of the log-objective gradient
        g = g / f
        g = g - np.real(np.vdot(P, g)) / P0 * P
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * np.abs(g) ** 2
        step = (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        P = _project(P - lr * np.sqrt(P0 / P.size) * step, P0)
        f, g = objective(P)
        if f < best_f:
            best_f, best_P = f, P
    return Precoder(_project(best_P, P0), P0)
