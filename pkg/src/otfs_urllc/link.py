"""Precoded OTFS link: equalizers, closed-form SINR/SER/FER, Monte Carlo FER.

Complex gradients use the convention ``grad Z = dL/dRe(Z) + 1j * dL/dIm(Z)``
for a real loss ``L``, i.e. twice the conjugate Wirtinger derivative.  With it
``Re(vdot(grad Z, dZ))`` is the first-order change in ``L``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .channel import DdChannel
from .errors import InvalidDimensionError, NumericalFailureError, SingularChannelError
from .otfs import Constellation, detect

POWER_SLACK = 1e-9


@dataclass(frozen=True)
class Precoder:
    matrix: np.ndarray = field(repr=False)
    power_budget: float

    def __post_init__(self):
        P = np.asarray(self.matrix, dtype=complex)
        if P.ndim != 2 or not 1 <= P.shape[1] <= P.shape[0]:
            raise InvalidDimensionError(f"precoder must be MN x K with 1 <= K <= MN, got {P.shape}")
        if np.linalg.norm(P) ** 2 > self.power_budget * (1 + POWER_SLACK) + POWER_SLACK:
            raise ValueError(
                f"precoder power {np.linalg.norm(P) ** 2:.6g} exceeds budget {self.power_budget:.6g}"
            )
        object.__setattr__(self, "matrix", P)

    @property
    def K(self) -> int:
        return self.matrix.shape[1]

    @property
    def power(self) -> float:
        return float(np.linalg.norm(self.matrix) ** 2)

    @classmethod
    def scaled_identity(cls, MN: int, power_budget: float | None = None) -> "Precoder":
        """``sqrt(P0 / MN) * I``; the no-precoder reference with ``P0 = MN`` by default."""
        P0 = float(MN) if power_budget is None else power_budget
        return cls(np.sqrt(P0 / MN) * np.eye(MN, dtype=complex), P0)


@dataclass(frozen=True)
class Equalizer:
    matrix: np.ndarray = field(repr=False)
    kind: str = "mmse"


@dataclass(frozen=True)
class LinkReport:
    sinr: np.ndarray
    ser: np.ndarray
    fer: float


@dataclass(frozen=True)
class McResult:
    fer_estimate: float
    ci95: float
    errors: int
    n_frames: int


def _mat(x):
    return x.matrix if hasattr(x, "matrix") else np.asarray(x, dtype=complex)


def precode(P: Precoder, d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=complex)
    if d.shape[-1] != P.K:
        raise InvalidDimensionError(f"precoder takes {P.K} symbols, got {d.shape[-1]}")
    return d @ P.matrix.T


def mmse_equalizer(H_hat, P, sigma2: float) -> Equalizer:
    """``E = (sigma2 I_K + P^H H^H H P)^-1 P^H H^H``."""
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    A = _mat(H_hat) @ _mat(P)
    K = A.shape[1]
    gram = sigma2 * np.eye(K) + A.conj().T @ A
    try:
        E = np.linalg.solve(gram, A.conj().T)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"MMSE solve failed: {exc}") from exc
    if not np.all(np.isfinite(E)):
        raise NumericalFailureError("MMSE equalizer has non-finite entries")
    return Equalizer(E, "mmse")


def zf_equalizer(H_hat, P, rcond: float = 1e-10) -> Equalizer:
    """Left pseudo-inverse of the effective channel ``H P``."""
    A = _mat(H_hat) @ _mat(P)
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= rcond * s[0]:
        raise SingularChannelError(f"effective channel is rank deficient (cond > {1 / rcond:.0e})")
    E = np.linalg.solve(A.conj().T @ A, A.conj().T)
    return Equalizer(E, "zf")


def recover(E: Equalizer, y_dd: np.ndarray) -> np.ndarray:
    y = np.asarray(y_dd, dtype=complex)
    if y.shape[-1] != E.matrix.shape[1]:
        raise InvalidDimensionError(f"equalizer takes length {E.matrix.shape[1]}, got {y.shape[-1]}")
    return y @ E.matrix.T


def _sinr_parts(E, G, sigma2):
    K = G.shape[-1]
    diag = np.diagonal(G, axis1=-2, axis2=-1)
    S = np.abs(diag) ** 2
    off = np.abs(G) ** 2
    off[..., np.arange(K), np.arange(K)] = 0.0
    D = off.sum(-1) + sigma2 * (np.abs(E) ** 2).sum(-1)
    return S, D


def sinr_per_symbol(E, H, P, sigma2: float) -> np.ndarray:
    """Post-equalization SINR of every data stream against the true channel ``H``.

    Interference is the row power of ``E H P`` off the diagonal; noise is
    ``sigma2`` times the row power of ``E``.
    """
    Em = _mat(E)
    G = Em @ _mat(H) @ _mat(P)
    S, D = _sinr_parts(Em, G, sigma2)
    return S / D


def _ser(x, c: Constellation):
    """SER at ``x = sqrt(beta * SINR)`` and its derivative with respect to ``u = alpha erfc(x)``."""
    u = c.alpha * erfc(x)
    if c.ser_quadratic:
        return u - 0.25 * u * u, 1.0 - 0.5 * u
    return u, np.ones_like(u)


def ser_theory(sinr, c: Constellation) -> np.ndarray:
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0):
        raise ValueError("SINR must be nonnegative")
    return _ser(np.sqrt(c.beta * sinr), c)[0]


def fer_from_ser(ser) -> np.ndarray:
    """``1 - prod(1 - ser)`` over the last axis, accurate when every SER is tiny."""
    return -np.expm1(np.log1p(-np.asarray(ser)).sum(-1))


def link_report(E, H, P, sigma2: float, c: Constellation) -> LinkReport:
    sinr = sinr_per_symbol(E, H, P, sigma2)
    ser = ser_theory(sinr, c)
    return LinkReport(sinr, ser, float(fer_from_ser(ser)))


def fer_theory(H, P, sigma2: float, c: Constellation, H_hat=None) -> float:
    """Closed-form FER: MMSE equalizer from ``H_hat`` (``H`` if absent), SINR against ``H``."""
    E = mmse_equalizer(H if H_hat is None else H_hat, P, sigma2)
    return link_report(E, H, P, sigma2, c).fer


def fer_value_and_grad(H, P, sigma2: float, c: Constellation, H_hat=None, upstream=None):
    """Batched closed-form FER and its gradient with respect to the precoder.

    ``H`` is ``(..., MN, MN)``, ``P`` is ``(..., MN, K)``; leading axes
    broadcast.  ``upstream`` scales each batch entry's FER in the backward
    pass (default ones).  Returns ``(fer, grad_P)`` with ``grad_P`` in the
    module's complex-gradient convention.
    """
    H = np.asarray(H, dtype=complex)
    P = np.asarray(P, dtype=complex)
    Hh = H if H_hat is None else np.asarray(H_hat, dtype=complex)
    K = P.shape[-1]
    eye = np.eye(K)

    A = H @ P
    Ah = A if H_hat is None else Hh @ P
    AhH = np.swapaxes(Ah.conj(), -1, -2)
    gram = sigma2 * eye + AhH @ Ah
    E = np.linalg.solve(gram, AhH)
    G = E @ A
    S, D = _sinr_parts(E, G, sigma2)
    sinr = S / D
    x = np.sqrt(c.beta * sinr)
    ser, dser_du = _ser(x, c)
    fer = fer_from_ser(ser)

    g_fer = np.ones_like(fer) if upstream is None else np.asarray(upstream, dtype=float)
    # dFER/dSER_k = prod_{j != k} (1 - SER_j)
    g_ser = (g_fer * (1.0 - fer))[..., None] / (1.0 - ser)
    with np.errstate(divide="ignore", invalid="ignore"):
        dser = -c.alpha * np.sqrt(c.beta / np.pi) * np.exp(-(x * x)) / np.sqrt(sinr)
    dser = np.where(sinr > 0, dser * dser_du, 0.0)
    g_sinr = g_ser * dser
    g_S = g_sinr / D
    g_D = -g_sinr * S / (D * D)

    g_G = 2.0 * g_D[..., None] * G
    idx = np.arange(K)
    g_G[..., idx, idx] = 2.0 * g_S * G[..., idx, idx]
    g_E = 2.0 * sigma2 * g_D[..., None] * E

    AH = np.swapaxes(A.conj(), -1, -2)
    EH = np.swapaxes(E.conj(), -1, -2)
    g_E = g_E + g_G @ AH
    g_A = EH @ g_G
    # E = gram^-1 Ah^H
    g_B = np.linalg.solve(np.swapaxes(gram.conj(), -1, -2), g_E)
    g_gram = -g_B @ EH
    g_Ah = np.swapaxes(g_B.conj(), -1, -2) + Ah @ (g_gram + np.swapaxes(g_gram.conj(), -1, -2))

    HH = np.swapaxes(H.conj(), -1, -2)
    if H_hat is None:
        g_P = HH @ (g_A + g_Ah)
    else:
        g_P = HH @ g_A + np.swapaxes(Hh.conj(), -1, -2) @ g_Ah
    return fer, g_P


def ci95_halfwidth(errors: int, n: int) -> float:
    """Wald 95% half-width; with zero (or all) errors falls back to the rule-of-three bound ``3/n``."""
    p = errors / n
    if errors == 0 or errors == n:
        return 3.0 / n
    return 1.96 * np.sqrt(p * (1.0 - p) / n)


def _count_frame_errors(H, E, P, sigma2, c, n, rng, chunk, gain):
    errors = 0
    HP = H @ P
    # undo the per-stream shrinkage the receiver expects from its own channel estimate
    Et = E.T / gain
    done = 0
    while done < n:
        m = min(chunk, n - done)
        idx = rng.integers(0, c.order, size=(m, P.shape[1]))
        d = c.points[idx]
        noise = np.sqrt(sigma2 / 2.0) * (
            rng.standard_normal((m, H.shape[0])) + 1j * rng.standard_normal((m, H.shape[0]))
        )
        y = d @ HP.T + noise
        d_hat = y @ Et
        errors += int(np.any(detect(d_hat, c) != idx, axis=1).sum())
        done += m
    return errors


def monte_carlo_fer(H, H_hat, P, sigma2: float, c: Constellation, n_frames: int, rng,
                    equalizer: str = "mmse", chunk: int = 20000) -> McResult:
    """Empirical FER of uncoded precoded frames with hard detection.

    A frame errs when any of its K symbols is misdetected.  The equalizer is
    built from ``H_hat`` while transmission uses ``H``.  Before slicing, each
    stream is divided by its gain ``[E H_hat P]_kk`` as seen through the
    estimate (real and positive for MMSE, one for ZF); QPSK decisions are
    unaffected, while larger QAM needs the unbiased scale.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    Hm, Pm = _mat(H), _mat(P)
    Hh = Hm if H_hat is None else _mat(H_hat)
    if equalizer == "mmse":
        E = mmse_equalizer(Hh, Pm, sigma2).matrix
    elif equalizer == "zf":
        E = zf_equalizer(Hh, Pm).matrix
    else:
        raise ValueError(f"unknown equalizer {equalizer!r}")
    gain = np.real(np.diagonal(E @ Hh @ Pm))
    rng = np.random.default_rng(rng)
    errors = _count_frame_errors(Hm, E, Pm, sigma2, c, n_frames, rng, chunk, gain)
    return McResult(errors / n_frames, ci95_halfwidth(errors, n_frames), errors, n_frames)
