"""OTFS grid, unitary delay-Doppler transforms and Gray-coded square QAM.

Vectorization is column-major throughout: an M x N delay-Doppler grid ``X``
maps to ``x = X.reshape(-1, order="F")`` so that ``(F_N^H kron I_M) x`` acts
on the Doppler (column) axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidDimensionError, UnsupportedModulationError

SUPPORTED_ORDERS = (4, 16, 64)
SER_MODELS = ("square_qam", "sqrt_order")


@dataclass(frozen=True)
class GridConfig:
    """OTFS frame geometry: M subcarriers (delay bins) by N time slots (Doppler bins)."""

    M: int = 8
    N: int = 4
    carrier_hz: float = 4e9
    delta_f_hz: float = 15e3

    def __post_init__(self):
        if int(self.M) != self.M or int(self.N) != self.N or self.M < 1 or self.N < 1:
            raise InvalidDimensionError(f"grid needs M, N >= 1, got M={self.M}, N={self.N}")
        if not self.delta_f_hz > 0:
            raise InvalidDimensionError(f"subcarrier spacing must be positive, got {self.delta_f_hz}")

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def T(self) -> float:
        """Time-slot duration in seconds."""
        return 1.0 / self.delta_f_hz


@dataclass(frozen=True)
class DdFrame:
    grid: GridConfig
    symbols: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=complex)
        if s.shape == (self.grid.M, self.grid.N):
            s = vec(s)
        if s.shape != (self.grid.MN,):
            raise InvalidDimensionError(
                f"frame expects {self.grid.MN} symbols or a {self.grid.M}x{self.grid.N} grid, got {s.shape}"
            )
        object.__setattr__(self, "symbols", s)

    @property
    def vector(self) -> np.ndarray:
        return self.symbols

    @property
    def matrix(self) -> np.ndarray:
        return unvec(self.symbols, self.grid.M, self.grid.N)


def vec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).reshape(-1, order="F")


def unvec(x: np.ndarray, M: int, N: int) -> np.ndarray:
    return np.asarray(x).reshape(M, N, order="F")


def make_dft(n: int) -> np.ndarray:
    """Unitary DFT matrix with entries ``exp(-2j*pi*j*k/n) / sqrt(n)``."""
    if int(n) != n or n < 1:
        raise InvalidDimensionError(f"DFT size must be a positive integer, got {n}")
    return _dft(int(n)).copy()


@lru_cache(maxsize=32)
def _dft(n: int) -> np.ndarray:
    jk = np.outer(np.arange(n), np.arange(n))
    F = np.exp(-2j * np.pi * (jk % n) / n) / np.sqrt(n)
    F.flags.writeable = False
    return F


@lru_cache(maxsize=32)
def _kron_op(M: int, N: int, inverse: bool) -> np.ndarray:
    F = _dft(N)
    op = np.kron(F.conj().T if inverse else F, np.eye(M))
    op.flags.writeable = False
    return op


def sfft_operator(grid: GridConfig) -> np.ndarray:
    """``F_N kron I_M``: time samples to delay-Doppler symbols."""
    return _kron_op(grid.M, grid.N, False)


def isfft_operator(grid: GridConfig) -> np.ndarray:
    """``F_N^H kron I_M``: delay-Doppler symbols to time samples."""
    return _kron_op(grid.M, grid.N, True)


def dd_to_tf(X_dd: np.ndarray) -> np.ndarray:
    """ISFFT of an M x N delay-Doppler grid: ``F_M X F_N^H``."""
    M, N = X_dd.shape
    return _dft(M) @ X_dd @ _dft(N).conj().T


def heisenberg(X_tf: np.ndarray) -> np.ndarray:
    """Rectangular-pulse Heisenberg transform: per-slot IDFT, slots concatenated."""
    M, _ = X_tf.shape
    return vec(_dft(M).conj().T @ X_tf)


def wigner(r: np.ndarray, M: int, N: int) -> np.ndarray:
    return _dft(M) @ unvec(r, M, N)


def tf_to_dd(X_tf: np.ndarray) -> np.ndarray:
    M, N = X_tf.shape
    return _dft(M).conj().T @ X_tf @ _dft(N)


def dd_to_time(frame: DdFrame) -> np.ndarray:
    """Time-domain OTFS samples ``s = (F_N^H kron I_M) x_dd``."""
    return isfft_operator(frame.grid) @ frame.vector


def dd_to_time_via_tf(frame: DdFrame) -> np.ndarray:
    """Same result as :func:`dd_to_time`, through the ISFFT and Heisenberg transform."""
    return heisenberg(dd_to_tf(frame.matrix))


def time_to_dd(r: np.ndarray, grid: GridConfig) -> np.ndarray:
    """Received delay-Doppler vector ``y = (F_N kron I_M) r``.

    Accepts a single length-MN vector or a stack with samples on the last axis.
    """
    r = np.asarray(r, dtype=complex)
    if r.shape[-1] != grid.MN:
        raise InvalidDimensionError(f"expected length {grid.MN} on last axis, got {r.shape}")
    return r @ sfft_operator(grid).T


def ser_constants(order: int, model: str = "square_qam") -> tuple[float, float]:
    """``(alpha, beta)`` with ``u = alpha * erfc(sqrt(beta * SINR))``.

    ``square_qam`` takes ``alpha = 2(1 - 1/sqrt(M))`` and
    ``beta = 3 / (2(M - 1))``; the symbol error rate is then
    ``u - u**2 / 4``, exact for Gray square QAM in circular Gaussian
    disturbance.  ``sqrt_order`` takes ``alpha = (2 - 2/sqrt(M)) / log2(M)``
    and ``beta = 3 / (2 sqrt(M) - 2)`` with SER ``u`` itself; it is far more
    optimistic (for QPSK ``0.5 erfc(sqrt(1.5 SINR))`` against the true
    ``erfc(sqrt(SINR / 2))``) and is kept only for comparison.
    """
    r = np.sqrt(order)
    if model == "square_qam":
        return 2.0 * (1.0 - 1.0 / r), 3.0 / (2.0 * (order - 1))
    if model == "sqrt_order":
        return (2.0 - 2.0 / r) / np.log2(order), 3.0 / (2.0 * r - 2.0)
    raise ValueError(f"unknown SER model {model!r}; choose one of {SER_MODELS}")


@dataclass(frozen=True)
class Constellation:
    """Energy-normalized square QAM with Gray labels.

    ``labels[i]`` is the bit label of ``points[i]`` as an integer whose top
    half encodes the in-phase level and bottom half the quadrature level.
    ``ser_model`` selects the closed-form SER constants (see :func:`ser_constants`).
    """

    order: int
    points: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    ser_model: str = "square_qam"

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))

    @property
    def alpha(self) -> float:
        return ser_constants(self.order, self.ser_model)[0]

    @property
    def beta(self) -> float:
        return ser_constants(self.order, self.ser_model)[1]

    @property
    def ser_quadratic(self) -> bool:
        """Whether the SER subtracts ``u**2 / 4`` (both axes in error counted once)."""
        return self.ser_model == "square_qam"

    @property
    def min_distance(self) -> float:
        d = np.abs(self.points[:, None] - self.points[None, :])
        return float(d[d > 0].min())


def gray(n):
    return n ^ (n >> 1)


def make_constellation(order: int, ser_model: str = "square_qam") -> Constellation:
    if ser_model not in SER_MODELS:
        raise ValueError(f"unknown SER model {ser_model!r}; choose one of {SER_MODELS}")
    if order not in SUPPORTED_ORDERS:
        raise UnsupportedModulationError(
            f"modulation order {order} unsupported; choose one of {SUPPORTED_ORDERS}"
        )
    side = int(round(np.sqrt(order)))
    half_bits = int(np.log2(side))
    levels = 2 * np.arange(side) - (side - 1)
    # point index = i_level * side + q_level
    i_lvl, q_lvl = np.divmod(np.arange(order), side)
    raw = levels[i_lvl] + 1j * levels[q_lvl]
    points = raw / np.sqrt(np.mean(np.abs(raw) ** 2))
    labels = (gray(i_lvl) << half_bits) | gray(q_lvl)
    points.flags.writeable = False
    labels.flags.writeable = False
    return Constellation(order=order, points=points, labels=labels, ser_model=ser_model)


def detect(symbols: np.ndarray, c: Constellation) -> np.ndarray:
    """Nearest-point hard decision; exact ties resolve to the lowest index.

    Square QAM decouples into two PAM slicers, so this never materializes
    the full symbol-to-point distance table.
    """
    s = np.asarray(symbols)
    side = int(round(np.sqrt(c.order)))
    scale = np.abs(c.points[0].real)  # outermost level is -(side-1) * scale
    unit = scale / (side - 1)

    def slice_axis(v):
        u = (v / unit + (side - 1)) / 2.0
        return np.clip(np.ceil(u - 0.5), 0, side - 1).astype(np.int64)

    return slice_axis(s.real) * side + slice_axis(s.imag)
