"""History windows, the real-valued network input, and the training set."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import blob
from ..channel import DdChannel
from ..errors import InvalidDimensionError, InvalidHistoryError
from ..otfs import GridConfig


@dataclass(frozen=True)
class HistoryWindow:
    """Estimated DD channels of the previous tau frames, most recent first."""

    frames: tuple

    def __post_init__(self):
        mats = tuple(f.matrix if isinstance(f, DdChannel) else np.asarray(f, dtype=complex) for f in self.frames)
        if not mats:
            raise InvalidHistoryError("history window is empty")
        shp = mats[0].shape
        if len(shp) != 2 or shp[0] != shp[1] or any(m.shape != shp for m in mats):
            raise InvalidHistoryError("history frames must be equally sized square matrices")
        object.__setattr__(self, "frames", mats)

    @property
    def tau(self) -> int:
        return len(self.frames)

    def stack(self) -> np.ndarray:
        return np.stack(self.frames)


def map_input(history, tau: int | None = None) -> np.ndarray:
    """``(tau, MN, MN, 2)`` real tensor: channel 0 real parts, channel 1 imaginary parts.

    ``history`` may be a :class:`HistoryWindow` or a complex ``(..., tau, MN, MN)``
    stack; extra leading axes carry through.
    """
    H = history.stack() if isinstance(history, HistoryWindow) else np.asarray(history, dtype=complex)
    if tau is not None and H.shape[-3] != tau:
        raise InvalidHistoryError(f"history window must hold {tau} frames, got {H.shape[-3]}")
    return np.stack([H.real, H.imag], axis=-1)


def unmap_input(x: np.ndarray) -> np.ndarray:
    return x[..., 0] + 1j * x[..., 1]


@dataclass
class TrainingSet:
    """Examples ``(history window, true current channel)`` cut from channel sequences.

    Frames are stored once per sequence: ``estimates[s, t]`` is the noisy
    estimate of frame ``t`` of sequence ``s`` and ``truth[s, t]`` the true
    channel.  Example ``i`` is anchored at ``(seq[i], time[i])``; its history
    is ``estimates[seq, time-1], ..., estimates[seq, time-tau]`` and its
    target ``truth[seq, time]``.
    """

    grid: GridConfig
    tau: int
    estimates: np.ndarray = field(repr=False)
    truth: np.ndarray = field(repr=False)
    seq: np.ndarray = field(repr=False)
    time: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        MN = self.grid.MN
        if self.estimates.shape != self.truth.shape or self.estimates.shape[-2:] != (MN, MN):
            raise InvalidDimensionError("frame stores must be (S, T, MN, MN) and match")
        if len(self.seq) < 1 or len(self.seq) != len(self.time):
            raise InvalidDimensionError("training set needs at least one example")
        if np.any(self.time < self.tau):
            raise InvalidHistoryError("every example needs tau earlier frames")

    def __len__(self) -> int:
        return len(self.seq)

    def window(self, i: int) -> HistoryWindow:
        s, t = self.seq[i], self.time[i]
        return HistoryWindow(tuple(self.estimates[s, t - 1 - j] for j in range(self.tau)))

    def target(self, i: int) -> DdChannel:
        return DdChannel(self.grid, self.truth[self.seq[i], self.time[i]])

    def histories(self, idx) -> np.ndarray:
        """Complex ``(B, tau, MN, MN)`` history stacks for example indices ``idx``."""
        idx = np.asarray(idx)
        s = self.seq[idx][:, None]
        t = self.time[idx][:, None] - 1 - np.arange(self.tau)[None, :]
        return self.estimates[s, t]

    def batch(self, idx, with_estimate: bool = False):
        """``(inputs, true channels)`` for example indices ``idx``.

        With ``with_estimate`` the current frames' estimates are appended as a
        third element, for a receiver that equalizes with the estimate.
        """
        idx = np.asarray(idx)
        s, t = self.seq[idx], self.time[idx]
        x = map_input(self.histories(idx))
        if with_estimate:
            return x, self.truth[s, t], self.estimates[s, t]
        return x, self.truth[s, t]

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx)
        return TrainingSet(self.grid, self.tau, self.estimates, self.truth, self.seq[idx], self.time[idx], self.meta)

    def save(self, path) -> None:
        g = self.grid
        meta = dict(self.meta, M=g.M, N=g.N, carrier_hz=g.carrier_hz, delta_f_hz=g.delta_f_hz, tau=self.tau)
        blob.write_blob(path, "training_set", 1, meta,
                        {"estimates": self.estimates, "truth": self.truth, "seq": self.seq, "time": self.time})

    @classmethod
    def load(cls, path) -> "TrainingSet":
        header, arr = blob.read_blob(path, "training_set")
        meta = dict(header["meta"])
        grid = GridConfig(meta.pop("M"), meta.pop("N"), meta.pop("carrier_hz"), meta.pop("delta_f_hz"))
        tau = meta.pop("tau")
        return cls(grid, tau, arr["estimates"], arr["truth"], arr["seq"], arr["time"], meta)
