"""Convolutional-LSTM precoder network with an explicit backward pass.

Per history frame: 3x3 same-padded convolution over the (Re, Im) channels,
ReLU, 2x2 max-pool with stride (2, 1), flatten.  The flattened frames run
through two stacked LSTMs (the second keeps only its final state), a linear
layer emits ``2*MN*K`` reals, and the block is scaled to Frobenius norm
``sqrt(P0)`` before its top and bottom halves become the real and imaginary
parts of the MN x K precoder.

Arrays are batched: inputs are ``(B, tau, MN, MN, 2)`` with the most recent
frame first along the tau axis; the LSTMs consume frames oldest to newest so
the final step sees the most recent one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidDimensionError


@dataclass(frozen=True)
class NetShape:
    M: int
    N: int
    K: int
    tau: int
    hidden: int = 32
    filters: int = 2
    kernel: int = 3

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def pooled(self) -> tuple[int, int]:
        return (-(-self.MN // 2), self.MN)

    @property
    def flat_size(self) -> int:
        r, c = self.pooled
        return r * c * self.filters

    @property
    def out_size(self) -> int:
        return 2 * self.MN * self.K

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        H, k = self.hidden, self.kernel
        return {
            "conv_w": (k, k, 2, self.filters),
            "conv_b": (self.filters,),
            "lstm1_w": (self.flat_size + H, 4 * H),
            "lstm1_b": (4 * H,),
            "lstm2_w": (2 * H, 4 * H),
            "lstm2_b": (4 * H,),
            "fc_w": (H, self.out_size),
            "fc_b": (self.out_size,),
        }


@dataclass
class NetworkParams:
    """All trainable tensors, keyed by layer.  Also used for gradients."""

    shape: NetShape
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = self.shape.tensor_shapes()
        if set(expected) != set(self.tensors):
            raise InvalidDimensionError(f"parameter names {sorted(self.tensors)} != {sorted(expected)}")
        for name, shp in expected.items():
            if self.tensors[name].shape != shp:
                raise InvalidDimensionError(f"{name}: expected {shp}, got {self.tensors[name].shape}")

    def __getitem__(self, name):
        return self.tensors[name]

    @property
    def names(self) -> list[str]:
        return list(self.shape.tensor_shapes())

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[n].ravel() for n in self.names])

    def with_flat(self, v: np.ndarray) -> "NetworkParams":
        out, i = {}, 0
        for n, shp in self.shape.tensor_shapes().items():
            sz = int(np.prod(shp))
            out[n] = np.array(v[i : i + sz], dtype=float).reshape(shp)
            i += sz
        return NetworkParams(self.shape, out)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.shape, {n: t.copy() for n, t in self.tensors.items()})

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(self.shape, {n: np.zeros_like(t) for n, t in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())


def init_params(shape: NetShape, rng: np.random.Generator) -> NetworkParams:
    """Fan-in uniform weights, zero biases, LSTM forget-gate bias 1."""
    t = {}
    for name, shp in shape.tensor_shapes().items():
        if name.endswith("_b"):
            t[name] = np.zeros(shp)
            continue
        fan_in = int(np.prod(shp[:-1]))
        bound = 1.0 / np.sqrt(fan_in)
        t[name] = rng.uniform(-bound, bound, size=shp)
    H = shape.hidden
    t["lstm1_b"][H : 2 * H] = 1.0
    t["lstm2_b"][H : 2 * H] = 1.0
    return NetworkParams(shape, t)


# -- layers -------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _band(w, C):
    # (k, k, Cin, F) kernel -> (k, Cin, C + k - 1, F * C) banded matrices, so that a
    # padded input row times band[di, ci] gives every filter's contribution at once
    k, _, Cin, F = w.shape
    band = np.zeros((k, Cin, C + k - 1, F, C))
    cols = np.arange(C)
    for dj in range(k):
        band[:, :, cols + dj, :, cols] = w[:, dj][None]
    return band.reshape(k, Cin, C + k - 1, F * C)


def _conv_forward(x, w, b):
    # channel-first: x (S, Cin, R, C) -> (S, F, R, C)
    S, Cin, R, C = x.shape
    k, F = w.shape[0], w.shape[-1]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    band = _band(w, C)
    z = np.zeros((S, R, F * C))
    for di in range(k):
        for ci in range(Cin):
            z += xp[:, ci, di : di + R] @ band[di, ci]
    z = z.reshape(S, R, F, C).transpose(0, 2, 1, 3) + b[None, :, None, None]
    return z, xp


def _conv_weight_grad(xp, g_z, k):
    S, F, R, C = g_z.shape
    Cin = xp.shape[1]
    g2 = g_z.transpose(0, 2, 1, 3).reshape(S * R, F * C)
    gw = np.empty((k, k, Cin, F))
    cols = np.arange(C)
    for di in range(k):
        for ci in range(Cin):
            m = (xp[:, ci, di : di + R].reshape(S * R, -1).T @ g2).reshape(-1, F, C)
            for dj in range(k):
                gw[di, dj, ci] = m[cols + dj, :, cols].sum(0)
    return gw


def _pool_windows(a):
    # channel-first (S, F, R, C); 2x2 window, stride (2, 1), trailing -inf padding
    S, F, R, C = a.shape
    R2 = -(-R // 2)
    ap = np.full((S, F, 2 * R2, C + 1), -np.inf)
    ap[:, :, :R, :C] = a
    return ap, _pool_views(ap, C)


def _pool_views(ap, C):
    return (ap[:, :, 0::2, :C], ap[:, :, 1::2, :C], ap[:, :, 0::2, 1:], ap[:, :, 1::2, 1:])


def _pool_forward(a):
    _, (c0, c1, c2, c3) = _pool_windows(a)
    return np.maximum(np.maximum(c0, c1), np.maximum(c2, c3))


def _pool_backward(g, a, out):
    # route each gradient to the first window position holding the maximum
    R, C = a.shape[2:]
    ap, cands = _pool_windows(a)
    gp = np.zeros_like(ap)
    taken = np.zeros(out.shape, dtype=bool)
    for cand, tgt in zip(cands, _pool_views(gp, C)):
        hit = (cand == out) & ~taken
        tgt += np.where(hit, g, 0.0)
        taken |= hit
    return gp[:, :, :R, :C]


def _lstm_forward(xs, w, b, H):
    B, T, _ = xs.shape
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    hs = np.empty((B, T, H))
    for t in range(T):
        xh = np.concatenate([xs[:, t], h], axis=1)
        z = xh @ w + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        steps.append((xh, i, f, g, o, c_prev, tc))
    return hs, steps


def _lstm_backward(ghs, steps, w, H):
    B, T, _ = ghs.shape
    gw = np.zeros_like(w)
    gb = np.zeros(w.shape[1])
    gxs = np.empty((B, T, w.shape[0] - H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(T)):
        xh, i, f, g, o, c_prev, tc = steps[t]
        dh = ghs[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = np.concatenate(
            [dc * g * i * (1 - i), dc * c_prev * f * (1 - f), dc * i * (1 - g * g), do * o * (1 - o)],
            axis=1,
        )
        gw += xh.T @ dz
        gb += dz.sum(0)
        dxh = dz @ w.T
        gxs[:, t] = dxh[:, :-H]
        dh_next = dxh[:, -H:]
        dc_next = dc * f
    return gxs, gw, gb


# -- network ------------------------------------------------------------------


def _check_input(shape: NetShape, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 4:
        x = x[None]
    want = (shape.tau, shape.MN, shape.MN, 2)
    if x.shape[1:] != want:
        raise InvalidDimensionError(f"network input must be (B,) + {want}, got {x.shape}")
    return x


def forward_cached(params: NetworkParams, x, P0: float):
    """Batched forward pass returning ``(precoders, cache)``; precoders are ``(B, MN, K)``."""
    s = params.shape
    x = _check_input(s, x)
    B, T = x.shape[:2]
    MN, K, H = s.MN, s.K, s.hidden
    frames = np.ascontiguousarray(x[:, ::-1].reshape(B * T, MN, MN, 2).transpose(0, 3, 1, 2))
    z, xp = _conv_forward(frames, params["conv_w"], params["conv_b"])
    a = np.maximum(z, 0.0)
    pooled = _pool_forward(a)
    # flatten in (row, col, filter) order
    feats = pooled.transpose(0, 2, 3, 1).reshape(B, T, -1)
    h1, st1 = _lstm_forward(feats, params["lstm1_w"], params["lstm1_b"], H)
    h2, st2 = _lstm_forward(h1, params["lstm2_w"], params["lstm2_b"], H)
    last = h2[:, -1]
    raw = (last @ params["fc_w"] + params["fc_b"]).reshape(B, 2 * MN, K)
    norm = np.sqrt(np.sum(raw * raw, axis=(1, 2)))[:, None, None]
    scaled = np.sqrt(P0) * raw / norm
    P = scaled[:, :MN] + 1j * scaled[:, MN:]
    cache = dict(x_shape=x.shape, xp=xp, z=z, a=a, pooled=pooled, st1=st1, st2=st2,
                 h2=h2, last=last, raw=raw, norm=norm, P0=P0)
    return P, cache


def forward(params: NetworkParams, x, P0: float) -> np.ndarray:
    """Precoder(s) for one ``(tau, MN, MN, 2)`` input or a batch of them."""
    x = np.asarray(x)
    P, _ = forward_cached(params, x, P0)
    return P[0] if x.ndim == 4 else P


def backward(params: NetworkParams, cache, grad_P) -> NetworkParams:
    """Gradient of a real loss w.r.t. every tensor, given its gradient w.r.t. the precoders.

    ``grad_P`` uses ``dL/dRe + 1j dL/dIm``, matching ``link.fer_value_and_grad``.
    """
    s = params.shape
    B, T = cache["x_shape"][:2]
    MN, H = s.MN, s.hidden
    g = {}

    g_scaled = np.concatenate([grad_P.real, grad_P.imag], axis=1)
    raw, norm = cache["raw"], cache["norm"]
    u = raw / norm
    radial = np.sum(u * g_scaled, axis=(1, 2))[:, None, None]
    g_raw = np.sqrt(cache["P0"]) / norm * (g_scaled - radial * u)

    g_out = g_raw.reshape(B, -1)
    g["fc_w"] = cache["last"].T @ g_out
    g["fc_b"] = g_out.sum(0)
    g_last = g_out @ params["fc_w"].T

    g_h2 = np.zeros_like(cache["h2"])
    g_h2[:, -1] = g_last
    g_h1, g["lstm2_w"], g["lstm2_b"] = _lstm_backward(g_h2, cache["st2"], params["lstm2_w"], H)
    g_feats, g["lstm1_w"], g["lstm1_b"] = _lstm_backward(g_h1, cache["st1"], params["lstm1_w"], H)

    r, c = s.pooled
    g_pooled = g_feats.reshape(B * T, r, c, s.filters).transpose(0, 3, 1, 2)
    g_a = _pool_backward(g_pooled, cache["a"], cache["pooled"])
    g_z = np.where(cache["z"] > 0, g_a, 0.0)
    g["conv_w"] = _conv_weight_grad(cache["xp"], g_z, s.kernel)
    g["conv_b"] = g_z.sum(axis=(0, 2, 3))
    return NetworkParams(s, g)

