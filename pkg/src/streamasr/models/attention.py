"""Decoder-side attention for RNN-AED: location-aware soft attention and MoChA."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nx
from ..layers import Linear, Module
from ..numerics import Tensor


def _row(x: Tensor) -> Tensor:
    return nx.reshape(x, (1, -1))


def _vec(x: Tensor) -> Tensor:
    return nx.reshape(x, (-1,))


def weighted_sum(weights: Tensor, enc: Tensor) -> Tensor:
    """sum_j w_j * enc_j for a (T,) weight vector and (T, D) encoder output."""
    return _vec(nx.matmul(_row(weights), enc))


class LocationAwareAttention(Module):
    """Additive attention whose energies also see a convolution of the previous alignment."""

    def __init__(self, enc_dim: int, dec_dim: int, att_dim: int, rng: np.random.Generator,
                 kernel: int = 15, filters: int = 8):
        if kernel % 2 != 1:
            raise ValueError("location kernel width must be odd")
        self.enc_proj = Linear(enc_dim, att_dim, rng, bias=False)
        self.dec_proj = Linear(dec_dim, att_dim, rng)
        self.loc_conv = Linear(kernel, filters, rng, bias=False)
        self.loc_proj = Linear(filters, att_dim, rng, bias=False)
        self.v = Linear(att_dim, 1, rng, bias=False)
        self.kernel = kernel

    def init_state(self, T: int) -> Tensor:
        return nx.constant(np.full(T, 1.0 / T))

    def energies(self, enc_keys: Tensor, query: Tensor, prev_align: Tensor) -> Tensor:
        half = self.kernel // 2
        loc = self.loc_conv(nx.unfold(nx.reshape(prev_align, (-1, 1)), half, half))
        pre = nx.add(nx.add(enc_keys, self.loc_proj(loc)), self.dec_proj(query))
        return _vec(self.v(nx.tanh(pre)))

    def __call__(self, enc: Tensor, enc_keys: Tensor, query: Tensor, prev_align: Tensor):
        w = nx.softmax(self.energies(enc_keys, query, prev_align))
        return weighted_sum(w, enc), w


def monotonic_attention(p_select: Tensor, prev_alpha: Tensor) -> Tensor:
    """Expected boundary distribution of hard monotonic attention.

    alpha_j = p_j * q_j with q_j = (1 - p_{j-1}) q_{j-1} + prev_alpha_j: the
    probability that the left-to-right scan, starting from the previous
    boundary, stops at frame j. Mass that never stops is dropped.
    """
    p = p_select.data
    a = prev_alpha.data
    T = p.shape[0]
    q = np.empty(T)
    acc = 0.0
    for j in range(T):
        acc = (1.0 - p[j - 1]) * acc + a[j] if j else a[0]
        q[j] = acc
    alpha = p * q

    def bw(g):
        gp = np.empty(T)
        ga = np.empty(T)
        gq_next = 0.0
        for j in range(T - 1, -1, -1):
            gq = p[j] * g[j] + (1.0 - p[j]) * gq_next
            gp[j] = q[j] * g[j] - q[j] * gq_next
            ga[j] = gq
            gq_next = gq
        return gp, ga

    return nx.custom("monotonic_attention", alpha, (p_select, prev_alpha), bw)


def band_matrix(T: int, window: int) -> np.ndarray:
    """B[k, l] = 1 when k - window < l <= k."""
    k = np.arange(T)[:, None]
    l = np.arange(T)[None, :]
    return ((l <= k) & (l > k - window)).astype(np.float64)


def chunkwise_weights(alpha: Tensor, chunk_energy: Tensor, window: int) -> Tensor:
    """Expected soft-attention weights over the ``window`` frames ending at each boundary."""
    T = alpha.shape[0]
    B = nx.constant(band_matrix(T, window))
    e = nx.exp(nx.sub(chunk_energy, float(chunk_energy.data.max())))
    denom = _vec(nx.matmul(B, nx.reshape(e, (-1, 1))))
    ratio = nx.div(alpha, denom)
    return nx.mul(e, _vec(nx.matmul(nx.transpose(B), nx.reshape(ratio, (-1, 1)))))


@dataclass
class MoChAState:
    """Previous boundary distribution (expected) or hard boundary (inference)."""

    alpha: Tensor
    window: int
    boundary: int = 0
    history: list = field(default_factory=list)


def mocha_expected_attention(state: MoChAState, p_select: Tensor, chunk_energy: Tensor, enc: Tensor):
    """Expected context vector, boundary distribution and chunk weights for one decoder step."""
    alpha = monotonic_attention(p_select, state.alpha)
    beta = chunkwise_weights(alpha, chunk_energy, state.window)
    return weighted_sum(beta, enc), alpha, beta


class MoChA(Module):
    """Monotonic chunkwise attention trained through its expectation.

    Selection probability is sigmoid(g v/|v| . tanh(W_h h_j + W_s s + b) + r),
    with Gaussian noise added before the sigmoid while training. The scalar
    gain g lets the energies outgrow the noise, which pushes the selection
    probabilities towards 0 or 1 so hard inference matches training.
    """

    def __init__(self, enc_dim: int, dec_dim: int, att_dim: int, rng: np.random.Generator,
                 window: int = 3, init_r: float = -1.0, noise_std: float = 1.0):
        self.mono_enc = Linear(enc_dim, att_dim, rng, bias=False)
        self.mono_dec = Linear(dec_dim, att_dim, rng)
        self.mono_v = Linear(att_dim, 1, rng, bias=False)
        self.mono_g = nx.parameter(np.array(1.0 / np.sqrt(att_dim)))
        self.mono_r = nx.parameter(np.array(init_r))
        self.chunk_enc = Linear(enc_dim, att_dim, rng, bias=False)
        self.chunk_dec = Linear(dec_dim, att_dim, rng)
        self.chunk_v = Linear(att_dim, 1, rng, bias=False)
        self.window = window
        self.noise_std = noise_std

    def init_state(self, T: int) -> MoChAState:
        a0 = np.zeros(T)
        a0[0] = 1.0
        return MoChAState(nx.constant(a0), self.window)

    def keys(self, enc: Tensor) -> tuple[Tensor, Tensor]:
        return self.mono_enc(enc), self.chunk_enc(enc)

    def monotonic_energy(self, mono_keys: Tensor, query: Tensor) -> Tensor:
        v = self.mono_v.weight
        inv_norm = nx.exp(nx.scale(nx.log(nx.total(nx.mul(v, v))), -0.5))
        e = _vec(self.mono_v(nx.tanh(nx.add(mono_keys, self.mono_dec(query)))))
        return nx.add(nx.mul(e, nx.mul(self.mono_g, inv_norm)), self.mono_r)

    def chunk_energy(self, chunk_keys: Tensor, query: Tensor) -> Tensor:
        return _vec(self.chunk_v(nx.tanh(nx.add(chunk_keys, self.chunk_dec(query)))))

    def selection_probs(self, mono_keys: Tensor, query: Tensor, noise_rng: np.random.Generator | None = None) -> Tensor:
        e = self.monotonic_energy(mono_keys, query)
        if noise_rng is not None and self.noise_std > 0:
            e = nx.add(e, nx.constant(noise_rng.normal(0.0, self.noise_std, size=e.shape)))
        return nx.sigmoid(e)

    def __call__(self, enc: Tensor, keys, query: Tensor, state: MoChAState, noise_rng=None):
        mono_keys, chunk_keys = keys
        p = self.selection_probs(mono_keys, query, noise_rng)
        ctx, alpha, beta = mocha_expected_attention(state, p, self.chunk_energy(chunk_keys, query), enc)
        return ctx, MoChAState(alpha, state.window), beta
