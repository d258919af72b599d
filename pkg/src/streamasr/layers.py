"""Network building blocks: LSTM blocks, future-context layer, attention, VGG frontend.

All blocks operate on one utterance at a time: sequences are ``(T, dim)``
tensors and per-step vectors are ``(dim,)``. Blocks hold their parameters as
attributes; :class:`Module` walks them to produce stable dotted names for
checkpointing and parameter transfer.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import numerics as nx
from .numerics import Tensor


class StreamingContractError(RuntimeError):
    """A non-causal block was invoked where streaming behaviour was required."""


class Module:
    """Parameter container with deterministic, dotted parameter names."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = OrderedDict(self.named_parameters())
        missing = [n for n in own if n not in state]
        unexpected = [n for n in state if n not in own]
        wrong = [
            f"{n}: {tuple(np.shape(state[n]))} != {own[n].shape}"
            for n in own
            if n in state and tuple(np.shape(state[n])) != own[n].shape
        ]
        if missing or unexpected or wrong:
            raise ValueError(
                f"state mismatch: missing={missing} unexpected={unexpected} shape={wrong}"
            )
        for n, p in own.items():
            p.data[...] = state[n]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = nx.parameter(_uniform(rng, (d_in, d_out), d_in))
        self.bias = nx.parameter(np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            y = nx.reshape(nx.matmul(nx.reshape(x, (1, -1)), self.weight), (self.d_out,))
        else:
            y = nx.matmul(x, self.weight)
        return y if self.bias is None else nx.add(y, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = nx.parameter(np.ones(dim))
        self.bias = nx.parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return nx.add(nx.mul(nx.layer_norm(x, self.eps), self.gain), self.bias)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator):
        self.table = nx.parameter(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n, dim)))

    def __call__(self, ids) -> Tensor:
        return nx.take_rows(self.table, ids)


def _check_dim(x: Tensor, dim: int, who: str) -> None:
    if x.shape[-1] != dim:
        raise nx.ShapeError(f"{who}: expected input dim {dim}, got shape {x.shape}")


def _gates(z: Tensor, n: int):
    """Split fused pre-activations (i, f, g, o) and apply nonlinearities."""
    i = nx.sigmoid(z[..., 0:n])
    f = nx.sigmoid(z[..., n:2 * n])
    g = nx.tanh(z[..., 2 * n:3 * n])
    o = nx.sigmoid(z[..., 3 * n:4 * n])
    return i, f, g, o


class LSTMCell(Module):
    """Plain LSTM recurrence over a hidden state of size ``cell``."""

    def __init__(self, d_in: int, cell: int, rng: np.random.Generator):
        self.w_in = nx.parameter(_uniform(rng, (d_in, 4 * cell), d_in))
        self.w_rec = nx.parameter(_uniform(rng, (cell, 4 * cell), cell))
        b = np.zeros(4 * cell)
        b[cell:2 * cell] = 1.0
        self.bias = nx.parameter(b)
        self.d_in, self.cell = d_in, cell

    def zero_state(self):
        return nx.constant(np.zeros(self.cell)), nx.constant(np.zeros(self.cell))

    def step_from_preact(self, xw: Tensor, state):
        h, c = state
        hw = nx.reshape(nx.matmul(nx.reshape(h, (1, -1)), self.w_rec), (4 * self.cell,))
        i, f, g, o = _gates(nx.add(xw, hw), self.cell)
        c_new = nx.add(nx.mul(f, c), nx.mul(i, g))
        h_new = nx.mul(o, nx.tanh(c_new))
        return h_new, c_new

    def run(self, x: Tensor, reverse: bool = False) -> Tensor:
        """Hidden states for every frame of ``x`` (T, d_in) -> (T, cell), zero initial state."""
        _check_dim(x, self.d_in, "LSTMCell")
        xw = nx.add(nx.matmul(x, self.w_in), self.bias)
        return lstm_sequence(xw, self.w_rec, reverse=reverse)

    def run_stepwise(self, x: Tensor, reverse: bool = False) -> Tensor:
        """Same as :meth:`run` but composed from per-step primitives."""
        xw = nx.add(nx.matmul(x, self.w_in), self.bias)
        state = self.zero_state()
        T = x.shape[0]
        order = range(T - 1, -1, -1) if reverse else range(T)
        outs: list[Tensor | None] = [None] * T
        for t in order:
            state = self.step_from_preact(xw[t], state)
            outs[t] = state[0]
        return nx.stack(outs, axis=0)


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_sequence(xw: Tensor, w_rec: Tensor, reverse: bool = False) -> Tensor:
    """Fused LSTM recurrence from precomputed input pre-activations.

    ``xw`` is (T, 4n) holding x_t W + b in gate order (i, f, g, o). Returns
    the (T, n) hidden states; the backward pass is hand-written BPTT.
    """
    T, four_n = xw.shape
    n = four_n // 4
    R = w_rec.data
    order = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    H = np.zeros((T, n))
    C = np.zeros((T, n))
    G = np.zeros((T, 4 * n))
    h = np.zeros(n)
    c = np.zeros(n)
    prev_h = np.zeros((T, n))
    prev_c = np.zeros((T, n))
    for t in order:
        prev_h[t], prev_c[t] = h, c
        z = xw.data[t] + h @ R
        gi, gf, go = _sig(z[:n]), _sig(z[n:2 * n]), _sig(z[3 * n:])
        gg = np.tanh(z[2 * n:3 * n])
        c = gf * c + gi * gg
        h = go * np.tanh(c)
        G[t, :n], G[t, n:2 * n], G[t, 2 * n:3 * n], G[t, 3 * n:] = gi, gf, gg, go
        H[t], C[t] = h, c

    def bw(gH):
        gxw = np.zeros((T, 4 * n))
        gR = np.zeros_like(R)
        dh = np.zeros(n)
        dc = np.zeros(n)
        for t in reversed(order):
            gi, gf, gg, go = G[t, :n], G[t, n:2 * n], G[t, 2 * n:3 * n], G[t, 3 * n:]
            tc = np.tanh(C[t])
            dh_t = gH[t] + dh
            dgo = dh_t * tc
            dc_t = dc + dh_t * go * (1.0 - tc * tc)
            dgi = dc_t * gg
            dgg = dc_t * gi
            dgf = dc_t * prev_c[t]
            dz = np.concatenate([
                dgi * gi * (1.0 - gi),
                dgf * gf * (1.0 - gf),
                dgg * (1.0 - gg * gg),
                dgo * go * (1.0 - go),
            ])
            gxw[t] = dz
            gR += np.outer(prev_h[t], dz)
            dh = R @ dz
            dc = dc_t * gf
        return gxw, gR

    return nx.custom("lstm_sequence", H, (xw, w_rec), bw)


class ContextLayer(Module):
    """Element-wise weighted sum over the current and ``tau`` future frames.

    out[t] = sum_{d=0..tau} q[d] * g[t+d]; frames past the end contribute
    nothing. Adds ``(tau + 1) * dim`` parameters.
    """

    def __init__(self, dim: int, tau: int):
        if tau < 0:
            raise ValueError(f"tau must be non-negative, got {tau}")
        self.q = nx.parameter(np.full((tau + 1, dim), 1.0 / (tau + 1)))
        self.tau, self.dim = tau, dim

    @property
    def lookahead(self) -> int:
        return self.tau

    def __call__(self, g: Tensor) -> Tensor:
        _check_dim(g, self.dim, "ContextLayer")
        T = g.shape[0]
        out = None
        for d in range(self.tau + 1):
            if d >= T:
                break
            shifted = g[d:]
            if d:
                shifted = nx.concat([shifted, nx.constant(np.zeros((d, self.dim)))], axis=0)
            term = nx.mul(shifted, self.q[d])
            out = term if out is None else nx.add(out, term)
        return out


def context_apply(layer: ContextLayer, g: Tensor) -> Tensor:
    return layer(g)


class LSTMBlockStandard(Module):
    """LSTM -> linear projection -> [context] -> LN."""

    def __init__(self, d_in: int, cell: int, proj: int, rng: np.random.Generator, context_tau: int | None = None):
        self.lstm = LSTMCell(d_in, cell, rng)
        self.proj = Linear(cell, proj, rng)
        self.context = ContextLayer(proj, context_tau) if context_tau is not None else None
        self.norm = LayerNorm(proj)
        self.d_in, self.out_dim = d_in, proj

    @property
    def lookahead(self) -> int:
        return self.context.tau if self.context is not None else 0

    def zero_state(self):
        return self.lstm.zero_state()

    def step(self, x_t: Tensor, state):
        if self.context is not None:
            raise StreamingContractError("a block with future context cannot be stepped frame by frame")
        _check_dim(x_t, self.d_in, "LSTMBlockStandard.step")
        xw = nx.add(nx.reshape(nx.matmul(nx.reshape(x_t, (1, -1)), self.lstm.w_in), (-1,)), self.lstm.bias)
        new_state = self.lstm.step_from_preact(xw, state)
        return self.norm(self.proj(new_state[0])), new_state

    def __call__(self, x: Tensor) -> Tensor:
        y = self.proj(self.lstm.run(x))
        if self.context is not None:
            y = self.context(y)
        return self.norm(y)


class LSTMBlockCustom(Module):
    """Layer-normalized LSTM with the projection inside the recurrence.

    Gate pre-activations are LN(x W) + LN(h R) + b; the cell output is
    o * tanh(LN(c)) and the recurrent/output state is its projection. An
    optional context layer follows; there is no trailing LN.
    """

    def __init__(self, d_in: int, cell: int, proj: int, rng: np.random.Generator, context_tau: int | None = None):
        self.w_in = nx.parameter(_uniform(rng, (d_in, 4 * cell), d_in))
        self.w_rec = nx.parameter(_uniform(rng, (proj, 4 * cell), proj))
        b = np.zeros(4 * cell)
        b[cell:2 * cell] = 1.0
        self.bias = nx.parameter(b)
        self.ln_in = LayerNorm(4 * cell)
        self.ln_rec = LayerNorm(4 * cell)
        self.ln_cell = LayerNorm(cell)
        self.w_proj = nx.parameter(_uniform(rng, (cell, proj), cell))
        self.context = ContextLayer(proj, context_tau) if context_tau is not None else None
        self.d_in, self.cell, self.out_dim = d_in, cell, proj

    @property
    def lookahead(self) -> int:
        return self.context.tau if self.context is not None else 0

    def zero_state(self):
        return nx.constant(np.zeros(self.out_dim)), nx.constant(np.zeros(self.cell))

    def _step(self, xw_ln: Tensor, state):
        h, c = state
        hw = nx.reshape(nx.matmul(nx.reshape(h, (1, -1)), self.w_rec), (4 * self.cell,))
        z = nx.add(nx.add(xw_ln, self.ln_rec(hw)), self.bias)
        i, f, g, o = _gates(z, self.cell)
        c_new = nx.add(nx.mul(f, c), nx.mul(i, g))
        m = nx.mul(o, nx.tanh(self.ln_cell(c_new)))
        h_new = nx.reshape(nx.matmul(nx.reshape(m, (1, -1)), self.w_proj), (self.out_dim,))
        return h_new, c_new

    def step(self, x_t: Tensor, state):
        if self.context is not None:
            raise StreamingContractError("a block with future context cannot be stepped frame by frame")
        _check_dim(x_t, self.d_in, "LSTMBlockCustom.step")
        xw = nx.reshape(nx.matmul(nx.reshape(x_t, (1, -1)), self.w_in), (-1,))
        new_state = self._step(self.ln_in(xw), state)
        return new_state[0], new_state

    def __call__(self, x: Tensor) -> Tensor:
        _check_dim(x, self.d_in, "LSTMBlockCustom")
        xw = self.ln_in(nx.matmul(x, self.w_in))
        state = self.zero_state()
        outs = []
        for t in range(x.shape[0]):
            state = self._step(xw[t], state)
            outs.append(state[0])
        y = nx.stack(outs, axis=0)
        if self.context is not None:
            y = self.context(y)
        return y


class BiLSTMBlock(Module):
    """Forward and backward LSTMs, concatenated -> projection -> LN (non-streaming)."""

    def __init__(self, d_in: int, cell: int, proj: int, rng: np.random.Generator):
        self.fwd = LSTMCell(d_in, cell, rng)
        self.bwd = LSTMCell(d_in, cell, rng)
        self.proj = Linear(2 * cell, proj, rng)
        self.norm = LayerNorm(proj)
        self.d_in, self.out_dim = d_in, proj
        self.lookahead = None

    def __call__(self, x: Tensor, streaming: bool = False) -> Tensor:
        return bilstm_forward(self, x, streaming=streaming)


def lstm_step(block, x_t: Tensor, state=None):
    """One causal step of a standard or custom LSTM block."""
    return block.step(x_t, state if state is not None else block.zero_state())


def bilstm_forward(block: BiLSTMBlock, x: Tensor, streaming: bool = False) -> Tensor:
    if streaming:
        raise StreamingContractError("bi-directional LSTM needs the whole utterance; not streamable")
    _check_dim(x, block.d_in, "BiLSTMBlock")
    hf = block.fwd.run(x)
    hb = block.bwd.run(x, reverse=True)
    return block.norm(block.proj(nx.concat([hf, hb], axis=1)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``heads`` heads of width ``d_k``."""

    def __init__(self, d_model: int, heads: int, d_k: int, rng: np.random.Generator, d_kv: int | None = None):
        d_kv = d_kv or d_model
        self.w_q = nx.parameter(_uniform(rng, (d_model, heads * d_k), d_model))
        self.w_k = nx.parameter(_uniform(rng, (d_kv, heads * d_k), d_kv))
        self.w_v = nx.parameter(_uniform(rng, (d_kv, heads * d_k), d_kv))
        self.w_head = nx.parameter(_uniform(rng, (heads * d_k, d_model), heads * d_k))
        self.heads, self.d_k, self.d_model = heads, d_k, d_model
        self.last_weights: list[np.ndarray] = []

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return multihead_attention(self, q_in, k_in, v_in, mask)


def multihead_attention(mha: MultiHeadAttention, q_in: Tensor, k_in: Tensor, v_in: Tensor, mask=None) -> Tensor:
    """[H_1 ... H_h] W_head with H_i = softmax(Q_i K_i^T / sqrt(d_k)) V_i.

    ``mask`` is a boolean (Tq, Tk) matrix, True where the key is visible.
    """
    Tq, Tk = q_in.shape[0], k_in.shape[0]
    if mask is None:
        mask = np.ones((Tq, Tk), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (Tq, Tk):
        raise nx.ShapeError(f"multihead_attention: mask {mask.shape} for queries {Tq} and keys {Tk}")
    q = nx.matmul(q_in, mha.w_q)
    k = nx.matmul(k_in, mha.w_k)
    v = nx.matmul(v_in, mha.w_v)
    inv = 1.0 / np.sqrt(mha.d_k)
    heads = []
    mha.last_weights = []
    for i in range(mha.heads):
        cols = slice(i * mha.d_k, (i + 1) * mha.d_k)
        scores = nx.scale(nx.matmul(q[:, cols], nx.transpose(k[:, cols])), inv)
        w = nx.masked_softmax(scores, mask)
        mha.last_weights.append(w.data)
        heads.append(nx.matmul(w, v[:, cols]))
    return nx.matmul(nx.concat(heads, axis=1), mha.w_head)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(d_model, d_ff, rng)
        self.outer = Linear(d_ff, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(nx.relu(self.inner(x)))


class TransformerBlock(Module):
    """Pre-LN transformer block; ``cross=True`` adds encoder-decoder attention."""

    def __init__(self, d_model: int, heads: int, d_k: int, d_ff: int, rng: np.random.Generator, cross: bool = False):
        self.norm_self = LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, heads, d_k, rng)
        if cross:
            self.norm_cross = LayerNorm(d_model)
            self.cross_attn = MultiHeadAttention(d_model, heads, d_k, rng)
        else:
            self.norm_cross = None
            self.cross_attn = None
        self.norm_ff = LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_ff, rng)

    def zero_output_projections(self) -> None:
        self.self_attn.w_head.data[...] = 0.0
        if self.cross_attn is not None:
            self.cross_attn.w_head.data[...] = 0.0
        self.ff.outer.weight.data[...] = 0.0
        self.ff.outer.bias.data[...] = 0.0

    def __call__(self, x: Tensor, mask=None, memory: Tensor | None = None, memory_mask=None) -> Tensor:
        return transformer_block_forward(self, x, mask, memory, memory_mask)


def transformer_block_forward(block: TransformerBlock, x: Tensor, mask=None, memory=None, memory_mask=None) -> Tensor:
    h = block.norm_self(x)
    x = nx.add(x, block.self_attn(h, h, h, mask))
    if block.cross_attn is not None:
        if memory is None:
            raise ValueError("decoder block needs encoder memory")
        h = block.norm_cross(x)
        x = nx.add(x, block.cross_attn(h, memory, memory, memory_mask))
    return nx.add(x, block.ff(block.norm_ff(x)))


class CausalConv(Module):
    """Time convolution over (T, C) that only looks at the current and past frames."""

    def __init__(self, c_in: int, c_out: int, width: int, rng: np.random.Generator):
        self.kernel = Linear(width * c_in, c_out, rng)
        self.width = width

    def __call__(self, x: Tensor) -> Tensor:
        return self.kernel(nx.unfold(x, self.width - 1, 0))


class VGGFrontend(Module):
    """Four causal convolutions in two stride-2 pooling stages (total stride 4).

    Encoder frame i summarizes input frames 4i .. 4i+3 and their history, so
    the frontend adds no lookahead beyond its own stride window.
    """

    stride = 4

    def __init__(self, d_in: int, channels: tuple[int, int], d_out: int, rng: np.random.Generator, width: int = 3):
        c1, c2 = channels
        self.convs = [
            CausalConv(d_in, c1, width, rng),
            CausalConv(c1, c1, width, rng),
            CausalConv(c1, c2, width, rng),
            CausalConv(c2, c2, width, rng),
        ]
        self.out = Linear(c2, d_out, rng)
        self.width = width
        self.d_in, self.out_dim = d_in, d_out

    lookahead_frames = 0

    @property
    def history_frames(self) -> int:
        """Input frames before the stride window that can influence an output frame."""
        k = self.width - 1
        # two convs at rate 1, then two at rate 2 (after the first pool)
        return 2 * k + 2 * (2 * k)

    def __call__(self, x: Tensor) -> Tensor:
        return vgg_frontend_forward(self, x)


def output_length(T: int, stride: int = 4) -> int:
    return -(-T // stride)


def vgg_frontend_forward(frontend: VGGFrontend, x: Tensor) -> Tensor:
    if x.shape[0] == 0:
        raise ValueError("VGG frontend needs at least one frame")
    _check_dim(x, frontend.d_in, "VGGFrontend")
    h = x
    for i, conv in enumerate(frontend.convs):
        h = nx.relu(conv(h))
        if i % 2 == 1:
            h = nx.max_pool_time(h, 2)
    return frontend.out(h)
