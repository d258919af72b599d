"""RNN attention encoder-decoder with location-aware attention or MoChA."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import numerics as nx
from ..layers import Embedding, Linear, LSTMBlockStandard, Module, lstm_step
from ..numerics import Tensor
from .attention import LocationAwareAttention, MoChA
from .rnn_encoder import RNNEncoder


@dataclass(frozen=True)
class RNNAEDConfig:
    d_in: int
    num_outputs: int
    num_embeddings: int
    sos: int
    eos: int
    enc_blocks: int = 2
    enc_cell: int = 48
    enc_proj: int = 32
    direction: str = "bi"
    context_taus: tuple[int | None, ...] | None = None
    attention: str = "location"
    att_dim: int = 32
    loc_kernel: int = 15
    loc_filters: int = 8
    mocha_window: int = 3
    mocha_init_r: float = -1.0
    mocha_noise_std: float = 1.0
    dec_cell: int = 48
    dec_proj: int = 32
    embed_dim: int = 16


@dataclass
class DecoderState:
    lstm: tuple
    query: Tensor
    att: object


class RNNAEDModel(Module):
    """h_u = LSTM([c_u, emb(y_{u-1})], h_{u-1}); c_u attends with query h_{u-1}."""

    def __init__(self, cfg: RNNAEDConfig, rng: np.random.Generator):
        if cfg.attention not in ("location", "mocha"):
            raise ValueError(f"attention must be 'location' or 'mocha', got {cfg.attention!r}")
        self.cfg = cfg
        self.encoder = RNNEncoder(
            cfg.d_in, cfg.enc_blocks, cfg.enc_cell, cfg.enc_proj, rng,
            direction=cfg.direction, context_taus=cfg.context_taus,
        )
        self.embed = Embedding(cfg.num_embeddings, cfg.embed_dim, rng)
        if cfg.attention == "location":
            self.attention = LocationAwareAttention(
                cfg.enc_proj, cfg.dec_proj, cfg.att_dim, rng, kernel=cfg.loc_kernel, filters=cfg.loc_filters
            )
        else:
            self.attention = MoChA(
                cfg.enc_proj, cfg.dec_proj, cfg.att_dim, rng,
                window=cfg.mocha_window, init_r=cfg.mocha_init_r, noise_std=cfg.mocha_noise_std,
            )
        self.decoder = LSTMBlockStandard(cfg.enc_proj + cfg.embed_dim, cfg.dec_cell, cfg.dec_proj, rng)
        self.out = Linear(cfg.dec_proj + cfg.enc_proj, cfg.num_outputs, rng)

    @property
    def is_mocha(self) -> bool:
        return self.cfg.attention == "mocha"

    def encode(self, x: Tensor) -> Tensor:
        return self.encoder(x)

    def keys(self, enc: Tensor):
        if self.is_mocha:
            return self.attention.keys(enc)
        return self.attention.enc_proj(enc)

    def init_state(self, T: int) -> DecoderState:
        return DecoderState(
            self.decoder.zero_state(),
            nx.constant(np.zeros(self.cfg.dec_proj)),
            self.attention.init_state(T),
        )

    def attend(self, enc: Tensor, keys, state: DecoderState, noise_rng=None):
        """Context vector for the next step, the new attention state and its weights."""
        if self.is_mocha:
            ctx, att_state, beta = self.attention(enc, keys, state.query, state.att, noise_rng)
            return ctx, att_state, beta
        ctx, w = self.attention(enc, keys, state.query, state.att)
        return ctx, w, w

    def step_with_context(self, ctx: Tensor, prev_token: int, state: DecoderState, att_state) -> tuple[Tensor, DecoderState]:
        emb = nx.reshape(self.embed([int(prev_token)]), (self.cfg.embed_dim,))
        out, lstm_state = lstm_step(self.decoder, nx.concat([ctx, emb], axis=0), state.lstm)
        logp = nx.log_softmax(self.out(nx.concat([out, ctx], axis=0)))
        return logp, DecoderState(lstm_state, out, att_state)

    def step(self, enc: Tensor, keys, state: DecoderState, prev_token: int, noise_rng=None):
        """One label step: returns (log-probs over outputs, new state, attention weights)."""
        ctx, att_state, weights = self.attend(enc, keys, state, noise_rng)
        logp, new_state = self.step_with_context(ctx, prev_token, state, att_state)
        return logp, new_state, weights


def rnn_aed_forward(
    model: RNNAEDModel,
    x: Tensor,
    tokens: Sequence[int],
    noise_rng: np.random.Generator | None = None,
    record: list | None = None,
    boundaries: list | None = None,
) -> Tensor:
    """Teacher-forced log-probabilities (U+1, num_outputs); the last row predicts eos.

    Attention weights of every step are appended to ``record`` when given
    (for MoChA: expected chunk weights; the boundary distribution is in the
    state and appended as a pair ``(beta, alpha)``). For MoChA,
    ``boundaries`` collects each step's boundary distribution as a graph
    tensor so a caller can add penalties on it.
    """
    if x.ndim != 2 or x.shape[1] != model.cfg.d_in:
        raise nx.ShapeError(f"rnn_aed_forward: expected (T, {model.cfg.d_in}) features, got {x.shape}")
    enc = model.encode(x)
    keys = model.keys(enc)
    state = model.init_state(enc.shape[0])
    prev = [model.cfg.sos] + [int(t) for t in tokens]
    rows = []
    for tok in prev:
        logp, state, weights = model.step(enc, keys, state, tok, noise_rng)
        if record is not None:
            if model.is_mocha:
                record.append((weights.data.copy(), state.att.alpha.data.copy()))
            else:
                record.append(weights.data.copy())
        if boundaries is not None and model.is_mocha:
            boundaries.append(state.att.alpha)
        rows.append(logp)
    return nx.stack(rows, axis=0)


def sequence_logprob(logp: Tensor, tokens: Sequence[int], eos: int) -> Tensor:
    """Sum of teacher-forced log-probabilities of tokens followed by eos."""
    return nx.total(nx.pick(logp, list(tokens) + [eos]))
