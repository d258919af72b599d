"""RNN transducer: LSTM encoder, LSTM prediction network, feed-forward joint network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import numerics as nx
from ..layers import Embedding, Linear, LSTMBlockStandard, Module, lstm_step
from ..numerics import Tensor
from .rnn_encoder import RNNEncoder

BLANK = 0


@dataclass(frozen=True)
class RNNTConfig:
    d_in: int
    num_labels: int
    num_embeddings: int
    enc_blocks: int = 2
    enc_cell: int = 48
    enc_proj: int = 32
    direction: str = "uni"
    block_type: str = "standard"
    context_taus: tuple[int | None, ...] | None = None
    pred_blocks: int = 1
    pred_cell: int = 48
    pred_proj: int = 32
    embed_dim: int = 16
    joint_dim: int = 32


class RNNTModel(Module):
    """Transducer whose prediction network only ever sees previous non-blank labels.

    The start symbol of the prediction network is the blank id.
    """

    def __init__(self, cfg: RNNTConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.encoder = RNNEncoder(
            cfg.d_in, cfg.enc_blocks, cfg.enc_cell, cfg.enc_proj, rng,
            direction=cfg.direction, block_type=cfg.block_type, context_taus=cfg.context_taus,
        )
        self.embed = Embedding(cfg.num_embeddings, cfg.embed_dim, rng)
        self.pred_blocks = []
        dim = cfg.embed_dim
        for _ in range(cfg.pred_blocks):
            self.pred_blocks.append(LSTMBlockStandard(dim, cfg.pred_cell, cfg.pred_proj, rng))
            dim = cfg.pred_proj
        self.joint_enc = Linear(cfg.enc_proj, cfg.joint_dim, rng, bias=False)
        self.joint_pred = Linear(cfg.pred_proj, cfg.joint_dim, rng)
        self.joint_out = Linear(cfg.joint_dim, cfg.num_labels, rng)

    # -- pieces -----------------------------------------------------------
    def encode(self, x: Tensor) -> Tensor:
        return self.encoder(x)

    def predict(self, tokens: Sequence[int]) -> Tensor:
        """Prediction-network outputs for inputs (start, y_1, ..., y_U): (U+1, pred_proj)."""
        ids = [BLANK] + [int(t) for t in tokens]
        h = self.embed(ids)
        for blk in self.pred_blocks:
            h = blk(h)
        return h

    def pred_zero_state(self):
        return [blk.zero_state() for blk in self.pred_blocks]

    def predict_step(self, token: int, state):
        """One prediction-network step consuming ``token``; returns (output, new state)."""
        h = self.embed([int(token)])
        h = nx.reshape(h, (self.cfg.embed_dim,))
        new_state = []
        for blk, st in zip(self.pred_blocks, state):
            h, st = lstm_step(blk, h, st)
            new_state.append(st)
        return h, new_state

    def joint(self, enc: Tensor, pred: Tensor) -> Tensor:
        """(T, E) x (U+1, P) -> (T, U+1, K) log-probabilities."""
        T, U1 = enc.shape[0], pred.shape[0]
        z = nx.tanh(nx.outer_add(self.joint_enc(enc), self.joint_pred(pred)))
        logits = self.joint_out(nx.reshape(z, (T * U1, self.cfg.joint_dim)))
        return nx.reshape(nx.log_softmax(logits), (T, U1, self.cfg.num_labels))

    def joint_logprobs(self, enc_proj_t: np.ndarray, pred_out: np.ndarray) -> np.ndarray:
        """Inference-only joint at one (t, u): takes the projected encoder frame."""
        z = np.tanh(enc_proj_t + pred_out @ self.joint_pred.weight.data + self.joint_pred.bias.data)
        logits = z @ self.joint_out.weight.data + self.joint_out.bias.data
        logits = logits - logits.max()
        return logits - np.log(np.exp(logits).sum())


def rnnt_forward(model: RNNTModel, x: Tensor, tokens: Sequence[int]) -> Tensor:
    """Joint log-probability grid of shape (T, U+1, num_labels)."""
    if x.ndim != 2 or x.shape[1] != model.cfg.d_in:
        raise nx.ShapeError(f"rnnt_forward: expected (T, {model.cfg.d_in}) features, got {x.shape}")
    bad = [t for t in tokens if not 1 <= int(t) < model.cfg.num_labels]
    if bad:
        raise ValueError(f"rnnt_forward: token ids {bad} outside 1..{model.cfg.num_labels - 1}")
    return model.joint(model.encode(x), model.predict(tokens))
