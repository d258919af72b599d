"""Transformer attention encoder-decoder with a CTC head on the encoder.

No position embeddings: the encoder gets order information from the causal
VGG frontend and the decoder from a causal convolution over token
embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import numerics as nx
from ..layers import CausalConv, Embedding, LayerNorm, Linear, Module, TransformerBlock, VGGFrontend
from ..numerics import Tensor
from ..streaming import AttentionMask, causal_mask


@dataclass(frozen=True)
class TransformerAEDConfig:
    d_in: int
    num_labels: int
    num_outputs: int
    num_embeddings: int
    sos: int
    eos: int
    d_model: int = 32
    heads: int = 2
    d_k: int = 16
    d_ff: int = 64
    enc_blocks: int = 2
    dec_blocks: int = 1
    vgg_channels: tuple[int, int] = (16, 16)
    mask_kind: str = "full"
    mask_size: int = 0
    decoder_lookahead: int = 0


class TransformerAEDModel(Module):
    def __init__(self, cfg: TransformerAEDConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.frontend = VGGFrontend(cfg.d_in, cfg.vgg_channels, cfg.d_model, rng)
        self.enc_blocks = [
            TransformerBlock(cfg.d_model, cfg.heads, cfg.d_k, cfg.d_ff, rng) for _ in range(cfg.enc_blocks)
        ]
        self.enc_norm = LayerNorm(cfg.d_model)
        self.ctc_head = Linear(cfg.d_model, cfg.num_labels, rng)
        self.embed = Embedding(cfg.num_embeddings, cfg.d_model, rng)
        self.dec_conv = CausalConv(cfg.d_model, cfg.d_model, 3, rng)
        self.dec_blocks = [
            TransformerBlock(cfg.d_model, cfg.heads, cfg.d_k, cfg.d_ff, rng, cross=True)
            for _ in range(cfg.dec_blocks)
        ]
        self.dec_norm = LayerNorm(cfg.d_model)
        self.out = Linear(cfg.d_model, cfg.num_outputs, rng)

    @property
    def mask(self) -> AttentionMask:
        return AttentionMask(self.cfg.mask_kind, self.cfg.mask_size)

    @property
    def streaming(self) -> bool:
        return self.cfg.mask_kind != "full"

    def encode_frontend(self, x: Tensor) -> Tensor:
        return self.frontend(x)

    def encode_blocks(self, h: Tensor, mask: AttentionMask | None = None) -> Tensor:
        mask = mask or self.mask
        m = mask.matrix(h.shape[0])
        for blk in self.enc_blocks:
            h = blk(h, m)
        return self.enc_norm(h)

    def encode(self, x: Tensor, mask: AttentionMask | None = None) -> Tensor:
        return self.encode_blocks(self.encode_frontend(x), mask)

    def ctc_logprobs(self, enc: Tensor) -> Tensor:
        return nx.log_softmax(self.ctc_head(enc))

    def decode(self, enc: Tensor, prefix: Sequence[int], memory_mask: np.ndarray | None = None) -> Tensor:
        """Log-probs (len(prefix), num_outputs): row i predicts the token after prefix[:i+1].

        ``prefix`` starts with sos. ``memory_mask`` is (len(prefix), T_enc).
        """
        n = len(prefix)
        emb = self.embed(list(prefix))
        h = nx.add(emb, self.dec_conv(emb))
        self_mask = causal_mask(n)
        for blk in self.dec_blocks:
            h = blk(h, self_mask, memory=enc, memory_mask=memory_mask)
        return nx.log_softmax(self.out(self.dec_norm(h)))

    def next_logprobs(self, enc: Tensor, prefix: Sequence[int], visible: int | None = None) -> np.ndarray:
        """Inference: log-probs of the next token given ``prefix`` (with sos), seeing ``visible`` frames."""
        T = enc.shape[0]
        mm = None
        if visible is not None and visible < T:
            mm = np.zeros((len(prefix), T), dtype=bool)
            mm[:, :visible] = True
        with nx.no_grad():
            return self.decode(enc, prefix, mm).data[-1]


def transformer_aed_forward(
    model: TransformerAEDModel,
    x: Tensor,
    tokens: Sequence[int],
    mask: AttentionMask | None = None,
) -> tuple[Tensor, Tensor]:
    """Teacher-forced attention log-probs (U+1, K_att) and CTC log-probs (T', K)."""
    if x.ndim != 2 or x.shape[1] != model.cfg.d_in:
        raise nx.ShapeError(f"transformer_aed_forward: expected (T, {model.cfg.d_in}) features, got {x.shape}")
    enc = model.encode(x, mask)
    att = model.decode(enc, [model.cfg.sos] + [int(t) for t in tokens])
    return att, model.ctc_logprobs(enc)
