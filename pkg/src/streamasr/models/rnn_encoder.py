"""Stacked LSTM encoders shared by the RNN-T and RNN-AED models."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import numerics as nx
from ..layers import BiLSTMBlock, LSTMBlockCustom, LSTMBlockStandard, Module, StreamingContractError
from ..numerics import Tensor


class RNNEncoder(Module):
    """A stack of LSTM blocks.

    ``direction`` is ``uni`` (streaming) or ``bi`` (full utterance).
    ``context_taus`` gives the future-context window of each block (``None``
    entries or a ``None`` list mean no context layer); it only applies to
    uni-directional stacks.
    """

    def __init__(
        self,
        d_in: int,
        n_blocks: int,
        cell: int,
        proj: int,
        rng: np.random.Generator,
        direction: str = "uni",
        block_type: str = "standard",
        context_taus: Sequence[int | None] | None = None,
    ):
        if direction not in ("uni", "bi"):
            raise ValueError(f"direction must be 'uni' or 'bi', got {direction!r}")
        if block_type not in ("standard", "custom"):
            raise ValueError(f"block_type must be 'standard' or 'custom', got {block_type!r}")
        taus = list(context_taus) if context_taus is not None else [None] * n_blocks
        if len(taus) != n_blocks:
            raise ValueError(f"{len(taus)} context windows for {n_blocks} blocks")
        if direction == "bi" and any(t is not None for t in taus):
            raise ValueError("context layers are only defined for uni-directional encoders")
        self.blocks = []
        dim = d_in
        for tau in taus:
            if direction == "bi":
                blk = BiLSTMBlock(dim, cell, proj, rng)
            elif block_type == "custom":
                blk = LSTMBlockCustom(dim, cell, proj, rng, context_tau=tau)
            else:
                blk = LSTMBlockStandard(dim, cell, proj, rng, context_tau=tau)
            self.blocks.append(blk)
            dim = proj
        self.direction = direction
        self.context_taus = taus
        self.d_in, self.out_dim = d_in, proj

    @property
    def streaming(self) -> bool:
        return self.direction == "uni"

    @property
    def lookahead(self) -> int | None:
        """Future encoder frames visible to each output frame; None = whole utterance."""
        if not self.streaming:
            return None
        return sum(t or 0 for t in self.context_taus)

    def __call__(self, x: Tensor, streaming: bool | None = None) -> Tensor:
        if streaming and not self.streaming:
            raise StreamingContractError("bi-directional encoder cannot run under a streaming contract")
        h = x
        for blk in self.blocks:
            h = blk(h)
        return h

    def encode_array(self, x: np.ndarray) -> np.ndarray:
        with nx.no_grad():
            return self(nx.constant(x)).data
