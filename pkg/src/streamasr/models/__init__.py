"""The three end-to-end model families."""

from .attention import LocationAwareAttention, MoChA, MoChAState, mocha_expected_attention, monotonic_attention
from .rnn_aed import RNNAEDConfig, RNNAEDModel, rnn_aed_forward, sequence_logprob
from .rnn_encoder import RNNEncoder
from .rnnt import RNNTConfig, RNNTModel, rnnt_forward
from .transformer_aed import TransformerAEDConfig, TransformerAEDModel, transformer_aed_forward

__all__ = [
    "LocationAwareAttention",
    "MoChA",
    "MoChAState",
    "RNNAEDConfig",
    "RNNAEDModel",
    "RNNEncoder",
    "RNNTConfig",
    "RNNTModel",
    "TransformerAEDConfig",
    "TransformerAEDModel",
    "mocha_expected_attention",
    "monotonic_attention",
    "rnn_aed_forward",
    "rnnt_forward",
    "sequence_logprob",
    "transformer_aed_forward",
]
