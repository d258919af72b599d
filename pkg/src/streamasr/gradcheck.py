"""Finite-difference gradient checks for every layer, loss and full model at toy sizes."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import numerics as nx
from .layers import (
    BiLSTMBlock,
    CausalConv,
    ContextLayer,
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    LSTMBlockCustom,
    LSTMBlockStandard,
    LSTMCell,
    MultiHeadAttention,
    TransformerBlock,
    VGGFrontend,
)
from .losses import MultiTaskConfig, ctc_loss, frame_ce_loss, multitask_loss, transducer_loss
from .models import (
    LocationAwareAttention,
    MoChA,
    RNNAEDConfig,
    RNNAEDModel,
    RNNTConfig,
    RNNTModel,
    TransformerAEDConfig,
    TransformerAEDModel,
    rnn_aed_forward,
    rnnt_forward,
    sequence_logprob,
    transformer_aed_forward,
)

TOLERANCE = 1e-4
EPSILON = 1e-5


def _projected(out: nx.Tensor, rng: np.random.Generator) -> Callable[[nx.Tensor], nx.Tensor]:
    w = nx.constant(rng.normal(size=out.shape))
    return lambda y: nx.total(nx.mul(y, w))


def _case(rng, module_params, forward, inputs=()):
    """Scalar check function: fixed random projection of ``forward()``."""
    with nx.no_grad():
        proj = _projected(forward(), rng)
    return (lambda: proj(forward())), list(module_params) + list(inputs)


def _jitter(module, rng: np.random.Generator, std: float = 1.0):
    """Move zero-initialised parameters off ReLU / max-pool kinks."""
    for p in module.parameters():
        if not np.any(p.data):
            p.data[...] = rng.normal(0.0, std, size=p.shape)
    return module


def gradcheck_cases(seed: int = 0) -> dict[str, tuple[Callable[[], nx.Tensor], list[nx.Tensor]]]:
    """name -> (scalar loss function, tensors to check)."""
    rng = np.random.default_rng(seed)
    cases = {}

    def x(T, d):
        return nx.parameter(rng.normal(size=(T, d)))

    lin = Linear(4, 3, rng)
    xi = x(5, 4)
    cases["Linear"] = _case(rng, lin.parameters(), lambda: lin(xi), [xi])

    ln = LayerNorm(4)
    ln.gain.data[:] = rng.normal(size=4)
    ln.bias.data[:] = rng.normal(size=4)
    xl = x(3, 4)
    cases["LayerNorm"] = _case(rng, ln.parameters(), lambda: ln(xl), [xl])

    emb = Embedding(6, 3, rng)
    cases["Embedding"] = _case(rng, emb.parameters(), lambda: emb([0, 4, 4, 2]))

    cell = LSTMCell(3, 4, rng)
    xc = x(4, 3)
    cases["LSTMCell"] = _case(rng, cell.parameters(), lambda: cell.run(xc), [xc])
    cases["LSTMCell.reverse"] = _case(rng, cell.parameters(), lambda: cell.run(xc, reverse=True), [xc])
    cases["LSTMCell.stepwise"] = _case(rng, cell.parameters(), lambda: cell.run_stepwise(xc), [xc])

    ctx = ContextLayer(3, 2)
    ctx.q.data[:] = rng.normal(size=ctx.q.shape)
    xg = x(5, 3)
    cases["ContextLayer"] = _case(rng, ctx.parameters(), lambda: ctx(xg), [xg])

    std = LSTMBlockStandard(3, 4, 3, rng, context_tau=1)
    cases["LSTMBlockStandard+context"] = _case(rng, std.parameters(), lambda: std(xc), [xc])
    cus = LSTMBlockCustom(3, 4, 3, rng, context_tau=1)
    cases["LSTMBlockCustom+context"] = _case(rng, cus.parameters(), lambda: cus(xc), [xc])
    bi = BiLSTMBlock(3, 4, 3, rng)
    cases["BiLSTMBlock"] = _case(rng, bi.parameters(), lambda: bi(xc), [xc])

    mha = MultiHeadAttention(4, 2, 3, rng)
    xa = x(4, 4)
    mask = np.tril(np.ones((4, 4), dtype=bool))
    cases["MultiHeadAttention"] = _case(rng, mha.parameters(), lambda: mha(xa, xa, xa, mask), [xa])
    ff = FeedForward(4, 6, rng)
    cases["FeedForward"] = _case(rng, ff.parameters(), lambda: ff(xa), [xa])
    tb = TransformerBlock(4, 2, 3, 6, rng, cross=True)
    mem = x(3, 4)
    cases["TransformerBlock+cross"] = _case(rng, tb.parameters(), lambda: tb(xa, mask, memory=mem), [xa, mem])

    conv = CausalConv(3, 2, 3, rng)
    cases["CausalConv"] = _case(rng, conv.parameters(), lambda: conv(xc), [xc])
    vgg = _jitter(VGGFrontend(2, (2, 3), 4, rng), rng)
    xv = x(9, 2)
    cases["VGGFrontend"] = _case(rng, vgg.parameters(), lambda: vgg(xv), [xv])

    enc = x(5, 4)
    query = nx.parameter(rng.normal(size=3))
    loc = LocationAwareAttention(4, 3, 5, rng, kernel=3, filters=2)
    prev = nx.constant(rng.dirichlet(np.ones(5)))
    cases["LocationAwareAttention"] = _case(
        rng, loc.parameters(), lambda: loc(enc, loc.enc_proj(enc), query, prev)[0], [enc, query])
    mocha = MoChA(4, 3, 5, rng, window=2)
    st = mocha.init_state(5)
    cases["MoChA.expected"] = _case(
        rng, mocha.parameters(), lambda: mocha(enc, mocha.keys(enc), query, st)[0], [enc, query])

    lp = x(6, 3)
    cases["ctc_loss"] = (lambda: ctc_loss(nx.log_softmax(lp), [1, 2, 2]), [lp])
    grid = nx.parameter(rng.normal(size=(3, 3, 3)))
    cases["transducer_loss"] = (lambda: transducer_loss(nx.log_softmax(grid), [2, 1]), [grid])
    cases["frame_ce_loss"] = (lambda: frame_ce_loss(lp, [0, 1, 1, 2, 2, 0]), [lp])

    feats = rng.normal(size=(3, 4))
    rnnt = RNNTModel(RNNTConfig(d_in=4, num_labels=3, num_embeddings=3, enc_blocks=2, enc_cell=4, enc_proj=3,
                                context_taus=(1, 1), pred_cell=4, pred_proj=3, embed_dim=3, joint_dim=4), rng)
    cases["RNNTModel"] = (lambda: transducer_loss(rnnt_forward(rnnt, nx.constant(feats), [1, 2]), [1, 2]),
                          rnnt.parameters())

    aed_cfg = dict(d_in=4, num_outputs=4, num_embeddings=5, sos=4, eos=3, enc_blocks=1, enc_cell=4, enc_proj=3,
                   att_dim=4, dec_cell=4, dec_proj=3, embed_dim=3)
    feats_aed = rng.normal(size=(5, 4))
    for name, extra in (("RNNAEDModel.mocha", dict(direction="uni", context_taus=(1,), attention="mocha",
                                                   mocha_window=2)),
                        ("RNNAEDModel.location", dict(direction="bi", attention="location", loc_kernel=3,
                                                      loc_filters=2))):
        m = RNNAEDModel(RNNAEDConfig(**aed_cfg, **extra), rng)
        cases[name] = ((lambda m=m: nx.neg(sequence_logprob(rnn_aed_forward(m, nx.constant(feats_aed), [1, 2]),
                                                            [1, 2], 3))), m.parameters())

    tf = TransformerAEDModel(TransformerAEDConfig(d_in=3, num_labels=3, num_outputs=4, num_embeddings=5, sos=4,
                                                  eos=3, d_model=4, heads=2, d_k=2, d_ff=6, enc_blocks=1,
                                                  dec_blocks=1, vgg_channels=(2, 2), mask_kind="chunk",
                                                  mask_size=2), rng)
    _jitter(tf, rng)
    feats_tf = rng.normal(size=(16, 3))

    def tf_loss():
        att, ctc = transformer_aed_forward(tf, nx.constant(feats_tf), [1, 2])
        return multitask_loss(nx.neg(ctc_loss(ctc, [1, 2])), sequence_logprob(att, [1, 2], 3), MultiTaskConfig(0.3))

    cases["TransformerAEDModel"] = (tf_loss, tf.parameters())
    return cases


def run_gradcheck_suite(seed: int = 0, names: list[str] | None = None) -> list[dict]:
    rows = []
    for name, (f, params) in gradcheck_cases(seed).items():
        if names is not None and name not in names:
            continue
        err = nx.finite_difference_check(f, params, epsilon=EPSILON)
        rows.append({"name": name, "max_rel_error": err, "tolerance": TOLERANCE, "passed": err <= TOLERANCE})
    return rows
