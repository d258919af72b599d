"""Decoders against exhaustive search, score bookkeeping, trigger and boundary invariants, WER."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_sequences, levenshtein
from streamasr import numerics as nx
from streamasr.decoding import (
    CTCPrefixScorer,
    ErrorCounts,
    JointDecodeConfig,
    attention_beam_decode,
    ctc_triggers,
    edit_counts,
    hard_monotonic_boundary,
    mocha_hard_decode,
    rank_key,
    rnn_aed_beam_decode,
    rnnt_beam_decode,
    rnnt_greedy_decode,
    triggered_attention_decode,
    visible_frames,
    word_error_rate,
)
from streamasr.losses import ctc_loss, ctc_min_frames, transducer_loss
from streamasr.models import (
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

# number of candidate sequences with labels {1, 2} and length <= 3
EXACT_BEAM = len(list(all_sequences((1, 2), 3)))


def tiny_rnnt(seed, scale=1.0):
    rng = np.random.default_rng(seed)
    m = RNNTModel(RNNTConfig(d_in=3, num_labels=3, num_embeddings=3, enc_blocks=1, enc_cell=4, enc_proj=4,
                             pred_cell=4, pred_proj=4, embed_dim=3, joint_dim=4), rng)
    for p in m.parameters():
        p.data *= scale
    return m, rng.normal(size=(3, 3))


def tiny_tf(seed, scale=1.0, **kw):
    rng = np.random.default_rng(seed)
    base = dict(d_in=3, num_labels=3, num_outputs=4, num_embeddings=5, sos=4, eos=3, d_model=8, heads=2, d_k=4,
                d_ff=8, enc_blocks=1, vgg_channels=(4, 4))
    base.update(kw)
    m = TransformerAEDModel(TransformerAEDConfig(**base), rng)
    for p in m.parameters():
        p.data = p.data * scale + (rng.normal(0.0, 0.3, size=p.shape) if not np.any(p.data) else 0.0)
    return m, rng.normal(size=(16, 3))


def transducer_logprob(m, x, y):
    with nx.no_grad():
        return -transducer_loss(rnnt_forward(m, nx.constant(x), list(y)), list(y)).item()


def joint_score(m, x, y, beta1):
    with nx.no_grad():
        att, ctc = transformer_aed_forward(m, nx.constant(x), list(y))
        if ctc_min_frames(y) > ctc.shape[0]:
            return -math.inf, -math.inf, sequence_logprob(att, list(y), m.cfg.eos).item()
        c = -ctc_loss(ctc, list(y)).item()
        a = sequence_logprob(att, list(y), m.cfg.eos).item()
    return c + beta1 * a, c, a


def exhaustive(score_fn, labels=(1, 2), max_len=3):
    scored = [(tuple(y), score_fn(y)) for y in all_sequences(labels, max_len)]
    return min(scored, key=lambda kv: rank_key(kv[1], kv[0]))


class TestTransducerSearch:
    @pytest.mark.parametrize("seed", range(12))
    def test_large_beam_is_exhaustive_argmax(self, seed):
        m, x = tiny_rnnt(seed, scale=3.0)
        best, best_score = exhaustive(lambda y: transducer_logprob(m, x, y))
        tokens, score = rnnt_beam_decode(m, x, beam=EXACT_BEAM, max_len=3)
        assert tuple(tokens) == best
        assert score == pytest.approx(best_score, abs=1e-9)

    def test_live_set_never_exceeds_sequence_count(self):
        # one symbol per step ties each prefix to a single frame, so beam >= 15 never prunes
        assert EXACT_BEAM == 15

    def test_beam_eight_can_prune_the_winner(self):
        m, x = tiny_rnnt(0, scale=3.0)
        best, _ = exhaustive(lambda y: transducer_logprob(m, x, y))
        tokens, _ = rnnt_beam_decode(m, x, beam=8, max_len=3)
        assert tuple(tokens) != best

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), scale=st.sampled_from([1.0, 3.0, 6.0]))
    def test_beam_one_is_greedy(self, seed, scale):
        m, x = tiny_rnnt(seed, scale)
        g_tokens, g_score = rnnt_greedy_decode(m, x)
        b_tokens, b_score = rnnt_beam_decode(m, x, beam=1)
        assert b_tokens == g_tokens
        assert b_score == pytest.approx(g_score, abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_beam_dominates_greedy(self, seed):
        m, x = tiny_rnnt(seed, 3.0)
        _, g_score = rnnt_greedy_decode(m, x)
        _, b_score = rnnt_beam_decode(m, x, beam=4)
        assert b_score >= g_score - 1e-12

    @pytest.mark.parametrize("seed", range(6))
    def test_score_is_full_sequence_logprob(self, seed):
        m, x = tiny_rnnt(seed, 2.0)
        tokens, score = rnnt_beam_decode(m, x, beam=EXACT_BEAM, max_len=3)
        assert score == pytest.approx(transducer_logprob(m, x, tokens), abs=1e-9)

    def test_emission_cap(self):
        m, x = tiny_rnnt(0)
        # make label 1 overwhelmingly likely everywhere
        m.joint_out.bias.data[:] = [0.0, 50.0, 0.0]
        tokens, _ = rnnt_greedy_decode(m, x, u_max=2)
        assert tokens == [1] * 6
        # the beam sums over alignments, so only the cap itself is guaranteed
        assert len(rnnt_beam_decode(m, x, beam=3, u_max=2)[0]) <= 6

    def test_bad_beam(self):
        m, x = tiny_rnnt(0)
        with pytest.raises(ValueError):
            rnnt_beam_decode(m, x, beam=0)


def brute_prefix_prob(lp, h, frames):
    """P(CTC output over frames[:F] starts with h), by enumerating all paths."""
    import itertools

    probs = np.exp(lp[:frames])
    total = 0.0
    for path in itertools.product(range(lp.shape[1]), repeat=frames):
        out, prev = [], None
        for k in path:
            if k != prev and k != 0:
                out.append(k)
            prev = k
        if tuple(out[:len(h)]) == tuple(h):
            total += math.prod(probs[t, k] for t, k in enumerate(path))
    return total


class TestCTCPrefixScorer:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), T=st.integers(1, 5), L=st.integers(0, 3))
    def test_full_matches_ctc_loss(self, seed, T, L):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(T, 3))
        lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        h = tuple(rng.integers(1, 3, size=L))
        scorer = CTCPrefixScorer(lp)
        if ctc_min_frames(h) > T:
            assert scorer.full(h) == -math.inf
            return
        assert scorer.full(h) == pytest.approx(-ctc_loss(nx.constant(lp), list(h)).item(), abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), T=st.integers(1, 5), L=st.integers(1, 3), F=st.integers(1, 5))
    def test_prefix_matches_enumeration(self, seed, T, L, F):
        F = min(F, T)
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(T, 3))
        lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        h = tuple(rng.integers(1, 3, size=L))
        ref = brute_prefix_prob(lp, h, F)
        got = CTCPrefixScorer(lp).prefix(h, F)
        if ref == 0.0:
            assert got == -math.inf
        else:
            assert got == pytest.approx(math.log(ref), abs=1e-10)

    def test_empty_prefix(self):
        lp = np.log(np.full((3, 3), 1.0 / 3))
        s = CTCPrefixScorer(lp)
        assert s.prefix((), 3) == 0.0
        assert s.full(()) == pytest.approx(3 * math.log(1.0 / 3))


class TestJointSearch:
    @pytest.mark.parametrize("seed", range(8))
    def test_large_beam_is_exhaustive_argmax(self, seed):
        m, x = tiny_tf(seed, scale=3.0)
        cfg = JointDecodeConfig(beta1=0.3, beam=EXACT_BEAM, max_len=3)
        best, best_score = exhaustive(lambda y: joint_score(m, x, y, 0.3)[0])
        top = attention_beam_decode(m, x, cfg)[0]
        assert top.tokens == best
        assert top.score == pytest.approx(best_score, abs=1e-9)

    @pytest.mark.parametrize("seed", range(4))
    def test_score_bookkeeping(self, seed):
        m, x = tiny_tf(seed, scale=2.0)
        for h in attention_beam_decode(m, x, JointDecodeConfig(beta1=0.7, beam=6, max_len=3)):
            total, c, a = joint_score(m, x, h.tokens, 0.7)
            assert h.ctc == pytest.approx(c, abs=1e-9)
            assert h.att == pytest.approx(a, abs=1e-9)
            assert h.score == pytest.approx(total, abs=1e-9)

    def test_beta_zero_ranks_by_ctc(self):
        m, x = tiny_tf(1, scale=3.0)
        ranked = attention_beam_decode(m, x, JointDecodeConfig(beta1=0.0, beam=EXACT_BEAM, max_len=3),
                                       early_stop=False)
        assert all(h.score == h.ctc for h in ranked)
        assert [h.ctc for h in ranked] == sorted((h.ctc for h in ranked), reverse=True)
        best, _ = exhaustive(lambda y: joint_score(m, x, y, 0.0)[1])
        assert ranked[0].tokens == best

    def test_large_beta_ranks_by_attention(self):
        m, x = tiny_tf(2, scale=3.0)
        ranked = attention_beam_decode(m, x, JointDecodeConfig(beta1=1e6, beam=EXACT_BEAM, max_len=3),
                                       early_stop=False)
        finite = [h for h in ranked if h.ctc > -math.inf]
        assert [h.tokens for h in finite] == [h.tokens for h in sorted(finite, key=lambda h: -h.att)]

        def att_only(y):
            total, c, a = joint_score(m, x, y, 1.0)
            return a if c > -math.inf else -math.inf

        assert ranked[0].tokens == exhaustive(att_only)[0]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            JointDecodeConfig(beam=0)
        with pytest.raises(ValueError):
            JointDecodeConfig(topk=0)

    def test_topk_restricts_candidates(self):
        m, x = tiny_tf(3, scale=3.0)
        one = attention_beam_decode(m, x, JointDecodeConfig(beam=4, topk=1, max_len=3), early_stop=False)
        # with top-1 proposals each prefix has exactly one continuation
        assert len({h.tokens for h in one}) == len(one)


class TestTriggeredAttention:
    def test_trigger_rule(self):
        lp = np.log(np.array([
            [0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.8, 0.1], [0.8, 0.1, 0.1],
            [0.1, 0.8, 0.1], [0.1, 0.1, 0.8],
        ]))
        assert ctc_triggers(lp) == [1, 4, 5]

    def test_all_blank_gives_empty_output(self):
        m, x = tiny_tf(0, mask_kind="chunk", mask_size=2)
        m.ctc_head.bias.data[:] = [100.0, 0.0, 0.0]
        hyp = triggered_attention_decode(m, x, JointDecodeConfig())
        assert hyp.tokens == () and hyp.trigger_frames == []

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10_000), kind=st.sampled_from(["chunk", "lookahead"]))
    def test_triggers_are_monotone(self, seed, kind):
        m, x = tiny_tf(seed, scale=3.0, mask_kind=kind, mask_size=2, decoder_lookahead=1)
        hyp = triggered_attention_decode(m, x, JointDecodeConfig(beam=3))
        assert hyp.trigger_frames == sorted(hyp.trigger_frames)
        assert len(hyp.trigger_frames) == len(hyp.tokens)

    def test_visible_frames(self):
        m, _ = tiny_tf(0, mask_kind="chunk", mask_size=3)
        assert [visible_frames(m, t, 8) for t in range(8)] == [3, 3, 3, 6, 6, 6, 8, 8]
        m, _ = tiny_tf(0, mask_kind="lookahead", mask_size=1, decoder_lookahead=2)
        assert [visible_frames(m, t, 5) for t in range(5)] == [3, 4, 5, 5, 5]

    @pytest.mark.parametrize("seed", range(5))
    def test_full_chunk_equals_offline(self, seed):
        m, x = tiny_tf(seed, scale=3.0, mask_kind="chunk", mask_size=64)
        cfg = JointDecodeConfig(beta1=0.3, beam=4)
        trig = triggered_attention_decode(m, x, cfg)
        n = len(ctc_triggers(m.ctc_logprobs(m.encode(nx.constant(x))).data))
        if n == 0:
            assert trig.tokens == ()
            return
        off = attention_beam_decode(m, x, JointDecodeConfig(beta1=0.3, beam=4, max_len=n), early_stop=False)[0]
        assert trig.tokens == off.tokens
        assert trig.score == pytest.approx(off.score, abs=1e-12)


def tiny_mocha(seed):
    rng = np.random.default_rng(seed)
    m = RNNAEDModel(RNNAEDConfig(d_in=3, num_outputs=4, num_embeddings=5, sos=4, eos=3, enc_blocks=1, enc_cell=4,
                                 enc_proj=4, direction="uni", attention="mocha", att_dim=4, dec_cell=4,
                                 dec_proj=4, embed_dim=3, mocha_window=2, mocha_init_r=0.5), rng)
    return m, rng.normal(size=(7, 3))


class TestHardMoChA:
    def test_point_selection(self):
        p = np.zeros(6)
        p[3] = 1.0
        assert hard_monotonic_boundary(p, 0) == 3
        assert hard_monotonic_boundary(p, 4) is None
        assert hard_monotonic_boundary(np.array([0.2, 0.5, 0.9]), 0) == 1

    def test_first_token_uses_selected_frame(self):
        m, x = tiny_mocha(0)
        att = m.attention
        # selection fires only at frame 4: zero the energy network and bias the gain path
        att.mono_g.data[...] = 0.0
        att.mono_r.data[...] = -100.0
        enc = m.encode(nx.constant(x))

        def probs(keys, query, noise_rng=None):
            p = np.zeros(enc.shape[0])
            p[4] = 1.0
            return nx.constant(p)

        att.selection_probs = probs
        hyp = mocha_hard_decode(m, x, max_len=2)
        assert hyp.boundaries[0] == 4
        assert all(b == 4 for b in hyp.boundaries)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), beam=st.integers(1, 3))
    def test_boundaries_non_decreasing(self, seed, beam):
        m, x = tiny_mocha(seed)
        hyp = mocha_hard_decode(m, x, beam=beam, max_len=5)
        assert hyp.boundaries == sorted(hyp.boundaries)
        assert all(0 <= b <= x.shape[0] for b in hyp.boundaries)
        assert len(hyp.boundaries) == len(hyp.tokens) + 1

    def test_agrees_with_teacher_forcing_on_trained_model(self, toy_run):
        from streamasr.harness import model_input

        cfg, res, eval_set = toy_run("rnn_aed_mocha")
        model = res.model
        same = total = 0
        for u in eval_set[:50]:
            x = model_input(cfg, u)
            with nx.no_grad():
                tf = rnn_aed_forward(model, nx.constant(x), u.tokens).data.argmax(axis=1).tolist()
            hard = list(mocha_hard_decode(model, x).tokens) + [model.cfg.eos]
            same += sum(a == b for a, b in zip(tf, hard))
            total += len(tf)
        assert same / total >= 0.9

    def test_requires_mocha(self):
        rng = np.random.default_rng(0)
        m = RNNAEDModel(RNNAEDConfig(d_in=3, num_outputs=4, num_embeddings=5, sos=4, eos=3, enc_blocks=1,
                                     enc_cell=4, enc_proj=4, att_dim=4, dec_cell=4, dec_proj=4, embed_dim=3,
                                     loc_kernel=3, loc_filters=2), rng)
        with pytest.raises(ValueError):
            mocha_hard_decode(m, rng.normal(size=(4, 3)))


class TestSoftAttentionBeam:
    @pytest.mark.parametrize("seed", range(4))
    def test_exhaustive_with_large_beam(self, seed):
        rng = np.random.default_rng(seed)
        m = RNNAEDModel(RNNAEDConfig(d_in=3, num_outputs=4, num_embeddings=5, sos=4, eos=3, enc_blocks=1,
                                     enc_cell=4, enc_proj=4, att_dim=4, dec_cell=4, dec_proj=4, embed_dim=3,
                                     loc_kernel=3, loc_filters=2), rng)
        for p in m.parameters():
            p.data *= 3.0
        x = rng.normal(size=(4, 3))

        def score(y):
            with nx.no_grad():
                return sequence_logprob(rnn_aed_forward(m, nx.constant(x), list(y)), list(y), 3).item()

        best, best_score = exhaustive(score)
        hyp = rnn_aed_beam_decode(m, x, beam=16, max_len=3)
        assert hyp.tokens == best
        assert hyp.score == pytest.approx(best_score, abs=1e-9)


class TestWordErrorRate:
    def test_identical(self):
        assert word_error_rate("a b c", "a b c") == (0.0, 0, 0, 0)

    def test_one_substitution_in_four(self):
        assert word_error_rate("a x c d", "a b c d") == (0.25, 1, 0, 0)

    def test_deletion_and_insertion(self):
        assert word_error_rate("a c d", "a b c") == (2 / 3, 0, 1, 1)
        assert word_error_rate("", "a b") == (1.0, 0, 2, 0)

    def test_empty_reference(self):
        with pytest.raises(ValueError):
            word_error_rate("a", "")

    @settings(max_examples=200, deadline=None)
    @given(hyp=st.lists(st.sampled_from("abcd"), max_size=8), ref=st.lists(st.sampled_from("abcd"), min_size=1,
                                                                          max_size=8))
    def test_matches_independent_dp(self, hyp, ref):
        wer, s, d, i = word_error_rate(hyp, ref)
        assert s + d + i == levenshtein(hyp, ref)
        assert wer == (s + d + i) / len(ref)
        # counts are consistent with the lengths
        assert len(ref) - d + i == len(hyp)

    def test_counts_add(self):
        a = edit_counts(["x"], ["y", "z"])
        b = edit_counts(["p"], ["p"])
        tot = a + b
        assert tot == ErrorCounts(a.substitutions, a.deletions, a.insertions, 3)
        assert tot.rate == a.errors / 3
