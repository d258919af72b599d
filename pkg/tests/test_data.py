"""Synthetic corpus, vocabulary, superframes and file formats."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamasr.data import (
    FeatureSequence,
    FrameAlignment,
    SyntheticTaskSpec,
    Vocabulary,
    detokenize,
    downsample_alignment,
    format_alignment_line,
    generate_synthetic_corpus,
    parse_alignment_line,
    read_alignment_file,
    read_corpus,
    stack_superframes,
    token_prototypes,
    tokenize,
    write_alignment_file,
    write_corpus,
)

SPEC = SyntheticTaskSpec()


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(SPEC, 40)


class TestVocabulary:
    def test_reserved_ids(self):
        v = SPEC.vocab
        assert v.blank == 0
        assert len({v.blank, v.eos, v.sos}) == 3
        assert all(not v.is_payload(t) for t in (v.blank, v.eos, v.sos))
        assert v.num_labels == v.n_chars + 1 and v.num_att_outputs == v.eos + 1

    def test_roundtrip_and_empty(self, corpus):
        v = SPEC.vocab
        assert tokenize(v, "") == ()
        for u in corpus:
            assert detokenize(v, tokenize(v, u.text)) == u.text
            assert all(v.is_payload(t) for t in u.tokens)

    def test_injective_over_corpus(self, corpus):
        seen = {}
        for u in corpus:
            assert seen.setdefault(u.tokens, u.text) == u.text

    def test_errors(self):
        with pytest.raises(KeyError):
            SPEC.vocab.tokenize("xyz")
        with pytest.raises(ValueError):
            SPEC.vocab.detokenize([SPEC.vocab.eos])
        with pytest.raises(ValueError):
            Vocabulary("aa")


class TestCorpus:
    def test_same_seed_bit_identical(self, corpus):
        again = generate_synthetic_corpus(SPEC, 40)
        for a, b in zip(corpus, again):
            np.testing.assert_array_equal(a.features.frames, b.features.frames)
            assert a.tokens == b.tokens and a.uid == b.uid
            np.testing.assert_array_equal(a.alignment.ids, b.alignment.ids)

    def test_different_seed_differs(self, corpus):
        other = generate_synthetic_corpus(SyntheticTaskSpec(seed=1), 40)
        assert any(a.tokens != b.tokens for a, b in zip(corpus, other))

    def test_noise_zero_gives_prototypes(self):
        spec = SyntheticTaskSpec(noise=0.0)
        protos = token_prototypes(spec)
        for u in generate_synthetic_corpus(spec, 5):
            np.testing.assert_array_equal(u.features.frames, protos[u.alignment.ids])

    def test_alignments_valid(self, corpus):
        lo, hi = SPEC.frames_per_token
        for u in corpus:
            u.alignment.validate(u.tokens, u.features.T)
            assert all(lo <= n <= hi for _, n in u.alignment.runs())
            for word, start, end in u.word_spans:
                runs = FrameAlignment(u.alignment.ids[start:end]).runs()
                assert SPEC.vocab.detokenize(t for t, _ in runs) == word

    def test_linear_classifier_separates_frames(self):
        # least-squares one-hot regression on noise-0.1 frames
        spec = SyntheticTaskSpec(noise=0.1)
        utts = generate_synthetic_corpus(spec, 60)
        x = np.concatenate([u.features.frames for u in utts])
        y = np.concatenate([u.alignment.ids for u in utts])
        xb = np.hstack([x, np.ones((len(x), 1))])
        half = len(x) // 2
        w, *_ = np.linalg.lstsq(xb[:half], np.eye(spec.vocab.num_labels)[y[:half]], rcond=None)
        assert np.mean((xb[half:] @ w).argmax(axis=1) == y[half:]) >= 0.99

    def test_errors(self):
        with pytest.raises(ValueError):
            generate_synthetic_corpus(SPEC, 0)
        with pytest.raises(ValueError, match="grammar"):
            generate_synthetic_corpus(SyntheticTaskSpec(grammar={}), 3)


class TestSuperframes:
    def test_80_dim_stack_3(self):
        x = FeatureSequence(np.ones((9, 80)), 10.0)
        s = stack_superframes(x, 3)
        assert s.dim == 240 and s.T == 3 and s.frame_shift_ms == 30.0

    def test_tail_zero_padded(self):
        x = FeatureSequence(np.arange(14.0).reshape(7, 2) + 1.0)
        s = stack_superframes(x, 3)
        assert s.T == 3
        np.testing.assert_array_equal(s.frames[2], [13.0, 14.0, 0.0, 0.0, 0.0, 0.0])

    @settings(max_examples=60, deadline=None)
    @given(T=st.integers(1, 30), d=st.integers(1, 5), stack=st.integers(1, 6))
    def test_contract(self, T, d, stack):
        x = FeatureSequence(np.random.default_rng(T).normal(size=(T, d)))
        s = stack_superframes(x, stack)
        assert s.T == -(-T // stack) and s.dim == stack * d
        np.testing.assert_array_equal(s.frames.reshape(-1, d)[:T], x.frames)

    def test_stack_one_is_identity(self):
        x = FeatureSequence(np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_array_equal(stack_superframes(x, 1).frames, x.frames)

    def test_errors(self):
        with pytest.raises(ValueError):
            stack_superframes(FeatureSequence(np.ones((3, 2))), 0)
        with pytest.raises(ValueError):
            FeatureSequence(np.ones((0, 2)))
        with pytest.raises(ValueError):
            FeatureSequence(np.array([[np.nan]]))

    def test_downsample_alignment_centre_frame(self):
        ali = FrameAlignment([1, 1, 2, 2, 2, 3, 3])
        assert downsample_alignment(ali, 3).ids.tolist() == [1, 2, 3]


class TestFiles:
    def test_alignment_line_roundtrip(self):
        ali = FrameAlignment.from_runs([(3, 2), (1, 4)])
        line = format_alignment_line("u1", ali)
        assert line == "u1 3 2 1 4"
        uid, back = parse_alignment_line(line)
        assert uid == "u1" and back.ids.tolist() == ali.ids.tolist()
        with pytest.raises(ValueError):
            parse_alignment_line("u1 3")

    def test_corpus_roundtrip(self, corpus, tmp_path):
        write_corpus(tmp_path / "c.bin", corpus[:5])
        back = read_corpus(tmp_path / "c.bin", SPEC.vocab)
        for a, b in zip(corpus[:5], back):
            assert (a.uid, a.tokens, a.text) == (b.uid, b.tokens, b.text)
            np.testing.assert_array_equal(a.features.frames, b.features.frames)
            np.testing.assert_array_equal(a.alignment.ids, b.alignment.ids)

    def test_alignment_file_roundtrip(self, corpus, tmp_path):
        write_alignment_file(tmp_path / "a.txt", corpus[:4])
        back = read_alignment_file(tmp_path / "a.txt")
        assert list(back) == [u.uid for u in corpus[:4]]
        for u in corpus[:4]:
            np.testing.assert_array_equal(back[u.uid].ids, u.alignment.ids)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"NOTACORP" + bytes(8))
        with pytest.raises(ValueError):
            read_corpus(tmp_path / "x.bin", SPEC.vocab)
