"""Lattice losses against brute-force enumeration, plus gradient bookkeeping."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ctc_brute_prob, softmax, transducer_brute_prob, transducer_paths
from streamasr import numerics as nx
from streamasr.losses import (
    MultiTaskConfig,
    ctc_lattice,
    ctc_loss,
    ctc_min_frames,
    frame_ce_loss,
    multitask_loss,
    transducer_lattice,
    transducer_loss,
)


def _ctc_grid(rng, T, K):
    return np.log(softmax(rng.normal(size=(T, K)) * 2.0))


def _rnnt_grid(rng, T, U, K):
    return np.log(softmax(rng.normal(size=(T, U + 1, K)) * 2.0))


class TestCTC:
    def test_single_frame(self):
        lp = np.log(np.array([[0.2, 0.5, 0.3]]))
        assert ctc_loss(nx.constant(lp), [1]).item() == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_two_frames_three_alignments(self):
        p = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])
        expect = p[0, 1] * p[1, 0] + p[0, 0] * p[1, 1] + p[0, 1] * p[1, 1]
        assert ctc_loss(nx.constant(np.log(p)), [1]).item() == pytest.approx(-math.log(expect), abs=1e-12)

    def test_empty_target_is_all_blank(self):
        lp = _ctc_grid(np.random.default_rng(0), 4, 3)
        assert ctc_loss(nx.constant(lp), []).item() == pytest.approx(-lp[:, 0].sum(), abs=1e-12)

    def test_unreachable_target(self):
        with pytest.raises(ValueError, match="target unreachable"):
            ctc_loss(nx.constant(np.zeros((2, 3))), [1, 1])
        assert ctc_min_frames([1, 1]) == 3
        assert ctc_min_frames([1, 2, 2, 2]) == 6

    def test_blank_in_target_rejected(self):
        with pytest.raises(ValueError, match="blank"):
            ctc_loss(nx.constant(np.zeros((3, 3))), [0])

    @settings(max_examples=60, deadline=None)
    @given(T=st.integers(1, 6), U=st.integers(0, 3), K=st.integers(2, 3), seed=st.integers(0, 10_000))
    def test_matches_enumeration(self, T, U, K, seed):
        rng = np.random.default_rng(seed)
        target = list(rng.integers(1, K, size=U))
        if ctc_min_frames(target) > T:
            return
        lp = _ctc_grid(rng, T, K)
        ref = -math.log(ctc_brute_prob(np.exp(lp), target))
        assert ctc_loss(nx.constant(lp), target).item() == pytest.approx(ref, abs=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(T=st.integers(1, 8), U=st.integers(0, 3), seed=st.integers(0, 10_000))
    def test_alpha_beta_agree(self, T, U, seed):
        rng = np.random.default_rng(seed)
        target = list(rng.integers(1, 4, size=U))
        if ctc_min_frames(target) > T:
            return
        lat = ctc_lattice(_ctc_grid(rng, T, 4), target)
        assert lat.loglik_alpha == pytest.approx(lat.loglik_beta, abs=1e-9)
        assert lat.labels[::2] == [0] * (U + 1)

    def test_gradient_sums_to_minus_one_per_frame(self):
        # each frame is occupied by exactly one label along every path
        rng = np.random.default_rng(1)
        lp = nx.parameter(_ctc_grid(rng, 6, 4))
        nx.backward(ctc_loss(lp, [1, 2, 2]))
        np.testing.assert_allclose(lp.grad.sum(axis=1), -1.0, atol=1e-12)

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(2)
        z = nx.parameter(rng.normal(size=(5, 3)))
        err = nx.finite_difference_check(lambda: ctc_loss(nx.log_softmax(z), [1, 2]), [z])
        assert err <= 1e-4


class TestTransducer:
    def test_path_enumeration_counts(self):
        for T, U in [(1, 0), (2, 1), (3, 2), (4, 3)]:
            paths = list(transducer_paths(T, U))
            assert len(paths) == math.comb(T + U - 1, U)
            assert all(p.count("b") == T and p.count("e") == U and p[-1] == "b" for p in paths)

    def test_blank_only_target(self):
        lp = _rnnt_grid(np.random.default_rng(0), 4, 0, 3)
        assert transducer_loss(nx.constant(lp), []).item() == pytest.approx(-lp[:, 0, 0].sum(), abs=1e-12)

    def test_two_frames_one_label(self):
        lp = _rnnt_grid(np.random.default_rng(1), 2, 1, 3)
        p = np.exp(lp)
        y = 2
        p1 = p[0, 0, y] * p[0, 1, 0] * p[1, 1, 0]
        p2 = p[0, 0, 0] * p[1, 0, y] * p[1, 1, 0]
        assert transducer_loss(nx.constant(lp), [y]).item() == pytest.approx(-math.log(p1 + p2), abs=1e-12)

    @pytest.mark.parametrize("T,U,K", [(1, 1, 2), (3, 2, 3), (4, 3, 4), (6, 2, 5)])
    def test_uniform_grid_path_count_identity(self, T, U, K):
        lp = np.full((T, U + 1, K), -math.log(K))
        # every path has T blanks and U labels; the final blank is forced, so C(T+U-1, U) paths
        expect = -(math.log(math.comb(T + U - 1, U)) - (T + U) * math.log(K))
        target = [1 + (u % (K - 1)) for u in range(U)]
        assert transducer_loss(nx.constant(lp), target).item() == pytest.approx(expect, abs=1e-10)
        assert transducer_brute_prob(np.exp(lp), target) == pytest.approx(math.exp(-expect), rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(T=st.integers(1, 4), U=st.integers(0, 3), K=st.integers(2, 4), seed=st.integers(0, 10_000))
    def test_matches_enumeration(self, T, U, K, seed):
        rng = np.random.default_rng(seed)
        target = list(rng.integers(1, K, size=U))
        lp = _rnnt_grid(rng, T, U, K)
        ref = -math.log(transducer_brute_prob(np.exp(lp), target))
        assert transducer_loss(nx.constant(lp), target).item() == pytest.approx(ref, abs=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(T=st.integers(1, 6), U=st.integers(0, 4), seed=st.integers(0, 10_000))
    def test_alpha_beta_agree(self, T, U, seed):
        rng = np.random.default_rng(seed)
        lat = transducer_lattice(_rnnt_grid(rng, T, U, 3), list(rng.integers(1, 3, size=U)))
        assert lat.alpha[0, 0] == 0.0
        assert lat.loglik_alpha == pytest.approx(lat.loglik_beta, abs=1e-9)

    def test_mass_conservation_through_log_softmax(self):
        rng = np.random.default_rng(3)
        logits = nx.parameter(rng.normal(size=(4, 3, 5)))
        nx.backward(transducer_loss(nx.log_softmax(logits), [2, 4]))
        np.testing.assert_allclose(logits.grad.sum(axis=2), 0.0, atol=1e-12)

    def test_occupancy_totals(self):
        # -d loss / d logp sums to the expected number of moves: T blanks and U labels
        rng = np.random.default_rng(4)
        lp = nx.parameter(_rnnt_grid(rng, 5, 3, 4))
        nx.backward(transducer_loss(lp, [1, 3, 2]))
        assert -lp.grad[:, :, 0].sum() == pytest.approx(5.0, abs=1e-12)
        assert -lp.grad[:, :, 1:].sum() == pytest.approx(3.0, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            transducer_loss(nx.constant(np.zeros((0, 1, 3))), [])
        with pytest.raises(nx.ShapeError):
            transducer_loss(nx.constant(np.zeros((3, 2, 3))), [1, 2])

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(5)
        z = nx.parameter(rng.normal(size=(3, 3, 3)))
        err = nx.finite_difference_check(lambda: transducer_loss(nx.log_softmax(z), [2, 1]), [z])
        assert err <= 1e-4


class TestFrameCrossEntropy:
    def test_matches_per_frame_oracle(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=(7, 4))
        ali = rng.integers(0, 4, size=7)
        ref = -np.mean(np.log(softmax(z))[np.arange(7), ali])
        assert frame_ce_loss(nx.constant(z), ali).item() == pytest.approx(ref, abs=1e-12)

    def test_uniform_logits(self):
        assert frame_ce_loss(nx.constant(np.zeros((3, 5))), [0, 4, 2]).item() == pytest.approx(math.log(5))

    def test_confident_logits(self):
        z = np.full((3, 4), -50.0)
        z[np.arange(3), [1, 2, 3]] = 50.0
        assert frame_ce_loss(nx.constant(z), [1, 2, 3]).item() < 1e-12

    def test_errors(self):
        with pytest.raises(nx.ShapeError):
            frame_ce_loss(nx.constant(np.zeros((3, 4))), [0, 1])
        with pytest.raises(ValueError):
            frame_ce_loss(nx.constant(np.zeros((2, 4))), [0, 4])


class TestMultiTask:
    def test_weights(self):
        assert multitask_loss(-2.0, -5.0, MultiTaskConfig(0.0)) == 5.0
        assert multitask_loss(-2.0, -5.0, MultiTaskConfig(1.0)) == 2.0
        assert multitask_loss(-2.0, -5.0) == pytest.approx(0.3 * 2.0 + 0.7 * 5.0)
        assert MultiTaskConfig().alpha == 0.3

    def test_tensor_form_matches_float_form(self):
        a, b = nx.constant(np.asarray(-1.5)), nx.constant(np.asarray(-0.25))
        assert multitask_loss(a, b).item() == pytest.approx(multitask_loss(-1.5, -0.25))

    def test_errors(self):
        with pytest.raises(ValueError):
            MultiTaskConfig(1.5)
        with pytest.raises(ValueError):
            multitask_loss(-math.inf, -1.0)
