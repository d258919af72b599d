"""Inference: transducer beam search, joint CTC/attention beam search, triggered
attention, hard MoChA decoding and word error rate.

Search code works on plain numpy arrays and Python floats; log-scores may be
-inf for impossible hypotheses. Ties between equal scores are broken by
shorter sequence first, then lexicographic token ids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .losses import _lae
from .models.rnn_aed import RNNAEDModel
from .models.rnnt import RNNTModel
from .models.transformer_aed import TransformerAEDModel

NEG_INF = -math.inf
BLANK = 0


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    ctc: float = 0.0
    att: float = 0.0
    transducer: float = 0.0
    state: object = None
    frame: int = 0
    trigger_frames: list[int] = field(default_factory=list)
    boundaries: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class JointDecodeConfig:
    beta1: float = 0.3
    beam: int = 4
    topk: int | None = None
    max_len: int | None = None

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam size must be at least 1")
        if self.topk is not None and self.topk < 1:
            raise ValueError("top-k must be at least 1")


def rank_key(score: float, tokens: Sequence[int]):
    return (-score, len(tokens), tuple(tokens))


# --------------------------------------------------------------------------
# RNN transducer
# --------------------------------------------------------------------------

class _PredCache:
    """Prediction-network outputs keyed by label prefix."""

    def __init__(self, model: RNNTModel):
        self.model = model
        self.cache: dict[tuple[int, ...], tuple[np.ndarray, object]] = {}

    def get(self, prefix: tuple[int, ...]) -> np.ndarray:
        if prefix in self.cache:
            return self.cache[prefix][0]
        if prefix:
            self.get(prefix[:-1])
            _, parent_state = self.cache[prefix[:-1]]
            tok = prefix[-1]
        else:
            parent_state = self.model.pred_zero_state()
            tok = BLANK
        with nx.no_grad():
            out, state = self.model.predict_step(tok, parent_state)
        self.cache[prefix] = (out.data, state)
        return out.data


def _rnnt_setup(model: RNNTModel, x: np.ndarray):
    with nx.no_grad():
        enc = model.encode(nx.constant(x))
        enc_proj = model.joint_enc(enc).data
    return enc_proj, _PredCache(model)


def rnnt_greedy_decode(model: RNNTModel, x: np.ndarray, max_len: int | None = None, u_max: int = 10):
    """Argmax symbol at every lattice step; returns (tokens, path log-score)."""
    enc_proj, pred = _rnnt_setup(model, x)
    T = enc_proj.shape[0]
    prefix: tuple[int, ...] = ()
    score = 0.0
    t = 0
    emitted = 0
    while t < T:
        lp = model.joint_logprobs(enc_proj[t], pred.get(prefix))
        allow_label = emitted < u_max and (max_len is None or len(prefix) < max_len)
        k = int(np.argmax(lp)) if allow_label else BLANK
        score += float(lp[k])
        if k == BLANK:
            t += 1
            emitted = 0
        else:
            prefix = prefix + (k,)
            emitted += 1
    return list(prefix), score


def rnnt_beam_decode(
    model: RNNTModel,
    x: np.ndarray,
    beam: int = 4,
    max_len: int | None = None,
    u_max: int = 10,
) -> tuple[list[int], float]:
    """Beam search over the transducer lattice, synchronous in alignment length.

    Every lattice step consumes one symbol (blank advances a frame, a label
    advances the label index), so all live hypotheses after step i have
    emitted exactly i symbols and are directly comparable; hypotheses that
    have consumed the last frame compete in the same pruning. Hypotheses that
    reach the same (label prefix, frame) are merged by log-sum-exp, so with
    an unpruned beam each finished sequence carries its full alignment sum.
    With beam=1 this is greedy decoding. At most ``u_max`` labels are
    emitted per frame.
    """
    if beam < 1:
        raise ValueError("beam size must be at least 1")
    enc_proj, pred = _rnnt_setup(model, x)
    T = enc_proj.shape[0]
    K = model.cfg.num_labels
    live: dict[tuple[tuple[int, ...], int], tuple[float, int]] = {((), 0): (0.0, 0)}
    done: dict[tuple[int, ...], float] = {}
    while live:
        cand: dict[tuple[tuple[int, ...], int], tuple[float, int]] = {}

        def push(key, score, emitted):
            if key in cand:
                old, em = cand[key]
                cand[key] = (_lae(old, score), max(em, emitted))
            else:
                cand[key] = (score, emitted)

        for (prefix, t), (score, emitted) in live.items():
            lp = model.joint_logprobs(enc_proj[t], pred.get(prefix))
            push((prefix, t + 1), score + float(lp[BLANK]), 0)
            if emitted < u_max and (max_len is None or len(prefix) < max_len):
                for k in range(1, K):
                    push((prefix + (k,), t), score + float(lp[k]), emitted + 1)
        ranked = sorted(cand.items(), key=lambda kv: rank_key(kv[1][0], kv[0][0]) + (kv[0][1],))
        live = {}
        for key, val in ranked[:beam]:
            if key[1] == T:
                done[key[0]] = _lae(done.get(key[0], NEG_INF), val[0])
            else:
                live[key] = val
        if live and done:
            best_done = max(done.values())
            live_mass = nx.logsumexp([s for s, _ in live.values()])
            if live_mass <= best_done:
                break
    best = min(done.items(), key=lambda kv: rank_key(kv[1], kv[0]))
    return list(best[0]), best[1]


# --------------------------------------------------------------------------
# CTC prefix scoring
# --------------------------------------------------------------------------

class CTCPrefixScorer:
    """Prefix and full-sequence CTC log-probabilities over the first F frames.

    For a prefix h the scorer keeps r_n[t] / r_b[t]: log-probability that
    frames 0..t collapse to h with the last frame non-blank / blank. The
    prefix probability over F frames is the mass that first completes h at
    some frame < F.
    """

    def __init__(self, log_probs: np.ndarray, blank: int = BLANK):
        self.lp = np.asarray(log_probs, dtype=np.float64)
        self.T = self.lp.shape[0]
        self.blank = blank
        self._cache: dict[tuple[int, ...], tuple[list[float], list[float], list[float]]] = {}

    def _tables(self, h: tuple[int, ...]):
        if h in self._cache:
            return self._cache[h]
        T, lp = self.T, self.lp
        blank_lp = lp[:, self.blank].tolist()
        if not h:
            rb = []
            acc = 0.0
            for t in range(T):
                acc += blank_lp[t]
                rb.append(acc)
            out = ([NEG_INF] * T, rb, [0.0] * T)
            self._cache[h] = out
            return out
        g, c = h[:-1], h[-1]
        gn, gb, _ = self._tables(g)
        pc = lp[:, c].tolist()
        rn = [NEG_INF] * T
        rb = [NEG_INF] * T
        psi = [NEG_INF] * T  # cumulative prefix log-prob using frames 0..t
        start = pc[0] if not g else NEG_INF
        rn[0] = start
        acc = start
        psi[0] = acc
        for t in range(1, T):
            phi = gb[t - 1] if (g and g[-1] == c) else _lae(gb[t - 1], gn[t - 1])
            rn[t] = _lae(rn[t - 1], phi) + pc[t]
            rb[t] = _lae(rb[t - 1], rn[t - 1]) + blank_lp[t]
            acc = _lae(acc, phi + pc[t])
            psi[t] = acc
        out = (rn, rb, psi)
        self._cache[h] = out
        return out

    def prefix(self, h: Sequence[int], frames: int | None = None) -> float:
        F = self.T if frames is None else frames
        if F < 1:
            return 0.0 if not h else NEG_INF
        return self._tables(tuple(h))[2][F - 1]

    def full(self, h: Sequence[int], frames: int | None = None) -> float:
        F = self.T if frames is None else frames
        rn, rb, _ = self._tables(tuple(h))
        return _lae(rn[F - 1], rb[F - 1])


# --------------------------------------------------------------------------
# Joint CTC / attention beam search
# --------------------------------------------------------------------------

def _candidates(att_lp: np.ndarray, labels: Sequence[int], eos: int, topk: int | None, eos_only: bool):
    if eos_only:
        return [eos]
    pool = list(labels) + [eos]
    pool.sort(key=lambda k: (-att_lp[k], k))
    return pool if topk is None else pool[:topk]


def joint_beam_search(
    att_next: Callable[[tuple[int, ...], int | None], np.ndarray],
    ctc: CTCPrefixScorer,
    labels: Sequence[int],
    eos: int,
    cfg: JointDecodeConfig,
    max_len: int,
    visible: Sequence[int | None] | None = None,
    early_stop: bool = True,
) -> list[Hypothesis]:
    """Label-synchronous beam: attention proposes top-k, ranking uses ctc + beta1 * att.

    ``att_next(prefix, frames)`` returns next-token attention log-probs.
    ``visible[i]`` limits the frames seen when extending a prefix of length
    i (None = all). Completed hypotheses are ranked by
    log p_ctc(y) + beta1 * log p_att(y, eos).
    """
    live = [Hypothesis((), 0.0, ctc=0.0, att=0.0)]
    done: list[Hypothesis] = []
    for L in range(max_len + 1):
        F = None if visible is None else visible[L]
        cands: list[Hypothesis] = []
        for h in live:
            att_lp = att_next(h.tokens, F)
            for c in _candidates(att_lp, labels, eos, cfg.topk, L == max_len):
                att = h.att + float(att_lp[c])
                if c == eos:
                    ctc_score = ctc.full(h.tokens)
                    done.append(Hypothesis(h.tokens, ctc_score + cfg.beta1 * att, ctc=ctc_score, att=att))
                else:
                    toks = h.tokens + (c,)
                    ctc_score = ctc.prefix(toks, F)
                    cands.append(Hypothesis(toks, ctc_score + cfg.beta1 * att, ctc=ctc_score, att=att))
        cands.sort(key=lambda h: rank_key(h.score, h.tokens))
        live = cands[:cfg.beam]
        if not live:
            break
        if early_stop and done and visible is None:
            best_done = max(h.score for h in done)
            if live[0].score <= best_done:
                break
    done.sort(key=lambda h: rank_key(h.score, h.tokens))
    return done


def _transformer_labels(model: TransformerAEDModel) -> list[int]:
    return list(range(1, model.cfg.num_labels))


def attention_beam_decode(model: TransformerAEDModel, x: np.ndarray, cfg: JointDecodeConfig,
                          early_stop: bool = True) -> list[Hypothesis]:
    """Offline joint CTC/attention decoding; returns completed hypotheses best first."""
    with nx.no_grad():
        enc = model.encode(nx.constant(x))
        ctc = CTCPrefixScorer(model.ctc_logprobs(enc).data)
    sos = model.cfg.sos
    max_len = cfg.max_len if cfg.max_len is not None else enc.shape[0]

    def att_next(prefix, frames):
        return model.next_logprobs(enc, [sos] + list(prefix), frames)

    return joint_beam_search(att_next, ctc, _transformer_labels(model), model.cfg.eos, cfg, max_len,
                             early_stop=early_stop)


def ctc_triggers(ctc_log_probs: np.ndarray, blank: int = BLANK) -> list[int]:
    """Frames where the CTC argmax switches to a new non-blank label."""
    best = np.argmax(ctc_log_probs, axis=1)
    out = []
    prev = blank
    for t, k in enumerate(best.tolist()):
        if k != blank and k != prev:
            out.append(t)
        prev = k
    return out


def visible_frames(model: TransformerAEDModel, trigger: int, T: int) -> int:
    """Encoder frames the decoder may attend to once ``trigger`` fires."""
    kind = model.cfg.mask_kind
    if kind == "chunk":
        size = model.cfg.mask_size
        return min(T, (trigger // size + 1) * size)
    if kind == "lookahead":
        return min(T, trigger + 1 + model.cfg.decoder_lookahead)
    return T


def triggered_attention_decode(model: TransformerAEDModel, x: np.ndarray, cfg: JointDecodeConfig) -> Hypothesis:
    """Streaming joint decoding released by CTC trigger events.

    Each CTC trigger allows one more label; the attention decoder proposes
    candidates seeing only the encoder frames visible at that trigger, and
    candidates are re-ranked with CTC prefix scores over the same frames.
    End of sequence is scored once the stream has ended.
    """
    with nx.no_grad():
        enc = model.encode(nx.constant(x))
        ctc_lp = model.ctc_logprobs(enc).data
    T = enc.shape[0]
    triggers = ctc_triggers(ctc_lp)
    if not triggers:
        return Hypothesis((), 0.0, trigger_frames=[])
    ctc = CTCPrefixScorer(ctc_lp)
    sos = model.cfg.sos
    vis = [visible_frames(model, f, T) for f in triggers] + [T]

    def att_next(prefix, frames):
        return model.next_logprobs(enc, [sos] + list(prefix), frames)

    ranked = joint_beam_search(att_next, ctc, _transformer_labels(model), model.cfg.eos, cfg,
                               max_len=len(triggers), visible=vis)
    best = ranked[0]
    best.trigger_frames = triggers[:len(best.tokens)]
    return best


# --------------------------------------------------------------------------
# Hard MoChA
# --------------------------------------------------------------------------

def hard_monotonic_boundary(p_select: np.ndarray, start: int, threshold: float = 0.5) -> int | None:
    """First frame >= start whose selection probability reaches the threshold."""
    hits = np.nonzero(np.asarray(p_select)[start:] >= threshold)[0]
    return int(start + hits[0]) if hits.size else None


def mocha_hard_decode(model: RNNAEDModel, x: np.ndarray, beam: int = 1, max_len: int | None = None) -> Hypothesis:
    """Beam search with hard monotonic boundaries and soft attention over the lookback window."""
    if not model.is_mocha:
        raise ValueError("mocha_hard_decode needs a MoChA attention model")
    att = model.attention
    with nx.no_grad():
        enc = model.encode(nx.constant(x))
        mono_keys, chunk_keys = att.keys(enc)
    T, D = enc.shape
    eos = model.cfg.eos
    labels = list(range(1, model.cfg.num_outputs - 1))
    max_len = max_len if max_len is not None else 2 * T
    live = [Hypothesis((), 0.0, state=model.init_state(T), frame=0)]
    done: list[Hypothesis] = []
    with nx.no_grad():
        for L in range(max_len + 1):
            cands = []
            for h in live:
                st = h.state
                p = att.selection_probs(mono_keys, st.query).data
                b = hard_monotonic_boundary(p, h.frame) if h.frame < T else None
                if b is None:
                    ctx = nx.constant(np.zeros(D))
                    frame = T
                else:
                    lo = max(0, b - att.window + 1)
                    u = att.chunk_energy(chunk_keys, st.query).data[lo:b + 1]
                    w = np.exp(u - u.max())
                    ctx = nx.constant((w / w.sum()) @ enc.data[lo:b + 1])
                    frame = b
                logp, new_state = model.step_with_context(ctx, h.tokens[-1] if h.tokens else model.cfg.sos, st, st.att)
                lp = logp.data
                pool = [eos] if L == max_len else labels + [eos]
                pool.sort(key=lambda k: (-lp[k], k))
                for c in pool[:beam]:
                    score = h.score + float(lp[c])
                    bounds = h.boundaries + [frame]
                    if c == eos:
                        done.append(Hypothesis(h.tokens, score, att=score, boundaries=bounds))
                    else:
                        cands.append(Hypothesis(h.tokens + (c,), score, att=score, state=new_state,
                                                frame=frame, boundaries=bounds))
            cands.sort(key=lambda h: rank_key(h.score, h.tokens))
            live = cands[:beam]
            if not live or (done and live[0].score <= max(h.score for h in done)):
                break
    done.sort(key=lambda h: rank_key(h.score, h.tokens))
    return done[0]


def rnn_aed_beam_decode(model: RNNAEDModel, x: np.ndarray, beam: int = 1, max_len: int | None = None) -> Hypothesis:
    """Label-synchronous beam with the model's soft attention (full-utterance decoding)."""
    with nx.no_grad():
        enc = model.encode(nx.constant(x))
        keys = model.keys(enc)
        T = enc.shape[0]
        eos = model.cfg.eos
        labels = list(range(1, model.cfg.num_outputs - 1))
        max_len = max_len if max_len is not None else 2 * T
        live = [Hypothesis((), 0.0, state=model.init_state(T))]
        done: list[Hypothesis] = []
        for L in range(max_len + 1):
            cands = []
            for h in live:
                prev = h.tokens[-1] if h.tokens else model.cfg.sos
                logp, st, _ = model.step(enc, keys, h.state, prev)
                lp = logp.data
                pool = [eos] if L == max_len else labels + [eos]
                pool.sort(key=lambda k: (-lp[k], k))
                for c in pool[:beam]:
                    score = h.score + float(lp[c])
                    if c == eos:
                        done.append(Hypothesis(h.tokens, score, att=score))
                    else:
                        cands.append(Hypothesis(h.tokens + (c,), score, att=score, state=st))
            cands.sort(key=lambda h: rank_key(h.score, h.tokens))
            live = cands[:beam]
            if not live or (done and live[0].score <= max(h.score for h in done)):
                break
    done.sort(key=lambda h: rank_key(h.score, h.tokens))
    return done[0]


# --------------------------------------------------------------------------
# Error rates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorCounts:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        return self.errors / self.ref_len

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_len + other.ref_len,
        )


def edit_counts(hyp: Sequence, ref: Sequence) -> ErrorCounts:
    """Minimum-edit alignment; ties go to the fewest substitutions, then the fewest deletions."""
    n, m = len(ref), len(hyp)
    # cost[i][j] = (errors, S, D, I) for ref[:i] vs hyp[:j]
    prev = [(j, 0, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, i, 0)]
        for j in range(1, m + 1):
            e, s, d, ins = prev[j - 1]
            hit = ref[i - 1] == hyp[j - 1]
            best = (e + (0 if hit else 1), s + (0 if hit else 1), d, ins)
            e, s, d, ins = prev[j]
            best = min(best, (e + 1, s, d + 1, ins))
            e, s, d, ins = cur[j - 1]
            best = min(best, (e + 1, s, d, ins + 1))
            cur.append(best)
        prev = cur
    _, s, d, ins = prev[m]
    return ErrorCounts(s, d, ins, n)


def word_error_rate(hyp: Sequence[str] | str, ref: Sequence[str] | str) -> tuple[float, int, int, int]:
    """(WER, S, D, I) of a hypothesis word sequence against a reference."""
    if isinstance(hyp, str):
        hyp = hyp.split()
    if isinstance(ref, str):
        ref = ref.split()
    if len(ref) == 0:
        raise ValueError("reference is empty")
    c = edit_counts(list(hyp), list(ref))
    return c.rate, c.substitutions, c.deletions, c.insertions
