"""Training objectives: CTC, RNN-T transducer, frame cross entropy, multi-task mix.

Lattice losses run their forward/backward recursions in log space with plain
Python floats (lattices at desk scale are small) and register a fused node on
the tape whose gradient is the negative lattice occupancy. Blank is id 0.
Losses are per-utterance sums, not per-frame means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor

BLANK = 0
NEG_INF = -math.inf


def _lae(a: float, b: float) -> float:
    """log(exp(a) + exp(b)) for scalars, -inf absorbing."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def _lae3(a: float, b: float, c: float) -> float:
    return _lae(_lae(a, b), c)


@dataclass
class CTCLattice:
    labels: list[int]       # blank-interleaved label sequence, length 2U+1
    alpha: np.ndarray       # (T, 2U+1), alpha[t, s] includes the emission at t
    beta: np.ndarray        # (T, 2U+1), beta[t, s] includes the emission at t
    loglik_alpha: float
    loglik_beta: float


@dataclass
class TransducerLattice:
    alpha: np.ndarray       # (T, U+1) log mass of reaching node (t, u)
    beta: np.ndarray        # (T, U+1) log mass of finishing from node (t, u)
    loglik_alpha: float
    loglik_beta: float


@dataclass(frozen=True)
class MultiTaskConfig:
    alpha: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"multi-task weight must lie in [0, 1], got {self.alpha}")


def ctc_min_frames(target: Sequence[int]) -> int:
    """Frames needed to emit ``target``: one per label plus one per adjacent repeat."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_lattice(log_probs: np.ndarray, target: Sequence[int], blank: int = BLANK) -> CTCLattice:
    lp = np.asarray(log_probs, dtype=np.float64)
    T = lp.shape[0]
    target = [int(y) for y in target]
    if any(y == blank for y in target):
        raise ValueError("target contains the blank id")
    if T < ctc_min_frames(target):
        raise ValueError(f"target unreachable: {len(target)} labels need {ctc_min_frames(target)} frames, got {T}")
    labels = [blank]
    for y in target:
        labels += [y, blank]
    S = len(labels)
    skip = [s >= 2 and labels[s] != blank and labels[s] != labels[s - 2] for s in range(S)]
    emit = lp[:, labels].tolist()

    alpha = np.full((T, S), NEG_INF)
    a = [NEG_INF] * S
    a[0] = emit[0][0]
    if S > 1:
        a[1] = emit[0][1]
    alpha[0] = a
    for t in range(1, T):
        prev = a
        a = [NEG_INF] * S
        e = emit[t]
        for s in range(S):
            v = prev[s]
            if s >= 1:
                v = _lae(v, prev[s - 1])
            if skip[s]:
                v = _lae(v, prev[s - 2])
            a[s] = v + e[s] if v != NEG_INF else NEG_INF
        alpha[t] = a

    beta = np.full((T, S), NEG_INF)
    b = [NEG_INF] * S
    b[S - 1] = emit[T - 1][S - 1]
    if S > 1:
        b[S - 2] = emit[T - 1][S - 2]
    beta[T - 1] = b
    for t in range(T - 2, -1, -1):
        nxt = b
        b = [NEG_INF] * S
        e = emit[t]
        for s in range(S):
            v = nxt[s]
            if s + 1 < S:
                v = _lae(v, nxt[s + 1])
            if s + 2 < S and skip[s + 2]:
                v = _lae(v, nxt[s + 2])
            b[s] = v + e[s] if v != NEG_INF else NEG_INF
        beta[t] = b

    ll_a = _lae(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else float(alpha[T - 1, 0])
    ll_b = _lae(beta[0, 0], beta[0, 1]) if S > 1 else float(beta[0, 0])
    return CTCLattice(labels, alpha, beta, float(ll_a), float(ll_b))


def ctc_loss(log_probs: Tensor, target: Sequence[int], blank: int = BLANK) -> Tensor:
    """-log p_ctc(target | x) from a (T, K) grid of per-frame log-probabilities."""
    if log_probs.ndim != 2:
        raise nx.ShapeError(f"ctc_loss: expected (T, K) log-probs, got {log_probs.shape}")
    lat = ctc_lattice(log_probs.data, target, blank)
    logz = lat.loglik_alpha
    lp = log_probs.data
    labels = np.asarray(lat.labels)

    def bw(g):
        occ = np.exp(lat.alpha + lat.beta - lp[:, labels] - logz)
        grad = np.zeros_like(lp)
        for s, k in enumerate(labels):
            grad[:, k] -= occ[:, s]
        return (grad * float(g),)

    return nx.custom("ctc_loss", np.asarray(-logz), (log_probs,), bw)


def transducer_lattice(grid: np.ndarray, target: Sequence[int], blank: int = BLANK) -> TransducerLattice:
    lp = np.asarray(grid, dtype=np.float64)
    if lp.ndim != 3:
        raise nx.ShapeError(f"transducer lattice: expected (T, U+1, K) grid, got {lp.shape}")
    T, U1, _ = lp.shape
    U = len(target)
    if T == 0:
        raise ValueError("transducer loss needs at least one frame")
    if U1 != U + 1:
        raise nx.ShapeError(f"transducer lattice: grid has {U1} label positions for a target of length {U}")
    blank_lp = lp[:, :, blank].tolist()
    emit_lp = [[float(lp[t, u, target[u]]) for u in range(U)] for t in range(T)]

    alpha = [[NEG_INF] * U1 for _ in range(T)]
    for t in range(T):
        row = alpha[t]
        for u in range(U1):
            if t == 0 and u == 0:
                row[u] = 0.0
                continue
            v = NEG_INF
            if t > 0:
                v = alpha[t - 1][u] + blank_lp[t - 1][u]
            if u > 0:
                v = _lae(v, row[u - 1] + emit_lp[t][u - 1])
            row[u] = v
    ll_a = alpha[T - 1][U] + blank_lp[T - 1][U]

    beta = [[NEG_INF] * U1 for _ in range(T)]
    for t in range(T - 1, -1, -1):
        row = beta[t]
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                row[u] = blank_lp[t][u]
                continue
            v = NEG_INF
            if t < T - 1:
                v = beta[t + 1][u] + blank_lp[t][u]
            if u < U:
                v = _lae(v, row[u + 1] + emit_lp[t][u])
            row[u] = v
    ll_b = beta[0][0]
    return TransducerLattice(np.array(alpha), np.array(beta), float(ll_a), float(ll_b))


def transducer_loss(grid: Tensor, target: Sequence[int], blank: int = BLANK) -> Tensor:
    """-log P(target | x) summed over every monotonic (T blanks, U labels) path.

    ``grid`` is the (T, U+1, K) joint-network log-probability grid.
    """
    target = [int(y) for y in target]
    lat = transducer_lattice(grid.data, target, blank)
    logz = lat.loglik_alpha
    lp = grid.data
    T, U1, _ = lp.shape
    U = U1 - 1

    def bw(g):
        A, B = lat.alpha, lat.beta
        grad = np.zeros_like(lp)
        # blank transitions (t, u) -> (t+1, u), plus the final blank at (T-1, U)
        nxt = np.zeros((T, U1))
        nxt[:-1] = B[1:]
        blank_occ = A + lp[:, :, blank] + nxt - logz
        blank_occ[T - 1, :U] = NEG_INF
        grad[:, :, blank] = -np.exp(blank_occ)
        if U:
            tgt = np.asarray(target)
            emit = lp[:, np.arange(U), tgt]
            occ = np.exp(A[:, :U] + emit + B[:, 1:] - logz)
            for u in range(U):
                grad[:, u, tgt[u]] -= occ[:, u]
        return (grad * float(g),)

    return nx.custom("transducer_loss", np.asarray(-logz), (grid,), bw)


def frame_ce_loss(frame_logits: Tensor, alignment: Sequence[int]) -> Tensor:
    """Mean over frames of -log softmax(logits)[target]."""
    alignment = np.asarray(alignment, dtype=np.int64)
    if frame_logits.ndim != 2 or alignment.shape != (frame_logits.shape[0],):
        raise nx.ShapeError(
            f"frame_ce_loss: {frame_logits.shape[0] if frame_logits.ndim else 0} frames "
            f"but alignment of length {alignment.shape[0]}"
        )
    if alignment.min() < 0 or alignment.max() >= frame_logits.shape[1]:
        raise ValueError("frame_ce_loss: alignment id outside the class range")
    picked = nx.pick(nx.log_softmax(frame_logits), alignment)
    return nx.neg(nx.mean(picked))


def multitask_loss(ctc_ll, att_ll, cfg: MultiTaskConfig = MultiTaskConfig()):
    """L = -alpha * log p_ctc - (1 - alpha) * log p_att."""
    a = cfg.alpha
    if isinstance(ctc_ll, Tensor) or isinstance(att_ll, Tensor):
        return nx.neg(nx.add(nx.scale(ctc_ll, a), nx.scale(att_ll, 1.0 - a)))
    if not (math.isfinite(ctc_ll) and math.isfinite(att_ll)):
        raise ValueError("multitask_loss: log-likelihoods must be finite")
    return -a * ctc_ll - (1.0 - a) * att_ll
