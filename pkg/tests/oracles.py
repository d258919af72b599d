"""Independent brute-force references, written without touching the package internals.

Everything here enumerates explicitly (alignments, paths, label sequences) in
the probability domain so it shares no code path with the log-space lattices
and beam searches under test.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

BLANK = 0


def ctc_collapse(path) -> tuple[int, ...]:
    out = []
    prev = None
    for k in path:
        if k != prev and k != BLANK:
            out.append(k)
        prev = k
    return tuple(out)


def ctc_brute_prob(probs: np.ndarray, target) -> float:
    """Sum over every frame path in K^T whose collapse equals ``target``."""
    T, K = probs.shape
    target = tuple(target)
    total = 0.0
    for path in itertools.product(range(K), repeat=T):
        if ctc_collapse(path) == target:
            total += math.prod(probs[t, k] for t, k in enumerate(path))
    return total


def transducer_paths(T: int, U: int):
    """Every monotonic lattice path as a list of moves: 'b' (blank) or 'e' (emit)."""
    # a path is T blanks and U emits; the last move must be the final blank
    for emits in itertools.combinations(range(T + U - 1), U):
        moves = ["b"] * (T + U)
        for i in emits:
            moves[i] = "e"
        yield moves


def transducer_brute_prob(probs: np.ndarray, target) -> float:
    """Path sum over a (T, U+1, K) probability grid."""
    T, U1, _ = probs.shape
    total = 0.0
    for moves in transducer_paths(T, U1 - 1):
        t = u = 0
        p = 1.0
        for m in moves:
            if m == "e":
                p *= probs[t, u, target[u]]
                u += 1
            else:
                p *= probs[t, u, BLANK]
                t += 1
        total += p
    return total


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def levenshtein(a, b) -> int:
    """Plain edit distance, row by row."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def all_sequences(labels, max_len: int):
    for n in range(max_len + 1):
        yield from itertools.product(labels, repeat=n)


def mocha_monte_carlo(p_steps, chunk_steps, enc, window: int, n: int, rng) -> np.ndarray:
    """Sampled hard-path MoChA context vectors, shape (n, U, D).

    Step u scans from the previous boundary and stops at the first frame whose
    Bernoulli(p[u, j]) draw fires; the context is a softmax over the ``window``
    frames ending there. A scan that never fires leaves a zero context and
    every later step also gets zero.
    """
    U, T = p_steps.shape
    out = np.zeros((n, U, enc.shape[1]))
    start = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    frames = np.arange(T)
    for u in range(U):
        fire = (rng.random((n, T)) < p_steps[u]) & (frames[None, :] >= start[:, None])
        found = fire.any(axis=1) & alive
        j = np.where(found, fire.argmax(axis=1), 0)
        for b in range(T):
            rows = found & (j == b)
            if not rows.any():
                continue
            lo = max(0, b - window + 1)
            w = softmax(chunk_steps[u, lo:b + 1])
            out[rows, u] = w @ enc[lo:b + 1]
        start = j
        alive = found
    return out
