"""Encoder initialisation for the transducer: frame-level CE or CTC pretraining, then transfer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .data import FrameAlignment, Utterance, downsample_alignment, stack_superframes
from .layers import Linear, Module
from .losses import ctc_loss, frame_ce_loss
from .models.rnn_encoder import RNNEncoder
from .models.rnnt import RNNTModel
from .optim import MomentumSGD


def equal_segmentation_alignment(
    word_spans: Sequence[tuple[str, int, int]],
    pieces_per_word: Sequence[Sequence[int]],
    num_frames: int | None = None,
    gap_token: int | None = None,
) -> FrameAlignment:
    """Split each word's frame span [start, end) evenly among its pieces.

    Leftover frames go to the earliest pieces, so 7 frames over 3 pieces
    gives runs 3, 2, 2. Frames outside every span get ``gap_token``; gaps
    without a gap token are an error.
    """
    if len(word_spans) != len(pieces_per_word):
        raise ValueError("need one piece list per word span")
    T = num_frames if num_frames is not None else (word_spans[-1][2] if word_spans else 0)
    runs: list[tuple[int, int]] = []
    pos = 0

    def fill_gap(upto: int):
        if upto > pos:
            if gap_token is None:
                raise ValueError(f"frames {pos}..{upto - 1} are not covered by any word span")
            runs.append((gap_token, upto - pos))

    for (word, start, end), pieces in zip(word_spans, pieces_per_word):
        if start < pos or end < start:
            raise ValueError(f"word span {word!r} [{start}, {end}) overlaps or is out of order")
        if len(pieces) < 1:
            raise ValueError(f"word {word!r} has no pieces")
        n_frames, n_pieces = end - start, len(pieces)
        if n_frames < n_pieces:
            raise ValueError(f"span too short: word {word!r} has {n_frames} frames for {n_pieces} pieces")
        fill_gap(start)
        base, extra = divmod(n_frames, n_pieces)
        for i, tok in enumerate(pieces):
            runs.append((int(tok), base + (1 if i < extra else 0)))
        pos = end
    if pos > T:
        raise ValueError(f"word spans end at frame {pos}, beyond {T} frames")
    fill_gap(T)
    return FrameAlignment.from_runs(runs)


@dataclass
class PretrainResult:
    encoder: RNNEncoder
    head: Linear
    losses: list[float] = field(default_factory=list)


def pretrain_encoder(
    encoder: RNNEncoder,
    corpus: Sequence[Utterance],
    mode: str,
    steps: int,
    num_labels: int,
    rng: np.random.Generator,
    stack: int = 3,
    lr: float = 0.05,
    momentum: float = 0.9,
    clip_norm: float = 5.0,
    batch: int = 8,
) -> PretrainResult:
    """Train ``encoder`` with a throwaway softmax head on frame CE or CTC.

    CE targets are the utterances' frame alignments, reduced to the
    superframe rate by taking each group's centre frame. Returns the
    per-step mean loss (per frame for CE, per token for CTC).
    """
    mode = mode.upper()
    if mode not in ("CE", "CTC"):
        raise ValueError(f"mode must be CE or CTC, got {mode!r}")
    if not corpus:
        raise ValueError("empty corpus")
    if mode == "CE" and any(u.alignment is None or len(u.alignment) == 0 for u in corpus):
        raise ValueError("CE pretraining needs frame alignments for every utterance")
    head = Linear(encoder.out_dim, num_labels, rng)
    params = encoder.parameters() + head.parameters()
    opt = MomentumSGD(params, lr=lr, momentum=momentum, clip_norm=clip_norm)
    feats = [stack_superframes(u.features, stack).frames for u in corpus]
    targets = [downsample_alignment(u.alignment, stack).ids.tolist() if mode == "CE" else None for u in corpus]
    order = rng.permutation(len(corpus))
    losses: list[float] = []
    cursor = 0
    for _ in range(steps):
        total = 0.0
        for _ in range(min(batch, len(corpus))):
            i = int(order[cursor % len(order)])
            cursor += 1
            logits = head(encoder(nx.constant(feats[i])))
            if mode == "CE":
                loss = frame_ce_loss(logits, targets[i])
            else:
                loss = nx.scale(ctc_loss(nx.log_softmax(logits), corpus[i].tokens), 1.0 / len(corpus[i].tokens))
            nx.backward(loss)
            total += loss.item()
        n = min(batch, len(corpus))
        opt.step(1.0 / n)
        opt.zero_grad()
        losses.append(total / n)
    return PretrainResult(encoder, head, losses)


def transfer_encoder(source: Module, target: RNNTModel) -> RNNTModel:
    """Copy every encoder parameter of ``source`` into ``target.encoder``.

    Names and shapes must match exactly; offending entries are listed in
    the error. The prediction and joint networks are left untouched.
    """
    src = dict(source.named_parameters())
    dst = dict(target.encoder.named_parameters())
    problems = []
    for name in sorted(set(src) | set(dst)):
        if name not in dst:
            problems.append(f"{name}: not in target encoder")
        elif name not in src:
            problems.append(f"{name}: not in source encoder")
        elif src[name].shape != dst[name].shape:
            problems.append(f"{name}: source {src[name].shape} vs target {dst[name].shape}")
    if problems:
        raise ValueError("encoder transfer mismatch:\n  " + "\n  ".join(problems))
    for name, p in dst.items():
        p.data[...] = src[name].data
    return target
