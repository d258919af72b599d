"""Attention masks for streaming encoders, latency accounting and the causality probe.

Latencies are computed in exact integer/rational arithmetic. An encoder frame
spans ``frontend_stride * frame_shift_ms`` milliseconds of input.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx


@dataclass(frozen=True)
class AttentionMask:
    """Which keys each query may attend to inside every encoder block.

    kind is ``full``, ``lookahead`` (``size`` future frames per block, all
    past frames) or ``chunk`` (fixed chunks of ``size`` frames from frame 0;
    a query sees its own chunk and every earlier chunk).
    """

    kind: str = "full"
    size: int = 0

    def __post_init__(self):
        if self.kind not in ("full", "lookahead", "chunk"):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if self.kind == "chunk" and self.size < 1:
            raise ValueError("chunk length must be at least 1")
        if self.kind == "lookahead" and self.size < 0:
            raise ValueError("lookahead must be non-negative")

    def matrix(self, T: int) -> np.ndarray:
        q = np.arange(T)[:, None]
        k = np.arange(T)[None, :]
        if self.kind == "full":
            return np.ones((T, T), dtype=bool)
        if self.kind == "lookahead":
            return k <= q + self.size
        return (k // self.size) <= (q // self.size)

    def visible_end(self, t: int, T: int) -> int:
        """Last key index (inclusive) visible from query ``t`` in one block."""
        if self.kind == "full":
            return T - 1
        if self.kind == "lookahead":
            return min(T - 1, t + self.size)
        return min(T - 1, (t // self.size + 1) * self.size - 1)

    def receptive_field(self, blocks: int, t: int, T: int) -> int:
        """Last input frame (inclusive) that can influence output ``t`` after ``blocks`` blocks."""
        if self.kind == "full":
            return T - 1
        if self.kind == "lookahead":
            return min(T - 1, t + blocks * self.size)
        return self.visible_end(t, T)


def build_lookahead_mask(T: int, blocks: int, per_block_frames: int) -> AttentionMask:
    if T < 1:
        raise ValueError("T must be at least 1")
    del blocks  # the same per-block mask is applied in every block
    return AttentionMask("lookahead", per_block_frames)


def build_chunk_mask(T: int, chunk_frames: int) -> AttentionMask:
    if chunk_frames < 1:
        raise ValueError("chunk_frames must be at least 1")
    del T
    return AttentionMask("chunk", chunk_frames)


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


@dataclass(frozen=True)
class LatencySpec:
    """Encoder lookahead description.

    ``per_block_lookahead`` lists future frames per block (lookahead kind).
    For the chunk kind, ``chunk_frames`` is the chunk length and
    ``chunk_tail_frames`` a fixed delay every frame of a chunk incurs on top
    of waiting for the chunk end. ``decoder_lookahead_frames`` is the extra
    window a streaming decoder waits for. All counts are encoder frames.
    """

    kind: str = "lookahead"
    per_block_lookahead: tuple[int, ...] = ()
    frontend_stride: int = 1
    frame_shift_ms: int = 10
    chunk_frames: int = 0
    chunk_tail_frames: int = 0
    decoder_lookahead_frames: int = 0

    def __post_init__(self):
        if self.kind not in ("lookahead", "chunk", "full"):
            raise ValueError(f"unknown latency kind {self.kind!r}")
        vals = list(self.per_block_lookahead) + [
            self.frontend_stride, self.frame_shift_ms, self.chunk_frames,
            self.chunk_tail_frames, self.decoder_lookahead_frames,
        ]
        if any(v < 0 for v in vals):
            raise ValueError("latency quantities must be non-negative")
        if self.frontend_stride < 1:
            raise ValueError("frontend stride must be at least 1")
        if self.kind == "chunk" and self.chunk_frames < 1:
            raise ValueError("chunk kind needs chunk_frames >= 1")

    @classmethod
    def uniform(cls, blocks: int, per_block: int, **kw) -> "LatencySpec":
        return cls(kind="lookahead", per_block_lookahead=(per_block,) * blocks, **kw)

    @classmethod
    def top_only(cls, blocks: int, frames: int, **kw) -> "LatencySpec":
        return cls(kind="lookahead", per_block_lookahead=(0,) * (blocks - 1) + (frames,), **kw)

    @property
    def num_blocks(self) -> int:
        return len(self.per_block_lookahead)

    @property
    def encoder_frame_ms(self) -> int:
        return self.frontend_stride * self.frame_shift_ms

    @property
    def lookahead_frames(self) -> int:
        """Total future encoder frames visible to an output frame (lookahead kind)."""
        return sum(self.per_block_lookahead)

    def frame_lookahead(self, offset_in_chunk: int = 0) -> int:
        """Future encoder frames that influence the output at a given frame."""
        if self.kind == "lookahead":
            return self.lookahead_frames
        if self.kind == "chunk":
            return self.chunk_frames - 1 - offset_in_chunk
        raise ValueError("a full-context encoder has no finite lookahead")


@dataclass(frozen=True)
class Latency:
    total_ms: Fraction
    average_ms: Fraction
    range_ms: tuple[Fraction, Fraction]
    frames: int


def encoder_latency_ms(spec: LatencySpec) -> Latency:
    """Algorithmic encoder latency (plus decoder window) in milliseconds.

    Lookahead kind: every frame waits ``sum(per_block) * stride * shift``.
    Chunk kind: a frame waits until its chunk has fully arrived, which over
    a chunk sweeps ``(0, chunk]`` frames, plus the chunk tail; the average is
    the midpoint of that interval.
    """
    fms = Fraction(spec.encoder_frame_ms)
    dec = spec.decoder_lookahead_frames * fms
    if spec.kind == "full":
        raise ValueError("full-context encoders have utterance-length latency")
    if spec.kind == "lookahead":
        total = spec.lookahead_frames * fms + dec
        return Latency(total, total, (total, total), spec.lookahead_frames)
    lo = spec.chunk_tail_frames * fms + dec
    hi = lo + spec.chunk_frames * fms
    return Latency(hi, (lo + hi) / 2, (lo, hi), spec.chunk_frames + spec.chunk_tail_frames)


def _fmt(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{float(v):g}"


# Reference streaming configurations for the latency report.
STREAMING_LATENCY_CONFIGS: dict[str, LatencySpec] = {
    "rnnt_context_6x4": LatencySpec.uniform(6, 4, frontend_stride=3, frame_shift_ms=10),
    "rnnt_lookahead_conv_top24": LatencySpec.top_only(6, 24, frontend_stride=3, frame_shift_ms=10),
    "rnn_aed_context_6x4": LatencySpec.uniform(6, 4, frontend_stride=3, frame_shift_ms=10),
    "transformer_lookahead_18x1": LatencySpec.uniform(18, 1, frontend_stride=4, frame_shift_ms=10),
    "transformer_lookahead_18x1+decoder": LatencySpec.uniform(
        18, 1, frontend_stride=4, frame_shift_ms=10, decoder_lookahead_frames=6
    ),
    "transformer_chunk_12": LatencySpec(
        kind="chunk", frontend_stride=4, frame_shift_ms=10, chunk_frames=12, chunk_tail_frames=12
    ),
}


def latency_table(specs: dict[str, LatencySpec], fmt: str = "tsv") -> str:
    rows = []
    for name, spec in specs.items():
        lat = encoder_latency_ms(spec)
        rows.append({
            "architecture": name,
            "frames": lat.frames,
            "total_ms": _fmt(lat.total_ms),
            "avg_ms": _fmt(lat.average_ms),
            "range_ms": f"[{_fmt(lat.range_ms[0])}, {_fmt(lat.range_ms[1])}]",
        })
    if fmt == "json":
        import json

        return json.dumps(rows, indent=2)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), delimiter="\t", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def causality_probe(
    encoder: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    t: int,
    perturb_at: int,
    delta: float = 0.5,
    atol: float = 0.0,
) -> bool:
    """True iff output frame ``t`` changes when input frame ``perturb_at`` is nudged.

    The nudge is a fixed vector of alternating sign and growing magnitude,
    scaled by ``delta``, so layer normalisation cannot cancel it the way it
    would cancel a uniform shift. With the default ``atol = 0`` any bit of
    change counts: frames outside the receptive field never enter the
    arithmetic, so they leave the output bit-identical, while deep stacks
    can attenuate a real dependence far below any fixed tolerance.
    ``encoder`` maps a (T_in, d) array to a (T_out, d') array; ``t`` indexes
    the output and ``perturb_at`` the input (0-based).
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= perturb_at < x.shape[0]:
        raise ValueError(f"perturb_at {perturb_at} outside 0..{x.shape[0] - 1}")
    with nx.no_grad():
        base = np.asarray(encoder(x))
        x2 = x.copy()
        d = x.shape[1] if x.ndim > 1 else 1
        k = np.arange(d)
        x2[perturb_at] += delta * np.where(k % 2 == 0, 1.0, -1.0) * (1.0 + k / d)
        moved = np.asarray(encoder(x2))
    return bool(np.max(np.abs(base[t] - moved[t])) > atol)


def measured_lookahead(encoder: Callable[[np.ndarray], np.ndarray], x: np.ndarray, t: int) -> int:
    """Largest ``k`` such that perturbing input ``t + k`` changes output ``t``."""
    last = -1
    for j in range(t, x.shape[0]):
        if causality_probe(encoder, x, t, j):
            last = j
    return last - t
