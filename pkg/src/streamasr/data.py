"""Synthetic toy ASR task: vocabulary, corpus generation, superframes, file formats.

Each output symbol owns a fixed prototype feature vector; an utterance is a
grammar-generated transcript rendered as runs of noisy prototype frames, so
every frame's true token is known exactly.

Corpus file layout (all integers little-endian)::

    magic          8 bytes  b"TOYCORP1"
    n_utts         uint32
    per utterance:
      id_len       uint16, then id as UTF-8
      T, d         uint32, uint32
      shift_ms     float64
      frames       T*d float64, row-major
      text_len     uint32, then transcript as UTF-8
      ali_len      uint32, then the alignment line as UTF-8 (see below)

Alignment line: the utterance id followed by space-separated
``token_id run_length`` pairs covering every frame in order.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TokenSequence = tuple[int, ...]

CORPUS_MAGIC = b"TOYCORP1"


@dataclass(frozen=True)
class Vocabulary:
    """Character inventory with reserved ids: blank=0, chars 1..n, eos=n+1, sos=n+2."""

    chars: str

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("vocabulary characters must be unique")

    blank = 0

    @property
    def n_chars(self) -> int:
        return len(self.chars)

    @property
    def eos(self) -> int:
        return self.n_chars + 1

    @property
    def sos(self) -> int:
        return self.n_chars + 2

    @property
    def num_labels(self) -> int:
        """Output size of CTC / transducer heads: blank plus characters."""
        return self.n_chars + 1

    @property
    def num_att_outputs(self) -> int:
        """Output size of attention decoders: blank slot, characters, eos."""
        return self.n_chars + 2

    @property
    def num_embeddings(self) -> int:
        return self.n_chars + 3

    def is_payload(self, token: int) -> bool:
        return 1 <= token <= self.n_chars

    def tokenize(self, text: str) -> TokenSequence:
        ids = []
        for ch in text:
            pos = self.chars.find(ch)
            if pos < 0:
                raise KeyError(f"character {ch!r} is not in the vocabulary")
            ids.append(pos + 1)
        return tuple(ids)

    def detokenize(self, tokens: Iterable[int]) -> str:
        out = []
        for t in tokens:
            if not self.is_payload(int(t)):
                raise ValueError(f"reserved id {t} inside a token sequence")
            out.append(self.chars[int(t) - 1])
        return "".join(out)


def tokenize(vocab: Vocabulary, text: str) -> TokenSequence:
    return vocab.tokenize(text)


def detokenize(vocab: Vocabulary, tokens: Iterable[int]) -> str:
    return vocab.detokenize(tokens)


@dataclass
class FeatureSequence:
    frames: np.ndarray
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"feature sequence needs shape (T>=1, d), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("feature sequence contains non-finite values")
        if self.frame_shift_ms <= 0:
            raise ValueError("frame shift must be positive")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class FrameAlignment:
    ids: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.ids)

    def runs(self) -> list[tuple[int, int]]:
        out: list[tuple[int, int]] = []
        for tok in self.ids.tolist():
            if out and out[-1][0] == tok:
                out[-1] = (tok, out[-1][1] + 1)
            else:
                out.append((tok, 1))
        return out

    @classmethod
    def from_runs(cls, runs: Sequence[tuple[int, int]]) -> "FrameAlignment":
        ids: list[int] = []
        for tok, n in runs:
            if n < 1:
                raise ValueError("run lengths must be positive")
            ids += [tok] * n
        return cls(np.array(ids, dtype=np.int64))

    def validate(self, tokens: Sequence[int], T: int) -> None:
        if len(self.ids) != T:
            raise ValueError(f"alignment covers {len(self.ids)} frames, expected {T}")
        seq = [tok for tok, _ in self.runs()]
        if seq != list(tokens):
            raise ValueError("alignment token order does not match the transcript")


@dataclass
class Utterance:
    uid: str
    features: FeatureSequence
    tokens: TokenSequence
    alignment: FrameAlignment
    text: str
    word_spans: list[tuple[str, int, int]] = field(default_factory=list)


DEFAULT_GRAMMAR: dict[int, list[tuple[str, int]]] = {
    0: [("bad", 1), ("big", 1), ("ace", 1), ("fed", 1)],
    1: [("cage", 2), ("head", 2), ("fig", 2), ("dice", 2), ("", -1)],
    2: [("hid", -1), ("dig", -1), ("", -1)],
}


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Grammar over words, rendered as token-prototype frame runs.

    ``grammar`` maps a state to ``(word, next_state)`` arcs; an empty word
    with next state -1 ends the utterance, as does any arc into -1.
    """

    chars: str = " abcdefghi"
    grammar: dict = field(default_factory=lambda: dict(DEFAULT_GRAMMAR))
    start_state: int = 0
    frames_per_token: tuple[int, int] = (6, 10)
    noise: float = 0.2
    feature_dim: int = 16
    frame_shift_ms: float = 10.0
    seed: int = 0

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.chars)


def token_prototypes(spec: SyntheticTaskSpec) -> np.ndarray:
    """(num_labels, d) prototype vectors; row 0 (blank) is unused."""
    rng = np.random.default_rng([spec.seed, 7919])
    return rng.normal(0.0, 1.0, size=(spec.vocab.num_labels, spec.feature_dim))


def _sample_words(spec: SyntheticTaskSpec, rng: np.random.Generator) -> list[str]:
    state = spec.start_state
    words: list[str] = []
    for _ in range(64):
        arcs = spec.grammar.get(state, [])
        if not arcs:
            break
        word, state = arcs[int(rng.integers(len(arcs)))]
        if word:
            words.append(word)
        if state == -1:
            break
    return words


def generate_synthetic_corpus(spec: SyntheticTaskSpec, n_utts: int) -> list[Utterance]:
    if n_utts < 1:
        raise ValueError("n_utts must be at least 1")
    if not spec.grammar or not any(w for arcs in spec.grammar.values() for w, _ in arcs):
        raise ValueError("grammar is empty")
    vocab = spec.vocab
    protos = token_prototypes(spec)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.frames_per_token
    utts = []
    for n in range(n_utts):
        words = []
        while not words:
            words = _sample_words(spec, rng)
        text = " ".join(words)
        tokens = vocab.tokenize(text)
        runs = [(tok, int(rng.integers(lo, hi + 1))) for tok in tokens]
        ali = FrameAlignment.from_runs(runs)
        frames = protos[ali.ids] + spec.noise * rng.normal(size=(len(ali), spec.feature_dim))
        spans = []
        pos = 0
        frame = 0
        for w in words:
            start = frame
            for _ in w:
                frame += runs[pos][1]
                pos += 1
            spans.append((w, start, frame))
            if pos < len(runs):
                frame += runs[pos][1]
                pos += 1
        utts.append(Utterance(
            uid=f"utt{n:05d}",
            features=FeatureSequence(frames, spec.frame_shift_ms),
            tokens=tokens,
            alignment=ali,
            text=text,
            word_spans=spans,
        ))
    return utts


def stack_superframes(x: FeatureSequence, stack: int = 3) -> FeatureSequence:
    """Concatenate ``stack`` consecutive frames; the final partial group is zero-padded."""
    if stack < 1:
        raise ValueError("stack must be at least 1")
    T, d = x.frames.shape
    n = -(-T // stack)
    padded = np.zeros((n * stack, d))
    padded[:T] = x.frames
    return FeatureSequence(padded.reshape(n, stack * d), x.frame_shift_ms * stack)


def downsample_alignment(ali: FrameAlignment, factor: int) -> FrameAlignment:
    """Token of the centre input frame of each ``factor``-frame group."""
    T = len(ali)
    n = -(-T // factor)
    idx = [min(T - 1, i * factor + factor // 2) for i in range(n)]
    return FrameAlignment(ali.ids[idx])


def format_alignment_line(uid: str, ali: FrameAlignment) -> str:
    pairs = " ".join(f"{tok} {n}" for tok, n in ali.runs())
    return f"{uid} {pairs}".rstrip()


def parse_alignment_line(line: str) -> tuple[str, FrameAlignment]:
    parts = line.split()
    if not parts or len(parts) % 2 != 1:
        raise ValueError(f"malformed alignment line: {line!r}")
    vals = [int(v) for v in parts[1:]]
    return parts[0], FrameAlignment.from_runs(list(zip(vals[0::2], vals[1::2])))


def write_alignment_file(path, utts: Sequence[Utterance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in utts:
            fh.write(format_alignment_line(u.uid, u.alignment) + "\n")


def read_alignment_file(path) -> dict[str, FrameAlignment]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                uid, ali = parse_alignment_line(line)
                out[uid] = ali
    return out


def write_corpus(path, utts: Sequence[Utterance]) -> None:
    buf = io.BytesIO()
    buf.write(CORPUS_MAGIC)
    buf.write(struct.pack("<I", len(utts)))
    for u in utts:
        uid = u.uid.encode("utf-8")
        buf.write(struct.pack("<H", len(uid)))
        buf.write(uid)
        T, d = u.features.frames.shape
        buf.write(struct.pack("<IId", T, d, u.features.frame_shift_ms))
        buf.write(np.ascontiguousarray(u.features.frames, dtype="<f8").tobytes())
        text = u.text.encode("utf-8")
        buf.write(struct.pack("<I", len(text)))
        buf.write(text)
        ali = format_alignment_line(u.uid, u.alignment).encode("utf-8")
        buf.write(struct.pack("<I", len(ali)))
        buf.write(ali)
    Path(path).write_bytes(buf.getvalue())


def read_corpus(path, vocab: Vocabulary) -> list[Utterance]:
    raw = Path(path).read_bytes()
    if raw[:8] != CORPUS_MAGIC:
        raise ValueError(f"{path}: not a corpus file")
    off = 8
    (n,) = struct.unpack_from("<I", raw, off)
    off += 4
    utts = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", raw, off)
        off += 2
        uid = raw[off:off + ln].decode("utf-8")
        off += ln
        T, d, shift = struct.unpack_from("<IId", raw, off)
        off += 16
        frames = np.frombuffer(raw, dtype="<f8", count=T * d, offset=off).reshape(T, d).astype(np.float64)
        off += 8 * T * d
        (ln,) = struct.unpack_from("<I", raw, off)
        off += 4
        text = raw[off:off + ln].decode("utf-8")
        off += ln
        (ln,) = struct.unpack_from("<I", raw, off)
        off += 4
        ali_uid, ali = parse_alignment_line(raw[off:off + ln].decode("utf-8"))
        off += ln
        if ali_uid != uid:
            raise ValueError(f"{path}: alignment id {ali_uid} does not match utterance {uid}")
        tokens = vocab.tokenize(text)
        ali.validate(tokens, T)
        utts.append(Utterance(uid, FeatureSequence(frames, shift), tokens, ali, text))
    return utts
