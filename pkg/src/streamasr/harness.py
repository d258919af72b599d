"""Experiment orchestration: config files, checkpoints, training, evaluation, comparison.

Config files are flat ``key = value`` text, one entry per line; ``#`` starts
a comment. Unknown keys and unparsable values are errors. See
``ExperimentConfig`` for the keys and their defaults.

Checkpoint layout (little-endian)::

    magic        8 bytes  b"SASRCKPT"
    header_len   uint32
    header       JSON: {"version": 1, "config": {...},
                        "tensors": [{"name", "shape", "offset"}]}
    payload      float64 values of every tensor, concatenated in header order;
                 "offset" counts float64 elements from the start of the payload
"""

from __future__ import annotations

import dataclasses
import json
import math
import statistics
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .data import SyntheticTaskSpec, Utterance, Vocabulary, generate_synthetic_corpus, stack_superframes
from .decoding import (
    Hypothesis,
    JointDecodeConfig,
    attention_beam_decode,
    edit_counts,
    ErrorCounts,
    mocha_hard_decode,
    rnn_aed_beam_decode,
    rnnt_beam_decode,
    triggered_attention_decode,
)
from .layers import Module
from .losses import MultiTaskConfig, ctc_loss, multitask_loss, transducer_loss
from .models import (
    RNNAEDConfig,
    RNNAEDModel,
    RNNEncoder,
    RNNTConfig,
    RNNTModel,
    TransformerAEDConfig,
    TransformerAEDModel,
    rnn_aed_forward,
    rnnt_forward,
    sequence_logprob,
    transformer_aed_forward,
)
from .optim import MomentumSGD
from .pretrain import pretrain_encoder, transfer_encoder
from .streaming import Latency, LatencySpec, encoder_latency_ms

FAMILIES = ("rnnt", "rnn_aed", "transformer_aed")
CHECKPOINT_MAGIC = b"SASRCKPT"
CHECKPOINT_VERSION = 1
VGG_STRIDE = 4


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rebuild a run from scratch.

    RNN families read ``stack``-frame superframes; the Transformer reads raw
    frames through its stride-4 convolutional frontend. ``context_tau`` is
    the per-block future context of streaming RNN encoders; with
    ``context_mode = top_only`` the top block alone gets
    ``enc_blocks * context_tau`` frames, the same total lookahead.
    ``topk = 0`` proposes every token.
    """

    name: str = "run"
    family: str = "rnnt"
    streaming: bool = True
    # data
    n_utts: int = 200
    n_eval: int = 200
    corpus_seed: int = 0
    noise: float = 0.2
    stack: int = 3
    # RNN encoders and decoders
    enc_blocks: int = 2
    enc_cell: int = 48
    enc_proj: int = 32
    block_type: str = "standard"
    context_tau: int = 2
    context_mode: str = "per_block"
    attention: str = "mocha"
    mocha_window: int = 3
    mocha_init_r: float = -1.0
    mocha_noise_std: float = 1.0
    mocha_mass_weight: float = 0.0
    mocha_sharp_weight: float = 0.0
    # Transformer
    d_model: int = 32
    heads: int = 2
    d_ff: int = 64
    tf_enc_blocks: int = 2
    dec_blocks: int = 1
    mask_kind: str = "chunk"
    mask_size: int = 4
    decoder_lookahead: int = 0
    # objective and decoding
    alpha: float = 0.3
    beta1: float = 0.3
    beam: int = 4
    topk: int = 0
    # optimisation
    lr: float = 0.05
    momentum: float = 0.9
    clip_norm: float = 5.0
    batch: int = 8
    steps: int = 400
    init: str = "random"
    pretrain_steps: int = 100
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.family in FAMILIES, f"family must be one of {FAMILIES}"),
            (self.block_type in ("standard", "custom"), "block_type must be standard or custom"),
            (self.context_mode in ("per_block", "top_only"), "context_mode must be per_block or top_only"),
            (self.attention in ("mocha", "location"), "attention must be mocha or location"),
            (self.mask_kind in ("full", "chunk", "lookahead"), "mask_kind must be full, chunk or lookahead"),
            (self.init in ("random", "ctc", "ce"), "init must be random, ctc or ce"),
            (self.init == "random" or self.family == "rnnt", "pretrained init is only defined for rnnt"),
            (0.0 <= self.alpha <= 1.0, "alpha must lie in [0, 1]"),
            (self.beam >= 1, "beam must be at least 1"),
            (self.topk >= 0, "topk must be non-negative"),
            (self.n_utts >= 1 and self.n_eval >= 0, "n_utts must be positive"),
            (self.steps >= 0 and self.pretrain_steps >= 0, "step counts must be non-negative"),
            (self.batch >= 1 and self.stack >= 1, "batch and stack must be positive"),
            (self.context_tau >= 0, "context_tau must be non-negative"),
        ]
        if self.family == "transformer_aed":
            checks.append(((self.mask_kind != "full") == self.streaming,
                           "a streaming Transformer needs a chunk or lookahead mask, a full one needs mask_kind = full"))
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    # -- serialisation --------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: _coerce(known[k], v) for k, v in d.items()})

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        d = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            if k in d:
                raise ConfigError(f"line {n}: duplicate key {k!r}")
            d[k] = v
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    # -- derived ------------------------------------------------------------
    @property
    def task(self) -> SyntheticTaskSpec:
        return SyntheticTaskSpec(noise=self.noise, seed=self.corpus_seed)

    @property
    def joint_decode(self) -> JointDecodeConfig:
        return JointDecodeConfig(beta1=self.beta1, beam=self.beam, topk=self.topk or None)

    @property
    def context_taus(self) -> tuple[int | None, ...] | None:
        if self.family == "transformer_aed" or not self.streaming or self.context_tau == 0:
            return None
        if self.context_mode == "top_only":
            return (None,) * (self.enc_blocks - 1) + (self.enc_blocks * self.context_tau,)
        return (self.context_tau,) * self.enc_blocks


def _coerce(f: dataclasses.Field, v):
    if not isinstance(v, str):
        return v
    typ = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if typ == "bool":
            if v.lower() in ("true", "1", "yes"):
                return True
            if v.lower() in ("false", "0", "no"):
                return False
            raise ValueError(v)
        if typ == "int":
            return int(v)
        if typ == "float":
            return float(v)
    except ValueError:
        raise ConfigError(f"{f.name}: cannot parse {v!r} as {typ}") from None
    return v


# --------------------------------------------------------------------------
# Models and data
# --------------------------------------------------------------------------

def build_model(cfg: ExperimentConfig, rng: np.random.Generator | None = None) -> Module:
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 1])
    vocab = cfg.task.vocab
    d_raw = cfg.task.feature_dim
    if cfg.family == "rnnt":
        return RNNTModel(RNNTConfig(
            d_in=d_raw * cfg.stack, num_labels=vocab.num_labels, num_embeddings=vocab.num_embeddings,
            enc_blocks=cfg.enc_blocks, enc_cell=cfg.enc_cell, enc_proj=cfg.enc_proj,
            direction="uni" if cfg.streaming else "bi", block_type=cfg.block_type,
            context_taus=cfg.context_taus,
        ), rng)
    if cfg.family == "rnn_aed":
        return RNNAEDModel(RNNAEDConfig(
            d_in=d_raw * cfg.stack, num_outputs=vocab.num_att_outputs, num_embeddings=vocab.num_embeddings,
            sos=vocab.sos, eos=vocab.eos, enc_blocks=cfg.enc_blocks, enc_cell=cfg.enc_cell,
            enc_proj=cfg.enc_proj, direction="uni" if cfg.streaming else "bi",
            context_taus=cfg.context_taus, attention=cfg.attention,
            mocha_window=cfg.mocha_window, mocha_init_r=cfg.mocha_init_r, mocha_noise_std=cfg.mocha_noise_std,
        ), rng)
    return TransformerAEDModel(TransformerAEDConfig(
        d_in=d_raw, num_labels=vocab.num_labels, num_outputs=vocab.num_att_outputs,
        num_embeddings=vocab.num_embeddings, sos=vocab.sos, eos=vocab.eos,
        d_model=cfg.d_model, heads=cfg.heads, d_k=cfg.d_model // cfg.heads, d_ff=cfg.d_ff,
        enc_blocks=cfg.tf_enc_blocks, dec_blocks=cfg.dec_blocks,
        mask_kind=cfg.mask_kind, mask_size=cfg.mask_size if cfg.mask_kind != "full" else 0,
        decoder_lookahead=cfg.decoder_lookahead,
    ), rng)


def make_corpora(cfg: ExperimentConfig) -> tuple[list[Utterance], list[Utterance]]:
    """Training corpus and a held-out set drawn from the same task."""
    utts = generate_synthetic_corpus(cfg.task, cfg.n_utts + cfg.n_eval)
    return utts[:cfg.n_utts], utts[cfg.n_utts:]


def model_input(cfg: ExperimentConfig, utt: Utterance) -> np.ndarray:
    if cfg.family == "transformer_aed":
        return utt.features.frames
    return stack_superframes(utt.features, cfg.stack).frames


def config_latency(cfg: ExperimentConfig) -> Latency | None:
    """Encoder latency of the configured model; None for full-utterance models."""
    if not cfg.streaming:
        return None
    shift = int(cfg.task.frame_shift_ms)
    if cfg.family == "transformer_aed":
        if cfg.mask_kind == "chunk":
            spec = LatencySpec(kind="chunk", frontend_stride=VGG_STRIDE, frame_shift_ms=shift,
                               chunk_frames=cfg.mask_size)
        else:
            spec = LatencySpec.uniform(cfg.tf_enc_blocks, cfg.mask_size, frontend_stride=VGG_STRIDE,
                                       frame_shift_ms=shift, decoder_lookahead_frames=cfg.decoder_lookahead)
        return encoder_latency_ms(spec)
    taus = tuple(t or 0 for t in (cfg.context_taus or (0,) * cfg.enc_blocks))
    return encoder_latency_ms(LatencySpec(kind="lookahead", per_block_lookahead=taus,
                                          frontend_stride=cfg.stack, frame_shift_ms=shift))


def mocha_boundary_penalty(alphas: nx.Tensor, cfg: ExperimentConfig, progress: float = 1.0) -> nx.Tensor:
    """Training-only terms on the (U+1, T) boundary distributions.

    Mass escaping past the last frame becomes a zero context at inference,
    and a spread-out boundary distribution means selection probabilities
    far from 0 and 1, where thresholding at 0.5 disagrees with the
    expectation. The first term is -sum log(mass), the second the entropy,
    whose weight ramps up with training ``progress`` in [0, 1]: at full weight
    from the start it pins every boundary to the first frame.
    """
    logs = nx.log(nx.add(alphas, nx.constant(np.asarray(1e-12))))
    mass = nx.neg(nx.total(nx.log(nx.add(nx.sum_axis(alphas, 1), nx.constant(np.asarray(1e-12))))))
    entropy = nx.neg(nx.total(nx.mul(alphas, logs)))
    return nx.add(nx.scale(mass, cfg.mocha_mass_weight), nx.scale(entropy, cfg.mocha_sharp_weight * progress))


def utterance_loss(model: Module, cfg: ExperimentConfig, x: np.ndarray, tokens: Sequence[int],
                   noise_rng: np.random.Generator | None = None, progress: float = 1.0) -> nx.Tensor:
    """Training loss of one utterance, normalised by its token count.

    ``progress`` is the fraction of training done; it only scales the MoChA
    sharpness penalty.
    """
    xt = nx.constant(x)
    if cfg.family == "rnnt":
        loss = transducer_loss(rnnt_forward(model, xt, tokens), tokens)
    elif cfg.family == "rnn_aed":
        eos = model.cfg.eos
        alphas: list = []
        loss = nx.neg(sequence_logprob(rnn_aed_forward(model, xt, tokens, noise_rng=noise_rng, boundaries=alphas),
                                       tokens, eos))
        if alphas and (cfg.mocha_mass_weight > 0 or cfg.mocha_sharp_weight > 0):
            loss = nx.add(loss, mocha_boundary_penalty(nx.stack(alphas, axis=0), cfg, progress))
    else:
        att, ctc = transformer_aed_forward(model, xt, tokens)
        loss = multitask_loss(nx.neg(ctc_loss(ctc, tokens)), sequence_logprob(att, tokens, model.cfg.eos),
                              MultiTaskConfig(cfg.alpha))
    return nx.scale(loss, 1.0 / max(1, len(tokens)))


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(path, model: Module, cfg: ExperimentConfig) -> None:
    tensors, chunks, offset = [], [], 0
    for name, arr in model.state_dict().items():
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").ravel())
        offset += arr.size
    header = json.dumps({"version": CHECKPOINT_VERSION, "config": cfg.to_dict(), "tensors": tensors}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c.tobytes())


def load_checkpoint(path, expect: ExperimentConfig | None = None) -> tuple[Module, ExperimentConfig]:
    """Rebuild the model recorded in a checkpoint; ``expect`` must match its config."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    cfg = ExperimentConfig.from_dict(header["config"])
    if expect is not None:
        diffs = [k for k, v in expect.to_dict().items() if k not in _RUN_ONLY_KEYS and cfg.to_dict()[k] != v]
        if diffs:
            raise ValueError(f"checkpoint incompatible with config: differs in {', '.join(diffs)}")
    payload = np.frombuffer(raw, dtype="<f8", offset=12 + hlen)
    state = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        if t["offset"] + n > payload.size:
            raise ValueError(f"{path}: truncated payload at tensor {t['name']}")
        state[t["name"]] = payload[t["offset"]:t["offset"] + n].reshape(t["shape"]).astype(np.float64)
    model = build_model(cfg)
    model.load_state_dict(state)
    return model, cfg


# keys that change how a run is trained or decoded but not the network itself
_RUN_ONLY_KEYS = {
    "name", "n_utts", "n_eval", "beam", "topk", "beta1", "lr", "momentum", "clip_norm",
    "batch", "steps", "pretrain_steps", "init", "alpha", "seed", "mocha_noise_std",
    "mocha_mass_weight", "mocha_sharp_weight",
}


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Module
    config: ExperimentConfig
    losses: list[float]
    pretrain_losses: list[float] = field(default_factory=list)
    seconds: float = 0.0
    checkpoint: Path | None = None


def loss_curve_tsv(losses: Sequence[float]) -> str:
    return "step\tloss\n" + "".join(f"{i + 1}\t{v:.10g}\n" for i, v in enumerate(losses))


def train(cfg: ExperimentConfig, corpus: Sequence[Utterance] | None = None, out_dir=None,
          progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train a model from ``cfg`` on ``corpus`` (default: the config's training corpus).

    All randomness derives from ``cfg.seed``: initialisation, batch order,
    pretraining and MoChA training noise use separate child streams.
    """
    t0 = time.process_time()
    if corpus is None:
        corpus, _ = make_corpora(cfg)
    if not corpus:
        raise ValueError("training corpus is empty")
    model = build_model(cfg, np.random.default_rng([cfg.seed, 1]))
    pre_losses: list[float] = []
    if cfg.init != "random":
        enc = RNNEncoder(cfg.task.feature_dim * cfg.stack, cfg.enc_blocks, cfg.enc_cell, cfg.enc_proj,
                         np.random.default_rng([cfg.seed, 4]), direction=model.cfg.direction,
                         block_type=cfg.block_type, context_taus=cfg.context_taus)
        res = pretrain_encoder(enc, corpus, cfg.init.upper(), cfg.pretrain_steps, cfg.task.vocab.num_labels,
                               np.random.default_rng([cfg.seed, 5]), stack=cfg.stack, lr=cfg.lr,
                               momentum=cfg.momentum, clip_norm=cfg.clip_norm, batch=cfg.batch)
        transfer_encoder(res.encoder, model)
        pre_losses = res.losses
    order_rng = np.random.default_rng([cfg.seed, 2])
    noise_rng = np.random.default_rng([cfg.seed, 3]) if cfg.family == "rnn_aed" and cfg.attention == "mocha" else None
    xs = [model_input(cfg, u) for u in corpus]
    opt = MomentumSGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum, clip_norm=cfg.clip_norm)
    order: list[int] = []
    losses: list[float] = []
    n = min(cfg.batch, len(corpus))
    for step in range(1, cfg.steps + 1):
        total = 0.0
        for _ in range(n):
            if not order:
                order = order_rng.permutation(len(corpus)).tolist()
            i = order.pop()
            try:
                loss = utterance_loss(model, cfg, xs[i], corpus[i].tokens, noise_rng, (step - 1) / cfg.steps)
                nx.backward(loss)
            except nx.NonFiniteError as exc:
                raise TrainingDiverged(f"training diverged at step {step}: {exc}") from exc
            total += loss.item()
        mean = total / n
        if not math.isfinite(mean):
            raise TrainingDiverged(f"training diverged at step {step}: loss {mean}")
        opt.step(1.0 / n)
        opt.zero_grad()
        if any(not np.all(np.isfinite(p.data)) for p in opt.params):
            raise TrainingDiverged(f"training diverged at step {step}: non-finite parameters")
        losses.append(mean)
        if progress is not None:
            progress(step, mean)
    result = TrainResult(model, cfg, losses, pre_losses, time.process_time() - t0)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.bin", model, cfg)
        (out / "loss_curve.tsv").write_text(loss_curve_tsv(losses), encoding="utf-8")
        cfg.save(out / "config.txt")
        result.checkpoint = out / "checkpoint.bin"
    return result


# --------------------------------------------------------------------------
# Decoding and evaluation
# --------------------------------------------------------------------------

def decode_utterance(model: Module, cfg: ExperimentConfig, x: np.ndarray) -> Hypothesis:
    """Best hypothesis with the decoder that matches the model's streaming mode."""
    if cfg.family == "rnnt":
        tokens, score = rnnt_beam_decode(model, x, beam=cfg.beam)
        return Hypothesis(tuple(tokens), score, transducer=score)
    if cfg.family == "rnn_aed":
        if cfg.attention == "mocha":
            return mocha_hard_decode(model, x, beam=cfg.beam)
        return rnn_aed_beam_decode(model, x, beam=cfg.beam)
    if cfg.streaming:
        return triggered_attention_decode(model, x, cfg.joint_decode)
    return attention_beam_decode(model, x, cfg.joint_decode)[0]


@dataclass
class EvalResult:
    word: ErrorCounts
    token: ErrorCounts
    rows: list[dict]

    @property
    def wer(self) -> float:
        return self.word.rate

    @property
    def token_accuracy(self) -> float:
        return 1.0 - self.token.rate

    def summary(self) -> dict:
        return {
            "wer": self.wer, "substitutions": self.word.substitutions, "deletions": self.word.deletions,
            "insertions": self.word.insertions, "ref_words": self.word.ref_len,
            "token_accuracy": self.token_accuracy, "utterances": len(self.rows),
        }

    def rows_tsv(self) -> str:
        cols = ["uid", "ref", "hyp", "score", "S", "D", "I", "trigger_frames"]
        lines = ["\t".join(cols)]
        for r in self.rows:
            lines.append("\t".join(str(r[c]) for c in cols))
        return "\n".join(lines) + "\n"


def evaluate(model: Module, cfg: ExperimentConfig, corpus: Sequence[Utterance]) -> EvalResult:
    """Decode every utterance; word errors over detokenised words, token errors over ids."""
    if not corpus:
        raise ValueError("evaluation corpus is empty")
    vocab: Vocabulary = cfg.task.vocab
    words = ErrorCounts(0, 0, 0, 0)
    toks = ErrorCounts(0, 0, 0, 0)
    rows = []
    for u in corpus:
        hyp = decode_utterance(model, cfg, model_input(cfg, u))
        text = vocab.detokenize(hyp.tokens)
        wc = edit_counts(text.split(), u.text.split())
        words = words + wc
        toks = toks + edit_counts(list(hyp.tokens), list(u.tokens))
        frames = hyp.trigger_frames or hyp.boundaries
        rows.append({
            "uid": u.uid, "ref": u.text, "hyp": text, "score": f"{hyp.score:.6f}",
            "S": wc.substitutions, "D": wc.deletions, "I": wc.insertions,
            "trigger_frames": ",".join(map(str, frames)) if frames else "-",
        })
    return EvalResult(words, toks, rows)


# --------------------------------------------------------------------------
# Comparison
# --------------------------------------------------------------------------

def _fmt_ms(lat: Latency | None) -> str:
    if lat is None:
        return "full"
    v = lat.average_ms
    return str(v.numerator) if v.denominator == 1 else f"{float(v):g}"


def compare(configs: Sequence[ExperimentConfig], seeds: Sequence[int],
            runner: Callable[[ExperimentConfig], float] | None = None) -> list[dict]:
    """Mean and standard deviation of held-out WER over ``seeds`` for every config.

    ``runner`` maps a config (with its seed set) to a WER; the default trains
    and evaluates on the config's corpora.
    """
    if not seeds:
        raise ValueError("compare needs at least one seed")

    def default_runner(c: ExperimentConfig) -> float:
        train_set, eval_set = make_corpora(c)
        res = train(c, train_set)
        return evaluate(res.model, c, eval_set or train_set).wer

    run = runner or default_runner
    rows = []
    for cfg in configs:
        wers = [run(cfg.replace(seed=int(s))) for s in seeds]
        rows.append({
            "model": cfg.name,
            "family": cfg.family,
            "streaming": cfg.streaming,
            "init": cfg.init,
            "wer_mean": statistics.fmean(wers),
            "wer_std": statistics.stdev(wers) if len(wers) > 1 else 0.0,
            "n_seeds": len(wers),
            "latency_ms": _fmt_ms(config_latency(cfg)),
        })
    return rows


COMPARE_COLUMNS = ["model", "family", "streaming", "init", "wer_mean", "wer_std", "n_seeds", "latency_ms"]


def format_table(rows: Sequence[dict], fmt: str = "tsv", columns: Sequence[str] | None = None) -> str:
    if fmt == "json":
        return json.dumps(list(rows), indent=2, default=str) + "\n"
    if fmt != "tsv":
        raise ValueError(f"unknown output format {fmt!r}")
    cols = list(columns or (rows[0].keys() if rows else COMPARE_COLUMNS))
    out = ["\t".join(cols)]
    for r in rows:
        out.append("\t".join(f"{r[c]:.6f}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    return "\n".join(out) + "\n"


def trend_configs(base: ExperimentConfig | None = None) -> list[ExperimentConfig]:
    """The three comparisons: encoder init, Transformer context method, context placement."""
    b = base or ExperimentConfig()
    return [
        b.replace(name="rnnt_random_init", family="rnnt", init="random"),
        b.replace(name="rnnt_ctc_init", family="rnnt", init="ctc"),
        b.replace(name="rnnt_ce_init", family="rnnt", init="ce"),
        b.replace(name="transformer_chunk", family="transformer_aed", mask_kind="chunk", mask_size=4),
        b.replace(name="transformer_lookahead", family="transformer_aed", mask_kind="lookahead", mask_size=1),
        b.replace(name="rnnt_context_per_block", family="rnnt", context_mode="per_block"),
        b.replace(name="rnnt_context_top_only", family="rnnt", context_mode="top_only"),
    ]


# Documented configurations for the end-to-end toy task; every other field keeps its default.
TOY_CONFIGS: dict[str, ExperimentConfig] = {
    "rnnt_streaming": ExperimentConfig(name="rnnt_streaming", family="rnnt", steps=300),
    "rnnt_offline": ExperimentConfig(name="rnnt_offline", family="rnnt", streaming=False, steps=300),
    "rnn_aed_mocha": ExperimentConfig(name="rnn_aed_mocha", family="rnn_aed", attention="mocha", steps=800, lr=0.1,
                                      mocha_noise_std=1.0, mocha_mass_weight=1.0, mocha_sharp_weight=0.3),
    "rnn_aed_location": ExperimentConfig(name="rnn_aed_location", family="rnn_aed", attention="location",
                                         streaming=False, steps=400),
    "transformer_chunk": ExperimentConfig(name="transformer_chunk", family="transformer_aed", steps=500, lr=0.3),
    "transformer_full": ExperimentConfig(name="transformer_full", family="transformer_aed", streaming=False,
                                         mask_kind="full", steps=500, lr=0.3),
}
