"""Training loop, metrics logging, corpus-wide ec precomputation, and the
binary checkpoint format."""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import DialoguePair, check_unique_ids, split_pairs
from .errors import ContractError, DataFormatError, DimensionError, InputError
from .knowledge import (
    ExternalContextVector,
    external_context_vector,
    knowledge_diagnostics,
    scale_external_context,
    write_ec_records,
)
from .model import (
    AdamHyper,
    AdamState,
    ExtEdParams,
    ModelConfig,
    adam_step,
    backward,
    forward_losses,
    init_params,
)
from .numeric import RngState

log = logging.getLogger("exted.training")

CHECKPOINT_MAGIC = b"XED1"
CHECKPOINT_VERSION = 1


@dataclass
class MetricsLog:
    """Per-step loss records and per-epoch validation records."""

    step_records: list = field(default_factory=list)  # (step, l1, l2, l3, total)
    epoch_records: list = field(default_factory=list)  # (epoch, val_ppl, val_bleu4)

    def add_step(self, step, breakdown):
        if self.step_records and step <= self.step_records[-1][0]:
            raise ContractError("step numbers must be strictly increasing")
        self.step_records.append(
            (step, breakdown.l1, breakdown.l2, breakdown.l3, breakdown.total)
        )

    def add_epoch(self, epoch, val_ppl, val_bleu4):
        self.epoch_records.append((epoch, val_ppl, val_bleu4))

    def step_csv(self) -> str:
        lines = ["step,L1,L2,L3,total"]
        for step, l1, l2, l3, total in self.step_records:
            lines.append(f"{step},{l1!r},{l2!r},{l3!r},{total!r}")
        return "\n".join(lines) + "\n"

    def epoch_csv(self) -> str:
        lines = ["epoch,val_ppl,val_bleu4"]
        for epoch, ppl, bleu in self.epoch_records:
            lines.append(f"{epoch},{ppl!r},{bleu!r}")
        return "\n".join(lines) + "\n"

    def write(self, step_path, epoch_path) -> None:
        Path(step_path).write_text(self.step_csv(), encoding="utf-8")
        Path(epoch_path).write_text(self.epoch_csv(), encoding="utf-8")


@dataclass
class Checkpoint:
    cfg: ModelConfig
    params: ExtEdParams
    adam: AdamState
    step: int
    rng_state: dict


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary, little-endian: magic, u32 version, length-prefixed config
    JSON, shape table, parameter tensors as f64 in PARAM_ORDER, then first
    and second Adam moments in the same order, u64 step count, and the
    length-prefixed rng state JSON."""
    tensors = ckpt.params.named_tensors()
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    cfg_json = json.dumps(ckpt.cfg.to_dict(), sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(cfg_json))
    blob += cfg_json
    blob += struct.pack("<I", len(tensors))
    for _, t in tensors:
        blob += struct.pack("<II", t.shape[0], t.shape[1])
    for _, t in tensors:
        blob += np.ascontiguousarray(t, dtype="<f8").tobytes()
    for name, _ in tensors:
        blob += np.ascontiguousarray(ckpt.adam.m[name], dtype="<f8").tobytes()
    for name, _ in tensors:
        blob += np.ascontiguousarray(ckpt.adam.v[name], dtype="<f8").tobytes()
    blob += struct.pack("<Q", ckpt.step)
    rng_json = json.dumps(ckpt.rng_state, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(rng_json))
    blob += rng_json
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataFormatError(
                f"{self.path}: truncated checkpoint at offset {self.pos} "
                f"(wanted {n} more bytes, have {len(self.data) - self.pos})"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def _expected_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, int]]]:
    v, e, h, d = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.ec_dim
    din = cfg.decoder_input_dim
    return [
        ("embedding", (v, e)),
        ("enc_w_x", (4 * h, e)),
        ("enc_w_h", (4 * h, h)),
        ("enc_b", (4 * h, 1)),
        ("f_weight", (d, h)),
        ("f_bias", (d, 1)),
        ("dec_w_x", (4 * h, din)),
        ("dec_w_h", (4 * h, h)),
        ("dec_b", (4 * h, 1)),
        ("proj_w", (v, h)),
        ("proj_b", (v, 1)),
    ]


def load_checkpoint(path, expect_cfg: ModelConfig | None = None) -> Checkpoint:
    """Validates magic, version, and the shape table before accepting any
    tensor data. A different expected config is a shape mismatch error."""
    reader = _Reader(Path(path).read_bytes(), path)
    magic = reader.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r} at offset 0")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    cfg_len = reader.u32()
    try:
        cfg = ModelConfig.from_dict(json.loads(reader.take(cfg_len).decode("utf-8")))
    except (ValueError, TypeError, KeyError) as exc:
        raise DataFormatError(f"{path}: bad config block: {exc}") from exc
    if expect_cfg is not None and cfg != expect_cfg:
        raise DimensionError(
            f"{path}: checkpoint config {cfg.to_dict()} does not match the "
            f"requested config {expect_cfg.to_dict()}"
        )
    n_tensors = reader.u32()
    expected = _expected_shapes(cfg)
    if n_tensors != len(expected):
        raise DataFormatError(f"{path}: shape table has {n_tensors} tensors, want {len(expected)}")
    shapes = []
    for name, want in expected:
        rows, cols = reader.u32(), reader.u32()
        if (rows, cols) != want:
            raise DimensionError(
                f"{path}: tensor {name} has shape {(rows, cols)}, config implies {want}"
            )
        shapes.append((name, rows, cols))

    def read_block():
        out = {}
        for name, rows, cols in shapes:
            raw = reader.take(rows * cols * 8)
            out[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, cols)
        return out

    tensors = read_block()
    adam_m = read_block()
    adam_v = read_block()
    step = reader.u64()
    rng_len = reader.u32()
    try:
        rng_state = json.loads(reader.take(rng_len).decode("utf-8"))
    except ValueError as exc:
        raise DataFormatError(f"{path}: bad rng state block: {exc}") from exc
    params = ExtEdParams.from_named(tensors)
    return Checkpoint(cfg, params, AdamState(adam_m, adam_v, step), step, rng_state)


@dataclass
class PrecomputeStats:
    n_records: int
    zero_vectors: int
    diagnostics: object  # DiagnosticsReport, or None for fewer than 2 records


def precompute_ec(pairs, source, embeddings, stopwords, scale: bool, seed: int, out_path):
    """Build one external context vector per pair and write the ec file.

    Deterministic under a fixed seed; scaling draws are consumed only for
    nonzero vectors, in corpus order.
    """
    check_unique_ids(pairs)
    rng = RngState(seed)
    records = []
    zero_count = 0
    for pair in pairs:
        ec = external_context_vector(pair.context, source, embeddings, stopwords)
        if ec.is_zero():
            zero_count += 1
        elif scale:
            ec = scale_external_context(ec, rng)
        records.append((pair.id, ec))
    write_ec_records(out_path, records)
    diagnostics = None
    if len(records) >= 2:
        diagnostics = knowledge_diagnostics([ec for _, ec in records])
    return PrecomputeStats(len(records), zero_count, diagnostics)


@dataclass
class EncodedExample:
    pair: DialoguePair
    context_ids: list
    response_ids: list
    ec: ExternalContextVector | None


def encode_examples(pairs, vocab, ec_map=None, need_ec=False) -> list[EncodedExample]:
    """Map pairs to id space; attach ec records when the mode needs them."""
    out = []
    for pair in pairs:
        ec = None
        if ec_map is not None:
            ec = ec_map.get(pair.id)
        if need_ec and ec is None:
            raise InputError(f"no external context record for pair {pair.id!r}")
        out.append(
            EncodedExample(pair, vocab.encode(pair.context), vocab.encode(pair.response), ec)
        )
    return out


@dataclass
class TrainOptions:
    epochs: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_dir: object = None
    max_gen_len: int = 20


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: MetricsLog
    train_pairs: list
    val_pairs: list


def train(pairs, vocab, cfg: ModelConfig, options: TrainOptions, ec_map=None,
          resume: Checkpoint | None = None) -> TrainResult:
    """Per-example (batch size 1) teacher-forced Adam training in seeded
    shuffled order, validating each epoch on the stable 90/10 id-hash split.

    Resuming from a checkpoint continues the rng stream, step count, and
    moments, so an interrupted run is bitwise identical to an uninterrupted
    one.
    """
    from .evaluation import corpus_bleu4, perplexity  # cycle-free at call time

    check_unique_ids(pairs)
    need_ec = cfg.mode != "vanilla"
    train_split, val_split = split_pairs(pairs)
    if not train_split:
        raise InputError("training split is empty")
    train_examples = encode_examples(train_split, vocab, ec_map, need_ec)
    val_examples = encode_examples(val_split, vocab, ec_map, need_ec)

    if resume is not None:
        if resume.cfg != cfg:
            raise ContractError("resume checkpoint was trained under a different config")
        params = resume.params
        adam = resume.adam
        step = resume.step
        rng = RngState.from_state(resume.rng_state)
    else:
        rng = RngState(options.seed)
        params = init_params(cfg, rng)
        adam = AdamState.zeros_like(params)
        step = 0

    hyper = AdamHyper(options.lr, options.beta1, options.beta2, options.adam_eps)
    metrics = MetricsLog()
    ckpt_dir = Path(options.checkpoint_dir) if options.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    start_epoch = step // len(train_examples)
    for epoch in range(start_epoch + 1, start_epoch + options.epochs + 1):
        for idx in rng.permutation(len(train_examples)):
            ex = train_examples[idx]
            breakdown, caches = forward_losses(
                params, ex.context_ids, ex.response_ids, ex.ec, cfg
            )
            grads = backward(params, caches, cfg)
            params, adam = adam_step(params, grads, adam, hyper)
            step += 1
            metrics.add_step(step, breakdown)
        if val_examples:
            val_ppl = perplexity(params, val_examples, cfg)
            val_bleu = corpus_bleu4(params, val_examples, cfg, vocab, options.max_gen_len)
        else:
            val_ppl = float("nan")
            val_bleu = float("nan")
        metrics.add_epoch(epoch, val_ppl, val_bleu)
        log.info("epoch %d: val_ppl=%.4f val_bleu4=%.4f", epoch, val_ppl, val_bleu)
        if ckpt_dir:
            ckpt = Checkpoint(cfg, params, adam, step, rng.get_state())
            save_checkpoint(ckpt, ckpt_dir / f"epoch_{epoch:04d}.xed")

    final = Checkpoint(cfg, params, adam, step, rng.get_state())
    return TrainResult(final, metrics, train_split, val_split)
