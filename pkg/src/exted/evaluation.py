"""Perplexity, sentence BLEU-4, and the multi-model comparison report."""

import math
from collections import Counter
from dataclasses import dataclass, replace

from .errors import InputError
from .model import ModelConfig, generate, sequence_nll
from .training import Checkpoint, encode_examples


def perplexity(params, examples, cfg: ModelConfig) -> float:
    """exp of the corpus mean per-token negative log-likelihood.

    Teacher-forced; every response token plus one EOS counts (responses are
    never padded, so there is no PAD to exclude). The external vector per
    example follows cfg.eval_ec_mode.
    """
    if not examples:
        raise InputError("perplexity of an empty corpus")
    total_nll = 0.0
    total_tokens = 0
    for ex in examples:
        nll, tokens = sequence_nll(params, ex.context_ids, ex.response_ids, ex.ec, cfg)
        total_nll += nll
        total_tokens += tokens
    return math.exp(total_nll / total_tokens)


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypothesis, reference) -> float:
    """Sentence BLEU-4: geometric mean of modified n-gram precisions for
    n = 1..4, add-one smoothed on numerator and denominator for n >= 2,
    times the brevity penalty exp(min(0, 1 - |ref| / |hyp|)).

    An empty hypothesis scores 0; so does one with no unigram overlap.
    """
    hypothesis = list(hypothesis)
    reference = list(reference)
    if not hypothesis:
        return 0.0
    product = 1.0
    for n in range(1, 5):
        hyp_counts = _ngram_counts(hypothesis, n)
        ref_counts = _ngram_counts(reference, n)
        candidates = sum(hyp_counts.values())
        matches = sum(min(count, ref_counts[gram]) for gram, count in hyp_counts.items())
        if n == 1:
            if matches == 0:
                return 0.0
            product *= matches / candidates
        else:
            product *= (matches + 1) / (candidates + 1)
    brevity = math.exp(min(0.0, 1.0 - len(reference) / len(hypothesis)))
    return brevity * product**0.25


def corpus_bleu4(params, examples, cfg: ModelConfig, vocab, max_len: int = 20) -> float:
    """Mean sentence BLEU-4 of greedy generations against the references,
    both sides in vocabulary token space (OOV folded to the unk token)."""
    if not examples:
        raise InputError("BLEU of an empty corpus")
    total = 0.0
    for ex in examples:
        hyp_ids = generate(params, ex.context_ids, max_len, cfg, ec_true=ex.ec)
        total += bleu4(vocab.decode(hyp_ids), vocab.decode(ex.response_ids))
    return total / len(examples)


@dataclass(frozen=True)
class ReportEntry:
    """One row request: a label, a checkpoint, and the ec mode to eval with
    (None keeps the checkpoint's own eval_ec_mode)."""

    label: str
    checkpoint: Checkpoint
    eval_ec_mode: str | None = None


def evaluate_report(entries, pairs, vocab, ec_map=None, max_len: int = 20) -> list[dict]:
    """Perplexity and corpus BLEU-4 per entry, on the given pairs.

    Oracle rows need an ec record for every pair; predicted/zero rows work
    without any. Row order follows the entries.
    """
    rows = []
    for entry in entries:
        cfg = entry.checkpoint.cfg
        if entry.eval_ec_mode is not None:
            cfg = replace(cfg, eval_ec_mode=entry.eval_ec_mode)
        need_ec = cfg.mode != "vanilla" and cfg.eval_ec_mode == "oracle"
        examples = encode_examples(pairs, vocab, ec_map, need_ec)
        rows.append(
            {
                "mode": entry.label,
                "ppl": perplexity(entry.checkpoint.params, examples, cfg),
                "bleu4": corpus_bleu4(entry.checkpoint.params, examples, cfg, vocab, max_len),
            }
        )
    return rows


def report_csv(rows) -> str:
    lines = ["mode,ppl,bleu4"]
    for row in rows:
        lines.append(f"{row['mode']},{row['ppl']!r},{row['bleu4']!r}")
    return "\n".join(lines) + "\n"
