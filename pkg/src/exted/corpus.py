"""Dialogue corpus loading and deterministic train/validation splitting."""

import hashlib
import json
import logging
from dataclasses import dataclass

from .errors import DataFormatError, InputError
from .text import tokenize

log = logging.getLogger("exted.corpus")


@dataclass
class DialoguePair:
    """One (context, response) training example, tokenized."""

    id: str
    context: list[str]
    response: list[str]
    ec: object = None  # optional ExternalContextVector, filled by callers

    def __post_init__(self):
        if not self.context or not self.response:
            raise InputError(f"pair {self.id!r} has an empty context or response")


def load_corpus(path) -> list[DialoguePair]:
    """Read a JSON-lines corpus of {"id", "context", "response"} objects.

    Pairs whose context or response tokenizes to nothing are dropped with a
    counted warning; malformed JSON is an error naming the line.
    """
    pairs = []
    dropped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if not isinstance(obj, dict) or not {"id", "context", "response"} <= set(obj):
                raise DataFormatError(
                    f"{path}:{lineno}: expected an object with id/context/response"
                )
            context = tokenize(str(obj["context"]))
            response = tokenize(str(obj["response"]))
            if not context or not response:
                dropped += 1
                continue
            pairs.append(DialoguePair(str(obj["id"]), context, response))
    if dropped:
        log.warning("dropped %d pairs with empty context or response", dropped)
    return pairs


def check_unique_ids(pairs) -> None:
    seen = set()
    for pair in pairs:
        if pair.id in seen:
            raise InputError(f"duplicate pair id {pair.id!r}")
        seen.add(pair.id)


def validation_bucket(pair_id: str) -> int:
    """Stable 0..9 bucket from the pair id (sha1, not the process hash)."""
    digest = hashlib.sha1(pair_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % 10


def split_pairs(pairs) -> tuple[list[DialoguePair], list[DialoguePair]]:
    """Deterministic 90/10 train/validation split by id hash."""
    train = [p for p in pairs if validation_bucket(p.id) != 0]
    val = [p for p in pairs if validation_bucket(p.id) == 0]
    return train, val
