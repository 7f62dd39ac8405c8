"""Tokenization, vocabulary construction, pretrained word embeddings, and
the stopword list used by the knowledge retrieval loop."""

import json
import logging
import string
from collections import Counter
from importlib import resources

import numpy as np

from .errors import DataFormatError, InputError

log = logging.getLogger("exted.text")

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<sos>", "<eos>", "<unk>")

_PUNCT = set(string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and peel leading/trailing ASCII
    punctuation off each chunk into tokens of their own. Never yields an
    empty token; empty input gives an empty list."""
    tokens = []
    for chunk in text.lower().split():
        lead = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


class Vocabulary:
    """Dense token/id bijection with the four reserved ids PAD=0, SOS=1,
    EOS=2, UNK=3 pinned at the front."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            tokens = list(RESERVED_TOKENS) + list(tokens)
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise InputError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.encode_token(t) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"version": 1, "tokens": self.id_to_token}, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: not a vocabulary file: {exc}") from exc
        if not isinstance(payload, dict) or "tokens" not in payload:
            raise DataFormatError(f"{path}: missing 'tokens' key")
        return cls(payload["tokens"])


def build_vocab(pairs, max_size: int, min_count: int = 1) -> Vocabulary:
    """Most frequent corpus tokens with frequency >= min_count, ties broken
    lexicographically, truncated to max_size including the reserved ids."""
    if max_size < 5:
        raise InputError(f"max_size must be at least 5, got {max_size}")
    counts = Counter()
    for pair in pairs:
        counts.update(pair.context)
        counts.update(pair.response)
    eligible = [(tok, n) for tok, n in counts.items() if n >= min_count]
    eligible.sort(key=lambda item: (-item[1], item[0]))
    keep = [tok for tok, _ in eligible[: max_size - len(RESERVED_TOKENS)]]
    return Vocabulary(keep)


class EmbeddingTable:
    """token -> R^dim map of pretrained vectors (float64)."""

    def __init__(self, dim: int = 100):
        if dim <= 0:
            raise InputError(f"embedding dim must be positive, got {dim}")
        self.dim = dim
        self.vectors: dict[str, np.ndarray] = {}
        self.skipped_lines = 0  # set by load_embeddings

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def add(self, token: str, vector) -> None:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise InputError(f"vector for {token!r} has shape {v.shape}, want ({self.dim},)")
        self.vectors[token] = v

    def lookup(self, token: str):
        """Stored vector, or None when the token has no embedding."""
        return self.vectors.get(token)


def load_embeddings(path, dim: int = 100) -> EmbeddingTable:
    """Read a whitespace-separated embedding file: token then dim reals per
    line. Lines with the wrong arity or unparseable numbers are counted and
    skipped; more than half malformed means the file is the wrong format."""
    table = EmbeddingTable(dim)
    skipped = 0
    total = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            total += 1
            parts = line.split()
            if len(parts) != dim + 1:
                skipped += 1
                continue
            try:
                values = [float(p) for p in parts[1:]]
            except ValueError:
                skipped += 1
                continue
            table.add(parts[0], values)
    if total and skipped * 2 > total:
        raise DataFormatError(
            f"{path}: {skipped} of {total} lines malformed for dim={dim}"
        )
    if skipped:
        log.info("skipped %d malformed embedding lines in %s", skipped, path)
    table.skipped_lines = skipped
    return table


class StopwordList:
    """Case-insensitive stopword membership (tokens stored lowercased)."""

    def __init__(self, tokens):
        self.tokens = {t.strip().lower() for t in tokens if t.strip()}

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.tokens

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def load(cls, path) -> "StopwordList":
        with open(path, encoding="utf-8") as fh:
            return cls(fh.read().split("\n"))

    @classmethod
    def default(cls) -> "StopwordList":
        """The bundled ~175-word English list."""
        text = resources.files("exted.data").joinpath("stopwords_en.txt").read_text("utf-8")
        return cls(text.split("\n"))
