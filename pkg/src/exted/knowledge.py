"""Offline knowledge snapshots and the external context vector pipeline.

A knowledge source maps a context token to a list of knowledge tokens
(Wikipedia summary words, or every value ever asserted for an entity in a
triple store). The external context vector of a dialogue context is the
average of the pretrained embeddings of all knowledge tokens retrieved for
its non-stopword tokens; an optional positive scalar drawn from N(4, 1)
rescales it to raise the spread of the vectors across a corpus.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataFormatError, InputError
from .numeric import RngState, gaussian_sample
from .text import EmbeddingTable, StopwordList, tokenize

log = logging.getLogger("exted.knowledge")


class WikiSummarySource:
    """title -> summary tokens, titles matched by exact lowercase string."""

    def __init__(self):
        self.summaries: dict[str, list[str]] = {}

    def __len__(self):
        return len(self.summaries)

    def add(self, title: str, summary_tokens: list[str]) -> None:
        self.summaries[title.lower()] = list(summary_tokens)

    def knowledge_tokens(self, token: str) -> list[str]:
        return self.summaries.get(token.lower(), [])

    @classmethod
    def load(cls, path) -> "WikiSummarySource":
        """JSON-lines snapshot: {"title": ..., "summary": ...} per line."""
        source = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataFormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
                if not isinstance(obj, dict) or "title" not in obj or "summary" not in obj:
                    raise DataFormatError(f"{path}:{lineno}: expected title/summary keys")
                source.add(str(obj["title"]), tokenize(str(obj["summary"])))
        return source


class NellSource:
    """entity -> concatenated value tokens from (entity, relation, value)
    triples, in file order; entities matched by exact lowercase string."""

    def __init__(self):
        self.values: dict[str, list[str]] = {}
        self.skipped_lines = 0

    def __len__(self):
        return len(self.values)

    def add_triple(self, entity: str, relation: str, value: str) -> None:
        self.values.setdefault(entity.lower(), []).extend(tokenize(value))

    def knowledge_tokens(self, token: str) -> list[str]:
        return self.values.get(token.lower(), [])

    @classmethod
    def load(cls, path) -> "NellSource":
        """Tab-separated snapshot: entity, relation, value per line. Lines
        with a column count other than 3 are skipped with a counted warning."""
        source = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    source.skipped_lines += 1
                    continue
                source.add_triple(*parts)
        if source.skipped_lines:
            log.warning("skipped %d malformed triple lines in %s", source.skipped_lines, path)
        return source


def wiki_summary_query(source: WikiSummarySource, token: str) -> list[str]:
    """Summary tokens for an exact lowercase title match, else []."""
    return source.knowledge_tokens(token)


def nell_values_for_entity(source: NellSource, token: str) -> list[str]:
    """All value tokens asserted for the entity, in file order, else []."""
    return source.knowledge_tokens(token)


@dataclass
class ExternalContextVector:
    """Fixed-length continuous embedding of retrieved knowledge."""

    values: np.ndarray
    n_ext_tokens: int
    scaled: bool = False
    scale_factor: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise InputError(f"ec values must be 1-D, got shape {self.values.shape}")
        if self.n_ext_tokens == 0 and (np.any(self.values != 0.0) or self.scaled):
            raise InputError("an ec with no contributing tokens must be the zero vector")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def is_zero(self) -> bool:
        return self.n_ext_tokens == 0


def external_context_vector(
    context: list[str],
    source,
    embeddings: EmbeddingTable,
    stopwords: StopwordList,
) -> ExternalContextVector:
    """Average the embeddings of every knowledge token retrieved for the
    non-stopword context tokens.

    Contributions are summed in a fixed order (context tokens sorted
    lexicographically, then retrieval order) so the result is independent of
    context token order, bit for bit. Retrieved tokens missing from the
    embedding table are skipped, not counted. A context with no embedded
    retrievals yields the zero vector with n_ext_tokens = 0 instead of the
    undefined 0/0 average.
    """
    total = np.zeros(embeddings.dim)
    count = 0
    for token in sorted(t for t in context if t not in stopwords):
        for knowledge_token in source.knowledge_tokens(token):
            vec = embeddings.lookup(knowledge_token)
            if vec is None:
                continue
            total = total + vec
            count += 1
    if count == 0:
        return ExternalContextVector(np.zeros(embeddings.dim), 0)
    return ExternalContextVector(total / count, count)


def scale_external_context(ec: ExternalContextVector, rng: RngState) -> ExternalContextVector:
    """Multiply a nonzero ec by one positive N(4, 1) draw (resampled until
    positive). Zero vectors pass through unchanged; rescaling an already
    scaled vector is a contract violation."""
    if ec.scaled:
        raise ContractError("external context vector is already scaled")
    if ec.is_zero():
        return ec
    s = gaussian_sample(rng, 4.0, 1.0)
    while s <= 0.0:
        s = gaussian_sample(rng, 4.0, 1.0)
    return ExternalContextVector(ec.values * s, ec.n_ext_tokens, scaled=True, scale_factor=s)


@dataclass(frozen=True)
class DiagnosticsReport:
    """Spread statistics of a set of ec vectors around their mean."""

    n_vectors: int
    mean_distance: float
    distance_variance: float


def knowledge_diagnostics(vectors: list[ExternalContextVector]) -> DiagnosticsReport:
    """Mean Euclidean distance of the vectors from their mean, and the
    population variance of those distances."""
    if len(vectors) < 2:
        raise InputError(f"need at least 2 vectors, got {len(vectors)}")
    stacked = np.stack([ec.values for ec in vectors])
    mu = stacked.mean(axis=0)
    distances = np.sqrt(((stacked - mu) ** 2).sum(axis=1))
    mean_d = float(distances.mean())
    var_d = float(((distances - mean_d) ** 2).mean())
    return DiagnosticsReport(len(vectors), mean_d, var_d)


def write_ec_records(path, records: list[tuple[str, ExternalContextVector]]) -> None:
    """JSON-lines ec file: {"id", "n_ext_tokens", "scale_factor", "ec"} per
    line, floats serialized at full round-trip precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for pair_id, ec in records:
            obj = {
                "id": pair_id,
                "n_ext_tokens": ec.n_ext_tokens,
                "scale_factor": ec.scale_factor,
                "ec": ec.values.tolist(),
            }
            fh.write(json.dumps(obj))
            fh.write("\n")


def read_ec_records(path) -> dict[str, ExternalContextVector]:
    """Load an ec file into an id -> vector map."""
    records: dict[str, ExternalContextVector] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            try:
                pair_id = str(obj["id"])
                n_ext = int(obj["n_ext_tokens"])
                scale = float(obj["scale_factor"])
                values = np.asarray(obj["ec"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad ec record: {exc}") from exc
            if pair_id in records:
                raise DataFormatError(f"{path}:{lineno}: duplicate id {pair_id!r}")
            if dim is None:
                dim = values.shape[0]
            elif values.shape[0] != dim:
                raise DataFormatError(
                    f"{path}:{lineno}: ec dim {values.shape[0]} != {dim}"
                )
            records[pair_id] = ExternalContextVector(
                values, n_ext, scaled=scale != 1.0, scale_factor=scale
            )
    return records
