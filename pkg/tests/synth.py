"""Synthetic knowledge-grounded corpora for tests.

Every task pairs an entity token in the context with a value token in the
response through a triple store, so the correct response is a deterministic
function of the retrieved knowledge: the setup where an external context
vector should pay off and its zero-vector ablation should collapse.
"""

from dataclasses import dataclass

import numpy as np

from exted.corpus import DialoguePair
from exted.knowledge import NellSource
from exted.text import EmbeddingTable, StopwordList, Vocabulary, build_vocab


@dataclass
class SyntheticTask:
    pairs: list
    kb: NellSource
    embeddings: EmbeddingTable
    stopwords: StopwordList
    vocab: Vocabulary


STOPWORDS = ["the", "a", "about", "me", "of", "please"]


def build_task(
    n_entities: int,
    n_pairs: int,
    ec_dim: int,
    seed: int,
    n_fillers: int = 12,
    ctx_fillers: tuple = (2, 4),
    response_tail: object = None,
    n_common: int = 0,
    n_decoys: int = 0,
) -> SyntheticTask:
    """Context = fillers/stopwords with one entity token at a random slot;
    response = the entity's value token (plus an optional fixed tail).

    n_common > 0 adds that many shared descriptor tokens to every entity's
    knowledge, so the averaged vectors cluster around a common mean: the
    low-spread regime where the external signal is easy to ignore.
    n_decoys > 0 mixes entity-shaped tokens with no knowledge behind them
    into the filler pool, so telling real mentions apart is easy to
    memorize on the training pairs but hard to generalize, while retrieval
    is unaffected.
    """
    rng = np.random.default_rng(seed)
    entities = [f"ent{i:03d}" for i in range(n_entities)]
    decoys = [f"ent{n_entities + i:03d}" for i in range(n_decoys)]
    values = [f"val{i:03d}" for i in range(n_entities)]
    commons = [f"common{i:02d}" for i in range(n_common)]
    assignment = rng.permutation(n_entities)

    kb = NellSource()
    for i, ent in enumerate(entities):
        kb.add_triple(ent, "hasvalue", values[assignment[i]])
        for c in commons:
            kb.add_triple(ent, "desc", c)

    embeddings = EmbeddingTable(ec_dim)
    for tok in values + commons:
        embeddings.add(tok, rng.standard_normal(ec_dim))

    fillers = [f"word{i:02d}" for i in range(n_fillers)]
    pool = fillers + STOPWORDS + decoys
    if isinstance(response_tail, str):
        response_tail = [response_tail]
    pairs = []
    for k in range(n_pairs):
        ent = entities[k % n_entities]
        n_ctx = int(rng.integers(ctx_fillers[0], ctx_fillers[1] + 1))
        ctx = [pool[int(rng.integers(0, len(pool)))] for _ in range(n_ctx)]
        ctx.insert(int(rng.integers(0, len(ctx) + 1)), ent)
        resp = [values[assignment[k % n_entities]]]
        if response_tail:
            resp.extend(response_tail)
        pairs.append(DialoguePair(f"p{k:05d}", ctx, resp))

    vocab = build_vocab(pairs, max_size=5000, min_count=1)
    return SyntheticTask(pairs, kb, embeddings, stopwords=StopwordList(STOPWORDS), vocab=vocab)


def toy_overfit_task(seed: int = 0) -> SyntheticTask:
    """32 pairs over a 60-token vocabulary (4 reserved + 56 content)."""
    task = build_task(
        n_entities=20,
        n_pairs=32,
        ec_dim=8,
        seed=seed,
        n_fillers=9,
        ctx_fillers=(2, 3),
        response_tail="ok",
    )
    # content tokens: 20 entities + 20 values + 9 fillers + 6 stopwords + "ok"
    assert len(task.vocab) == 60, len(task.vocab)
    return task


def corpus_jsonl(pairs) -> str:
    """Render pairs as the corpus file format."""
    import json

    lines = []
    for p in pairs:
        lines.append(
            json.dumps({"id": p.id, "context": " ".join(p.context), "response": " ".join(p.response)})
        )
    return "\n".join(lines) + "\n"


def kb_tsv(kb: NellSource) -> str:
    lines = []
    for entity, tokens in kb.values.items():
        for tok in tokens:
            lines.append(f"{entity}\thasvalue\t{tok}")
    return "\n".join(lines) + "\n"


def embeddings_txt(table: EmbeddingTable) -> str:
    lines = []
    for tok, vec in table.vectors.items():
        lines.append(tok + " " + " ".join(repr(float(x)) for x in vec))
    return "\n".join(lines) + "\n"
