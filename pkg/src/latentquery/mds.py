"""Multi-document query-focused summarization by generate-then-compose.

Documents are ranked by how often query units occur in them, summarized one
at a time with the cluster query, and the sentences are concatenated under a
token budget.  A sentence is dropped as repetitive when it matches an
accepted sentence after normalization or when its content-word unigram F1
against one reaches the threshold.
"""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .bpe import BpeSequence
from .rouge import tokenize

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 250
DEFAULT_THRESHOLD = 0.7
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")
# Function words ignored by the redundancy score; ranking uses no stopword list.
STOPWORDS = frozenset(
    "a an and are as at be by for from has have in is it its of on or that the this to was were will with".split()
)


@dataclass
class Cluster:
    documents: list[BpeSequence]
    query: BpeSequence
    budget_tokens: int = DEFAULT_BUDGET
    texts: list[str] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.documents:
            raise ValueError("a cluster needs at least one document")
        if self.budget_tokens <= 0:
            raise ValueError(f"budget must be positive, got {self.budget_tokens}")


def rank_documents(cluster: Cluster) -> list[int]:
    """Indices by descending count of document units that equal some query unit.

    Ties (and an empty query) keep the input order.
    """
    query_units = set(cluster.query.ids)
    scores = [sum(1 for u in doc.ids if u in query_units) for doc in cluster.documents]
    return sorted(range(len(scores)), key=lambda i: -scores[i])


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_END.split(text.strip()) if s.strip()]


def _normalize(sentence: str) -> str:
    return " ".join(tokenize(sentence))


def _content_f1(a: Sequence[str], b: Sequence[str]) -> float:
    ca = Counter(w for w in a if w not in STOPWORDS)
    cb = Counter(w for w in b if w not in STOPWORDS)
    if not ca or not cb:
        return 0.0
    overlap = sum((ca & cb).values())
    if overlap == 0:
        return 0.0
    p, r = overlap / sum(ca.values()), overlap / sum(cb.values())
    return 2 * p * r / (p + r)


def is_redundant(sentence: str, accepted: Sequence[str], threshold: float = DEFAULT_THRESHOLD) -> bool:
    norm = _normalize(sentence)
    words = norm.split()
    for other in accepted:
        other_norm = _normalize(other)
        if norm == other_norm or _content_f1(words, other_norm.split()) >= threshold:
            return True
    return False


def compose(summaries: Sequence[str], budget_tokens: int = DEFAULT_BUDGET,
            threshold: float = DEFAULT_THRESHOLD) -> str:
    """Concatenate per-document summaries, skipping repeats, within the budget.

    Budget is counted in whitespace tokens; the sentence that crosses it is cut
    at a word boundary.
    """
    accepted: list[str] = []
    used = 0
    for summary in summaries:
        for sentence in split_sentences(summary):
            if used >= budget_tokens:
                break
            if not _normalize(sentence) or is_redundant(sentence, accepted, threshold):
                continue
            words = sentence.split()
            room = budget_tokens - used
            if len(words) > room:
                words = words[:room]
            accepted.append(" ".join(words))
            used += len(words)
    return " ".join(accepted)


def iterative_summarize(cluster: Cluster, summarize_one: Callable[[int], str],
                        threshold: float = DEFAULT_THRESHOLD) -> str:
    """Summarize documents in rank order and compose the results.

    ``summarize_one(i)`` produces the query-focused summary of document
    ``i``; if it raises, that document is skipped with a warning.
    """
    outputs = []
    for i in rank_documents(cluster):
        try:
            outputs.append(summarize_one(i))
        except Exception as exc:  # one bad document must not sink the cluster
            log.warning("document %d skipped: %s", i, exc)
    return compose(outputs, cluster.budget_tokens, threshold)


def summarize_cluster(model, documents: Sequence[str], query: str, budget_tokens: int = DEFAULT_BUDGET,
                      decode=None, threshold: float = DEFAULT_THRESHOLD) -> str:
    """Tokenize a raw cluster with ``model``'s tokenizer and run :func:`iterative_summarize`."""
    docs = [model.tokenize(d) for d in documents]
    q = model.tokenize(query) if query else BpeSequence((), (), (), True)
    cluster = Cluster(docs, q, budget_tokens, list(documents))

    def one(i: int) -> str:
        return model.detokenize(model.generate_ids([docs[i]], [q if len(q) else None], decode)[0])

    return iterative_summarize(cluster, one, threshold)
