"""Weak query annotation by longest-common-subsequence alignment.

``lcs_align`` works on BPE unit ids.  ``lcs_word`` and ``lcs_char`` are the
word-granularity baselines used to show the two failure modes of aligning at
the wrong granularity: missed sub-word matches (``Boston`` inside
``Boston-area``) and spurious character matches (``de`` inside ``defeat``).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .bpe import BpeInvariantError, BpeSequence, MergeTable, encode


@dataclass(frozen=True)
class WeakLabels:
    labels: tuple[int, ...]

    def __post_init__(self):
        if any(v not in (0, 1) for v in self.labels):
            raise ValueError("weak labels must be 0 or 1")

    @property
    def positive_count(self) -> int:
        return int(sum(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def as_array(self, dtype=np.float32) -> np.ndarray:
        return np.asarray(self.labels, dtype=dtype)


def _labels_from_positions(n: int, positions) -> WeakLabels:
    out = [0] * n
    for p in positions:
        out[int(p)] = 1
    return WeakLabels(tuple(out))


def lcs_positions(doc_ids: Sequence[int], target_ids: Sequence[int]) -> np.ndarray:
    """Document positions of the earliest maximal common subsequence."""
    if len(doc_ids) == 0 or len(target_ids) == 0:
        return np.zeros(0, dtype=np.int64)
    pos_doc, _ = kernels.lcs_earliest(doc_ids, target_ids)
    return pos_doc


def lcs_align(doc: BpeSequence, target: BpeSequence) -> WeakLabels:
    """Label document units lying on the earliest LCS with ``target``."""
    return _labels_from_positions(len(doc), lcs_positions(doc.ids, target.ids))


def _intern(*seqs):
    vocab: dict = {}
    return [[vocab.setdefault(w, len(vocab)) for w in s] for s in seqs]


def lcs_word(doc_words: Sequence[str], summary_words: Sequence[str]) -> WeakLabels:
    """Word-level LCS baseline (exact word equality)."""
    d, s = _intern(doc_words, summary_words)
    return _labels_from_positions(len(d), lcs_positions(d, s))


def _lcs_general(n: int, m: int, match: Callable[[int, int], bool]) -> list[int]:
    # Same earliest-embedding walk as the kernel, for an arbitrary match
    # predicate.  Only used by the small character baseline.
    table = np.zeros((n + 1, m + 1), dtype=np.int32)
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            table[i, j] = table[i + 1, j + 1] + 1 if match(i, j) else max(table[i + 1, j], table[i, j + 1])
    out = []
    i = j = 0
    r = int(table[0, 0])
    while r > 0:
        found = False
        for p in range(i, n):
            for q in range(j, m):
                if match(p, q):
                    if table[p + 1, q + 1] == r - 1:
                        found = True
                    break
            if found:
                out.append(p)
                i, j = p + 1, q + 1
                r -= 1
                break
    return out


def lcs_char(doc_words: Sequence[str], summary_words: Sequence[str]) -> WeakLabels:
    """Character-granularity baseline: a document word matches a summary
    word when it occurs inside it as a character string."""
    def match(i, j):
        w = doc_words[i]
        return bool(w) and w in summary_words[j]

    return _labels_from_positions(len(doc_words), _lcs_general(len(doc_words), len(summary_words), match))


def project_labels(labels: WeakLabels, seq: BpeSequence) -> list[int]:
    """Word-level labels: a word is positive iff any of its units is."""
    if len(labels) != len(seq):
        raise BpeInvariantError(f"labels cover {len(labels)} units but sequence has {len(seq)}")
    if not len(seq):
        return []
    out = [0] * (max(seq.word_index) + 1)
    for lab, w in zip(labels.labels, seq.word_index):
        if lab:
            out[w] = 1
    return out


# ---------------------------------------------------------------------------
# corpus-level outputs
# ---------------------------------------------------------------------------


def annotate(document: str, summary: str, table: MergeTable) -> dict:
    doc = encode(document, table, prefix_space=True)
    summ = encode(summary, table, prefix_space=True)
    labels = lcs_align(doc, summ)
    return {"doc_units": list(doc.surfaces), "labels": list(labels.labels),
            "summary_units": list(summ.surfaces)}


def write_annotations(path, rows) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            n += 1
    return n


def diff_report(document: str, summary: str, table: MergeTable) -> list[dict]:
    """Words where the word-level baseline and BPE-LCS disagree.

    ``type`` is ``II`` when the baseline misses a word BPE-LCS marks
    (false negative of the baseline) and ``I`` when the baseline marks a word
    BPE-LCS leaves out.
    """
    doc_words = document.split()
    word = lcs_word(doc_words, summary.split()).labels
    doc = encode(document, table, prefix_space=True)
    bpe = project_labels(lcs_align(doc, encode(summary, table, prefix_space=True)), doc)
    rows = []
    for i, (w, a, b) in enumerate(zip(doc_words, word, bpe)):
        if a != b:
            rows.append({"position": i, "word": w, "word_lcs": a, "bpe_lcs": b,
                         "type": "II" if b and not a else "I"})
    return rows


def write_diff_tsv(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["example_id", "position", "word", "word_lcs", "bpe_lcs", "type"],
                                delimiter="\t")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
