"""ROUGE-1/2/L/SU4 F-measures and the posterior AUC diagnostic.

House tokenization: lowercase, split on whitespace, strip punctuation from
each token and drop tokens that become empty.  No stemming and no stopword
list, so absolute numbers are not comparable with the perl toolkit.
"""
from __future__ import annotations

import csv
import string
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .kernels import lcs_length, skip_bigram_codes

VARIANTS = ("R1", "R2", "RL", "RSU4")
SU4_MAX_SKIP = 4  # intervening words allowed between the two words of a pair
_PUNCT = str.maketrans("", "", string.punctuation)


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    variant: str = "R1"

    @classmethod
    def from_counts(cls, overlap: float, n_cand: float, n_ref: float, variant: str) -> "RougeScore":
        if n_cand <= 0 or n_ref <= 0:
            return cls(0.0, 0.0, 0.0, variant)
        p, r = overlap / n_cand, overlap / n_ref
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f, variant)


def tokenize(text: str) -> list[str]:
    out = []
    for tok in text.lower().split():
        tok = tok.translate(_PUNCT)
        if tok:
            out.append(tok)
    return out


def _words(x) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def _clipped(a: Counter, b: Counter) -> int:
    return sum(min(c, b[k]) for k, c in a.items() if k in b)


def rouge_n(candidate, reference, n: int = 1) -> RougeScore:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    c, r = _ngrams(_words(candidate), n), _ngrams(_words(reference), n)
    return RougeScore.from_counts(_clipped(c, r), sum(c.values()), sum(r.values()), f"R{n}")


def rouge_l(candidate, reference) -> RougeScore:
    c, r = _words(candidate), _words(reference)
    if not c or not r:
        return RougeScore(0.0, 0.0, 0.0, "RL")
    vocab: dict[str, int] = {}
    ci = [vocab.setdefault(w, len(vocab)) for w in c]
    ri = [vocab.setdefault(w, len(vocab)) for w in r]
    return RougeScore.from_counts(lcs_length(ci, ri), len(c), len(r), "RL")


def su4_units(words: Sequence[str], vocab: dict[str, int]) -> Counter:
    """Multiset of unigrams plus skip-bigrams with at most four words between."""
    ids = np.asarray([vocab.setdefault(w, len(vocab)) for w in words], dtype=np.int64)
    units: Counter = Counter(("u", int(i)) for i in ids)
    base = 1 << 24
    if len(vocab) >= base:
        raise ValueError("vocabulary too large for skip-bigram codes")
    units.update(("b", int(code)) for code in skip_bigram_codes(ids, SU4_MAX_SKIP, base))
    return units


def rouge_su4(candidate, reference) -> RougeScore:
    c, r = _words(candidate), _words(reference)
    if not c or not r:
        return RougeScore(0.0, 0.0, 0.0, "RSU4")
    vocab: dict[str, int] = {}
    cu, ru = su4_units(c, vocab), su4_units(r, vocab)
    return RougeScore.from_counts(_clipped(cu, ru), sum(cu.values()), sum(ru.values()), "RSU4")


_SCORERS = {
    "R1": lambda c, r: rouge_n(c, r, 1),
    "R2": lambda c, r: rouge_n(c, r, 2),
    "RL": rouge_l,
    "RSU4": rouge_su4,
}


def score(candidate, references, variant: str = "R1") -> RougeScore:
    """Score against one reference or the best of several (max F1)."""
    if variant not in _SCORERS:
        raise ValueError(f"unknown ROUGE variant {variant!r}; choose from {', '.join(VARIANTS)}")
    refs = [references] if isinstance(references, str) else list(references)
    if not refs:
        raise ValueError("no reference given")
    return max((_SCORERS[variant](candidate, r) for r in refs), key=lambda s: s.f1)


def evaluate_corpus(candidates: dict[str, str], references: dict[str, object],
                    variants: Iterable[str] = VARIANTS) -> tuple[list[dict], dict[str, dict]]:
    """Per-example rows and corpus means, keyed by variant."""
    variants = list(variants)
    missing = sorted(set(candidates) - set(references))
    if missing:
        raise KeyError(f"no reference for example(s): {', '.join(missing[:5])}")
    rows = []
    for ex_id in sorted(candidates):
        for v in variants:
            s = score(candidates[ex_id], references[ex_id], v)
            rows.append(dict(example_id=ex_id, variant=v, precision=s.precision, recall=s.recall, f1=s.f1))
    means = {}
    for v in variants:
        sel = [r for r in rows if r["variant"] == v]
        means[v] = {k: float(np.mean([r[k] for r in sel])) if sel else 0.0 for k in ("precision", "recall", "f1")}
    return rows, means


def write_csv(fh, rows: list[dict], means: dict[str, dict]) -> None:
    w = csv.writer(fh)
    w.writerow(["example_id", "variant", "precision", "recall", "f1"])
    for r in rows:
        w.writerow([r["example_id"], r["variant"], f"{r['precision']:.6f}", f"{r['recall']:.6f}", f"{r['f1']:.6f}"])
    for v, m in means.items():
        w.writerow(["__mean__", v, f"{m['precision']:.6f}", f"{m['recall']:.6f}", f"{m['f1']:.6f}"])


# ---------------------------------------------------------------------------
# latent query diagnostics
# ---------------------------------------------------------------------------


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    xs = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def posterior_auc(belief, gold_mask) -> float:
    """ROC area of ``belief`` against a binary mask (Mann-Whitney, ties averaged)."""
    probs = belief.numpy() if hasattr(belief, "numpy") else np.asarray(belief)
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    gold = np.asarray(gold_mask).reshape(-1).astype(bool)
    if probs.shape != gold.shape:
        raise ValueError(f"belief covers {probs.size} units but mask has {gold.size}")
    n_pos = int(gold.sum())
    n_neg = gold.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined for a single-class mask")
    ranks = _average_ranks(probs)
    return float((ranks[gold].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
