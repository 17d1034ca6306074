"""Behavioural checks on the synthetic corpus: belief recovery and query steering."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import DecodeConfig
from .data import SummarizationExample, SyntheticDocument, query_variants
from .model import Summarizer
from .rouge import posterior_auc, rouge_n
from .trainer import unit_mask


def mean_auc(model: Summarizer, examples: Sequence[SummarizationExample], batch_size: int = 32) -> float:
    """Mean infer-mode posterior AUC against the examples' ground-truth masks."""
    aucs = []
    for start in range(0, len(examples), batch_size):
        chunk = [ex for ex in examples[start:start + batch_size] if ex.mask is not None]
        if not chunk:
            continue
        docs = [model.tokenize(ex.document) for ex in chunk]
        _, beliefs = model.infer_beliefs(docs)
        for ex, doc, belief in zip(chunk, docs, beliefs):
            gold = unit_mask(ex.mask, doc)
            if 0 < gold.sum() < len(gold):
                aucs.append(posterior_auc(belief, gold))
    if not aucs:
        raise ValueError("no example has a two-class ground-truth mask")
    return float(np.mean(aucs))


@dataclass
class SteeringResult:
    calibrated: float     # mean ROUGE-1 F1 of query-calibrated output vs the query reference
    uncalibrated: float   # same reference, output generated without the query
    n: int

    @property
    def gain(self) -> float:
        return self.calibrated - self.uncalibrated


def query_steering(model: Summarizer, docs: Sequence[SyntheticDocument], queries_per_doc: int = 2,
                   k: int = 1, seed: int = 0, decode: DecodeConfig | None = None,
                   batch_size: int = 32) -> SteeringResult:
    """ROUGE-1 of calibrated vs uncalibrated generation against query-specific references."""
    rng = np.random.default_rng(seed)
    cases = [q for d in docs for q in query_variants(d, k, rng, queries_per_doc)]
    cal, unc = [], []
    generic_cache: dict[str, str] = {}
    for start in range(0, len(cases), batch_size):
        chunk = cases[start:start + batch_size]
        seqs = [model.tokenize(c.document) for c in chunk]
        qs = [model.tokenize(c.query) for c in chunk]
        outs = model.generate_ids(seqs, qs, decode)
        todo = [i for i, c in enumerate(chunk) if c.document not in generic_cache]
        if todo:
            gen = model.generate_ids([seqs[i] for i in todo], None, decode)
            for i, ids in zip(todo, gen):
                generic_cache[chunk[i].document] = model.detokenize(ids)
        for c, ids in zip(chunk, outs):
            cal.append(rouge_n(model.detokenize(ids), c.summary, 1).f1)
            unc.append(rouge_n(generic_cache[c.document], c.summary, 1).f1)
    return SteeringResult(float(np.mean(cal)), float(np.mean(unc)), len(cases))
