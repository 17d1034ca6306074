from __future__ import annotations

import numpy as np
from hypothesis import given, settings, strategies as st

from conftest import brute_force_lcs
from latentquery.bpe import BpeSequence, encode, train_bpe
from latentquery.weak_labels import (WeakLabels, annotate, diff_report, lcs_align, lcs_char, lcs_positions,
                                     lcs_word, project_labels)


def seq(ids):
    return BpeSequence(tuple(ids), tuple(str(i) for i in ids), tuple(range(len(ids))))


def test_empty_target_gives_all_zero():
    assert lcs_align(seq([1, 2]), seq([])).labels == (0, 0)


def test_identical_sequences_give_all_ones():
    assert lcs_align(seq([3, 1, 3]), seq([3, 1, 3])).labels == (1, 1, 1)


def test_earliest_embedding_example():
    a, b, c = 0, 1, 2
    assert lcs_align(seq([a, b, c, b]), seq([b, b])).labels == (0, 1, 0, 1)


@settings(max_examples=400, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=10), st.lists(st.integers(0, 3), max_size=10))
def test_matches_brute_force_oracle(doc, target):
    assert list(lcs_positions(doc, target)) == brute_force_lcs(doc, target)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=10), st.lists(st.integers(0, 3), max_size=10))
def test_swapping_sides_keeps_length(doc, target):
    assert lcs_align(seq(doc), seq(target)).positive_count == lcs_align(seq(target), seq(doc)).positive_count


def test_word_baseline_misses_subword_match():
    doc = "will ship you 6 pounds of Boston-area snow".split()
    summary = "A man in suburban Boston is selling snow".split()
    labels = lcs_word(doc, summary).labels
    assert labels[doc.index("Boston-area")] == 0


def test_projection_any_positive_rule():
    s = BpeSequence((1, 2, 3, 4), ("▁ab", "c", "d", "▁e"), (0, 0, 0, 1), True)
    assert project_labels(WeakLabels((0, 1, 0, 0)), s) == [1, 0]
    assert project_labels(WeakLabels((0, 0, 0, 0)), s) == [0, 0]


def test_char_baseline_marks_substring_words():
    labels = lcs_char(["Real", "de", "Madrid"], ["slump", "to", "defeat"]).labels
    assert labels == (0, 1, 0)


def test_annotate_and_diff_rows():
    table = train_bpe(["Boston Boston Boston snow snow", "area"], 40)
    row = annotate("Boston-area snow", "suburban Boston snow", table)
    assert len(row["labels"]) == len(row["doc_units"])
    marked = [u for u, y in zip(row["doc_units"], row["labels"]) if y]
    assert marked == ["\u2581Boston", "\u2581snow"]
    diffs = diff_report("Boston-area snow", "suburban Boston snow", table)
    assert [(d["word"], d["type"]) for d in diffs] == [("Boston-area", "II")]
