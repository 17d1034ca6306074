from __future__ import annotations

import logging

import pytest
from hypothesis import given, settings, strategies as st

from latentquery.bpe import BpeSequence
from latentquery.mds import Cluster, compose, is_redundant, iterative_summarize, rank_documents, split_sentences


def seq(ids):
    return BpeSequence(tuple(ids), tuple(str(i) for i in ids), tuple(range(len(ids))))


def test_ranking_by_query_unit_hits():
    c = Cluster([seq([1, 2]), seq([3, 3, 3]), seq([3, 4, 9])], seq([3, 9]))
    assert rank_documents(c) == [1, 2, 0]


def test_ties_and_empty_query_keep_input_order():
    assert rank_documents(Cluster([seq([1]), seq([2]), seq([5])], seq([]))) == [0, 1, 2]
    assert rank_documents(Cluster([seq([1]), seq([7]), seq([1])], seq([1]))) == [0, 2, 1]


def test_cluster_validation():
    with pytest.raises(ValueError):
        Cluster([], seq([1]))
    with pytest.raises(ValueError):
        Cluster([seq([1])], seq([1]), budget_tokens=0)


def test_sentence_split():
    assert split_sentences("One two. Three?  Four!") == ["One two.", "Three?", "Four!"]


def test_redundancy():
    assert is_redundant("The storm hit Boston.", ["the storm hit boston"])
    assert is_redundant("Storm hits Boston harbour today.", ["A storm hits Boston harbour today!"])
    assert not is_redundant("Snow sales rose.", ["The storm hit Boston."])


def test_duplicate_documents_contribute_once():
    assert compose(["Snow fell in Boston.", "Snow fell in Boston."], 50) == "Snow fell in Boston."


def test_budget_truncates_at_word_boundary():
    assert compose(["one two three. four five six."], 4) == "one two three. four"


sentences = st.lists(st.text(alphabet="abcdefgh ", min_size=1, max_size=30).map(lambda s: s + "."), max_size=6)


@settings(max_examples=150, deadline=None)
@given(st.lists(sentences.map(" ".join), max_size=5), st.integers(1, 30))
def test_composed_summary_fits_budget(summaries, budget):
    assert len(compose(summaries, budget).split()) <= budget


def test_failing_document_is_skipped(caplog):
    c = Cluster([seq([1]), seq([2]), seq([3])], seq([]), budget_tokens=20)

    def one(i):
        if i == 1:
            raise RuntimeError("boom")
        return f"Document {i} talks about thing {i}."

    with caplog.at_level(logging.WARNING):
        out = iterative_summarize(c, one)
    assert out == "Document 0 talks about thing 0. Document 2 talks about thing 2."
    assert "document 1 skipped" in caplog.text
