from __future__ import annotations

import json
import logging

import numpy as np
import pytest

from latentquery.bpe import encode
from latentquery.data import (DataError, SummarizationExample, SyntheticSpec, generate_documents,
                              generate_synthetic, load_cluster_dir, load_cluster_jsonl, load_corpus, load_jsonl,
                              query_variants, spec_from_dict, spec_to_dict, validate_example, write_corpus)
from latentquery.nn import ConfigError
from latentquery.trainer import build_tokenizer, unit_mask
from latentquery.weak_labels import lcs_align


def test_jsonl_round_trip(tmp_path):
    rows = [SummarizationExample("a", "doc one", "sum", "q", [1, 0]), SummarizationExample("b", "doc two")]
    write_corpus(tmp_path / "c.jsonl", rows)
    assert load_jsonl(tmp_path / "c.jsonl") == rows


def test_missing_query_field_is_none(tmp_path):
    (tmp_path / "c.jsonl").write_text(json.dumps({"id": 1, "document": "d", "summary": "s"}) + "\n")
    assert load_jsonl(tmp_path / "c.jsonl")[0].query is None


def test_empty_file_warns(tmp_path, caplog):
    (tmp_path / "e.jsonl").write_text("")
    with caplog.at_level(logging.WARNING):
        assert load_jsonl(tmp_path / "e.jsonl") == []
    assert "no examples" in caplog.text


def test_malformed_lines_skipped_with_location(tmp_path, caplog):
    p = tmp_path / "m.jsonl"
    p.write_text('{"id": 1, "document": "ok"}\n{not json\n{"id": 3}\n')
    with caplog.at_level(logging.WARNING):
        rows = load_jsonl(p)
    assert [r.id for r in rows] == ["1"]
    assert "m.jsonl:2" in caplog.text and "m.jsonl:3" in caplog.text
    with pytest.raises(DataError, match="m.jsonl:2"):
        load_jsonl(p, strict=True)


def test_invalid_utf8_is_a_data_error(tmp_path):
    (tmp_path / "b.jsonl").write_bytes(b'{"document": "\xff"}\n')
    with pytest.raises(DataError, match="UTF-8"):
        load_jsonl(tmp_path / "b.jsonl")


def test_missing_path_and_bad_format(tmp_path):
    with pytest.raises(DataError):
        load_corpus(tmp_path / "nope.jsonl")
    (tmp_path / "x").write_text("")
    with pytest.raises(DataError):
        load_corpus(tmp_path / "x", "xml")


def test_cluster_loaders(tmp_path):
    c = tmp_path / "clusters" / "c1"
    c.mkdir(parents=True)
    (c / "d1.txt").write_text("first doc")
    (c / "d2.txt").write_text("second doc")
    (c / "query.txt").write_text("what?\n")
    got = load_cluster_dir(tmp_path / "clusters")
    assert got[0].documents == ["first doc", "second doc"] and got[0].query == "what?"
    (tmp_path / "c.jsonl").write_text('{"id": "x", "documents": ["a", "b"], "query": "q"}\n{"id": "y"}\n')
    assert [r.id for r in load_cluster_jsonl(tmp_path / "c.jsonl")] == ["x"]


def test_validation_rules():
    validate_example(SummarizationExample("a", "d", "s"))
    validate_example(SummarizationExample("a", "d"), training=False)
    with pytest.raises(DataError):
        validate_example(SummarizationExample("a", "d", "  "))
    with pytest.raises(DataError):
        validate_example(SummarizationExample("a", " ", "s"))


def test_synthetic_is_deterministic():
    spec = SyntheticSpec(seed=4)
    assert generate_synthetic(spec, 50) == generate_synthetic(spec, 50)
    assert generate_synthetic(spec, 50, "train") != generate_synthetic(spec, 50, "test")


def test_spec_dict_round_trip():
    spec = SyntheticSpec(doc_length=(30, 44), seed=2)
    assert spec_from_dict(json.loads(json.dumps(spec_to_dict(spec)))) == spec


@pytest.mark.parametrize("kw", [dict(doc_length=(8, 10)), dict(span_length=(3, 2)),
                                dict(summary_spans=(0, 9)), dict(n_key_spans=5)])
def test_infeasible_spec_raises(kw):
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(**kw), 3)


def test_no_summary_spans_gives_rejected_rows():
    rows = generate_synthetic(SyntheticSpec(summary_spans=(0, 0)), 3)
    for r in rows:
        with pytest.raises(DataError):
            validate_example(r)


def test_document_structure():
    spec = SyntheticSpec(seed=1)
    for d in generate_documents(spec, 100):
        assert spec.doc_length[0] <= len(d.words) <= spec.doc_length[1]
        assert len(d.spans) == spec.n_spans and len(d.key_spans) == spec.n_key_spans
        assert len(d.mask) == len(d.words)
        assert d.summary == " ".join(d.span_text(i) for i in d.summary_span_idx)
        assert sum(d.mask) == sum(len(d.span_text(i).split()) for i in d.summary_span_idx)


def test_query_variants_pick_distinct_non_key_spans():
    rng = np.random.default_rng(0)
    d = generate_documents(SyntheticSpec(), 1)[0]
    qs = query_variants(d, 1, rng, count=2)
    assert len({q.query for q in qs}) == 2
    for q in qs:
        assert q.query not in {d.spans[i][2] for i in d.key_spans}
        assert q.summary in d.document


def test_subword_alignment_recovers_copied_spans():
    rows = generate_synthetic(SyntheticSpec(seed=3), 1000)
    table = build_tokenizer(rows, 400)
    hit = total = 0
    for r in rows:
        doc = encode(r.document, table, prefix_space=True)
        labels = np.asarray(lcs_align(doc, encode(r.summary, table, prefix_space=True)).labels)
        gold = unit_mask(r.mask, doc).astype(bool)
        hit += int(labels[gold].sum())
        total += int(gold.sum())
    assert hit / total >= 0.95
