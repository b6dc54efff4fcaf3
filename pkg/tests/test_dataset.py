import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpquery.dataset import (
    Corpus,
    CorpusConfig,
    CorpusError,
    Example,
    OverlapStats,
    Provenance,
    generate_toy_corpus,
    load_corpus,
    normalize_text,
    overlap_report,
    save_corpus,
    split,
)


def _mini_corpus(n=10):
    return Corpus(
        [Example(f"q{i}", f"d{i}", f"query {i} about item{i}", f"document {i} text on item{i}") for i in range(n)]
    )


def test_toy_corpus_cardinality():
    cfg = CorpusConfig(n_docs=100, queries_per_doc=1, entity_vocab_size=100, seed=7)
    corpus = generate_toy_corpus(cfg)
    assert len(corpus) == 100


def test_toy_corpus_deterministic():
    cfg = CorpusConfig(n_docs=30, queries_per_doc=2, entity_vocab_size=40, seed=7)
    a, b = generate_toy_corpus(cfg), generate_toy_corpus(cfg)
    assert a.examples == b.examples


def test_toy_corpus_seed_changes_content():
    base = dict(n_docs=20, queries_per_doc=1, entity_vocab_size=30)
    a = generate_toy_corpus(CorpusConfig(seed=7, **base))
    b = generate_toy_corpus(CorpusConfig(seed=8, **base))
    assert any(x != y for x, y in zip(a.examples, b.examples))


def test_toy_corpus_single_relevant_doc_per_query():
    cfg = CorpusConfig(n_docs=50, queries_per_doc=2, entity_vocab_size=60, seed=1)
    corpus = generate_toy_corpus(cfg)
    # the entity named in each query appears in exactly one document
    docs = dict(corpus.unique_documents())
    for ex in corpus:
        entity = ex.query.split()[-1] if "founded" not in ex.query else ex.query.split()[2]
        holders = [d for d, text in docs.items() if entity in text.casefold()]
        assert holders == [ex.doc_id]


def test_toy_corpus_queries_reference_entities():
    cfg = CorpusConfig(n_docs=5, queries_per_doc=2, entity_vocab_size=10, seed=3)
    for ex in generate_toy_corpus(cfg):
        assert ex.query_id and ex.doc_id


def test_config_validation():
    with pytest.raises(CorpusError):
        CorpusConfig(n_docs=0)
    with pytest.raises(CorpusError):
        CorpusConfig(n_docs=10, entity_vocab_size=5)
    with pytest.raises(CorpusError):
        CorpusConfig(template_set="nope")
    with pytest.raises(CorpusError):
        CorpusConfig(queries_per_doc=99)


def test_corpus_rejects_duplicates():
    ex = Example("q1", "d1", "a", "b")
    with pytest.raises(CorpusError):
        Corpus([ex, Example("q1", "d1", "c", "d")])


def test_jsonl_round_trip(tmp_path):
    corpus = _mini_corpus(3)
    p = tmp_path / "c.jsonl"
    save_corpus(corpus, p)
    loaded = load_corpus(p)
    assert loaded.examples == corpus.examples
    assert loaded.provenance is Provenance.ORIGINAL


def test_jsonl_preserves_order(tmp_path):
    corpus = _mini_corpus(20)
    p = tmp_path / "c.jsonl"
    save_corpus(corpus, p)
    assert [e.query_id for e in load_corpus(p)] == [e.query_id for e in corpus]


def test_jsonl_missing_field_names_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    lines = [
        json.dumps({"query_id": "q1", "doc_id": "d1", "query": "a", "document": "b"}),
        json.dumps({"query_id": "q2", "doc_id": "d2", "query": "a"}),
    ]
    p.write_text("\n".join(lines))
    with pytest.raises(CorpusError, match=r":2:.*document"):
        load_corpus(p)


def test_jsonl_invalid_json_names_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"query_id": "q1", "doc_id": "d1", "query": "a", "document": "b"}\n{oops\n')
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus(p)


def test_jsonl_duplicate_pair_rejected(tmp_path):
    p = tmp_path / "dup.jsonl"
    rec = json.dumps({"query_id": "q1", "doc_id": "d1", "query": "a", "document": "b"})
    p.write_text(rec + "\n" + rec + "\n")
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(p)


def test_tsv_round_trip_with_embedded_tab(tmp_path):
    corpus = Corpus(
        [
            Example("q1", "d1", "plain query", "doc with\ttab inside"),
            Example("q2", "d2", "another", "clean doc"),
        ]
    )
    p = tmp_path / "c.tsv"
    save_corpus(corpus, p, fmt="tsv")
    loaded = load_corpus(p, fmt="tsv")
    assert loaded.examples == corpus.examples


def test_tsv_wrong_column_count(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("q1\td1\tonly three\n")
    with pytest.raises(CorpusError, match=":1:"):
        load_corpus(p, fmt="tsv")


def test_synthetic_provenance_round_trip(tmp_path):
    corpus = Corpus(_mini_corpus(2).examples, provenance=Provenance.SYNTHETIC)
    p = tmp_path / "syn.jsonl"
    save_corpus(corpus, p)
    assert load_corpus(p).provenance is Provenance.SYNTHETIC


def test_split_sizes_and_partition():
    corpus = _mini_corpus(100)
    train, evalset = split(corpus, 0.2, seed=5)
    assert (len(train), len(evalset)) == (80, 20)
    assert train.query_ids() | evalset.query_ids() == corpus.query_ids()
    assert not (train.query_ids() & evalset.query_ids())


def test_split_deterministic_and_seed_sensitive():
    corpus = _mini_corpus(60)
    t1, e1 = split(corpus, 0.25, seed=1)
    t2, e2 = split(corpus, 0.25, seed=1)
    t3, e3 = split(corpus, 0.25, seed=2)
    assert e1.query_ids() == e2.query_ids()
    assert len(e1) == len(e3)
    assert e1.query_ids() != e3.query_ids()


def test_split_too_small():
    with pytest.raises(CorpusError):
        split(_mini_corpus(2), 0.01, seed=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(10, 80), st.floats(0.1, 0.9), st.integers(0, 10_000))
def test_split_partition_property(n, frac, seed):
    corpus = _mini_corpus(n)
    train, evalset = split(corpus, frac, seed)
    assert not (train.query_ids() & evalset.query_ids())
    assert train.query_ids() | evalset.query_ids() == corpus.query_ids()
    assert abs(len(evalset) - n * frac) <= 1


def test_overlap_total():
    qs = _mini_corpus(10)
    ref = Corpus([Example(f"rq{i}", f"rd{i}", "x", ex.query) for i, ex in enumerate(qs)])
    stats = overlap_report(qs, ref, sample_size=10, trials=2, seed=0)
    assert stats.query_match_rate == 1.0


def test_overlap_disjoint():
    qs = _mini_corpus(10)
    ref = Corpus([Example("rq", "rd", "zzz", "completely unrelated words only")])
    stats = overlap_report(qs, ref, sample_size=10, trials=3, seed=0)
    assert stats.query_match_rate == 0.0
    assert stats.doc_match_rate == 0.0


def test_overlap_planted_fraction():
    examples = [
        Example(f"q{i}", f"d{i}", f"unique query number {i} token{i}", f"doc body {i}")
        for i in range(100)
    ]
    qs = Corpus(examples)
    planted = [ex.query for ex in examples[:10]]
    ref = Corpus(
        [Example(f"rq{i}", f"rd{i}", "x", f"some padding {q} trailing") for i, q in enumerate(planted)]
    )
    stats = overlap_report(qs, ref, sample_size=100, trials=1, seed=0)
    assert stats.query_match_rate == pytest.approx(0.10)


def test_overlap_reference_order_invariant():
    qs = _mini_corpus(10)
    docs = [Example(f"rq{i}", f"rd{i}", "x", f"document {i} text on item{i}") for i in range(10)]
    a = overlap_report(qs, Corpus(docs), 10, 2, seed=3)
    b = overlap_report(qs, Corpus(docs[::-1]), 10, 2, seed=3)
    assert (a.query_match_rate, a.doc_match_rate) == (b.query_match_rate, b.doc_match_rate)


def test_overlap_sample_too_large():
    qs = _mini_corpus(5)
    with pytest.raises(CorpusError):
        overlap_report(qs, qs, sample_size=6, trials=1, seed=0)


def test_normalize_text():
    assert normalize_text("  Foo\t BAR\nbaz ") == "foo bar baz"
