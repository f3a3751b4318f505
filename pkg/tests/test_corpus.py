import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grtm.corpus import (
    Corpus,
    CorpusFormatError,
    Document,
    TrainPairSet,
    build_train_pairs,
    count_negative_candidates,
    load_corpus,
    load_linqs,
    parse_cites,
    parse_content,
    save_corpus,
    split_folds,
    write_cites,
    write_content,
)


def test_parse_content_line():
    docs, V, id_map = parse_content(io.StringIO("p1\t1\t0\t1\tNN\n"))
    assert V == 3
    assert docs[0].tokens.tolist() == [0, 2]
    assert docs[0].label == "NN"
    assert id_map == {"p1": 0}


def test_parse_content_keeps_file_order_and_skips_blank_lines():
    text = "z\t0\t1\tA\n\nb\t1\t1\tB\n"
    docs, V, id_map = parse_content(io.StringIO(text))
    assert [d.external_id for d in docs] == ["z", "b"]
    assert id_map == {"z": 0, "b": 1}
    assert docs[1].tokens.tolist() == [0, 1]


def test_parse_content_column_mismatch_reports_line():
    with pytest.raises(CorpusFormatError) as err:
        parse_content(io.StringIO("a\t1\t0\tX\nb\t1\tX\n"))
    assert err.value.line == 2


def test_parse_content_rejects_non_binary():
    with pytest.raises(CorpusFormatError):
        parse_content(io.StringIO("a\t2\t0\tX\n"))
    with pytest.raises(CorpusFormatError):
        parse_content(io.StringIO("a\tq\t0\tX\n"))


def test_parse_cites_orientation_and_counters():
    id_map = {"a": 0, "b": 1, "c": 2}
    text = "a\tb\nb\tc\nzz\ta\na\ta\na\tb\n"
    links, report = parse_cites(io.StringIO(text), id_map)
    # "cited citing" -> (citing, cited)
    assert links == {(1, 0), (2, 1)}
    assert (report.records, report.kept, report.unknown_id, report.self_link, report.duplicate) == (5, 2, 1, 1, 1)


def test_parse_cites_undirected_collapses_orientation():
    links, report = parse_cites(io.StringIO("a b\nb a\n"), {"a": 0, "b": 1}, directed=False)
    assert links == {(0, 1)}
    assert report.duplicate == 1


def test_parse_cites_malformed_line():
    with pytest.raises(CorpusFormatError) as err:
        parse_cites(io.StringIO("a b\na b c\n"), {"a": 0, "b": 1})
    assert err.value.line == 2


def test_corpus_invariants():
    with pytest.raises(CorpusFormatError):
        Corpus([Document("a", [5])], 3)
    with pytest.raises(CorpusFormatError):
        Corpus([Document("a", [0]), Document("b", [1])], 3, {(0, 0)})
    with pytest.raises(CorpusFormatError):
        Corpus([Document("a", [0])], 3, {(0, 4)})


def test_linqs_round_trip(tmp_path, tiny_corpus):
    content, cites = tmp_path / "x.content", tmp_path / "x.cites"
    with open(content, "w") as fh:
        write_content(tiny_corpus, fh)
    with open(cites, "w") as fh:
        write_cites(tiny_corpus, fh)
    back, report = load_linqs(str(content), str(cites))
    assert back.n_docs == tiny_corpus.n_docs
    assert back.links == tiny_corpus.links
    assert report.kept == len(tiny_corpus.links)
    for a, b in zip(back.docs, tiny_corpus.docs):
        # binary indicators: the round trip keeps the set of distinct words
        assert sorted(set(a.tokens.tolist())) == sorted(set(b.tokens.tolist()))


def test_cache_round_trip(tmp_path, tiny_corpus):
    path = tmp_path / "c.json"
    save_corpus(tiny_corpus, str(path))
    back = load_corpus(str(path))
    assert back.links == tiny_corpus.links
    assert back.directed == tiny_corpus.directed
    for a, b in zip(back.docs, tiny_corpus.docs):
        assert a.tokens.tolist() == b.tokens.tolist()
        assert (a.external_id, a.label) == (b.external_id, b.label)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 5), max_size=6), min_size=2, max_size=8), st.data())
def test_parse_serialise_round_trip_property(token_lists, data):
    docs = [Document(f"d{i}", sorted(set(t)), "L") for i, t in enumerate(token_lists)]
    n = len(docs)
    pairs = data.draw(st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda p: p[0] != p[1])))
    corpus = Corpus(docs, 6, pairs)
    c_buf, l_buf = io.StringIO(), io.StringIO()
    write_content(corpus, c_buf)
    write_cites(corpus, l_buf)
    docs2, V, id_map = parse_content(io.StringIO(c_buf.getvalue()))
    links2, _ = parse_cites(io.StringIO(l_buf.getvalue()), id_map)
    assert V == 6 and len(docs2) == n
    assert links2 == corpus.links
    assert [d.tokens.tolist() for d in docs2] == [d.tokens.tolist() for d in docs]


def test_split_folds_partition():
    folds = split_folds(10, 5, seed=3)
    tests = [f.test_doc_ids for f in folds]
    assert all(len(t) == 2 for t in tests)
    assert frozenset().union(*tests) == frozenset(range(10))
    for a, b in itertools.combinations(tests, 2):
        assert not a & b
    for f in folds:
        assert not f.train_doc_ids & f.test_doc_ids
        assert f.train_doc_ids | f.test_doc_ids == frozenset(range(10))


def test_split_folds_deterministic_and_range_checked():
    assert split_folds(17, 4, 9) == split_folds(17, 4, 9)
    with pytest.raises(ValueError):
        split_folds(3, 5, 0)
    with pytest.raises(ValueError):
        split_folds(10, 1, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(2, 10), st.integers(0, 2**31))
def test_split_folds_property(n, k, seed):
    if k > n:
        with pytest.raises(ValueError):
            split_folds(n, k, seed)
        return
    folds = split_folds(n, k, seed)
    sizes = sorted(len(f.test_doc_ids) for f in folds)
    assert sizes[-1] - sizes[0] <= 1
    seen = [d for f in folds for d in f.test_doc_ids]
    assert sorted(seen) == list(range(n))


def _undirected_four():
    docs = [Document(str(i), [0]) for i in range(4)]
    return Corpus(docs, 1, {(0, 1), (2, 3)}, directed=False)


def test_negative_count_enumeration_example():
    corpus = _undirected_four()
    # C(4,2) = 6 unordered pairs, 2 positive -> 4 candidates, half of them drawn
    assert count_negative_candidates(corpus, range(4)) == 4
    pairs = build_train_pairs(corpus, range(4), 0.5, 4.0, 1.0, seed=0)
    assert pairs.n_positive == 2
    assert len(pairs) - pairs.n_positive == 2
    assert set(pairs.c[pairs.y == 1]) == {4.0}
    assert set(pairs.c[pairs.y == 0]) == {1.0}


def test_full_ratio_takes_every_candidate_once():
    corpus = _undirected_four()
    pairs = build_train_pairs(corpus, range(4), 1.0, 2.0, 1.0, seed=0)
    negatives = {(s, d) for s, d, y, _ in pairs if y == 0}
    assert negatives == {(0, 2), (0, 3), (1, 2), (1, 3)}


def test_directed_full_ratio(tiny_corpus):
    ids = range(tiny_corpus.n_docs)
    pairs = build_train_pairs(tiny_corpus, ids, 1.0, 3.0, 1.0, seed=1)
    ordered = {(s, d) for s, d, _, _ in pairs}
    n = tiny_corpus.n_docs
    assert len(ordered) == len(pairs) == n * (n - 1)
    for s, d, y, _ in pairs:
        assert y == int((s, d) in tiny_corpus.links)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 25), st.floats(0.05, 1.0), st.booleans(), st.integers(0, 10**6), st.data())
def test_train_pairs_properties(n, ratio, directed, seed, data):
    rng = np.random.default_rng(seed)
    docs = [Document(str(i), [int(rng.integers(3))]) for i in range(n)]
    raw = {(int(i), int(j)) for i, j in rng.integers(0, n, size=(3 * n, 2)) if i != j}
    corpus = Corpus(docs, 3, raw)
    if not directed:
        corpus = corpus.as_undirected()
    test = set(data.draw(st.sets(st.integers(0, n - 1), max_size=n - 2)))
    train = [i for i in range(n) if i not in test]
    pairs = build_train_pairs(corpus, train, ratio, 4.0, 1.0, seed)
    keys = [(s, d) for s, d, _, _ in pairs]
    assert len(keys) == len(set(keys))
    for s, d, y, c in pairs:
        assert s not in test and d not in test and s != d
        assert y == int(corpus.has_link(s, d))
        assert c == (4.0 if y else 1.0)
        if not directed:
            assert s < d
    n_cand = count_negative_candidates(corpus, train)
    assert len(pairs) - pairs.n_positive == int(round(ratio * n_cand))
    assert build_train_pairs(corpus, train, ratio, 4.0, 1.0, seed).src.tolist() == pairs.src.tolist()


def test_empty_documents_left_out_of_pairs(caplog):
    docs = [Document("a", [0]), Document("b", []), Document("c", [1])]
    corpus = Corpus(docs, 2, {(0, 1), (2, 0)})
    pairs = build_train_pairs(corpus, range(3), 1.0, 4.0, 1.0, seed=0)
    assert 1 not in set(pairs.src) | set(pairs.dst)
    assert "without tokens" in caplog.text


def test_no_positive_links_warns(caplog):
    corpus = Corpus([Document("a", [0]), Document("b", [0])], 1)
    pairs = build_train_pairs(corpus, range(2), 1.0, 4.0, 1.0, seed=0)
    assert pairs.n_positive == 0 and len(pairs) == 2
    assert "no positive links" in caplog.text


def test_pair_set_validation():
    with pytest.raises(ValueError):
        TrainPairSet([0], [0], [1], [1.0])
    with pytest.raises(ValueError):
        TrainPairSet([0], [1], [2], [1.0])
    with pytest.raises(ValueError):
        TrainPairSet([0], [1], [1], [0.0])
    with pytest.raises(ValueError):
        build_train_pairs(_undirected_four(), range(4), 0.0, 1.0, 1.0, 0)
