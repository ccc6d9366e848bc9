import numpy as np
import pytest

from akgfuse.ingest import build_akg, image_iri
from akgfuse.interpret import Report, default_reference, explain, predicate_filter, top_k_similar
from akgfuse.kg import filter_leakage
from akgfuse.kge import KgeConfig, image_embeddings, train_kge
from akgfuse.store import EmbeddingStore, StoreError
from toykg import PLANTED, planted_docs


def _brute_top_k(q, store, k):
    # explicit all-pairs loop, ties broken by id
    qv = store.row(q)
    scored = []
    for i, v in zip(store.ids, store.vectors):
        if i == q:
            continue
        sim = float(np.dot(qv, v) / (np.linalg.norm(qv) * np.linalg.norm(v)))
        scored.append((-sim, i))
    scored.sort()
    return [(i, -s) for s, i in scored[:k]]


def test_top_k_matches_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(5):
        store = EmbeddingStore([f"x{i:03d}" for i in range(200)],
                               rng.normal(size=(200, 16)), "cv-absolute")
        for q in store.ids[::17]:
            got = top_k_similar(q, store, store, k=5)
            want = _brute_top_k(q, store, 5)
            assert [i for i, _ in got] == [i for i, _ in want]
            assert np.allclose([s for _, s in got], [s for _, s in want], atol=1e-12)


def test_top_k_ties_and_exclusion():
    store = EmbeddingStore(["q", "b", "a", "c"], [[1, 0], [2, 0], [3, 0], [0, 1]], "cv-absolute")
    assert [i for i, _ in top_k_similar("q", store, store, k=3)] == ["a", "b", "c"]
    assert len(top_k_similar("q", store, store, k=10)) == 3


def test_top_k_errors():
    a = EmbeddingStore(["q"], [[1.0, 0.0]], "cv-absolute")
    b = EmbeddingStore(["r"], [[1.0, 0.0, 0.0]], "cv-absolute")
    with pytest.raises(StoreError):
        top_k_similar("q", a, b)
    with pytest.raises(KeyError):
        top_k_similar("zz", a, a)


@pytest.fixture(scope="module")
def planted():
    docs = planted_docs()
    graph, _ = filter_leakage(build_akg(docs))
    model, _ = train_kge(graph, KgeConfig(dim=32, epochs=100, learning_rate=0.05,
                                          batch_size=64, seed=0))
    ids = sorted(d.image_id for d in docs)
    store = image_embeddings(model, {i: image_iri(i).value for i in ids})
    labels = {d.image_id: d.ac_label for d in docs}
    return graph, store, labels


def test_planted_concept_ranks_first(planted):
    graph, store, labels = planted
    for q in store.ids:
        rep = explain(q, {"kge": (store, store)}, graph, labels, k=5)
        top = rep.spaces[0].shared_nodes[0]["iri"]
        assert top == "http://conceptnet.io/c/en/" + PLANTED[labels[q]]


def test_report_json_roundtrip(planted):
    graph, store, labels = planted
    rep = explain("g1_04", {"kge": (store, store), "again": (store, store)}, graph, labels)
    back = Report.from_json(__import__("json").loads(rep.dumps()))
    assert back.to_json() == rep.to_json()
    assert [s.name for s in back.spaces] == ["kge", "again"]
    assert "g1_04" in rep.to_text()
    sp = rep.spaces[0]
    assert sp.label_agreement == sum(n["label"] == "safety" for n in sp.neighbors) / 5


def test_predicate_filter():
    assert predicate_filter(None) is not None
    assert predicate_filter("all") is None
    assert len(predicate_filter(["http://ex.org/p", "http://ex.org/q"])) == 2


def test_default_reference():
    rel = EmbeddingStore(["a", "b", "c"], np.eye(3), "hybrid")
    ab = EmbeddingStore(["a", "b", "c"], np.eye(3), "cv-absolute")
    assert default_reference(rel, rel, ["c", "a"]).ids == ["c", "a"]
    assert default_reference(ab, ab, ["c"]).ids == ["a", "b", "c"]
