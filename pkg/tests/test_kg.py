import itertools
import random

import pytest
import rdflib
from hypothesis import given, settings
from hypothesis import strategies as st

from akgfuse.kg import (
    AC_LABELS, IS_ANNOTATION_OF, TYPED_BY, Graph, NTriplesError, Term, TermError, Triple,
    filter_leakage, iri, literal, parse_ntriples, query_pattern, serialize_ntriples,
    shared_nodes,
)

EX = "http://ex.org/"

iri_terms = st.builds(lambda s: iri(EX + s),
                      st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_-/#", min_size=1,
                              max_size=12))
lit_terms = st.one_of(
    st.builds(literal, st.text(max_size=20)),
    st.builds(lambda s, lang: literal(s, language=lang), st.text(max_size=10),
              st.sampled_from(["en", "it", "en-gb"])),
    st.builds(lambda n: literal(str(n), "http://www.w3.org/2001/XMLSchema#integer"),
              st.integers(-1000, 1000)),
)
triples = st.builds(Triple, iri_terms, iri_terms, st.one_of(iri_terms, lit_terms))


@settings(max_examples=200, deadline=None)
@given(st.lists(triples, max_size=30))
def test_roundtrip_property(ts):
    g = Graph(ts)
    text = serialize_ntriples(g)
    assert parse_ntriples(text) == g
    assert serialize_ntriples(parse_ntriples(text)) == text


@settings(max_examples=50, deadline=None)
@given(st.lists(triples, min_size=1, max_size=20), st.randoms())
def test_insertion_order_does_not_matter(ts, rnd):
    shuffled = list(ts)
    rnd.shuffle(shuffled)
    assert serialize_ntriples(Graph(ts)) == serialize_ntriples(Graph(shuffled))


@settings(max_examples=100, deadline=None)
@given(st.lists(triples, max_size=20))
def test_rdflib_reads_what_we_write(ts):
    # rdflib as an independent parser: same triple count, same terms
    g = Graph(ts)
    ref = rdflib.Graph()
    ref.parse(data=serialize_ntriples(g), format="nt")
    assert len(ref) == len(g)
    ours = {(t.subject.value, t.predicate.value, t.object.value) for t in g}
    theirs = {(str(s), str(p), str(o)) for s, p, o in ref}
    assert ours == theirs


def test_we_read_what_rdflib_writes():
    ref = rdflib.Graph()
    s = rdflib.URIRef(EX + "s")
    ref.add((s, rdflib.URIRef(EX + "p"), rdflib.Literal('tab\there "q" \\ é 🎨')))
    ref.add((s, rdflib.URIRef(EX + "p"), rdflib.Literal("ciao", lang="it")))
    ref.add((s, rdflib.URIRef(EX + "n"), rdflib.Literal(5)))
    ref.add((s, rdflib.URIRef(EX + "p"), rdflib.URIRef(EX + "o")))
    g = parse_ntriples(ref.serialize(format="nt"))
    assert len(g) == 4
    assert Triple(iri(EX + "s"), iri(EX + "p"), literal('tab\there "q" \\ é 🎨')) in g
    assert Triple(iri(EX + "s"), iri(EX + "p"), literal("ciao", language="it")) in g


def test_empty_graph_serializes_to_empty_string():
    assert serialize_ntriples(Graph()) == ""
    assert len(parse_ntriples("")) == 0


def test_duplicates_collapse():
    t = Triple(iri(EX + "a"), iri(EX + "p"), literal("x"))
    g = Graph([t, t, t])
    assert len(g) == 1
    assert serialize_ntriples(g).count("\n") == 1


def test_lines_sorted_as_bytes():
    g = Graph([Triple(iri(EX + "b"), iri(EX + "p"), literal("1")),
               Triple(iri(EX + "Z"), iri(EX + "p"), literal("1")),
               Triple(iri(EX + "a"), iri(EX + "p"), literal("1"))])
    lines = serialize_ntriples(g).splitlines()
    assert lines == sorted(lines, key=lambda s: s.encode("utf-8"))
    assert lines[0].startswith("<http://ex.org/Z>")


def test_escapes_and_unicode_escapes():
    text = '<http://ex.org/s> <http://ex.org/p> "a\\u00E9\\U0001F3A8\\n\\"b\\"" .\n'
    (t,) = parse_ntriples(text)
    assert t.object.value == 'aé🎨\n"b"'


@pytest.mark.parametrize("line, col_hint", [
    ('_:b0 <http://ex.org/p> <http://ex.org/o> .', "blank"),
    ('<http://ex.org/s> <http://ex.org/p> <http://ex.org/o>', "."),
    ('<http://ex.org/s> <http://ex.org/p> "open .', "literal"),
    ('<http://ex.org/s <http://ex.org/p> <http://ex.org/o> .', ""),
    ('<http://ex.org/s> "lit" <http://ex.org/o> .', ""),
])
def test_malformed_lines_report_position(line, col_hint):
    with pytest.raises(NTriplesError) as exc:
        parse_ntriples("# comment\n\n" + line + "\n")
    assert exc.value.line == 3
    assert exc.value.col >= 1
    assert col_hint.lower() in str(exc.value).lower()


def test_term_validation():
    with pytest.raises(TermError):
        iri("http://ex.org/has space")
    with pytest.raises(TermError):
        iri("")
    with pytest.raises((TermError, TypeError, ValueError)):
        Triple(literal("x"), iri(EX + "p"), literal("y"))
    assert literal("x", "http://www.w3.org/2001/XMLSchema#string") == literal("x")


def _random_graph(rnd, n=300):
    subj = [iri(EX + f"s{i}") for i in range(15)]
    pred = [iri(EX + f"p{i}") for i in range(4)]
    objs = subj + [literal(f"v{i}") for i in range(10)]
    return Graph(Triple(rnd.choice(subj), rnd.choice(pred), rnd.choice(objs)) for _ in range(n))


def test_query_pattern_matches_linear_scan():
    rnd = random.Random(3)
    g = _random_graph(rnd)
    every = list(g)
    probes_s = [None, iri(EX + "s1"), iri(EX + "s14"), iri(EX + "nope")]
    probes_p = [None, iri(EX + "p0"), iri(EX + "p3")]
    probes_o = [None, iri(EX + "s2"), literal("v3")]
    for s, p, o in itertools.product(probes_s, probes_p, probes_o):
        want = {t for t in every if (s is None or t.subject == s)
                and (p is None or t.predicate == p) and (o is None or t.object == o)}
        assert set(query_pattern(g, s, p, o)) == want


def test_leakage_filter_matches_brute_force():
    rnd = random.Random(11)
    words = ["Comfortable", "endanger", "quiet", "Powerful", "deathly", "calm", "SAFETY_net",
             "fitness", "free", "freedoms", "tree"]
    terms = [iri(EX + "x/" + w) for w in words] + [literal(w) for w in words]
    preds = [iri(EX + "power"), iri(EX + "rel")]
    g = Graph(Triple(iri(EX + "n/" + rnd.choice(words)), rnd.choice(preds), rnd.choice(terms))
              for _ in range(400))

    def dirty(term):
        text = term.value.rsplit("/", 1)[-1].lower() if term.is_iri else term.value.lower()
        return any(lab in text for lab in AC_LABELS)

    expect = Graph(t for t in g if not dirty(t.subject) and not dirty(t.object))
    kept, removed = filter_leakage(g)
    assert kept == expect
    assert removed == len(g) - len(expect)
    # predicate named "power" alone never triggers removal
    assert any(t.predicate == iri(EX + "power") for t in kept)


def test_leakage_filter_ignores_namespace_part():
    # "safety" in the namespace but not in the local name
    t = Triple(iri("http://safety.org/thing"), iri(EX + "p"), iri(EX + "q"))
    kept, removed = filter_leakage(Graph([t]))
    assert removed == 0 and t in kept


def _bfs_oracle(g, image, hops, preds):
    # plain edge-list walk, independent of the graph indexes
    edges = []
    for t in g:
        edges.append((t.subject, t.predicate, t.object))
        if t.predicate == IS_ANNOTATION_OF:
            edges.append((t.object, t.predicate, t.subject))
    annotations = {t.subject for t in g if t.predicate == IS_ANNOTATION_OF}
    found, seen, layer = set(), {image}, {image}
    for _ in range(hops):
        nxt = set()
        for a, p, b in edges:
            if a in layer:
                if preds is None or p in preds:
                    found.add(b)
                if b not in seen:
                    seen.add(b)
                    nxt.add(b)
        layer = nxt
    return found - annotations - {image}


def test_shared_nodes_matches_oracle():
    rnd = random.Random(5)
    images = [iri(EX + f"img{i}") for i in range(6)]
    concepts = [iri(EX + f"c{i}") for i in range(8)]
    g = Graph()
    for im in images:
        for k in range(4):
            ann = iri(f"{im.value}/ann{k}")
            g.add(Triple(ann, IS_ANNOTATION_OF, im))
            g.add(Triple(ann, TYPED_BY, rnd.choice(concepts)))
        g.add(Triple(im, TYPED_BY, rnd.choice(concepts)))
        g.add(Triple(im, iri(EX + "other"), rnd.choice(concepts)))
    for preds in [(TYPED_BY,), None]:
        got = shared_nodes(g, images, max_hops=2, k=100, predicates=preds)
        counts = {}
        for im in images:
            for n in _bfs_oracle(g, im, 2, None if preds is None else set(preds)) - set(images):
                counts[n] = counts.get(n, 0) + 1
        want = sorted(((n, c) for n, c in counts.items() if c >= 2),
                      key=lambda nc: (-nc[1], nc[0].n3()))
        assert got == want


def test_shared_nodes_errors():
    g = Graph([Triple(iri(EX + "a"), TYPED_BY, iri(EX + "c"))])
    with pytest.raises(KeyError):
        shared_nodes(g, [iri(EX + "missing")])
    with pytest.raises(ValueError):
        shared_nodes(g, [])


def test_local_name():
    assert Term("IRI", "http://ex.org/a/b#frag").local_name() == "frag"
    assert Term("IRI", "http://ex.org/a/leaf").local_name() == "leaf"
    assert literal("Some Text").local_name() == "Some Text"
