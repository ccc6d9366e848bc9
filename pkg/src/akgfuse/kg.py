"""Indexed triple store with canonical N-Triples I/O.

Terms are IRIs or literals only; blank nodes are rejected so that every
serialization of a graph is byte-for-byte reproducible.
"""
from __future__ import annotations

import re
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Iterable, Iterator

XSD = "http://www.w3.org/2001/XMLSchema#"
XSD_STRING = XSD + "string"

AC_LABELS = ("comfort", "danger", "death", "fitness", "freedom", "power", "safety")

IRI = "IRI"
LITERAL = "Literal"

_IRI_FORBIDDEN = re.compile(r'[\x00-\x20<>"{}|^`\\]')
_LANG = re.compile(r"^[a-zA-Z]+(-[a-zA-Z0-9]+)*$")


class TermError(ValueError):
    pass


class NTriplesError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True, order=True)
class Term:
    kind: str
    value: str
    datatype: str | None = None
    language: str | None = None

    def __post_init__(self):
        if self.kind == IRI:
            if not self.value or _IRI_FORBIDDEN.search(self.value):
                raise TermError(f"bad IRI {self.value!r}")
            if self.datatype or self.language:
                raise TermError("IRIs carry no datatype or language")
        elif self.kind == LITERAL:
            if self.datatype and self.language:
                raise TermError("literal cannot have both datatype and language")
            if self.datatype == XSD_STRING:
                object.__setattr__(self, "datatype", None)
            if self.language is not None:
                if not _LANG.match(self.language):
                    raise TermError(f"bad language tag {self.language!r}")
                object.__setattr__(self, "language", self.language.lower())
            if self.datatype is not None:
                Term(IRI, self.datatype)
        else:
            raise TermError(f"unknown term kind {self.kind!r}")

    @property
    def is_iri(self) -> bool:
        return self.kind == IRI

    def local_name(self) -> str:
        """Text after the last '/' or '#' for IRIs; the lexical form for literals."""
        if self.kind == LITERAL:
            return self.value
        v = self.value.rstrip("/#")
        cut = max(v.rfind("/"), v.rfind("#"))
        return v[cut + 1:]

    def n3(self) -> str:
        if self.kind == IRI:
            return f"<{self.value}>"
        s = f'"{_escape_literal(self.value)}"'
        if self.language:
            s += "@" + self.language
        elif self.datatype:
            s += f"^^<{self.datatype}>"
        return s

    def __str__(self) -> str:
        return self.n3()


def iri(value: str) -> Term:
    return Term(IRI, value)


def literal(value, datatype: str | None = None, language: str | None = None) -> Term:
    return Term(LITERAL, str(value), datatype, language)


@dataclass(frozen=True, order=True)
class Triple:
    subject: Term
    predicate: Term
    object: Term

    def __post_init__(self):
        if not self.subject.is_iri:
            raise TermError(f"subject must be an IRI, got {self.subject.n3()}")
        if not self.predicate.is_iri:
            raise TermError(f"predicate must be an IRI, got {self.predicate.n3()}")

    def n3(self) -> str:
        return f"{self.subject.n3()} {self.predicate.n3()} {self.object.n3()} ."


class Graph:
    """Set of triples indexed by subject, predicate and object."""

    def __init__(self, triples: Iterable[Triple] = ()):
        self._triples: set[Triple] = set()
        self._by_s: dict[Term, set[Triple]] = defaultdict(set)
        self._by_p: dict[Term, set[Triple]] = defaultdict(set)
        self._by_o: dict[Term, set[Triple]] = defaultdict(set)
        for t in triples:
            self.add(t)

    def add(self, t: Triple) -> bool:
        if not isinstance(t, Triple):
            raise TypeError(f"expected Triple, got {type(t).__name__}")
        if t in self._triples:
            return False
        self._triples.add(t)
        self._by_s[t.subject].add(t)
        self._by_p[t.predicate].add(t)
        self._by_o[t.object].add(t)
        return True

    def update(self, triples: Iterable[Triple]) -> None:
        for t in triples:
            self.add(t)

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    def __contains__(self, t: object) -> bool:
        return t in self._triples

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self._triples == other._triples

    def __repr__(self) -> str:
        return f"<Graph with {len(self)} triples>"

    def subjects(self) -> set[Term]:
        return {s for s, ts in self._by_s.items() if ts}

    def sorted_triples(self) -> list[Triple]:
        """Triples in canonical (serialized byte) order."""
        return sorted(self._triples, key=lambda t: t.n3().encode("utf-8"))

    def match(self, s: Term | None = None, p: Term | None = None,
              o: Term | None = None) -> set[Triple]:
        candidates = None
        for term, index in ((s, self._by_s), (p, self._by_p), (o, self._by_o)):
            if term is None:
                continue
            hits = index.get(term, set())
            if candidates is None or len(hits) < len(candidates):
                candidates = hits
        if candidates is None:
            return set(self._triples)
        return {t for t in candidates
                if (s is None or t.subject == s)
                and (p is None or t.predicate == p)
                and (o is None or t.object == o)}

    def out_edges(self, s: Term) -> set[Triple]:
        return self._by_s.get(s, set())

    def in_edges(self, o: Term) -> set[Triple]:
        return self._by_o.get(o, set())


def add_triple(g: Graph, t: Triple) -> Graph:
    g.add(t)
    return g


def query_pattern(g: Graph, s: Term | None = None, p: Term | None = None,
                  o: Term | None = None) -> set[Triple]:
    return g.match(s, p, o)


# --- N-Triples ---------------------------------------------------------------

_LIT_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r"}
_UNESCAPE = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f",
             '"': '"', "'": "'", "\\": "\\"}


def _escape_literal(s: str) -> str:
    return "".join(_LIT_ESCAPES.get(c, c) for c in s)


def serialize_ntriples(g: Graph) -> str:
    lines = sorted(t.n3().encode("utf-8") for t in g)
    if not lines:
        return ""
    return (b"\n".join(lines) + b"\n").decode("utf-8")


class _LineParser:
    def __init__(self, text: str, lineno: int):
        self.s = text
        self.i = 0
        self.lineno = lineno

    def fail(self, msg: str, at: int | None = None):
        raise NTriplesError(msg, self.lineno, (self.i if at is None else at) + 1)

    def ws(self):
        while self.i < len(self.s) and self.s[self.i] in " \t":
            self.i += 1

    def peek(self) -> str:
        return self.s[self.i] if self.i < len(self.s) else ""

    def read_iri(self) -> str:
        start = self.i
        self.i += 1
        out = []
        while True:
            if self.i >= len(self.s):
                self.fail("unterminated IRI", start)
            c = self.s[self.i]
            if c == ">":
                self.i += 1
                break
            if c == "\\":
                out.append(self.read_uchar())
                continue
            if c in ' <"{}|^`' or ord(c) <= 0x20:
                self.fail(f"illegal character {c!r} in IRI")
            out.append(c)
            self.i += 1
        value = "".join(out)
        if not value:
            self.fail("empty IRI", start)
        return value

    def read_uchar(self) -> str:
        at = self.i
        kind = self.s[self.i + 1:self.i + 2]
        width = {"u": 4, "U": 8}.get(kind)
        if width is None:
            self.fail("bad escape in IRI", at)
        digits = self.s[self.i + 2:self.i + 2 + width]
        if len(digits) != width or not all(c in "0123456789abcdefABCDEF" for c in digits):
            self.fail("bad unicode escape", at)
        self.i += 2 + width
        return chr(int(digits, 16))

    def read_literal(self) -> Term:
        start = self.i
        self.i += 1
        out = []
        while True:
            if self.i >= len(self.s):
                self.fail("unterminated literal", start)
            c = self.s[self.i]
            if c == '"':
                self.i += 1
                break
            if c == "\\":
                nxt = self.s[self.i + 1:self.i + 2]
                if nxt in _UNESCAPE:
                    out.append(_UNESCAPE[nxt])
                    self.i += 2
                elif nxt in ("u", "U"):
                    out.append(self.read_uchar())
                else:
                    self.fail("bad escape in literal")
                continue
            if c in "\n\r":
                self.fail("raw line break in literal")
            out.append(c)
            self.i += 1
        value = "".join(out)
        if self.peek() == "@":
            self.i += 1
            m = re.match(r"[a-zA-Z]+(-[a-zA-Z0-9]+)*", self.s[self.i:])
            if not m:
                self.fail("bad language tag")
            self.i += m.end()
            return Term(LITERAL, value, None, m.group(0))
        if self.s.startswith("^^", self.i):
            self.i += 2
            if self.peek() != "<":
                self.fail("expected datatype IRI")
            return Term(LITERAL, value, self.read_iri())
        return Term(LITERAL, value)

    def read_term(self, position: str) -> Term:
        self.ws()
        c = self.peek()
        at = self.i
        try:
            if c == "<":
                return Term(IRI, self.read_iri())
            if c == '"' and position == "object":
                return self.read_literal()
        except TermError as e:
            self.fail(str(e), at)
        if c == "_":
            self.fail("blank nodes are not supported")
        if c == "":
            self.fail(f"missing {position}")
        self.fail(f"unexpected {c!r} in {position} position")

    def parse(self) -> Triple:
        s = self.read_term("subject")
        p = self.read_term("predicate")
        o = self.read_term("object")
        self.ws()
        if self.peek() != ".":
            self.fail("expected terminal '.'")
        self.i += 1
        self.ws()
        if self.i < len(self.s) and self.s[self.i] != "#":
            self.fail("trailing content after '.'")
        return Triple(s, p, o)


def parse_ntriples(text: str) -> Graph:
    g = Graph()
    for n, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        stripped = line.strip(" \t")
        if not stripped or stripped.startswith("#"):
            continue
        g.add(_LineParser(line, n).parse())
    return g


def read_ntriples(path) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return parse_ntriples(fh.read())


# --- leakage & neighborhood queries -------------------------------------------

def _mentions(term: Term, needles: tuple[str, ...]) -> bool:
    hay = term.local_name().lower()
    return any(n in hay for n in needles)


def filter_leakage(g: Graph, forbidden: Iterable[str] = AC_LABELS) -> tuple[Graph, int]:
    """Drop triples whose subject or object mentions a forbidden label.

    Matching is a case-insensitive substring test against IRI local names and
    literal lexical forms. Predicates are never inspected.
    """
    needles = tuple(sorted({f.lower() for f in forbidden if f}))
    if not needles:
        raise ValueError("forbidden label set is empty")
    kept = Graph(t for t in g
                 if not _mentions(t.subject, needles) and not _mentions(t.object, needles))
    return kept, len(g) - len(kept)


SA = "https://w3id.org/situannotate#"
IS_ANNOTATION_OF = iri(SA + "isAnnotationOf")
TYPED_BY = iri(SA + "typedBy")
ANNOTATION_CLASS = iri(SA + "Annotation")
RDF_TYPE = iri("http://www.w3.org/1999/02/22-rdf-syntax-ns#type")


def _annotation_nodes(g: Graph) -> set[Term]:
    return {t.subject for t in g.match(p=IS_ANNOTATION_OF)}


def _reach(g: Graph, start: Term, max_hops: int, predicates, annotations) -> set[Term]:
    """Nodes reachable within max_hops from start.

    Edges are followed subject -> object, plus isAnnotationOf in reverse so an
    image reaches its annotations. A node counts only when the edge that reached
    it has an allowed predicate (all when predicates is None).
    """
    found: set[Term] = set()
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth == max_hops:
            continue
        steps = [(t.predicate, t.object) for t in g.out_edges(node)]
        steps += [(t.predicate, t.subject) for t in g.in_edges(node)
                  if t.predicate == IS_ANNOTATION_OF]
        for pred, nxt in steps:
            if predicates is None or pred in predicates:
                found.add(nxt)
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, depth + 1))
    found.discard(start)
    return found - annotations


def shared_nodes(g: Graph, images: Iterable[Term], max_hops: int = 2, k: int = 10,
                 predicates: Iterable[Term] | None = (TYPED_BY,)) -> list[tuple[Term, int]]:
    """Nodes reachable from at least two of the given images, most shared first."""
    images = sorted(set(images))
    if not images:
        raise ValueError("images must be non-empty")
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")
    for im in images:
        if not g.out_edges(im) and not g.in_edges(im):
            raise KeyError(f"unknown image {im.n3()}")
    preds = None if predicates is None else set(predicates)
    annotations = _annotation_nodes(g)
    image_set = set(images)
    counts: dict[Term, int] = defaultdict(int)
    for im in images:
        for node in _reach(g, im, max_hops, preds, annotations) - image_set:
            counts[node] += 1
    ranked = sorted(((n, c) for n, c in counts.items() if c >= 2),
                    key=lambda nc: (-nc[1], nc[0].n3()))
    return ranked[:k]
