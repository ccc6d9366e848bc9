"""Nearest-neighbour explanation reports over one or more embedding spaces."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .ingest import DEFAULT_BASE, image_iri
from .kg import TYPED_BY, Graph, iri, shared_nodes
from .relative import cosine_matrix
from .store import EmbeddingStore, StoreError


def top_k_similar(query_id: str, query_store: EmbeddingStore,
                  reference_store: EmbeddingStore, k: int = 5) -> list[tuple[str, float]]:
    """The k reference items most cosine-similar to the query, best first.

    Ties go to the lexicographically smaller id; the query never matches itself.
    """
    if query_id not in query_store:
        raise KeyError(f"unknown query id {query_id!r}")
    if len(reference_store) == 0:
        raise StoreError("reference store is empty")
    if query_store.dim != reference_store.dim:
        raise StoreError(f"dimension mismatch: query {query_store.dim}, "
                         f"reference {reference_store.dim}")
    q = query_store.row(query_id)[None, :]
    sims = cosine_matrix(q, reference_store.vectors, [query_id], reference_store.ids)[0]
    ranked = sorted((( -float(s), rid) for rid, s in zip(reference_store.ids, sims)
                     if rid != query_id))
    return [(rid, -neg) for neg, rid in ranked[:k]]


@dataclass
class SpaceReport:
    name: str
    neighbors: list[dict]
    label_agreement: float
    shared_nodes: list[dict]

    def to_json(self) -> dict:
        return {"name": self.name, "neighbors": self.neighbors,
                "label_agreement": self.label_agreement, "shared_nodes": self.shared_nodes}


@dataclass
class Report:
    test_id: str
    gold_label: str | None
    spaces: list[SpaceReport] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"test_id": self.test_id, "gold_label": self.gold_label,
                "spaces": [s.to_json() for s in self.spaces]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> "Report":
        spaces = [SpaceReport(s["name"], list(s["neighbors"]), s["label_agreement"],
                              list(s["shared_nodes"])) for s in d["spaces"]]
        return cls(d["test_id"], d["gold_label"], spaces)

    def to_text(self) -> str:
        lines = [f"test image {self.test_id} (gold: {self.gold_label})"]
        for s in self.spaces:
            lines.append(f"\n[{s.name}] label agreement {s.label_agreement:.2f}")
            for n, nb in enumerate(s.neighbors, 1):
                lines.append(f"  {n}. {nb['id']:<24} sim={nb['sim']:+.4f}  {nb['label']}")
            if s.shared_nodes:
                lines.append("  shared nodes:")
                for node in s.shared_nodes:
                    lines.append(f"    {node['count']}x {node['iri']}")
        return "\n".join(lines) + "\n"


def default_reference(store: EmbeddingStore, train_store: EmbeddingStore,
                      anchor_ids) -> EmbeddingStore:
    """Anchors for relative/hybrid spaces, the whole training set for absolute ones."""
    if store.provenance.endswith("absolute"):
        return train_store
    return train_store.subset([a for a in anchor_ids if a in train_store])


def explain(test_id: str, spaces, graph: Graph | None, labels: dict, k: int = 5,
            base: str = DEFAULT_BASE, max_hops: int = 2,
            predicates=(TYPED_BY,), n_shared: int = 10) -> Report:
    """Neighbours of ``test_id`` in each named (query_store, reference_store) space.

    ``predicates`` restricts which edges make a node count as shared (None: all).
    """
    report = Report(test_id, labels.get(test_id))
    for name, (query_store, reference_store) in spaces.items():
        if test_id not in query_store:
            raise KeyError(f"test id {test_id!r} missing from space {name!r}")
        hits = top_k_similar(test_id, query_store, reference_store, k)
        neighbors = [{"id": i, "sim": s, "label": labels.get(i)} for i, s in hits]
        gold = report.gold_label
        agree = (sum(1 for n in neighbors if n["label"] == gold) / len(neighbors)
                 if neighbors else 0.0)
        shared = []
        if graph is not None and neighbors:
            nodes = shared_nodes(graph, [image_iri(n["id"], base) for n in neighbors],
                                 max_hops=max_hops, k=n_shared, predicates=predicates)
            shared = [{"iri": t.value if t.is_iri else t.n3(), "count": c} for t, c in nodes]
        report.spaces.append(SpaceReport(name, neighbors, agree, shared))
    return report


def predicate_filter(names) -> tuple | None:
    """CLI helper: 'all' disables filtering; otherwise a list of predicate IRIs."""
    if names is None:
        return (TYPED_BY,)
    if names == "all" or names == ["all"]:
        return None
    return tuple(iri(n) for n in names)
