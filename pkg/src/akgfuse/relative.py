"""Anchor selection and relative representations.

An item is re-encoded as its cosine similarity to each anchor, in anchor
order, so two embedding spaces over the same anchor set share coordinates.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kg import AC_LABELS
from .store import EmbeddingStore, StoreError, write_text

log = logging.getLogger(__name__)


@dataclass
class AnchorSet:
    anchor_ids: list[str]
    per_class_counts: dict[str, int]
    seed: int
    shortfalls: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.anchor_ids)) != len(self.anchor_ids):
            raise ValueError("anchor ids must be unique")

    def __len__(self) -> int:
        return len(self.anchor_ids)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.anchor_ids).encode("utf-8")).hexdigest()[:16]

    def to_json(self) -> dict:
        return {"anchor_ids": self.anchor_ids, "per_class_counts": self.per_class_counts,
                "seed": self.seed, "hash": self.digest()}

    def save(self, path) -> None:
        write_text(path, json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "AnchorSet":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(list(d["anchor_ids"]), dict(d["per_class_counts"]), int(d["seed"]))


def select_anchors(train_ids, labels: dict, per_class: int = 100, seed: int = 0,
                   classes=AC_LABELS) -> AnchorSet:
    """Draw up to ``per_class`` training ids per class without replacement.

    Anchors are ordered by class (alphabetically) and then by draw order.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    pool: dict[str, list[str]] = {c: [] for c in classes}
    for i in sorted(train_ids):
        lab = labels[i]
        if lab not in pool:
            raise ValueError(f"id {i!r} has unknown label {lab!r}")
        pool[lab].append(i)
    anchors: list[str] = []
    counts: dict[str, int] = {}
    short: dict[str, int] = {}
    for c in sorted(pool):
        members = pool[c]
        if not members:
            raise ValueError(f"class {c!r} has no training items to draw anchors from")
        take = min(per_class, len(members))
        if take < per_class:
            short[c] = per_class - take
            log.warning("class %r has %d training items; using all as anchors (wanted %d)",
                        c, len(members), per_class)
        picks = rng.choice(len(members), size=take, replace=False)
        anchors.extend(members[j] for j in picks)
        counts[c] = take
    return AnchorSet(anchors, counts, seed, short)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _unit_rows(x: np.ndarray, ids) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(n == 0):
        raise ValueError(f"zero vector for id {ids[int(np.flatnonzero(n[:, 0] == 0)[0])]!r}")
    return x / n


def cosine_matrix(a: np.ndarray, b: np.ndarray, a_ids=None, b_ids=None) -> np.ndarray:
    a_ids = a_ids if a_ids is not None else list(range(len(a)))
    b_ids = b_ids if b_ids is not None else list(range(len(b)))
    return np.clip(_unit_rows(a, a_ids) @ _unit_rows(b, b_ids).T, -1.0, 1.0)


def relativize(store: EmbeddingStore, anchors: AnchorSet,
               anchor_store: EmbeddingStore | None = None) -> EmbeddingStore:
    anchor_store = anchor_store if anchor_store is not None else store
    if store.family != anchor_store.family:
        raise StoreError(f"cannot relate {store.provenance} items to "
                         f"{anchor_store.provenance} anchors")
    if store.provenance.endswith("relative") or store.provenance == "hybrid":
        raise StoreError(f"store is already {store.provenance}")
    if store.dim != anchor_store.dim:
        raise StoreError(f"dimension mismatch: items {store.dim}, anchors {anchor_store.dim}")
    for a in anchors.anchor_ids:
        if a not in anchor_store:
            raise KeyError(f"anchor {a!r} has no vector in the anchor store")
    anchor_vecs = anchor_store.subset(anchors.anchor_ids).vectors
    rel = cosine_matrix(store.vectors, anchor_vecs, store.ids, anchors.anchor_ids)
    meta = dict(store.meta)
    meta["anchor_set"] = anchors.digest()
    return EmbeddingStore(store.ids, rel, f"{store.family}-relative", meta)
