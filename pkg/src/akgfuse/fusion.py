"""Late fusion of two embedding stores over the same items."""
from __future__ import annotations

import numpy as np

from .store import EmbeddingStore, StoreError

KINDS = ("concat", "hadamard")


def fuse(a: EmbeddingStore, b: EmbeddingStore, kind: str = "concat") -> EmbeddingStore:
    """Row-wise ``[a, b]`` (concat) or ``a * b`` (hadamard); ids must match in order."""
    if kind not in KINDS:
        raise ValueError(f"fusion kind must be one of {KINDS}, got {kind!r}")
    if a.ids != b.ids:
        for i, (x, y) in enumerate(zip(a.ids, b.ids)):
            if x != y:
                raise StoreError(f"id mismatch at row {i}: {x!r} vs {y!r}")
        shorter, longer = (a, b) if len(a) < len(b) else (b, a)
        raise StoreError(f"id mismatch at row {len(shorter)}: {longer.ids[len(shorter)]!r} "
                         "has no counterpart")
    if kind == "hadamard":
        if a.dim != b.dim:
            raise StoreError(f"hadamard fusion needs equal dims, got {a.dim} and {b.dim}")
        vecs = a.vectors * b.vectors
    else:
        vecs = np.hstack([a.vectors, b.vectors])
    meta = {"fusion": kind, "parts": [a.provenance, b.provenance]}
    return EmbeddingStore(a.ids, vecs, "hybrid", meta)
