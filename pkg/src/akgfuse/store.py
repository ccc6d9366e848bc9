"""Embedding stores and the on-disk formats shared by every pipeline stage."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROVENANCES = ("kge-absolute", "cv-absolute", "kge-relative", "cv-relative", "hybrid")


class StoreError(ValueError):
    pass


@dataclass
class EmbeddingStore:
    ids: list[str]
    vectors: np.ndarray
    provenance: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = list(self.ids)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            self.vectors = self.vectors.reshape(len(self.ids), -1)
        if self.provenance not in PROVENANCES:
            raise StoreError(f"unknown provenance {self.provenance!r}")
        if len(self.ids) != self.vectors.shape[0]:
            raise StoreError(f"{len(self.ids)} ids but {self.vectors.shape[0]} rows")
        if len(set(self.ids)) != len(self.ids):
            seen = set()
            dup = next(i for i in self.ids if i in seen or seen.add(i))
            raise StoreError(f"duplicate id {dup!r}")
        if not np.all(np.isfinite(self.vectors)):
            bad = int(np.argwhere(~np.isfinite(self.vectors))[0, 0])
            raise StoreError(f"non-finite value in row {self.ids[bad]!r}")
        self._pos = {k: i for i, k in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def family(self) -> str:
        return self.provenance.split("-")[0]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, key: str) -> bool:
        return key in self._pos

    def row(self, key: str) -> np.ndarray:
        try:
            return self.vectors[self._pos[key]]
        except KeyError:
            raise KeyError(f"id {key!r} not in store") from None

    def index(self, key: str) -> int:
        return self._pos[key]

    def subset(self, keys) -> "EmbeddingStore":
        keys = list(keys)
        missing = [k for k in keys if k not in self._pos]
        if missing:
            raise KeyError(f"id {missing[0]!r} not in store")
        rows = [self._pos[k] for k in keys]
        return EmbeddingStore(keys, self.vectors[rows], self.provenance, dict(self.meta))


# --- atomic writes & sidecars ------------------------------------------------

@contextmanager
def atomic_path(path):
    """Yield a temporary sibling path; renamed onto ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    with atomic_path(path) as tmp:
        tmp.write_bytes(text.encode("utf-8"))


def write_bytes(path, data: bytes) -> None:
    with atomic_path(path) as tmp:
        tmp.write_bytes(data)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_sidecar(path, **info) -> None:
    write_text(sidecar_path(path), json.dumps(info, sort_keys=True, indent=1) + "\n")


def read_sidecar(path) -> dict:
    p = sidecar_path(path)
    if not p.exists():
        return {}
    return json.loads(p.read_text(encoding="utf-8"))


# --- TSV -----------------------------------------------------------------------

def store_to_tsv(store: EmbeddingStore) -> str:
    lines = []
    for key, row in zip(store.ids, store.vectors):
        lines.append(key + "\t" + "\t".join(repr(float(x)) for x in row))
    return "".join(line + "\n" for line in lines)


def save_store(store: EmbeddingStore, path, **extra) -> None:
    write_text(path, store_to_tsv(store))
    write_sidecar(path, provenance=store.provenance, dim=store.dim, count=len(store),
                  **{**store.meta, **extra})


def load_store(path, provenance: str | None = None) -> EmbeddingStore:
    path = Path(path)
    side = read_sidecar(path)
    prov = provenance or side.get("provenance")
    if prov is None:
        raise StoreError(f"{path}: provenance unknown (no sidecar and none given)")
    ids, rows = [], []
    width = None
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise StoreError(f"{path}:{n}: expected id and at least one value")
            if width is None:
                width = len(parts) - 1
            elif len(parts) - 1 != width:
                raise StoreError(f"{path}:{n}: expected {width} values, got {len(parts) - 1}")
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError as e:
                raise StoreError(f"{path}:{n}: {e}") from None
            ids.append(parts[0])
    vectors = np.array(rows, dtype=np.float64).reshape(len(ids), width or 0)
    meta = {k: v for k, v in side.items() if k not in ("provenance", "dim", "count")}
    store = EmbeddingStore(ids, vectors, prov, meta)
    zero = np.flatnonzero(np.linalg.norm(store.vectors, axis=1) == 0) if len(store) else []
    if len(zero):
        raise StoreError(f"{path}: zero-norm vector for id {store.ids[zero[0]]!r}")
    return store


# --- id -> value tables (labels, splits) ----------------------------------------

def read_mapping(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise StoreError(f"{path}:{n}: expected 'id<TAB>value'")
            if parts[0] in out:
                raise StoreError(f"{path}:{n}: duplicate id {parts[0]!r}")
            out[parts[0]] = parts[1]
    return out


def write_mapping(mapping: dict, path) -> None:
    write_text(path, "".join(f"{k}\t{v}\n" for k, v in sorted(mapping.items())))
