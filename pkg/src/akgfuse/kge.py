"""TransE embeddings for the annotation graph.

Scores a triple by the distance ||h + r - t|| and trains with the margin
ranking loss against filtered head/tail corruptions.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .kg import AC_LABELS, Graph, Term
from .store import EmbeddingStore, write_bytes

log = logging.getLogger(__name__)

MAGIC = b"AKGE"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIBQ")


class LeakageError(RuntimeError):
    pass


@dataclass
class KgeConfig:
    dim: int = 128
    margin: float = 1.0
    norm: str = "L2"
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 256
    negatives_per_positive: int = 1
    seed: int = 0
    entity_norm_constraint: bool = True

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.norm not in ("L1", "L2"):
            raise ValueError(f"norm must be L1 or L2, got {self.norm!r}")
        if self.batch_size < 1 or self.negatives_per_positive < 1:
            raise ValueError("batch_size and negatives_per_positive must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "KgeConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown KGE config key {sorted(extra)[0]!r}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def entity_key(term: Term) -> str:
    """IRIs by value; literals by lexical form and datatype."""
    if term.is_iri:
        return term.value
    return Term(term.kind, term.value, term.datatype).n3()


@dataclass
class KgeModel:
    entity_vectors: np.ndarray
    relation_vectors: np.ndarray
    entity_index: dict[str, int]
    relation_index: dict[str, int]
    config: KgeConfig = field(default_factory=KgeConfig)

    @property
    def entity_ids(self) -> list[str]:
        return sorted(self.entity_index, key=self.entity_index.__getitem__)

    @property
    def relation_ids(self) -> list[str]:
        return sorted(self.relation_index, key=self.relation_index.__getitem__)

    def entity_row(self, key: str) -> int:
        try:
            return self.entity_index[key]
        except KeyError:
            raise KeyError(f"unknown entity {key!r}") from None

    def relation_row(self, key: str) -> int:
        try:
            return self.relation_index[key]
        except KeyError:
            raise KeyError(f"unknown relation {key!r}") from None

    def copy(self) -> "KgeModel":
        return KgeModel(self.entity_vectors.copy(), self.relation_vectors.copy(),
                        dict(self.entity_index), dict(self.relation_index), self.config)


def index_graph(g: Graph):
    """Entity/relation indexes and the triples as an (n, 3) int array in canonical order."""
    if len(g) == 0:
        raise ValueError("cannot index an empty graph")
    ents, rels = set(), set()
    for t in g:
        ents.add(entity_key(t.subject))
        ents.add(entity_key(t.object))
        rels.add(t.predicate.value)
    entity_index = {k: i for i, k in enumerate(sorted(ents))}
    relation_index = {k: i for i, k in enumerate(sorted(rels))}
    triples = np.array([(entity_index[entity_key(t.subject)], relation_index[t.predicate.value],
                         entity_index[entity_key(t.object)]) for t in g.sorted_triples()],
                       dtype=np.int64)
    return entity_index, relation_index, triples


def init_model(cfg: KgeConfig, entity_index: dict, relation_index: dict) -> KgeModel:
    rng = np.random.default_rng(cfg.seed)
    bound = 6.0 / np.sqrt(cfg.dim)
    ent = rng.uniform(-bound, bound, size=(len(entity_index), cfg.dim))
    rel = rng.uniform(-bound, bound, size=(len(relation_index), cfg.dim))
    norms = np.linalg.norm(rel, axis=1, keepdims=True)
    rel = rel / np.where(norms > 0, norms, 1.0)
    return KgeModel(ent, rel, dict(entity_index), dict(relation_index), cfg)


def _distance(diff: np.ndarray, norm: str) -> np.ndarray:
    if norm == "L1":
        return np.abs(diff).sum(axis=-1)
    return np.sqrt((diff * diff).sum(axis=-1))


def _distance_grad(diff: np.ndarray, norm: str) -> np.ndarray:
    """d distance / d diff, row-wise."""
    if norm == "L1":
        return np.sign(diff)
    n = np.sqrt((diff * diff).sum(axis=-1, keepdims=True))
    return diff / np.maximum(n, 1e-12)


def score(m: KgeModel, h: str, r: str, t: str) -> float:
    diff = (m.entity_vectors[m.entity_row(h)] + m.relation_vectors[m.relation_row(r)]
            - m.entity_vectors[m.entity_row(t)])
    return float(_distance(diff, m.config.norm))


def triple_distances(m: KgeModel, triples: np.ndarray) -> np.ndarray:
    e, r = m.entity_vectors, m.relation_vectors
    return _distance(e[triples[:, 0]] + r[triples[:, 1]] - e[triples[:, 2]], m.config.norm)


def _keys(triples: np.ndarray, n_rel: int, n_ent: int) -> np.ndarray:
    return (triples[:, 0] * n_rel + triples[:, 1]) * n_ent + triples[:, 2]


class _KnownTriples:
    def __init__(self, triples: np.ndarray, n_rel: int, n_ent: int):
        self.n_rel, self.n_ent = n_rel, n_ent
        self.keys = np.unique(_keys(triples, n_rel, n_ent))

    def contains(self, triples: np.ndarray) -> np.ndarray:
        k = _keys(triples, self.n_rel, self.n_ent)
        pos = np.searchsorted(self.keys, k)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == k


def _corrupt(batch: np.ndarray, n_ent: int, rng, known: _KnownTriples | None,
             max_tries: int = 50) -> tuple[np.ndarray, np.ndarray]:
    neg = batch.copy()
    head = rng.random(len(batch)) < 0.5
    todo = np.arange(len(batch))
    for _ in range(max_tries):
        col = np.where(head[todo], 0, 2)
        orig = batch[todo, col]
        draw = rng.integers(0, n_ent - 1, size=len(todo))
        draw = draw + (draw >= orig)
        neg[todo, col] = draw
        if known is None:
            break
        todo = todo[known.contains(neg[todo])]
        if len(todo) == 0:
            break
    return neg, head


def negative_sample(triple, entity_count: int, rng, known: np.ndarray | None = None):
    """Corrupt head or tail (probability 1/2 each) with a different uniform entity.

    When ``known`` (an (n, 3) array of true triples) is given, corruptions that
    reproduce a true triple are redrawn.
    """
    if entity_count < 2:
        raise ValueError("need at least two entities to corrupt a triple")
    t = np.asarray(triple, dtype=np.int64).reshape(1, 3)
    kt = None
    if known is not None:
        n_rel = int(max(np.max(known[:, 1]), t[0, 1])) + 1
        kt = _KnownTriples(np.asarray(known, dtype=np.int64), n_rel, entity_count)
    neg, _ = _corrupt(t, entity_count, rng, kt)
    return tuple(int(x) for x in neg[0])


def _segment_sum(idx: np.ndarray, vals: np.ndarray):
    """Sum rows of vals sharing an index; returns (unique indices, sums)."""
    order = np.argsort(idx, kind="stable")
    uniq, starts = np.unique(idx[order], return_index=True)
    return uniq, np.add.reduceat(vals[order], starts, axis=0)


def _sparse_hinge(m: KgeModel, pos: np.ndarray, neg: np.ndarray, margin: float):
    e, r = m.entity_vectors, m.relation_vectors
    norm = m.config.norm
    dp = e[pos[:, 0]] + r[pos[:, 1]] - e[pos[:, 2]]
    dn = e[neg[:, 0]] + r[neg[:, 1]] - e[neg[:, 2]]
    viol = margin + _distance(dp, norm) - _distance(dn, norm)
    active = viol > 0
    loss = float(viol[active].sum())
    if not active.any():
        return loss, None
    gp = _distance_grad(dp[active], norm)
    gn = _distance_grad(dn[active], norm)
    p, n = pos[active], neg[active]
    ent = _segment_sum(np.concatenate([p[:, 0], p[:, 2], n[:, 0], n[:, 2]]),
                       np.concatenate([gp, -gp, -gn, gn]))
    rel = _segment_sum(np.concatenate([p[:, 1], n[:, 1]]), np.concatenate([gp, -gn]))
    return loss, (ent, rel)


def hinge_loss_and_grads(m: KgeModel, pos: np.ndarray, neg: np.ndarray, margin: float):
    """Summed margin loss over pairs and its gradients wrt the embedding matrices."""
    loss, sparse = _sparse_hinge(m, np.asarray(pos), np.asarray(neg), margin)
    ge = np.zeros_like(m.entity_vectors)
    gr = np.zeros_like(m.relation_vectors)
    if sparse is not None:
        (ei, eg), (ri, rg) = sparse
        ge[ei] = eg
        gr[ri] = rg
    return loss, ge, gr


def _project(m: KgeModel) -> None:
    norms = np.linalg.norm(m.entity_vectors, axis=1, keepdims=True)
    m.entity_vectors /= np.maximum(norms, 1.0)


def train_epoch(m: KgeModel, triples: np.ndarray, cfg: KgeConfig, rng,
                known: _KnownTriples | None = None) -> tuple[KgeModel, float]:
    if known is None:
        known = _KnownTriples(triples, len(m.relation_index), len(m.entity_index))
    n_ent = len(m.entity_index)
    order = rng.permutation(len(triples))
    total = 0.0
    count = 0
    for start in range(0, len(order), cfg.batch_size):
        pos = triples[order[start:start + cfg.batch_size]]
        if cfg.negatives_per_positive > 1:
            pos = np.repeat(pos, cfg.negatives_per_positive, axis=0)
        neg, _ = _corrupt(pos, n_ent, rng, known)
        loss, sparse = _sparse_hinge(m, pos, neg, cfg.margin)
        total += loss
        count += len(pos)
        if cfg.learning_rate and sparse is not None:
            (ei, eg), (ri, rg) = sparse
            m.entity_vectors[ei] -= cfg.learning_rate * eg
            m.relation_vectors[ri] -= cfg.learning_rate * rg
    if cfg.entity_norm_constraint and cfg.learning_rate:
        _project(m)
    return m, total / max(count, 1)


def check_leakage(entity_ids, forbidden=AC_LABELS) -> None:
    needles = [f.lower() for f in forbidden]
    for key in entity_ids:
        if key.startswith('"'):
            name = key[1:key.rfind('"')]
        else:
            v = key.rstrip("/#")
            name = v[max(v.rfind("/"), v.rfind("#")) + 1:]
        low = name.lower()
        for n in needles:
            if n in low:
                raise LeakageError(f"entity {key!r} mentions target label {n!r}; "
                                   "filter the graph before training")


def train_kge(g: Graph, cfg: KgeConfig, forbidden=AC_LABELS, on_epoch=None):
    """Index the graph, initialize and train; returns (model, per-epoch mean losses)."""
    ent, rel, triples = index_graph(g)
    if forbidden:
        check_leakage(ent, forbidden)
    m = init_model(cfg, ent, rel)
    if cfg.entity_norm_constraint:
        _project(m)
    rng = np.random.default_rng([cfg.seed, 1])
    known = _KnownTriples(triples, len(rel), len(ent))
    losses = []
    for epoch in range(cfg.epochs):
        m, loss = train_epoch(m, triples, cfg, rng, known)
        losses.append(loss)
        if on_epoch is not None:
            on_epoch(epoch + 1, loss)
    return m, losses


# --- evaluation ----------------------------------------------------------------

def _rank(dist: np.ndarray, true_idx: int, exclude: np.ndarray) -> float:
    d = dist.copy()
    d[exclude] = np.inf
    target = dist[true_idx]
    better = np.count_nonzero(d < target)
    ties = np.count_nonzero(d == target) - 1
    return 1.0 + better + ties / 2.0


def link_prediction_eval(m: KgeModel, test_triples: np.ndarray,
                         all_triples: np.ndarray, ks=(1, 10)) -> dict:
    """Filtered head and tail ranking; ties count half."""
    test_triples = np.asarray(test_triples, dtype=np.int64)
    all_triples = np.asarray(all_triples, dtype=np.int64)
    tails: dict[tuple[int, int], list[int]] = {}
    heads: dict[tuple[int, int], list[int]] = {}
    for h, r, t in all_triples:
        tails.setdefault((h, r), []).append(t)
        heads.setdefault((t, r), []).append(h)
    e, rv = m.entity_vectors, m.relation_vectors
    ranks = []
    for h, r, t in test_triples:
        dt = _distance(e[h] + rv[r] - e, m.config.norm)
        other = np.array([x for x in tails.get((h, r), []) if x != t], dtype=np.int64)
        ranks.append(_rank(dt, t, other))
        dh = _distance(e + rv[r] - e[t], m.config.norm)
        other = np.array([x for x in heads.get((t, r), []) if x != h], dtype=np.int64)
        ranks.append(_rank(dh, h, other))
    ranks = np.array(ranks)
    out = {f"hits@{k}": float(np.mean(ranks <= k)) for k in ks}
    out["mean_rank"] = float(ranks.mean())
    out["mrr"] = float(np.mean(1.0 / ranks))
    return out


def shuffled(m: KgeModel, rng) -> KgeModel:
    """Same vectors, randomly reassigned to entities."""
    out = m.copy()
    out.entity_vectors = out.entity_vectors[rng.permutation(len(out.entity_vectors))]
    return out


def image_embeddings(m: KgeModel, images) -> EmbeddingStore:
    """Store of image id -> entity vector.

    ``images`` maps id -> IRI, or is a sequence of IRIs keyed by local name.
    """
    if not isinstance(images, dict):
        images = {Term("IRI", x).local_name(): x for x in images}
    ids = list(images)
    rows = []
    for k in ids:
        if images[k] not in m.entity_index:
            raise KeyError(f"image {images[k]!r} is not in the model")
        rows.append(m.entity_index[images[k]])
    vecs = m.entity_vectors[rows] if rows else np.zeros((0, m.entity_vectors.shape[1]))
    return EmbeddingStore(ids, vecs.copy(), "kge-absolute")


# --- checkpoint ----------------------------------------------------------------

def _pack_ids(ids) -> bytes:
    blob = "\n".join(ids).encode("utf-8")
    return struct.pack("<Q", len(blob)) + blob


def model_to_bytes(m: KgeModel) -> bytes:
    cfg = m.config
    n_e, dim = m.entity_vectors.shape
    head = _HEADER.pack(MAGIC, VERSION, dim, n_e, m.relation_vectors.shape[0],
                        1 if cfg.norm == "L1" else 2, cfg.seed & (2**64 - 1))
    body = (m.entity_vectors.astype("<f4").tobytes() + m.relation_vectors.astype("<f4").tobytes())
    return head + body + _pack_ids(m.entity_ids) + _pack_ids(m.relation_ids)


def save_model(m: KgeModel, path) -> None:
    write_bytes(path, model_to_bytes(m))


def load_model(path) -> KgeModel:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, dim, n_e, n_r, norm, seed = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a TransE checkpoint")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = _HEADER.size
    ent = np.frombuffer(data, "<f4", n_e * dim, off).reshape(n_e, dim).astype(np.float64)
    off += 4 * n_e * dim
    rel = np.frombuffer(data, "<f4", n_r * dim, off).reshape(n_r, dim).astype(np.float64)
    off += 4 * n_r * dim
    tables = []
    for _ in range(2):
        (n,) = struct.unpack_from("<Q", data, off)
        off += 8
        blob = data[off:off + n].decode("utf-8")
        off += n
        tables.append(blob.split("\n") if blob else [])
    cfg = KgeConfig(dim=dim, norm="L1" if norm == 1 else "L2", seed=seed)
    return KgeModel(ent, rel, {k: i for i, k in enumerate(tables[0])},
                    {k: i for i, k in enumerate(tables[1])}, cfg)


def model_to_tsv(m: KgeModel) -> str:
    return "".join(k + "\t" + "\t".join(repr(float(x)) for x in row) + "\n"
                   for k, row in zip(m.entity_ids, m.entity_vectors))
