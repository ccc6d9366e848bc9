"""Two-layer MLP head over fused or unimodal image embeddings."""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .kg import AC_LABELS
from .store import EmbeddingStore, write_bytes

MAGIC = b"AMLP"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIdQ")
SPLITS = ("train", "val", "test")


@dataclass
class MlpConfig:
    in_dim: int = 0
    hidden_dim: int = 256
    out_dim: int = len(AC_LABELS)
    dropout: float = 0.3
    learning_rate: float = 0.001
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.hidden_dim < 1 or self.out_dim < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("hidden_dim, out_dim and batch_size must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown MLP config key {sorted(extra)[0]!r}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    dropout: float = 0.0

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    def arrays(self):
        return (self.W1, self.b1, self.W2, self.b2)

    def copy(self) -> "MlpParams":
        return MlpParams(*(a.copy() for a in self.arrays()), dropout=self.dropout)


@dataclass
class LabeledDataset:
    store: EmbeddingStore
    labels: dict[str, str]
    split: dict[str, str]

    def __post_init__(self):
        for i in self.store.ids:
            if i not in self.labels:
                raise ValueError(f"id {i!r} has no label")
            if self.split.get(i) not in SPLITS:
                raise ValueError(f"id {i!r} has no split assignment")

    def part(self, name: str) -> list[str]:
        return [i for i in self.store.ids if self.split[i] == name]


def init_params(cfg: MlpConfig) -> MlpParams:
    rng = np.random.default_rng(cfg.seed)
    b_in = 1.0 / np.sqrt(cfg.in_dim)
    b_hid = 1.0 / np.sqrt(cfg.hidden_dim)
    return MlpParams(
        rng.uniform(-b_in, b_in, (cfg.hidden_dim, cfg.in_dim)),
        rng.uniform(-b_in, b_in, cfg.hidden_dim),
        rng.uniform(-b_hid, b_hid, (cfg.out_dim, cfg.hidden_dim)),
        rng.uniform(-b_hid, b_hid, cfg.out_dim),
        dropout=cfg.dropout,
    )


def forward(p: MlpParams, x, train_mode: bool = False, rng=None):
    """Logits for a vector or a batch of rows, plus the cache backprop needs.

    Dropout uses inverted scaling, so evaluation needs no rescale and ignores rng.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != p.in_dim:
        raise ValueError(f"input has dim {X.shape[1]}, model expects {p.in_dim}")
    pre = X @ p.W1.T + p.b1
    act = np.maximum(pre, 0.0)
    mask = None
    if train_mode and p.dropout > 0:
        keep = 1.0 - p.dropout
        mask = (rng.random(act.shape) < keep) / keep
        act = act * mask
    logits = act @ p.W2.T + p.b2
    cache = (X, pre, act, mask)
    return (logits[0] if single else logits), cache


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(p: MlpParams, X, y, rng=None, train_mode: bool = True):
    """Mean softmax cross-entropy over the batch and gradients for every parameter."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("empty batch")
    logits, (X, pre, act, mask) = forward(p, X, train_mode, rng)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    n = len(X)
    loss = float(np.mean(logsum - z[np.arange(n), y]))
    d_logits = softmax(logits)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    gW2 = d_logits.T @ act
    gb2 = d_logits.sum(axis=0)
    d_act = d_logits @ p.W2
    if mask is not None:
        d_act = d_act * mask
    d_pre = d_act * (pre > 0)
    gW1 = d_pre.T @ X
    gb1 = d_pre.sum(axis=0)
    return loss, MlpParams(gW1, gb1, gW2, gb2)


def standardizer(X: np.ndarray):
    """Per-feature mean and scale; constant features keep scale 1."""
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return mu, sd


def fold_standardizer(p: MlpParams, mu: np.ndarray, sd: np.ndarray) -> MlpParams:
    """Params acting on raw x exactly as p acts on (x - mu) / sd."""
    W1 = p.W1 / sd
    return MlpParams(W1, p.b1 - W1 @ mu, p.W2.copy(), p.b2.copy(), dropout=p.dropout)


def _xy(ds: LabeledDataset, ids, classes):
    idx = {c: i for i, c in enumerate(classes)}
    X = ds.store.subset(ids).vectors
    y = np.array([idx[ds.labels[i]] for i in ids], dtype=np.int64)
    return X, y


def train(ds: LabeledDataset, cfg: MlpConfig, classes=AC_LABELS, on_epoch=None):
    """Minibatch SGD at a fixed learning rate; returns (params, history).

    With ``cfg.standardize`` the network trains on train-split z-scored inputs
    and the scaling is folded into the first layer of the returned params.
    """
    if cfg.in_dim and cfg.in_dim != ds.store.dim:
        raise ValueError(f"config in_dim {cfg.in_dim} != store dim {ds.store.dim}")
    cfg = MlpConfig(**{**cfg.to_dict(), "in_dim": ds.store.dim, "out_dim": len(classes)})
    train_ids = ds.part("train")
    if not train_ids:
        raise ValueError("training split is empty")
    val_ids = ds.part("val")
    X, y = _xy(ds, train_ids, classes)
    mu, sd = standardizer(X) if cfg.standardize else (np.zeros(X.shape[1]), np.ones(X.shape[1]))
    X = (X - mu) / sd
    p = init_params(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            loss, g = loss_and_grad(p, X[b], y[b], rng)
            total += loss * len(b)
            if cfg.learning_rate:
                for w, gw in zip(p.arrays(), g.arrays()):
                    w -= cfg.learning_rate * gw
        row = {"epoch": epoch + 1, "train_loss": total / len(X), "val_macro_f1": float("nan")}
        if val_ids:
            preds = predict(fold_standardizer(p, mu, sd), ds.store, val_ids, classes)
            row["val_macro_f1"] = macro_f1({i: v[0] for i, v in preds.items()},
                                           {i: ds.labels[i] for i in val_ids}, classes)
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    if cfg.standardize:
        p = fold_standardizer(p, mu, sd)
    return p, history


def predict(p: MlpParams, store: EmbeddingStore, ids=None, classes=AC_LABELS) -> dict:
    """id -> (label, probabilities); ties go to the alphabetically first label."""
    ids = list(store.ids if ids is None else ids)
    X = store.subset(ids).vectors
    logits, _ = forward(p, X, train_mode=False)
    probs = softmax(np.atleast_2d(logits))
    order = sorted(range(len(classes)), key=classes.__getitem__)
    out = {}
    for i, pr in zip(ids, probs):
        best = order[int(np.argmax(pr[order]))]
        out[i] = (classes[best], pr)
    return out


def per_class_prf(preds: dict, golds: dict, classes=AC_LABELS) -> dict[str, tuple]:
    """label -> (precision, recall, f1, support) for every class seen in preds or golds."""
    if set(preds) != set(golds):
        missing = sorted(set(preds) ^ set(golds))
        raise ValueError(f"prediction and gold id sets differ (e.g. {missing[0]!r})")
    seen = set(preds.values()) | set(golds.values())
    out = {}
    for c in classes:
        if c not in seen:
            continue
        tp = sum(1 for i in golds if golds[i] == c and preds[i] == c)
        fp = sum(1 for i in golds if golds[i] != c and preds[i] == c)
        fn = sum(1 for i in golds if golds[i] == c and preds[i] != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[c] = (prec, rec, f1, tp + fn)
    return out


def macro_f1(preds: dict, golds: dict, classes=AC_LABELS) -> float:
    table = per_class_prf(preds, golds, classes)
    if not table:
        return 0.0
    return float(sum(v[2] for v in table.values()) / len(table))


def stratified_split(labels: dict, seed: int = 0, fractions=(0.8, 0.1, 0.1)) -> dict[str, str]:
    """Per-class shuffled 80/10/10 (by default) assignment of ids to train/val/test."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    out = {}
    for c in sorted(set(labels.values())):
        ids = sorted(i for i, lab in labels.items() if lab == c)
        ids = [ids[j] for j in rng.permutation(len(ids))]
        n = len(ids)
        n_val = int(round(fractions[1] * n))
        n_test = int(round(fractions[2] * n))
        n_train = n - n_val - n_test
        for k, i in enumerate(ids):
            out[i] = "train" if k < n_train else ("val" if k < n_train + n_val else "test")
    return out


# --- checkpoint ----------------------------------------------------------------

def params_to_bytes(p: MlpParams, seed: int = 0) -> bytes:
    hid, ind = p.W1.shape
    head = _HEADER.pack(MAGIC, VERSION, ind, hid, p.W2.shape[0], p.dropout, seed & (2**64 - 1))
    return head + b"".join(np.ascontiguousarray(a, "<f8").tobytes() for a in p.arrays())


def save_params(p: MlpParams, path, seed: int = 0) -> None:
    write_bytes(path, params_to_bytes(p, seed))


def load_params(path) -> MlpParams:
    data = Path(path).read_bytes()
    magic, version, ind, hid, out, dropout, _seed = _HEADER.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"{path}: not an MLP checkpoint (or unsupported version)")
    off = _HEADER.size
    arrays = []
    for shape in ((hid, ind), (hid,), (out, hid), (out,)):
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(data, "<f8", n, off).reshape(shape).copy())
        off += 8 * n
    return MlpParams(*arrays, dropout=dropout)
