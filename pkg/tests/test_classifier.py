import math

import numpy as np
import pytest
from sklearn.metrics import f1_score

from akgfuse import classifier as clf
from akgfuse.kg import AC_LABELS
from akgfuse.store import EmbeddingStore


def test_initial_loss_near_log7():
    cfg = clf.MlpConfig(in_dim=20, hidden_dim=64, seed=1)
    p = clf.init_params(cfg)
    p.W2[:] = 0.0
    p.b2[:] = 0.0
    rng = np.random.default_rng(0)
    loss, _ = clf.loss_and_grad(p, rng.normal(size=(50, 20)), rng.integers(0, 7, 50),
                                train_mode=False)
    assert loss == pytest.approx(math.log(7), abs=1e-12)


def _fd_check(rng):
    cfg = clf.MlpConfig(in_dim=int(rng.integers(2, 8)), hidden_dim=int(rng.integers(2, 10)),
                        out_dim=int(rng.integers(2, 7)), dropout=0.0,
                        seed=int(rng.integers(1 << 30)))
    p = clf.init_params(cfg)
    X = rng.normal(size=(int(rng.integers(1, 6)), cfg.in_dim))
    y = rng.integers(0, cfg.out_dim, len(X))
    _, g = clf.loss_and_grad(p, X, y, train_mode=False)
    worst = 0.0
    for w, gw in zip(p.arrays(), g.arrays()):
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + 1e-6
            lp, _ = clf.loss_and_grad(p, X, y, train_mode=False)
            w[idx] = old - 1e-6
            lm, _ = clf.loss_and_grad(p, X, y, train_mode=False)
            w[idx] = old
            num = (lp - lm) / 2e-6
            worst = max(worst, abs(num - gw[idx]) / max(1e-8, abs(num) + abs(gw[idx])))
    return worst


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    assert max(_fd_check(rng) for _ in range(20)) < 1e-4


def _blobs(seed, n_per=30, dim=10, spread=0.3):
    rng = np.random.default_rng(seed)
    cents = rng.normal(size=(7, dim)) * 3
    ids, rows, labels = [], [], {}
    for c, lab in enumerate(AC_LABELS):
        for k in range(n_per):
            i = f"{lab}_{k:02d}"
            ids.append(i)
            rows.append(cents[c] + spread * rng.normal(size=dim))
            labels[i] = lab
    return EmbeddingStore(ids, np.array(rows), "hybrid"), labels


def test_zero_learning_rate_returns_init():
    store, labels = _blobs(0)
    split = {i: "train" for i in store.ids}
    cfg = clf.MlpConfig(hidden_dim=8, learning_rate=0.0, epochs=3, seed=5, standardize=False)
    p, hist = clf.train(clf.LabeledDataset(store, labels, split), cfg)
    init = clf.init_params(clf.MlpConfig(in_dim=10, hidden_dim=8, seed=5))
    for a, b in zip(p.arrays(), init.arrays()):
        assert np.array_equal(a, b)
    assert len(hist) == 3


def test_standardizer_fold_is_exact():
    rng = np.random.default_rng(3)
    p = clf.init_params(clf.MlpConfig(in_dim=6, hidden_dim=5, seed=0))
    X = rng.normal(loc=4.0, scale=2.5, size=(11, 6))
    mu, sd = clf.standardizer(X)
    folded = clf.fold_standardizer(p, mu, sd)
    assert np.allclose(clf.forward(folded, X)[0], clf.forward(p, (X - mu) / sd)[0], atol=1e-12)


def test_separable_data_is_learned():
    store, labels = _blobs(1)
    split = clf.stratified_split(labels, seed=0)
    cfg = clf.MlpConfig(hidden_dim=32, learning_rate=0.05, epochs=40, seed=0)
    ds = clf.LabeledDataset(store, labels, split)
    p, hist = clf.train(ds, cfg)
    test = ds.part("test")
    preds = clf.predict(p, store, test)
    f1 = clf.macro_f1({i: v[0] for i, v in preds.items()}, {i: labels[i] for i in test})
    assert f1 >= 0.95
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


def test_predict_probabilities_and_tie_break():
    store, _ = _blobs(2, n_per=2)
    p = clf.init_params(clf.MlpConfig(in_dim=10, hidden_dim=4, seed=0))
    out = clf.predict(p, store)
    for lab, pr in out.values():
        assert pr.sum() == pytest.approx(1.0) and lab in AC_LABELS
    # constant logits: every class ties, the alphabetically first wins
    classes = ("zebra", "apple", "mango")
    p3 = clf.MlpParams(p.W1, p.b1, np.zeros((3, 4)), np.zeros(3))
    assert {v[0] for v in clf.predict(p3, store, classes=classes).values()} == {"apple"}


def _prf_oracle(preds, golds):
    # confusion matrix route, kept apart from the library code
    labels = sorted(set(preds.values()) | set(golds.values()))
    k = {c: n for n, c in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)))
    for i in golds:
        cm[k[golds[i]], k[preds[i]]] += 1
    tp = np.diag(cm)
    prec = np.divide(tp, cm.sum(axis=0), out=np.zeros_like(tp), where=cm.sum(axis=0) > 0)
    rec = np.divide(tp, cm.sum(axis=1), out=np.zeros_like(tp), where=cm.sum(axis=1) > 0)
    f1 = np.divide(2 * prec * rec, prec + rec, out=np.zeros_like(tp), where=prec + rec > 0)
    return float(f1.mean())


def test_macro_f1_matches_oracles():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(70, 701))
        golds = {f"i{k}": AC_LABELS[rng.integers(7)] for k in range(n)}
        preds = {i: (g if rng.random() < 0.4 else AC_LABELS[rng.integers(7)])
                 for i, g in golds.items()}
        ours = clf.macro_f1(preds, golds)
        assert abs(ours - _prf_oracle(preds, golds)) < 1e-12
        ids = list(golds)
        sk = f1_score([golds[i] for i in ids], [preds[i] for i in ids], average="macro",
                      zero_division=0)
        assert abs(ours - sk) < 1e-12


def test_macro_f1_edge_cases():
    assert clf.macro_f1({"a": "power"}, {"a": "power"}) == 1.0
    # class only predicted: counted with F1 0
    assert clf.macro_f1({"a": "power", "b": "safety"}, {"a": "power", "b": "power"}) == \
        pytest.approx((2 / 3 + 0) / 2)
    with pytest.raises(ValueError):
        clf.macro_f1({"a": "power"}, {"b": "power"})


def test_stratified_split_proportions():
    labels = {f"x{i}": AC_LABELS[i % 7] for i in range(700)}
    split = clf.stratified_split(labels, seed=1)
    for c in AC_LABELS:
        parts = [split[i] for i, lab in labels.items() if lab == c]
        assert (parts.count("train"), parts.count("val"), parts.count("test")) == (80, 10, 10)
    assert split == clf.stratified_split(labels, seed=1)


def test_checkpoint_roundtrip(tmp_path):
    p = clf.init_params(clf.MlpConfig(in_dim=5, hidden_dim=3, dropout=0.2, seed=0))
    clf.save_params(p, tmp_path / "m.bin", seed=9)
    back = clf.load_params(tmp_path / "m.bin")
    assert back.dropout == 0.2
    for a, b in zip(p.arrays(), back.arrays()):
        assert np.array_equal(a, b)


def test_dim_mismatch():
    p = clf.init_params(clf.MlpConfig(in_dim=5, hidden_dim=3))
    with pytest.raises(ValueError, match="dim"):
        clf.forward(p, np.zeros(4))
