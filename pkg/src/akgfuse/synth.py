"""Synthetic annotation corpora and vision-feature stand-ins.

Each class owns a signature of perceptual concepts (one action, art style,
emotion and color, two objects). ``class_signal`` is the probability that a
signature slot is filled with the signature concept rather than a uniform
draw from the whole vocabulary. ``signal_classes`` limits which classes get
a signature at all; the rest are pure noise in that modality.
"""
from __future__ import annotations

import numpy as np

from .ingest import AnnotationDoc, conceptnet_alignment, css3_table
from .kg import AC_LABELS
from .store import EmbeddingStore

SITUATIONS = {
    "action": ("vit-har", "ViT", "HAR"),
    "age_tier": ("vit-age", "ViT", "FairFace"),
    "art_style": ("vit-artbench", "ViT", "ArtBench-10"),
    "colors": ("colorthief", "ColorThief", "N/A"),
    "emotion": ("artemis", "Artemis", "Artemis"),
    "human_presence": ("vit-fashion", "ViT", "DeepFashion"),
    "caption": ("blip", "BLIP", "COCO"),
    "objects": ("detr", "DETR", "COCO"),
}
FRAME_POOL = ("Being_located", "Motion", "Ingestion", "Locale", "Natural_features",
              "People", "Buildings", "Vehicle", "Clothing", "Weather")


def _vocab():
    al = conceptnet_alignment()
    vocab = {u: sorted(al[u]) for u in ("action", "age_tier", "art_style", "emotion", "objects")}
    vocab["colors"] = [n for n, _ in css3_table().entries]
    return vocab


def _situations(units) -> dict:
    return {u: {"model_name": SITUATIONS[u][0], "backbone": SITUATIONS[u][1],
                "dataset": SITUATIONS[u][2], "timestamp": "2024-01-01T00:00:00Z",
                "location": "synthetic", "annotator_id": f"synthkit-{u}"} for u in units}


def class_signatures(seed: int, classes=AC_LABELS) -> dict[str, dict]:
    """Disjoint per-class signature concepts."""
    rng = np.random.default_rng([seed, 7])
    vocab = _vocab()
    n = len(classes)
    picks = {u: [vocab[u][j] for j in rng.permutation(len(vocab[u]))]
             for u in ("action", "art_style", "emotion", "objects", "colors")}
    sig = {}
    for k, c in enumerate(classes):
        sig[c] = {"action": picks["action"][k], "art_style": picks["art_style"][k],
                  "emotion": picks["emotion"][k], "colors": picks["colors"][k],
                  "objects": [picks["objects"][k], picks["objects"][n + k]]}
    return sig


def _jitter(rgb, rng, amount: int = 8):
    return tuple(int(np.clip(v + rng.integers(-amount, amount + 1), 0, 255)) for v in rgb)


def gen_annotations(n_images: int, seed: int = 0, class_signal: float = 0.8,
                    signal_classes=None, classes=AC_LABELS) -> list[AnnotationDoc]:
    if n_images < len(classes):
        raise ValueError(f"need at least {len(classes)} images")
    if not 0.0 <= class_signal <= 1.0:
        raise ValueError("class_signal must lie in [0, 1]")
    signal_classes = set(classes if signal_classes is None else signal_classes)
    rng = np.random.default_rng(seed)
    vocab = _vocab()
    rgb = dict(css3_table().entries)
    sig = class_signatures(seed, classes)
    labels = [classes[i % len(classes)] for i in range(n_images)]
    labels = [labels[j] for j in rng.permutation(n_images)]
    width = len(str(n_images - 1))
    docs = []
    for i, lab in enumerate(labels):
        strong = lab in signal_classes

        def pick(unit, slot=None):
            planted = sig[lab][unit] if slot is None else sig[lab][unit][slot]
            if strong and rng.random() < class_signal:
                return planted
            return vocab[unit][rng.integers(len(vocab[unit]))]

        action = pick("action")
        style = pick("art_style")
        emotion = pick("emotion")
        color = pick("colors")
        objs = [pick("objects", 0), pick("objects", 1)]
        objs.append(vocab["objects"][rng.integers(len(vocab["objects"]))])
        objects = [(o, round(float(rng.uniform(0.5, 1.0)), 3)) for o in objs]
        # below-threshold detections exercise the object filter
        objects.append((vocab["objects"][rng.integers(len(vocab["objects"]))],
                        round(float(rng.uniform(0.05, 0.35)), 3)))
        colors = [_jitter(rgb[color], rng), tuple(int(x) for x in rng.integers(0, 256, 3))]
        human = bool(rng.random() < 0.5)
        age = vocab["age_tier"][rng.integers(len(vocab["age_tier"]))]
        head = objs[0]
        caption = f"a {head} and a {objs[1]} in a {style.replace('_', ' ').lower()} scene"
        synsets = sorted({f"{o.replace(' ', '_')}.n.01" for o in objs[:2]})
        frames = [FRAME_POOL[rng.integers(len(FRAME_POOL))]]
        docs.append(AnnotationDoc(
            image_id=f"img{i:0{width}d}", ac_label=lab,
            action=(action, round(float(rng.uniform(0.3, 1.0)), 3)),
            age_tier=(age, round(float(rng.uniform(0.3, 1.0)), 3)) if human else None,
            art_style=(style, round(float(rng.uniform(0.3, 1.0)), 3)),
            colors=tuple(colors),
            emotion=(emotion, round(float(rng.uniform(0.3, 1.0)), 3)),
            human_presence=(human, round(float(rng.uniform(0.5, 1.0)), 3)),
            caption=caption, objects=tuple(objects), synsets=tuple(synsets),
            frames=tuple(frames),
            situations=_situations([u for u in SITUATIONS
                                    if u != "age_tier" or human]),
        ))
    return docs


def class_centroids(dim: int, seed: int, n: int = len(AC_LABELS)) -> np.ndarray:
    """n mutually orthogonal unit vectors in R^dim."""
    if dim < n:
        raise ValueError(f"dim must be >= {n}")
    rng = np.random.default_rng([seed, 11])
    q, _ = np.linalg.qr(rng.normal(size=(dim, n)))
    return q.T


def gen_cv_store(docs, dim: int = 64, seed: int = 0, modality_signal: float = 0.5,
                 signal_classes=None, classes=AC_LABELS) -> EmbeddingStore:
    """Unit vectors mixing a class centroid with Gaussian noise.

    Items of classes outside ``signal_classes`` are pure noise.
    """
    if not 0.0 <= modality_signal <= 1.0:
        raise ValueError("modality_signal must lie in [0, 1]")
    signal_classes = set(classes if signal_classes is None else signal_classes)
    cents = class_centroids(dim, seed, len(classes))
    cidx = {c: k for k, c in enumerate(classes)}
    rng = np.random.default_rng([seed, 13])
    rows = []
    for d in docs:
        noise = rng.normal(size=dim)
        noise /= np.linalg.norm(noise)
        s = modality_signal if d.ac_label in signal_classes else 0.0
        v = s * cents[cidx[d.ac_label]] + (1.0 - s) * noise
        nv = np.linalg.norm(v)
        rows.append(v / nv if nv > 0 else noise)
    return EmbeddingStore([d.image_id for d in docs], np.array(rows).reshape(len(docs), dim),
                          "cv-absolute", {"modality_signal": modality_signal, "seed": seed})
