"""Annotation documents -> situated annotation triples.

Each detector output becomes an Annotation node linked to its image, the
situation that produced it, a lexical entry, a role, a strength and the
ConceptNet concept typing it.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from urllib.parse import quote

from .kg import (AC_LABELS, IS_ANNOTATION_OF, RDF_TYPE, SA, TYPED_BY, XSD, Graph,
                 Triple, iri, literal)
from .store import write_text

DEFAULT_BASE = "http://example.org/akg"
CONCEPTNET = "http://conceptnet.io/c/en/"
WORDNET = "https://w3id.org/framester/wn/wn30/instances/synset-"
FRAMES = "https://w3id.org/framester/framenet/abox/frame/"
RDFS_SUBCLASS = iri("http://www.w3.org/2000/01/rdf-schema#subClassOf")

OBJECT_THRESHOLD = 0.4
COLOR_DISCARD_DISTANCE = 50.0

# units carrying a single (label, score) detection
SCALAR_UNITS = ("action", "age_tier", "art_style", "emotion")
UNITS = ("action", "age_tier", "art_style", "colors", "emotion", "human_presence",
         "caption", "objects")
SITUATION_FIELDS = ("model_name", "backbone", "dataset", "timestamp", "location",
                    "annotator_id")

GENERATED_IN = iri(SA + "generatedIn")
USES_LEXICAL_ENTRY = iri(SA + "usesLexicalEntry")
HAS_STRENGTH = iri(SA + "hasStrength")
HAS_ROLE = iri(SA + "hasRole")
IMAGE_CLASS = iri(SA + "Image")
IMAGE_SITUATION_CLASS = iri(SA + "ImageAnnotationSituation")


class DocumentError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationDoc:
    image_id: str
    ac_label: str
    action: tuple[str, float] | None = None
    age_tier: tuple[str, float] | None = None
    art_style: tuple[str, float] | None = None
    colors: tuple[tuple[int, int, int], ...] = ()
    emotion: tuple[str, float] | None = None
    human_presence: tuple[bool, float] | None = None
    caption: str = ""
    objects: tuple[tuple[str, float], ...] = ()
    synsets: tuple[str, ...] = ()
    frames: tuple[str, ...] = ()
    situations: dict = field(default_factory=dict, compare=False, hash=False)
    source: str = field(default="", compare=False)

    def present_units(self) -> list[str]:
        out = [u for u in SCALAR_UNITS if getattr(self, u) is not None]
        if self.colors:
            out.append("colors")
        if self.human_presence is not None:
            out.append("human_presence")
        if self.objects:
            out.append("objects")
        return sorted(out)

    def to_json(self) -> dict:
        det: dict = {}
        for u in SCALAR_UNITS:
            v = getattr(self, u)
            if v is not None:
                det[u] = {"label": v[0], "score": v[1]}
        if self.human_presence is not None:
            det["human_presence"] = {"value": self.human_presence[0],
                                     "score": self.human_presence[1]}
        if self.colors:
            det["colors"] = [list(c) for c in self.colors]
        if self.caption:
            det["caption"] = self.caption
        if self.objects:
            det["objects"] = [{"label": lab, "score": s} for lab, s in self.objects]
        if self.synsets:
            det["synsets"] = list(self.synsets)
        if self.frames:
            det["frames"] = list(self.frames)
        return {"image_id": self.image_id, "ac_label": self.ac_label,
                "detections": det,
                "situations": {k: dict(v) for k, v in sorted(self.situations.items())}}


# --- loading & validation ------------------------------------------------------

def _score(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise DocumentError(f"{where}: score must be a number")
    v = float(v)
    if not (0.0 <= v <= 1.0) or math.isnan(v):
        raise DocumentError(f"{where}: score {v} outside [0, 1]")
    return v


def _label_score(rec, where: str) -> tuple[str, float]:
    if not isinstance(rec, dict) or "label" not in rec or "score" not in rec:
        raise DocumentError(f"{where}: expected an object with 'label' and 'score'")
    if not isinstance(rec["label"], str) or not rec["label"]:
        raise DocumentError(f"{where}.label: expected a non-empty string")
    return rec["label"], _score(rec["score"], f"{where}.score")


def _str_list(v, where: str) -> tuple[str, ...]:
    if not isinstance(v, list) or not all(isinstance(x, str) and x for x in v):
        raise DocumentError(f"{where}: expected a list of non-empty strings")
    return tuple(v)


def parse_doc(raw: dict, where: str = "document") -> AnnotationDoc:
    if not isinstance(raw, dict):
        raise DocumentError(f"{where}: expected a JSON object")
    image_id = raw.get("image_id")
    if not isinstance(image_id, str) or not image_id or any(c.isspace() for c in image_id):
        raise DocumentError(f"{where}.image_id: expected a non-empty string without whitespace")
    ac = raw.get("ac_label")
    if ac not in AC_LABELS:
        raise DocumentError(f"{where}.ac_label: {ac!r} is not one of {', '.join(AC_LABELS)}")
    det = raw.get("detections", {})
    if not isinstance(det, dict):
        raise DocumentError(f"{where}.detections: expected an object")
    unknown = set(det) - set(UNITS) - {"synsets", "frames"}
    if unknown:
        raise DocumentError(f"{where}.detections: unknown field {sorted(unknown)[0]!r}")
    kw: dict = {}
    for u in SCALAR_UNITS:
        if u in det:
            kw[u] = _label_score(det[u], f"{where}.detections.{u}")
    if "human_presence" in det:
        hp = det["human_presence"]
        if not isinstance(hp, dict) or not isinstance(hp.get("value"), bool):
            raise DocumentError(f"{where}.detections.human_presence.value: expected a boolean")
        kw["human_presence"] = (hp["value"], _score(hp.get("score"),
                                                     f"{where}.detections.human_presence.score"))
    if "colors" in det:
        cols = det["colors"]
        if not isinstance(cols, list):
            raise DocumentError(f"{where}.detections.colors: expected a list")
        parsed = []
        for i, c in enumerate(cols):
            if (not isinstance(c, list) or len(c) != 3
                    or not all(isinstance(x, int) and not isinstance(x, bool) and 0 <= x <= 255
                               for x in c)):
                raise DocumentError(f"{where}.detections.colors[{i}]: expected 3 integers in [0, 255]")
            parsed.append(tuple(c))
        kw["colors"] = tuple(parsed)
    if "caption" in det:
        if not isinstance(det["caption"], str):
            raise DocumentError(f"{where}.detections.caption: expected a string")
        kw["caption"] = det["caption"]
    if "objects" in det:
        if not isinstance(det["objects"], list):
            raise DocumentError(f"{where}.detections.objects: expected a list")
        kw["objects"] = tuple(_label_score(o, f"{where}.detections.objects[{i}]")
                              for i, o in enumerate(det["objects"]))
    for key in ("synsets", "frames"):
        if key in det:
            kw[key] = _str_list(det[key], f"{where}.detections.{key}")
    sits = raw.get("situations", {})
    if not isinstance(sits, dict):
        raise DocumentError(f"{where}.situations: expected an object")
    for unit, meta in sits.items():
        if unit not in UNITS:
            raise DocumentError(f"{where}.situations: unknown unit {unit!r}")
        if not isinstance(meta, dict):
            raise DocumentError(f"{where}.situations.{unit}: expected an object")
        for f in SITUATION_FIELDS:
            if not isinstance(meta.get(f), str) or not meta[f]:
                raise DocumentError(f"{where}.situations.{unit}.{f}: expected a non-empty string")
    doc = AnnotationDoc(image_id=image_id, ac_label=ac,
                        situations={u: {f: m[f] for f in SITUATION_FIELDS} for u, m in sits.items()},
                        source=where, **kw)
    missing = [u for u in doc.present_units() if u not in doc.situations]
    if missing:
        raise DocumentError(f"{where}.situations: missing metadata for detected unit {missing[0]!r}")
    return doc


def load_annotations(path) -> list[AnnotationDoc]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DocumentError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, list):
        raise DocumentError(f"{path}: expected a JSON array of annotation documents")
    return [parse_doc(d, f"{path.name}[{i}]") for i, d in enumerate(data)]


def dump_annotations(docs, path) -> None:
    text = json.dumps([d.to_json() for d in docs], indent=1, sort_keys=True)
    write_text(path, text + "\n")


# --- post-processing rules -----------------------------------------------------

@dataclass(frozen=True)
class Css3ColorTable:
    entries: tuple[tuple[str, tuple[int, int, int]], ...]

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if not names:
            raise ValueError("color table is empty")
        if len(set(names)) != len(names):
            raise ValueError("color names must be unique")


@lru_cache(maxsize=None)
def css3_table() -> Css3ColorTable:
    raw = json.loads(resources.files("akgfuse").joinpath("data/css3_colors.json").read_text())
    return Css3ColorTable(tuple((c["name"], tuple(c["rgb"])) for c in raw["colors"]))


@lru_cache(maxsize=None)
def conceptnet_alignment() -> dict[str, dict[str, str]]:
    raw = json.loads(resources.files("akgfuse").joinpath("data/conceptnet_alignment.json").read_text())
    return raw["units"]


def nearest_css3_color(rgb, table: Css3ColorTable | None = None) -> tuple[str, float] | None:
    """Closest CSS3 color by Euclidean RGB distance, or None when >= 50 away."""
    table = table or css3_table()
    best = None
    for name, ref in table.entries:
        d = math.sqrt(sum((a - b) ** 2 for a, b in zip(rgb, ref)))
        if best is None or (d, name) < best:
            best = (d, name)
    if best[0] >= COLOR_DISCARD_DISTANCE:
        return None
    return best[1], best[0]


def filter_objects(objects) -> list[tuple[str, float]]:
    return [(lab, s) for lab, s in objects if s >= OBJECT_THRESHOLD]


def snap_colors(colors, table: Css3ColorTable | None = None) -> list[str]:
    # several detected colors may snap to one name; keep the first occurrence
    names: list[str] = []
    for c in colors:
        hit = nearest_css3_color(c, table)
        if hit and hit[0] not in names:
            names.append(hit[0])
    return names


# --- reification ---------------------------------------------------------------

def _slug(text: str) -> str:
    return quote(text.strip().replace(" ", "_"), safe="-_.~")


def _score_literal(v: float):
    return literal(f"{v:.4f}", XSD + "decimal")


def _camel(unit: str) -> str:
    return "".join(p.capitalize() for p in unit.split("_"))


def situation_class(unit: str, base: str = DEFAULT_BASE):
    return iri(f"{base}/ontology/{_camel(unit)}AnnotationSituation")


def situation_iri(unit: str, meta: dict, base: str = DEFAULT_BASE):
    key = json.dumps([unit] + [meta[f] for f in SITUATION_FIELDS], ensure_ascii=False)
    digest = hashlib.sha1(key.encode("utf-8")).hexdigest()[:12]
    return iri(f"{base}/situation/{unit}/{digest}")


def image_iri(image_id: str, base: str = DEFAULT_BASE):
    return iri(f"{base}/image/{_slug(image_id)}")


def concept_iri(unit: str, label: str, base: str = DEFAULT_BASE):
    table = conceptnet_alignment().get(unit, {})
    if label in table:
        return iri(table[label])
    return iri(f"{base}/unaligned/{_slug(label)}")


def _synset_iri(s: str):
    return iri(s if "://" in s else WORDNET + _slug(s))


def _frame_iri(s: str):
    return iri(s if "://" in s else FRAMES + _slug(s))


def _pred(name: str, base: str):
    return iri(f"{base}/ontology/{name}")


def tbox(base: str = DEFAULT_BASE) -> Graph:
    return Graph(Triple(situation_class(u, base), RDFS_SUBCLASS, IMAGE_SITUATION_CLASS)
                 for u in UNITS)


def _situation_triples(unit: str, meta: dict, base: str) -> list[Triple]:
    node = situation_iri(unit, meta, base)
    out = [Triple(node, RDF_TYPE, situation_class(unit, base))]
    for f in SITUATION_FIELDS:
        out.append(Triple(node, _pred(f, base), literal(meta[f])))
    return out


def prepare_doc(doc: AnnotationDoc, table: Css3ColorTable | None = None):
    """Apply object thresholding; returns (doc, snapped color names)."""
    return replace(doc, objects=tuple(filter_objects(doc.objects))), snap_colors(doc.colors, table)


def build_image_graph(doc: AnnotationDoc, base: str = DEFAULT_BASE,
                      table: Css3ColorTable | None = None) -> Graph:
    doc, color_names = prepare_doc(doc, table)
    img = image_iri(doc.image_id, base)
    g = Graph()
    g.add(Triple(img, RDF_TYPE, IMAGE_CLASS))
    g.add(Triple(img, _pred("hasAbstractConcept", base), iri(CONCEPTNET + doc.ac_label)))
    if doc.caption:
        g.add(Triple(img, _pred("hasCaption", base), literal(doc.caption, language="en")))
        if "caption" in doc.situations:
            meta = doc.situations["caption"]
            g.add(Triple(img, _pred("captionGeneratedIn", base), situation_iri("caption", meta, base)))
            g.update(_situation_triples("caption", meta, base))
    for s in doc.synsets:
        g.add(Triple(img, TYPED_BY, _synset_iri(s)))
    for fr in doc.frames:
        g.add(Triple(img, TYPED_BY, _frame_iri(fr)))

    labels: list[tuple[str, str, float | None]] = []
    for u in SCALAR_UNITS:
        v = getattr(doc, u)
        if v is not None:
            labels.append((u, v[0], v[1]))
    if doc.human_presence is not None:
        present, score = doc.human_presence
        labels.append(("human_presence", "human" if present else "no_human", score))
    labels += [("colors", name, None) for name in color_names]
    labels += [("objects", lab, s) for lab, s in doc.objects]

    ordinals: dict[str, int] = {}
    for unit, label, score in labels:
        meta = doc.situations.get(unit)
        if meta is None:
            raise DocumentError(f"{doc.source or doc.image_id}: no situation metadata for unit {unit!r}")
        n = ordinals.get(unit, 0)
        ordinals[unit] = n + 1
        ann = iri(f"{base}/annotation/{_slug(doc.image_id)}/{unit}/{n}")
        sit = situation_iri(unit, meta, base)
        g.add(Triple(ann, IS_ANNOTATION_OF, img))
        g.add(Triple(ann, GENERATED_IN, sit))
        g.add(Triple(ann, USES_LEXICAL_ENTRY, iri(f"{base}/lexical_entry/{_slug(label)}")))
        if score is not None:
            g.add(Triple(ann, HAS_STRENGTH, _score_literal(score)))
        g.add(Triple(ann, HAS_ROLE, iri(f"{base}/role/{unit}")))
        g.add(Triple(ann, TYPED_BY, concept_iri(unit, label, base)))
        g.update(_situation_triples(unit, meta, base))
    return g


def build_akg(docs, base: str = DEFAULT_BASE, table: Css3ColorTable | None = None) -> Graph:
    seen: set[str] = set()
    for d in docs:
        if d.image_id in seen:
            raise DocumentError(f"duplicate image_id {d.image_id!r}")
        seen.add(d.image_id)
    g = tbox(base)
    for d in sorted(docs, key=lambda d: d.image_id):
        g.update(build_image_graph(d, base, table))
    return g
