"""Command-line front end for the whole pipeline.

Exit codes: 0 success, 1 domain error (bad input, failed contract), 2 usage.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import statistics
import sys
from pathlib import Path

from . import __version__
from . import classifier as clf
from . import pipeline, plotting, synth
from .fusion import KINDS, fuse
from .ingest import DEFAULT_BASE, build_akg, dump_annotations, image_iri, load_annotations
from .interpret import explain, predicate_filter
from .kg import AC_LABELS, Term, filter_leakage, read_ntriples, serialize_ntriples
from .kge import KgeConfig, image_embeddings, load_model, save_model, train_kge
from .relative import AnchorSet, relativize, select_anchors
from .store import (canonical_json, config_hash, load_store, read_mapping, save_store,
                    write_mapping, write_sidecar, write_text)

log = logging.getLogger("akgfuse")


class CliError(Exception):
    pass


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CliError(f"{path}: invalid JSON ({e})") from None


def _stage_seed(args, stage: str, fallback: int = 0) -> int:
    if args.seed is None:
        return fallback
    return pipeline.derive_seed(args.seed, stage)


def _sidecar(args, path, config=None, **extra) -> None:
    info = {"command": args.command, "version": __version__,
            "seed": args.seed, "config_hash": config_hash(config or {})}
    info.update(extra)
    write_sidecar(path, **info)


def _save_store(args, store, path, config=None, **extra) -> None:
    save_store(store, path, command=args.command, version=__version__, seed=args.seed,
               config_hash=config_hash(config or {}), **extra)


# --- subcommands -----------------------------------------------------------------

def cmd_ingest(args) -> None:
    docs = load_annotations(args.inp)
    g = build_akg(docs, args.base)
    write_text(args.out, serialize_ntriples(g))
    _sidecar(args, args.out, {"base": args.base}, documents=len(docs), triples=len(g),
             input=Path(args.inp).name)
    print(f"{len(docs)} documents -> {len(g)} triples")


def cmd_filter(args) -> None:
    labels = [x.strip() for x in args.labels.split(",") if x.strip()]
    g = read_ntriples(args.inp)
    kept, removed = filter_leakage(g, labels)
    write_text(args.out, serialize_ntriples(kept))
    _sidecar(args, args.out, {"labels": labels}, removed=removed, triples=len(kept),
             input=Path(args.inp).name)
    print(f"removed_count {removed}")


def cmd_train_kge(args) -> None:
    raw = _read_json(args.config) if args.config else {}
    cfg = KgeConfig.from_dict(raw)
    cfg.seed = _stage_seed(args, "kge", cfg.seed)
    g = read_ntriples(args.graph)

    def report(epoch, loss):
        print(f"epoch {epoch:4d} loss {loss:.6f}", flush=True)

    model, losses = train_kge(g, cfg, on_epoch=report)
    save_model(model, args.out)
    _sidecar(args, args.out, cfg.to_dict(), kge_config=cfg.to_dict(),
             entities=len(model.entity_index), relations=len(model.relation_index))
    if args.figure:
        plotting.loss_curve_figure(losses, args.figure)


def _read_manifest(path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    return [x.strip() for x in lines if x.strip() and not x.startswith("#")]


def cmd_encode(args) -> None:
    model = load_model(args.model)
    images = {}
    for entry in _read_manifest(args.images):
        if "://" in entry:
            images[Term("IRI", entry).local_name()] = entry
        else:
            images[entry] = image_iri(entry, args.base).value
    store = image_embeddings(model, images)
    _save_store(args, store, args.out, {"base": args.base}, model=Path(args.model).name)
    print(f"{len(store)} image vectors of dim {store.dim}")


def _train_ids(labels, split) -> list[str]:
    return [i for i in sorted(labels) if split.get(i) == "train"]


def cmd_anchors(args) -> None:
    labels = read_mapping(args.labels)
    split = read_mapping(args.split)
    seed = args.seed if args.seed is not None else 0
    anchors = select_anchors(_train_ids(labels, split), labels, args.per_class, seed)
    anchors.save(args.out)
    _sidecar(args, args.out, {"per_class": args.per_class}, anchor_hash=anchors.digest(),
             labels=Path(args.labels).name, split=Path(args.split).name)
    for c, n in sorted(anchors.shortfalls.items()):
        print(f"warning: class {c} short by {n} anchors", file=sys.stderr)
    print(f"{len(anchors)} anchors ({', '.join(f'{c}={n}' for c, n in anchors.per_class_counts.items())})")


def cmd_relativize(args) -> None:
    store = load_store(args.store)
    anchor_store = load_store(args.anchor_store) if args.anchor_store else store
    anchors = AnchorSet.load(args.anchors)
    rel = relativize(store, anchors, anchor_store)
    _save_store(args, rel, args.out, {"anchors": anchors.digest()},
                anchor_set=anchors.digest(), input=Path(args.store).name)
    print(f"{len(rel)} items x {rel.dim} anchors")


def cmd_fuse(args) -> None:
    a, b = load_store(args.a), load_store(args.b)
    out = fuse(a, b, args.kind)
    _save_store(args, out, args.out, {"kind": args.kind}, fusion=args.kind,
                parts=[Path(args.a).name, Path(args.b).name])
    print(f"{args.kind}: {a.dim} + {b.dim} -> {out.dim}")


def _write_history(history, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_macro_f1"])
    for h in history:
        w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_macro_f1"])])
    write_text(path, buf.getvalue())


def cmd_train_clf(args) -> None:
    store = load_store(args.store)
    labels = read_mapping(args.labels)
    split = read_mapping(args.split)
    raw = _read_json(args.config) if args.config else {}
    cfg = clf.MlpConfig.from_dict(raw)
    cfg.seed = _stage_seed(args, "mlp", cfg.seed)
    ds = clf.LabeledDataset(store, labels, split)
    params, history = clf.train(ds, cfg, on_epoch=lambda h: print(
        f"epoch {h['epoch']:3d} loss {h['train_loss']:.6f} val_macro_f1 {h['val_macro_f1']:.4f}",
        flush=True))
    clf.save_params(params, args.out, cfg.seed)
    _sidecar(args, args.out, cfg.to_dict(), mlp_config=cfg.to_dict(), store=Path(args.store).name)
    if args.history:
        _write_history(history, args.history)
        _sidecar(args, args.history, cfg.to_dict(), store=Path(args.store).name)
        if args.figure:
            plotting.history_figure(history, args.figure)


def _prf_table(table) -> str:
    lines = [f"{'label':<10} {'precision':>9} {'recall':>9} {'f1':>9} {'support':>8}"]
    for c, (p, r, f, n) in table.items():
        lines.append(f"{c:<10} {p:9.4f} {r:9.4f} {f:9.4f} {n:8d}")
    return "\n".join(lines)


def write_predictions(preds, path) -> None:
    lines = ["id\tlabel\t" + "\t".join(AC_LABELS)]
    for i in sorted(preds):
        lab, probs = preds[i]
        lines.append(f"{i}\t{lab}\t" + "\t".join(repr(float(p)) for p in probs))
    write_text(path, "\n".join(lines) + "\n")


def cmd_eval(args) -> None:
    params = clf.load_params(args.clf)
    store = load_store(args.store)
    labels = read_mapping(args.labels)
    if args.split == "all":
        ids = [i for i in store.ids if i in labels]
    else:
        if not args.split_file:
            raise CliError("--split-file is required unless --split all")
        split = read_mapping(args.split_file)
        ids = [i for i in store.ids if split.get(i) == args.split]
    if not ids:
        raise CliError(f"no items in split {args.split!r}")
    preds = clf.predict(params, store, ids)
    pred_labels = {i: v[0] for i, v in preds.items()}
    golds = {i: labels[i] for i in ids}
    table = clf.per_class_prf(pred_labels, golds)
    f1 = clf.macro_f1(pred_labels, golds)
    print(f"macro_f1 {f1:.6f}")
    print(_prf_table(table))
    if args.predictions:
        write_predictions(preds, args.predictions)
        _sidecar(args, args.predictions, {"split": args.split}, clf=Path(args.clf).name,
                 store=Path(args.store).name, macro_f1=f1)
    if args.figure:
        plotting.confusion_figure(golds, pred_labels, AC_LABELS, args.figure)


def cmd_explain(args) -> None:
    layout = _read_json(args.spaces)
    root = Path(args.spaces).parent

    def _p(x):
        # paths inside the spaces file are relative to it
        return Path(x) if Path(x).is_absolute() else root / x

    if args.labels:
        labels = read_mapping(args.labels)
    elif layout.get("labels"):
        labels = read_mapping(_p(layout["labels"]))
    else:
        raise CliError("labels file needed (--labels or 'labels' in the spaces file)")
    spaces = {}
    for entry in layout["spaces"]:
        q = load_store(_p(entry["query"]))
        r = load_store(_p(entry["reference"])) if entry.get("reference") else q
        if entry.get("reference_ids"):
            r = r.subset([i for i in entry["reference_ids"] if i in r])
        spaces[entry["name"]] = (q, r)
    graph = read_ntriples(args.graph) if args.graph else None
    preds = predicate_filter(args.predicates)
    report = explain(args.test_id, spaces, graph, labels, args.k, args.base,
                     max_hops=args.max_hops, predicates=preds)
    write_text(args.out, report.dumps())
    text_path = Path(args.out).with_suffix(".txt")
    write_text(text_path, report.to_text())
    _sidecar(args, args.out, {"k": args.k, "max_hops": args.max_hops,
                              "predicates": args.predicates}, test_id=args.test_id)
    print(report.to_text(), end="")


def cmd_synth(args) -> None:
    seed = args.seed if args.seed is not None else 0
    docs = synth.gen_annotations(args.n, seed, args.class_signal,
                                 args.kg_classes.split(",") if args.kg_classes else None)
    dump_annotations(docs, args.out_docs)
    cfg = vars(args).copy()
    cfg.pop("func", None)
    _sidecar(args, args.out_docs, cfg, documents=len(docs))
    if args.out_cv:
        cv = synth.gen_cv_store(docs, args.cv_dim, seed, args.modality_signal,
                                args.cv_classes.split(",") if args.cv_classes else None)
        _save_store(args, cv, args.out_cv, cfg)
    labels = {d.image_id: d.ac_label for d in docs}
    if args.out_labels:
        write_mapping(labels, args.out_labels)
        _sidecar(args, args.out_labels, cfg)
    if args.out_split:
        write_mapping(clf.stratified_split(labels, pipeline.derive_seed(seed, "split")),
                      args.out_split)
        _sidecar(args, args.out_split, cfg, split_seed=pipeline.derive_seed(seed, "split"))
    print(f"{len(docs)} synthetic documents")


def cmd_split(args) -> None:
    docs = load_annotations(args.docs)
    labels = {d.image_id: d.ac_label for d in docs}
    write_mapping(labels, args.out_labels)
    _sidecar(args, args.out_labels, input=Path(args.docs).name)
    seed = args.seed if args.seed is not None else 0
    split_seed = pipeline.derive_seed(seed, "split")
    write_mapping(clf.stratified_split(labels, split_seed), args.out_split)
    _sidecar(args, args.out_split, {"fractions": [0.8, 0.1, 0.1]}, split_seed=split_seed)
    print(f"{len(labels)} labelled ids")


def run_ablation(cfg: dict, base_dir: Path = Path("."), out_dir: Path | None = None,
                 echo=print) -> tuple[list[dict], list[dict]]:
    """Run the grid for every seed; returns (per-seed rows, per-input median rows)."""
    seeds = cfg.get("seeds", [cfg.get("seed", 0)])
    per_seed = []
    for seed in seeds:
        if "synth" in cfg:
            s = cfg["synth"]
            docs = synth.gen_annotations(s.get("n", 700), seed, s.get("class_signal", 0.8),
                                         s.get("kg_classes"))
            cv = synth.gen_cv_store(docs, s.get("cv_dim", 64), seed,
                                    s.get("modality_signal", 0.5), s.get("cv_classes"))
        else:
            docs = load_annotations(base_dir / cfg["docs"])
            cv = load_store(base_dir / cfg["cv_store"])
        enc = pipeline.encode(docs, cv, seed, cfg.get("kge"), cfg.get("per_class", 100))
        rows = pipeline.run_grid(enc, seed, cfg.get("mlp"))
        for r in rows:
            echo(f"seed {seed:>6}  {r['input']:<30} macro_f1 {r['macro_f1']:.4f}")
        per_seed.extend(rows)
    summary = []
    for name, paradigm, _ in pipeline.GRID:
        vals = [r["macro_f1"] for r in per_seed if r["input"] == name]
        dims = {r["dim"] for r in per_seed if r["input"] == name}
        summary.append({"input": name, "paradigm": paradigm, "dim": min(dims),
                        "macro_f1": statistics.median(vals), "macro_f1_min": min(vals),
                        "macro_f1_max": max(vals), "n_seeds": len(vals)})
    return per_seed, summary


def _csv(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def cmd_ablation(args) -> None:
    cfg = _read_json(args.config)
    if args.seed is not None and "seeds" not in cfg:
        cfg["seed"] = args.seed
    base_dir = Path(args.config).parent
    out = Path(args.out or cfg.get("out", "ablation.csv"))
    per_seed, summary = run_ablation(cfg, base_dir)
    write_text(out, _csv(summary, ["input", "paradigm", "dim", "macro_f1", "macro_f1_min",
                                   "macro_f1_max", "n_seeds"]))
    by_seed = out.with_name(out.stem + "_by_seed.csv")
    write_text(by_seed, _csv(per_seed, ["seed", "input", "paradigm", "dim", "macro_f1",
                                        "val_macro_f1", "final_train_loss"]))
    run_config = json.loads(canonical_json(cfg))
    _sidecar(args, out, cfg, run_config=run_config)
    _sidecar(args, by_seed, cfg, run_config=run_config)
    plotting.ablation_figure(summary, out.with_suffix(".png"))
    print(_csv(summary, ["input", "paradigm", "dim", "macro_f1"]), end="")


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="global seed; stages derive their own sub-seeds from it")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded numerics for bit-identical reruns")
    common.add_argument("--threads", type=int, default=None, help="numeric library threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="akgfuse", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("ingest", cmd_ingest, "annotation JSON -> canonical N-Triples graph")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--base", default=DEFAULT_BASE)

    sp = add("filter", cmd_filter, "remove triples mentioning target labels")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--labels", default=",".join(AC_LABELS))
    sp.add_argument("--out", required=True)

    sp = add("train-kge", cmd_train_kge, "train TransE on a filtered graph")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--figure", help="write the loss curve PNG here")

    sp = add("encode", cmd_encode, "export image vectors from a TransE checkpoint")
    sp.add_argument("--model", required=True)
    sp.add_argument("--images", required=True, help="file with one image id or IRI per line")
    sp.add_argument("--out", required=True)
    sp.add_argument("--base", default=DEFAULT_BASE)

    sp = add("anchors", cmd_anchors, "class-stratified anchor selection")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--per-class", type=int, default=100)
    sp.add_argument("--out", required=True)

    sp = add("relativize", cmd_relativize, "cosine similarities to anchors")
    sp.add_argument("--store", required=True)
    sp.add_argument("--anchors", required=True)
    sp.add_argument("--anchor-store")
    sp.add_argument("--out", required=True)

    sp = add("fuse", cmd_fuse, "concatenate or multiply two stores")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--kind", choices=KINDS, default="concat")
    sp.add_argument("--out", required=True)

    sp = add("train-clf", cmd_train_clf, "train the MLP classifier")
    sp.add_argument("--store", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--history")
    sp.add_argument("--figure", help="write the training history PNG here")

    sp = add("eval", cmd_eval, "Macro F1 and per-class table")
    sp.add_argument("--clf", required=True)
    sp.add_argument("--store", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--split", default="test", help="train, val, test or all")
    sp.add_argument("--split-file")
    sp.add_argument("--predictions", help="write id/label/probabilities TSV here")
    sp.add_argument("--figure", help="write a confusion matrix PNG here")

    sp = add("explain", cmd_explain, "nearest-neighbour report for one test image")
    sp.add_argument("--test-id", required=True)
    sp.add_argument("--spaces", required=True)
    sp.add_argument("--graph")
    sp.add_argument("--labels")
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--max-hops", type=int, default=2)
    sp.add_argument("--predicates", nargs="*", default=None,
                    help="predicate IRIs that make a node count as shared ('all' for any)")
    sp.add_argument("--base", default=DEFAULT_BASE)
    sp.add_argument("--out", required=True)

    sp = add("synth", cmd_synth, "synthetic annotation corpus and CV vectors")
    sp.add_argument("--n", type=int, default=700)
    sp.add_argument("--class-signal", type=float, default=0.8)
    sp.add_argument("--modality-signal", type=float, default=0.5)
    sp.add_argument("--kg-classes", help="comma-separated classes carried by the graph")
    sp.add_argument("--cv-classes", help="comma-separated classes carried by CV vectors")
    sp.add_argument("--cv-dim", type=int, default=64)
    sp.add_argument("--out-docs", required=True)
    sp.add_argument("--out-cv")
    sp.add_argument("--out-labels")
    sp.add_argument("--out-split")

    sp = add("split", cmd_split, "labels and stratified split files from documents")
    sp.add_argument("--docs", required=True)
    sp.add_argument("--out-labels", required=True)
    sp.add_argument("--out-split", required=True)

    sp = add("ablation", cmd_ablation, "run the full embedding/fusion grid")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    return p


def _limit_threads(args):
    n = 1 if args.deterministic else args.threads
    if n is None:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads(args)
    try:
        args.func(args)
    except (CliError, ValueError, KeyError, OSError, RuntimeError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"akgfuse {args.command}: error: {msg}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return 0


if __name__ == "__main__":
    sys.exit(main())
