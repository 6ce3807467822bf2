"""Command-line pipeline: synth, build, edit, train, predict, eval, inspect.

Stages talk only through files. Every output is written atomically and
carries the resolved run configuration under ``config``. Exit status is 2
for usage or configuration errors, 3 for unreadable or malformed inputs and
4 for failures while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .batching import tensorize
from .config import ConfigError, ConfigSources, RunConfig, read_config_file
from .decoder import Task, forward
from .editing import edit_graph, temporal_degrees
from .graph import GraphValidationError, VideoGraph
from .io import atomic_write_text, export_dot, load_frame_graphs, load_video_graph, save_video_graph
from .metrics import map_over_criteria, video_macro_f1
from .nn import CheckpointError
from .synth import generate_dataset
from .temporal import assemble_video_graph
from .training import (
    LabeledSample,
    LabelError,
    TrainConfig,
    load_model,
    load_train_state,
    save_model,
    save_train_state,
    train,
)

log = logging.getLogger("latentgraph")

EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 2, 3, 4
GRAPHS_KIND = "video_graphs"


class InputError(ValueError):
    """An input file is missing, unreadable or malformed."""


def _dump(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def _read_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InputError(f"{path}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc


def _guard(path, fn, *args, **kwargs):
    """Run a loader and prefix any format error with the file name."""
    try:
        return fn(path, *args, **kwargs)
    except FileNotFoundError as exc:
        raise InputError(f"{path}: no such file") from exc
    except (GraphValidationError, CheckpointError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from exc


# -- manifests --------------------------------------------------------------

class Manifest:
    """A dataset manifest; sample paths are relative to the manifest file."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.doc = _read_json(self.path)
        if not isinstance(self.doc, dict) or not isinstance(self.doc.get("samples"), list):
            raise InputError(f"{self.path}: not a manifest (no 'samples' list)")
        self.meta = self.doc.get("meta", {})
        for key in ("dim", "num_classes", "num_spatial_relations"):
            if key not in self.meta:
                raise InputError(f"{self.path}: manifest meta lacks {key!r}")

    @property
    def root(self) -> Path:
        return self.path.parent

    @property
    def holds_graphs(self) -> bool:
        return self.doc.get("kind") == GRAPHS_KIND

    @property
    def task(self) -> str | None:
        tasks = {s.get("task") for s in self.doc["samples"]} - {None}
        return tasks.pop() if len(tasks) == 1 else None

    def entries(self, split: str | None = None) -> list[dict]:
        return [s for s in self.doc["samples"] if split is None or s.get("split") == split]

    def graph(self, entry: dict, rc: RunConfig) -> VideoGraph:
        path = self.root / entry["path"]
        if self.holds_graphs:
            return _guard(path, load_video_graph)
        frames = _guard(path, load_frame_graphs, dim=self.meta["dim"])
        return assemble_video_graph(frames, rc.schedule(len(frames)), self.meta["num_classes"],
                                    self.meta["num_spatial_relations"], self.meta["dim"])

    def global_feats(self, entry: dict) -> np.ndarray | None:
        if "global_path" not in entry:
            return None
        return np.asarray(_read_json(self.root / entry["global_path"]), dtype=np.float32)

    def sample(self, entry: dict, rc: RunConfig) -> LabeledSample:
        g = self.graph(entry, rc)
        labels = np.asarray(entry["labels"]) if "labels" in entry else None
        if rc.task is Task.CLIP_MULTILABEL:
            return LabeledSample(entry["sample_id"], g, clip_labels=labels, global_feats=self.global_feats(entry))
        return LabeledSample(entry["sample_id"], g, frame_labels=labels, global_feats=self.global_feats(entry))

    def samples(self, split: str | None, rc: RunConfig) -> list[LabeledSample]:
        return [self.sample(e, rc) for e in self.entries(split)]

    def rebased_entry(self, entry: dict, new_root: Path, new_path: str) -> dict:
        """Copy of ``entry`` pointing at ``new_path``, with side files re-pointed relative to ``new_root``."""
        out = {**entry, "path": new_path}
        if "global_path" in entry:
            out["global_path"] = os.path.relpath(self.root / entry["global_path"], new_root)
        return out


def _is_manifest(path: Path) -> bool:
    if path.suffix != ".json" or not path.is_file():
        return False
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError:
        return False
    return isinstance(doc, dict) and "samples" in doc


def _graph_manifest(src: Manifest, samples: list[dict], rc: RunConfig) -> dict:
    return {"version": 1, "kind": GRAPHS_KIND, "meta": src.meta, "samples": samples, "config": rc.data}


# -- commands ---------------------------------------------------------------

def cmd_synth(args, sources: ConfigSources) -> int:
    rc = sources.resolve()
    world = rc.world_config()
    sp = rc.data["splits"]
    out = Path(args.out)
    generate_dataset(world, int(sp["train"]), int(sp["val"]), int(sp["test"]), out, seed=rc.seed,
                     extra={"config": rc.data})
    print(f"wrote {sum(int(v) for v in sp.values())} sequences and {out / 'manifest.json'}")
    return 0


def _infer_vocab(frames, rc: RunConfig) -> tuple[int, int]:
    g = rc.data["graph"]
    nc = g["num_classes"]
    if nc is None:
        nc = 1 + max((int(f.class_ids.max()) for f in frames if f.num_nodes), default=0)
    nr = g["num_spatial_relations"]
    if nr is None:
        nr = 1 + max((int(f.edge_relations.max()) for f in frames if f.num_edges), default=0)
    return nc, nr


def cmd_build(args, sources: ConfigSources) -> int:
    rc = sources.resolve()
    inputs = [Path(p) for p in args.inputs]
    out = Path(args.out)
    if len(inputs) == 1 and _is_manifest(inputs[0]):
        src = Manifest(inputs[0])
        if src.holds_graphs:
            raise InputError(f"{src.path}: already holds video graphs")
        entries = []
        for e in src.entries():
            rel = f"graphs/{e['sample_id']}.json"
            save_video_graph(src.graph(e, rc), out / rel, rc.data)
            entries.append(src.rebased_entry(e, out, rel))
        atomic_write_text(out / "manifest.json", _dump(_graph_manifest(src, entries, rc)))
        print(f"built {len(entries)} video graphs into {out}")
        return 0
    targets = [out] if len(inputs) == 1 else [out / f"{p.stem}.json" for p in inputs]
    for src_path, dst in zip(inputs, targets):
        frames = _guard(src_path, load_frame_graphs)
        nc, nr = _infer_vocab(frames, rc)
        dim = frames[0].dim if frames else None
        if dim is None:
            raise InputError(f"{src_path}: no frames")
        g = assemble_video_graph(frames, rc.schedule(len(frames)), nc, nr, dim)
        save_video_graph(g, dst, rc.data)
        print(f"{dst}: {g.num_frames} frames, {g.num_nodes} nodes, {g.num_temporal_edges} temporal edges")
    return 0


def cmd_edit(args, sources: ConfigSources) -> int:
    rc = sources.resolve()
    src_path = Path(args.input)
    out = Path(args.out)
    if _is_manifest(src_path):
        src = Manifest(src_path)
        if not src.holds_graphs:
            raise InputError(f"{src.path}: edit needs a video-graph manifest (run build first)")
        edit = rc.edit_config(frozenset(src.meta.get("editable_classes", ())))
        entries = []
        for e in src.entries():
            rel = f"graphs/{e['sample_id']}.json"
            g = src.graph(e, rc)
            save_video_graph(edit_graph(g, edit) if edit.enabled else g, out / rel, rc.data)
            entries.append(src.rebased_entry(e, out, rel))
        atomic_write_text(out / "manifest.json", _dump(_graph_manifest(src, entries, rc)))
        print(f"edited {len(entries)} video graphs into {out}")
        return 0
    g = _guard(src_path, load_video_graph)
    edit = rc.edit_config(frozenset())
    if not edit.editable_classes:
        log.warning("no editable classes configured; the graph is copied unchanged")
    e = edit_graph(g, edit) if edit.enabled else g
    save_video_graph(e, out, rc.data)
    print(f"{out}: {g.num_nodes} -> {e.num_nodes} nodes, {g.num_temporal_edges} -> {e.num_temporal_edges} "
          f"temporal edges")
    return 0


def _write_metrics(path: Path, history: list[dict]) -> None:
    atomic_write_text(path, "".join(json.dumps(r) + "\n" for r in history))


def cmd_train(args, sources: ConfigSources) -> int:
    src = Manifest(Path(args.manifest))
    rc = sources.resolve(default_task=src.task)
    out = Path(args.out)
    editable = frozenset(src.meta.get("editable_classes", ()))
    tc = rc.train_config(editable)
    train_s = src.samples("train", rc)
    val_s = src.samples("val", rc) or None
    if not train_s:
        raise InputError(f"{src.path}: no samples in the train split")
    tcn = rc.data["model"]["tcn"]
    if tcn["enabled"] and not tcn["input_dim"]:
        if train_s[0].global_feats is None:
            raise InputError(f"{src.path}: TCN enabled but the samples have no global frame features")
        tcn["input_dim"] = int(train_s[0].global_feats.shape[1])
    num_outputs = int(src.meta.get("num_outputs", 0)) or _label_arity(train_s, rc.task)
    mc = rc.model_config(src.meta["dim"], train_s[0].graph.meta.num_relations, num_outputs)
    state_path, model_path, metrics_path = out / "state.json", out / "model.json", out / "metrics.jsonl"
    state, seed = None, rc.seed
    if args.resume and state_path.exists():
        state, mc, _, seed = _guard(state_path, load_train_state)
        log.info("resuming from epoch %d", state.epoch)

    def checkpoint(s):
        save_train_state(state_path, s, mc, tc, seed)
        _write_metrics(metrics_path, s.history)

    state = train(train_s, mc, tc, seed=seed, val_samples=val_s, state=state, on_epoch=checkpoint)
    save_model(model_path, state.best_store, mc, tc,
               extra={"run_config": rc.data, "meta": src.meta, "best_epoch": state.best_epoch,
                      "best_metric": state.best_metric if np.isfinite(state.best_metric) else None})
    _write_metrics(metrics_path, state.history)
    print(f"trained {state.epoch} epochs; best epoch {state.best_epoch} metric {state.best_metric:.4f}; "
          f"model in {model_path}")
    return 0


def _label_arity(samples: list[LabeledSample], task: Task) -> int:
    if task is Task.CLIP_MULTILABEL:
        return len(samples[0].clip_labels if samples[0].clip_labels is not None else samples[0].frame_labels[0])
    return 1 + max(int(np.max(s.frame_labels if s.frame_labels is not None else s.clip_labels)) for s in samples)


def cmd_predict(args, sources: ConfigSources) -> int:
    ckpt = Path(args.checkpoint)
    if ckpt.is_dir():
        ckpt = ckpt / "model.json"
    store, mc, info = _guard(ckpt, load_model)
    rc = sources.resolve(info["extra"].get("run_config", {"task": mc.task.value}))
    edit = TrainConfig.from_dict(info["config"]["train"]).edit if "train" in info["config"] else None
    if sources.overrides.get("edit") or sources.file_doc.get("edit"):
        edit = rc.edit_config(edit.editable_classes if edit else frozenset())
    items = []
    for p in (Path(x) for x in args.inputs):
        if _is_manifest(p):
            src = Manifest(p)
            for e in src.entries(args.split):
                items.append((e["sample_id"], src.graph(e, rc), src.global_feats(e)))
        else:
            items.append((p.stem, _guard(p, load_video_graph), None))
    preds = []
    for sid, g, gf in items:
        if edit is not None and edit.enabled:
            g = edit_graph(g, edit)
        if mc.tcn.enabled and gf is None:
            raise InputError(f"{sid}: model uses a TCN but the sample has no global frame features")
        logits = forward(tensorize(g, gf), store, mc)
        scores = logits[0] if mc.task is Task.CLIP_MULTILABEL else logits
        preds.append({"sample_id": sid, "scores": np.asarray(scores, dtype=np.float64).tolist()})
    doc = {"task": mc.task.value, "checkpoint": str(ckpt), "predictions": preds, "config": rc.data}
    atomic_write_text(Path(args.out), _dump(doc))
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def cmd_eval(args, sources: ConfigSources) -> int:
    rc = sources.resolve()
    pred_doc = _read_json(Path(args.predictions))
    try:
        task = Task(pred_doc["task"])
        preds = {p["sample_id"]: p["scores"] for p in pred_doc["predictions"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.predictions}: malformed predictions ({exc!r})") from exc
    labels = {e["sample_id"]: e.get("labels") for e in Manifest(Path(args.labels)).entries()}
    missing = [sid for sid in preds if labels.get(sid) is None]
    if missing:
        raise InputError(f"{args.labels}: no labels for samples {missing[:5]}")
    ids = list(preds)
    report = {"task": task.value, "num_samples": len(ids)}
    if task is Task.CLIP_MULTILABEL:
        scores = np.array([preds[s] for s in ids], dtype=np.float64)
        truth = np.array([labels[s] for s in ids])
        if scores.shape != truth.shape:
            raise InputError(f"{args.predictions}: scores {scores.shape} do not match labels {truth.shape}")
        rep = map_over_criteria(scores, truth)
        per_video = [{"sample_id": s, "scores": preds[s], "labels": labels[s]} for s in ids]
        report.update(metric=rep.mean, mAP=rep.mean, per_criterion=[None if np.isnan(v) else v
                                                                   for v in rep.per_criterion],
                      per_video=per_video)
    else:
        pred_cls = []
        for s in ids:
            a = np.asarray(preds[s], dtype=np.float64)
            pred_cls.append(a.argmax(axis=1) if a.ndim == 2 else a.astype(np.int64))
        truth = [np.asarray(labels[s], dtype=np.int64) for s in ids]
        for s, p, t in zip(ids, pred_cls, truth):
            if len(p) != len(t):
                raise InputError(f"{args.predictions}: {s} has {len(p)} frames, labels have {len(t)}")
        rep = video_macro_f1(pred_cls, truth)
        report.update(metric=rep.mean, macro_f1=rep.mean, per_class={str(k): v for k, v in rep.per_class.items()},
                      per_video=[{"sample_id": s, "f1": v} for s, v in zip(ids, rep.per_video)])
    report["config"] = rc.data
    atomic_write_text(Path(args.out), _dump(report))
    print(f"{task.value}: metric {report['metric']:.4f} over {len(ids)} samples; report in {args.out}")
    return 0


def graph_summary(g: VideoGraph) -> dict:
    spatial = Counter(int(r) for f in g.frames for r in f.edge_relations)
    temporal = Counter(int(r) for r in g.temporal.relations)
    deg = temporal_degrees(g)
    return {
        "frames": g.num_frames,
        "nodes": g.num_nodes,
        "spatial_edges": g.num_spatial_edges,
        "temporal_edges": g.num_temporal_edges,
        "spatial_edges_per_relation": {str(k): spatial[k] for k in sorted(spatial)},
        "temporal_edges_per_relation": {str(k): temporal[k] for k in sorted(temporal)},
        "degree_histogram": {str(k): int(v) for k, v in sorted(Counter(deg.tolist()).items())},
        "horizons": list(g.meta.horizons),
    }


def cmd_inspect(args, sources: ConfigSources) -> int:
    rc = sources.resolve()
    g = _guard(Path(args.graph), load_video_graph)
    summary = graph_summary(g)
    print(f"frames {summary['frames']}  nodes {summary['nodes']}  spatial edges {summary['spatial_edges']}  "
          f"temporal edges {summary['temporal_edges']}  horizons {summary['horizons']}")
    for kind in ("spatial", "temporal"):
        for rel, n in summary[f"{kind}_edges_per_relation"].items():
            print(f"  {kind} relation {rel}: {n}")
    print("temporal degree histogram:")
    for d, n in summary["degree_histogram"].items():
        print(f"  degree {d}: {n}")
    if args.out:
        dot = export_dot(g)
        header = "// config: " + json.dumps(rc.data, separators=(",", ":")) + "\n"
        atomic_write_text(Path(args.out), header + dot)
    if args.summary:
        atomic_write_text(Path(args.summary), _dump({**summary, "config": rc.data}))
    return 0


# -- argument handling ---------------------------------------------------------

def _on_off(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return v == "on"


def _int_list(v: str) -> list[int]:
    try:
        return [int(x) for x in v.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {v!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--task", choices=["clip", "video"])
    common.add_argument("-v", "--verbose", action="store_true")

    graph = argparse.ArgumentParser(add_help=False)
    graph.add_argument("--horizon-mode", choices=["exponential", "dense", "adjacent"])
    graph.add_argument("--l", type=int, help="largest horizon exponent of the exponential schedule")

    edit = argparse.ArgumentParser(add_help=False)
    edit.add_argument("--p-edit", type=float)
    edit.add_argument("--edit", type=_on_off, help="on|off")
    edit.add_argument("--editable-classes", type=_int_list)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--gnn-layers", type=int)
    model.add_argument("--hidden", type=int)
    model.add_argument("--tcn", type=_on_off, help="on|off")
    model.add_argument("--epochs", type=int)
    model.add_argument("--lr", type=float)
    model.add_argument("--batch-size", type=int)

    p = argparse.ArgumentParser(prog="latentgraph", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--out", required=True, help="output directory")
    for split in ("train", "val", "test"):
        s.add_argument(f"--n-{split}", type=int)
    s.add_argument("--dup-rate", type=float)
    s.add_argument("--length", type=int, help="frames per sequence")

    b = sub.add_parser("build", parents=[common, graph], help="assemble video graphs from frame graphs")
    b.add_argument("inputs", nargs="+", help="frame-graph files or a dataset manifest")
    b.add_argument("--out", required=True)

    e = sub.add_parser("edit", parents=[common, edit], help="apply the graph editing module")
    e.add_argument("input", help="video-graph file or video-graph manifest")
    e.add_argument("--out", required=True)

    t = sub.add_parser("train", parents=[common, graph, edit, model], help="train a decoder")
    t.add_argument("manifest")
    t.add_argument("--out", required=True, help="run directory (model.json, state.json, metrics.jsonl)")
    t.add_argument("--resume", action="store_true", help="continue from the run directory's state.json")

    pr = sub.add_parser("predict", parents=[common, graph, edit], help="run a trained decoder")
    pr.add_argument("checkpoint", help="model.json or a run directory")
    pr.add_argument("inputs", nargs="+", help="video-graph files or a manifest")
    pr.add_argument("--split", default="test", help="manifest split to predict (default: test)")
    pr.add_argument("--out", required=True)

    ev = sub.add_parser("eval", parents=[common], help="score predictions against labels")
    ev.add_argument("predictions")
    ev.add_argument("--labels", required=True, help="manifest with labels")
    ev.add_argument("--out", required=True)

    i = sub.add_parser("inspect", parents=[common], help="describe a video graph")
    i.add_argument("graph")
    i.add_argument("--out", help="write a Graphviz DOT file")
    i.add_argument("--summary", help="write summary statistics as JSON")
    return p


def flag_overrides(args) -> dict:
    """Nested config overrides for every flag given on the command line."""
    o: dict = {}

    def put(path: str, value):
        if value is None:
            return
        node = o
        *head, last = path.split(".")
        for k in head:
            node = node.setdefault(k, {})
        node[last] = value

    g = vars(args)
    put("seed", g.get("seed"))
    put("task", g.get("task"))
    put("schedule.mode", g.get("horizon_mode"))
    put("schedule.l", g.get("l"))
    put("edit.p_edit", g.get("p_edit"))
    put("edit.enabled", g.get("edit"))
    put("edit.editable_classes", g.get("editable_classes"))
    put("model.gnn.num_layers", g.get("gnn_layers"))
    put("model.gnn.hidden", g.get("hidden"))
    put("model.tcn.enabled", g.get("tcn"))
    put("train.epochs", g.get("epochs"))
    put("train.lr", g.get("lr"))
    put("train.batch_size", g.get("batch_size"))
    for split in ("train", "val", "test"):
        put(f"splits.{split}", g.get(f"n_{split}"))
    put("world.dup_rate", g.get("dup_rate"))
    put("world.T", g.get("length"))
    return o


COMMANDS = {"synth": cmd_synth, "build": cmd_build, "edit": cmd_edit, "train": cmd_train, "predict": cmd_predict,
            "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        sources = ConfigSources(read_config_file(args.config), flag_overrides(args), args.config or "flags")
        return COMMANDS[args.command](args, sources)
    except ConfigError as exc:
        print(f"latentgraph {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, GraphValidationError, CheckpointError, LabelError) as exc:
        print(f"latentgraph {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - top-level boundary reports any failure as a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"latentgraph {args.command}: runtime error: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
