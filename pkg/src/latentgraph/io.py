"""Reading and writing frame-graph streams, video-graph documents and DOT exports."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .graph import (
    FEATURE_DTYPE,
    FrameGraph,
    GraphMeta,
    GraphValidationError,
    TemporalEdgeSet,
    VideoGraph,
    validate_frame,
    validate_video_graph,
)

VIDEO_GRAPH_VERSION = 1


class GraphFormatError(GraphValidationError):
    pass


def _floats(a: np.ndarray) -> list:
    # float32 -> python float is exact, and repr() of a python float round-trips
    return np.asarray(a, dtype=np.float64).tolist()


def frame_to_record(frame: FrameGraph) -> dict:
    return {
        "frame_index": int(frame.frame_index),
        "nodes": [
            {"feature": _floats(frame.features[i]), "box": _floats(frame.boxes[i]),
             "class_id": int(frame.class_ids[i]), "confidence": float(frame.confidences[i])}
            for i in range(frame.num_nodes)
        ],
        "spatial_edges": [
            {"src": int(s), "dst": int(d), "feature": _floats(frame.edge_features[k]),
             "box": _floats(frame.edge_boxes[k]), "relation_id": int(frame.edge_relations[k])}
            for k, (s, d) in enumerate(frame.edge_index)
        ],
    }


def frame_from_record(rec: dict, dim: int | None = None, frame_size: tuple[float, float] | None = None) -> FrameGraph:
    try:
        nodes = rec.get("nodes", [])
        edges = rec.get("spatial_edges", [])
        frame_index = int(rec["frame_index"])
        feats = [n["feature"] for n in nodes]
        if dim is None:
            dim = len(feats[0]) if feats else (len(edges[0]["feature"]) if edges else 0)
        for k, f in enumerate(feats):
            if len(f) != dim:
                raise GraphFormatError(f"frame {frame_index}: node {k} feature length {len(f)} != expected {dim}")
        for k, e in enumerate(edges):
            if len(e["feature"]) != dim:
                raise GraphFormatError(
                    f"frame {frame_index}: spatial edge {k} feature length {len(e['feature'])} != expected {dim}")
        boxes = np.array([n["box"] for n in nodes], dtype=np.float64).reshape(-1, 4)
        eboxes = np.array([e["box"] for e in edges], dtype=np.float64).reshape(-1, 4)
        if frame_size is not None:
            scale = np.array([frame_size[0], frame_size[1]] * 2, dtype=np.float64)
            boxes, eboxes = boxes / scale, eboxes / scale
        return FrameGraph(
            frame_index=frame_index,
            features=np.array(feats, dtype=FEATURE_DTYPE).reshape(len(feats), dim),
            boxes=boxes,
            class_ids=[int(n["class_id"]) for n in nodes],
            confidences=[float(n.get("confidence", 1.0)) for n in nodes],
            edge_index=np.array([(int(e["src"]), int(e["dst"])) for e in edges], dtype=np.int64).reshape(-1, 2),
            edge_features=np.array([e["feature"] for e in edges], dtype=FEATURE_DTYPE).reshape(len(edges), dim),
            edge_boxes=eboxes,
            edge_relations=[int(e["relation_id"]) for e in edges],
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GraphValidationError):
            raise
        raise GraphFormatError(f"malformed frame record: {exc!r}") from exc


def read_frame_graphs(stream: IO[str] | Iterable[str], dim: int | None = None, num_classes: int | None = None,
                      num_spatial_relations: int | None = None,
                      frame_size: tuple[float, float] | None = None) -> list[FrameGraph]:
    """Parse a line-delimited frame-graph stream into validated ``FrameGraph`` objects.

    ``dim`` defaults to the feature length of the first node seen. When
    ``frame_size`` (width, height) is given, boxes are read as pixels and
    normalized. Blank lines are skipped. Errors carry the 1-based line number.
    """
    frames: list[FrameGraph] = []
    prev = -1
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise GraphFormatError(f"line {lineno}: malformed record ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise GraphFormatError(f"line {lineno}: expected an object per line")
        try:
            frame = frame_from_record(rec, dim, frame_size)
            if dim is None and frame.num_nodes + frame.num_edges:
                dim = frame.dim
            if frame.frame_index <= prev:
                raise GraphValidationError(
                    f"frame {frame.frame_index}: frame_index not strictly increasing (after {prev})")
            validate_frame(frame, dim, num_classes, num_spatial_relations)
        except GraphValidationError as exc:
            raise type(exc)(f"line {lineno}: {exc}") from exc
        prev = frame.frame_index
        frames.append(frame)
    if frames and dim is not None:
        # frames read before the dimension was known were empty; give them the final shape
        frames = [f if f.dim == dim else FrameGraph.empty(f.frame_index, dim) for f in frames]
    return frames


def write_frame_graphs(frames: Sequence[FrameGraph], sink: IO[str]) -> None:
    for frame in frames:
        sink.write(json.dumps(frame_to_record(frame), separators=(",", ":")))
        sink.write("\n")


def video_graph_to_dict(g: VideoGraph) -> dict:
    te = g.temporal
    return {
        "version": VIDEO_GRAPH_VERSION,
        "metadata": g.meta.to_dict(),
        "frames": [frame_to_record(f) for f in g.frames],
        "temporal_edges": [
            {"src": [int(te.src_frame[k]), int(te.src_node[k])], "dst": [int(te.dst_frame[k]), int(te.dst_node[k])],
             "relation_id": int(te.relations[k]), "feature": _floats(g.temporal_features[k]),
             "box": _floats(g.temporal_boxes[k])}
            for k in range(len(te))
        ],
    }


def video_graph_from_dict(doc: dict) -> VideoGraph:
    if not isinstance(doc, dict) or "version" not in doc:
        raise GraphFormatError("video graph document has no version field")
    if doc["version"] != VIDEO_GRAPH_VERSION:
        raise GraphFormatError(f"unsupported video graph version {doc['version']!r} (expected {VIDEO_GRAPH_VERSION})")
    try:
        meta = GraphMeta.from_dict(doc["metadata"])
        frames = [frame_from_record(r, meta.dim) for r in doc["frames"]]
        edges = doc["temporal_edges"]
        temporal = TemporalEdgeSet(
            [e["src"][0] for e in edges], [e["src"][1] for e in edges],
            [e["dst"][0] for e in edges], [e["dst"][1] for e in edges],
            [e["relation_id"] for e in edges],
        )
        g = VideoGraph(
            frames=frames,
            temporal=temporal,
            temporal_features=np.array([e["feature"] for e in edges], dtype=FEATURE_DTYPE).reshape(-1, meta.dim),
            temporal_boxes=np.array([e["box"] for e in edges], dtype=np.float64).reshape(-1, 4),
            meta=meta,
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise GraphFormatError(f"malformed video graph document: {exc!r}") from exc
    validate_video_graph(g)
    return g


def write_video_graph(g: VideoGraph, sink: IO[str]) -> None:
    json.dump(video_graph_to_dict(g), sink, separators=(",", ":"))


def read_video_graph(stream: IO[str]) -> VideoGraph:
    try:
        doc = json.load(stream)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"truncated or malformed video graph document: {exc.msg}") from exc
    return video_graph_from_dict(doc)


def save_video_graph(g: VideoGraph, path, config: dict | None = None) -> None:
    """Atomic write; ``config`` is stored alongside the graph and ignored on load."""
    doc = video_graph_to_dict(g)
    if config is not None:
        doc["config"] = config
    atomic_write_text(path, json.dumps(doc, separators=(",", ":")))


def load_video_graph(path) -> VideoGraph:
    with open(path) as fh:
        return read_video_graph(fh)


def load_frame_graphs(path, **kwargs) -> list[FrameGraph]:
    with open(path) as fh:
        return read_frame_graphs(fh, **kwargs)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
            "#bcbd22", "#17becf")


def export_dot(g: VideoGraph, class_names: Sequence[str] | None = None) -> str:
    """Graphviz document of ``g``; spatial edges dotted, temporal edges solid, colored by relation id."""
    lines = ["digraph video_graph {", "  node [shape=ellipse, style=filled, fontsize=10];"]
    for t, frame in enumerate(g.frames):
        for i in range(frame.num_nodes):
            c = int(frame.class_ids[i])
            label = class_names[c] if class_names else f"c{c}"
            lines.append(f'  "f{t}_n{i}" [label="{label}_{t}", fillcolor="{_PALETTE[c % len(_PALETTE)]}"];')
    for t, frame in enumerate(g.frames):
        for k, (s, d) in enumerate(frame.edge_index):
            rel = int(frame.edge_relations[k])
            lines.append(f'  "f{t}_n{s}" -> "f{t}_n{d}" [style=dotted, color="{_PALETTE[rel % len(_PALETTE)]}", '
                         f'label="r{rel}"];')
    te = g.temporal
    for k in range(len(te)):
        rel = int(te.relations[k])
        lines.append(f'  "f{te.src_frame[k]}_n{te.src_node[k]}" -> "f{te.dst_frame[k]}_n{te.dst_node[k]}" '
                     f'[style=solid, color="{_PALETTE[rel % len(_PALETTE)]}", label="r{rel}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
