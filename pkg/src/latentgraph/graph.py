"""Core graph data model: per-frame detection graphs and the assembled video graph.

Frame graphs are stored columnar (one numpy array per attribute) because every
downstream consumer works on whole frames at once. ``Node`` / ``SpatialEdge`` /
``TemporalEdge`` are lightweight record views for construction and inspection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FEATURE_DTYPE = np.float32

# temporal relation kinds; stored ids are offset by the spatial vocabulary size
BOX_MATCH = 0
FEATURE_MATCH = 1
NUM_TEMPORAL_RELATIONS = 2


class GraphValidationError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized ``[0, 1]`` image coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        check_box(self.as_tuple())

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @classmethod
    def from_pixels(cls, box, width: float, height: float) -> "BBox":
        x1, y1, x2, y2 = box
        return cls(x1 / width, y1 / height, x2 / width, y2 / height)


def check_box(box, where: str = "box") -> None:
    x1, y1, x2, y2 = (float(v) for v in box)
    if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
        raise GraphValidationError(f"{where}: non-finite coordinate in {list(box)}")
    if not (0.0 <= x1 <= x2 <= 1.0 and 0.0 <= y1 <= y2 <= 1.0):
        raise GraphValidationError(
            f"{where}: expected 0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1, got {list(box)}"
        )


def enclosing_boxes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise smallest box enclosing ``a[i]`` and ``b[i]``."""
    return np.concatenate([np.minimum(a[:, :2], b[:, :2]), np.maximum(a[:, 2:], b[:, 2:])], axis=1)


@dataclass(frozen=True)
class Node:
    feature: np.ndarray
    box: BBox
    class_id: int
    confidence: float = 1.0


@dataclass(frozen=True)
class SpatialEdge:
    src: int
    dst: int
    feature: np.ndarray
    box: BBox
    relation_id: int


@dataclass(frozen=True)
class NodeRef:
    """Address of a node inside a video graph.

    ``frame_index`` is the position of the frame within ``VideoGraph.frames``,
    which coincides with ``FrameGraph.frame_index`` for contiguous sequences.
    """

    frame_index: int
    node_index: int


@dataclass(frozen=True)
class TemporalEdge:
    src: NodeRef
    dst: NodeRef
    relation_id: int
    feature: np.ndarray
    box: BBox


@dataclass(frozen=True, eq=False)
class FrameGraph:
    """Detections of one frame, stored as parallel arrays.

    ``features`` is (n, D) float32, ``boxes`` (n, 4), ``class_ids`` (n,),
    ``confidences`` (n,). Spatial edges use ``edge_index`` (m, 2) of
    (src, dst) node indices with matching ``edge_features``, ``edge_boxes``
    and ``edge_relations``.
    """

    frame_index: int
    features: np.ndarray
    boxes: np.ndarray
    class_ids: np.ndarray
    confidences: np.ndarray
    edge_index: np.ndarray
    edge_features: np.ndarray
    edge_boxes: np.ndarray
    edge_relations: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=FEATURE_DTYPE)
        if features.ndim != 2:
            raise GraphValidationError(f"frame {self.frame_index}: features must be a 2-D (nodes, dim) array")
        dim = features.shape[1]
        n_edges = len(np.asarray(self.edge_relations).reshape(-1))
        coerce = {
            "features": features,
            "boxes": np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4),
            "class_ids": np.asarray(self.class_ids, dtype=np.int64).reshape(-1),
            "confidences": np.asarray(self.confidences, dtype=np.float64).reshape(-1),
            "edge_index": np.asarray(self.edge_index, dtype=np.int64).reshape(-1, 2),
            "edge_features": np.asarray(self.edge_features, dtype=FEATURE_DTYPE).reshape(n_edges, dim),
            "edge_boxes": np.asarray(self.edge_boxes, dtype=np.float64).reshape(-1, 4),
            "edge_relations": np.asarray(self.edge_relations, dtype=np.int64).reshape(-1),
        }
        for name, value in coerce.items():
            object.__setattr__(self, name, _frozen(value.copy()))

    @classmethod
    def from_nodes(cls, frame_index: int, nodes: Sequence[Node], spatial_edges: Sequence[SpatialEdge] = (),
                   dim: int | None = None) -> "FrameGraph":
        if dim is None:
            if not nodes:
                raise GraphValidationError("dim is required to build an empty frame")
            dim = len(nodes[0].feature)
        return cls(
            frame_index=frame_index,
            features=np.array([n.feature for n in nodes], dtype=FEATURE_DTYPE).reshape(-1, dim),
            boxes=np.array([n.box.as_tuple() for n in nodes], dtype=np.float64).reshape(-1, 4),
            class_ids=[n.class_id for n in nodes],
            confidences=[n.confidence for n in nodes],
            edge_index=np.array([(e.src, e.dst) for e in spatial_edges], dtype=np.int64).reshape(-1, 2),
            edge_features=np.array([e.feature for e in spatial_edges], dtype=FEATURE_DTYPE).reshape(-1, dim),
            edge_boxes=np.array([e.box.as_tuple() for e in spatial_edges], dtype=np.float64).reshape(-1, 4),
            edge_relations=[e.relation_id for e in spatial_edges],
        )

    @classmethod
    def empty(cls, frame_index: int, dim: int) -> "FrameGraph":
        return cls.from_nodes(frame_index, [], [], dim=dim)

    @property
    def num_nodes(self) -> int:
        return len(self.class_ids)

    @property
    def num_edges(self) -> int:
        return len(self.edge_relations)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def nodes(self) -> list[Node]:
        return [
            Node(self.features[i], BBox(*self.boxes[i]), int(self.class_ids[i]), float(self.confidences[i]))
            for i in range(self.num_nodes)
        ]

    @property
    def spatial_edges(self) -> list[SpatialEdge]:
        return [
            SpatialEdge(int(s), int(d), self.edge_features[k], BBox(*self.edge_boxes[k]), int(self.edge_relations[k]))
            for k, (s, d) in enumerate(self.edge_index)
        ]

    def subset(self, keep: np.ndarray) -> "FrameGraph":
        """Keep only nodes where ``keep`` is true; edges touching dropped nodes go too."""
        keep = np.asarray(keep, dtype=bool)
        remap = np.full(self.num_nodes, -1, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        ekeep = keep[self.edge_index[:, 0]] & keep[self.edge_index[:, 1]] if self.num_edges else np.zeros(0, bool)
        return FrameGraph(
            frame_index=self.frame_index,
            features=self.features[keep],
            boxes=self.boxes[keep],
            class_ids=self.class_ids[keep],
            confidences=self.confidences[keep],
            edge_index=remap[self.edge_index[ekeep]],
            edge_features=self.edge_features[ekeep],
            edge_boxes=self.edge_boxes[ekeep],
            edge_relations=self.edge_relations[ekeep],
        )

    def __eq__(self, other):
        if not isinstance(other, FrameGraph):
            return NotImplemented
        return self.frame_index == other.frame_index and all(
            _array_equal(getattr(self, name), getattr(other, name)) for name in _FRAME_ARRAYS
        )


_FRAME_ARRAYS = ("features", "boxes", "class_ids", "confidences", "edge_index", "edge_features",
                 "edge_boxes", "edge_relations")


def _array_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a, b)


@dataclass(frozen=True)
class GraphMeta:
    """Vocabulary and layout facts shared by every graph of a dataset.

    Spatial relation ids occupy ``[0, num_spatial_relations)``; temporal ids
    follow directly after (``num_spatial_relations + BOX_MATCH`` and
    ``num_spatial_relations + FEATURE_MATCH``). All features, node and edge,
    share the single dimension ``dim``.
    """

    dim: int
    num_classes: int
    num_spatial_relations: int
    horizons: tuple[int, ...] = ()
    shared_feature_dim: bool = True

    @property
    def num_relations(self) -> int:
        return self.num_spatial_relations + NUM_TEMPORAL_RELATIONS

    def temporal_relation(self, kind: int) -> int:
        return self.num_spatial_relations + kind

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "num_classes": self.num_classes,
            "num_spatial_relations": self.num_spatial_relations,
            "horizons": list(self.horizons),
            "shared_feature_dim": self.shared_feature_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraphMeta":
        return cls(int(d["dim"]), int(d["num_classes"]), int(d["num_spatial_relations"]),
                   tuple(int(w) for w in d.get("horizons", ())), bool(d.get("shared_feature_dim", True)))


@dataclass(frozen=True, eq=False)
class TemporalEdgeSet:
    """Cross-frame edges in columnar form: connectivity plus relation ids.

    Row ``k`` connects node ``src_node[k]`` of frame position ``src_frame[k]``
    to node ``dst_node[k]`` of frame position ``dst_frame[k]``.
    """

    src_frame: np.ndarray
    src_node: np.ndarray
    dst_frame: np.ndarray
    dst_node: np.ndarray
    relations: np.ndarray

    def __post_init__(self):
        for name in ("src_frame", "src_node", "dst_frame", "dst_node", "relations"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64).reshape(-1).copy()))
        n = {len(getattr(self, k)) for k in ("src_frame", "src_node", "dst_frame", "dst_node", "relations")}
        if len(n) > 1:
            raise GraphValidationError("temporal edge columns have different lengths")

    @classmethod
    def empty(cls) -> "TemporalEdgeSet":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, z)

    @classmethod
    def concatenate(cls, parts: Sequence["TemporalEdgeSet"]) -> "TemporalEdgeSet":
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, k) for p in parts]) for k in
                     ("src_frame", "src_node", "dst_frame", "dst_node", "relations")))

    def __len__(self) -> int:
        return len(self.relations)

    @property
    def connectivity(self) -> list[tuple[NodeRef, NodeRef]]:
        return [
            (NodeRef(int(a), int(b)), NodeRef(int(c), int(d)))
            for a, b, c, d in zip(self.src_frame, self.src_node, self.dst_frame, self.dst_node)
        ]

    def take(self, idx) -> "TemporalEdgeSet":
        return TemporalEdgeSet(self.src_frame[idx], self.src_node[idx], self.dst_frame[idx],
                               self.dst_node[idx], self.relations[idx])

    def __eq__(self, other):
        if not isinstance(other, TemporalEdgeSet):
            return NotImplemented
        return all(_array_equal(getattr(self, k), getattr(other, k)) for k in
                   ("src_frame", "src_node", "dst_frame", "dst_node", "relations"))


@dataclass(frozen=True, eq=False)
class VideoGraph:
    """All frame graphs of a clip or video plus the temporal edges between them."""

    frames: tuple[FrameGraph, ...]
    temporal: TemporalEdgeSet
    temporal_features: np.ndarray
    temporal_boxes: np.ndarray
    meta: GraphMeta
    node_offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        feats = np.asarray(self.temporal_features, dtype=FEATURE_DTYPE).reshape(-1, self.meta.dim)
        boxes = np.asarray(self.temporal_boxes, dtype=np.float64).reshape(-1, 4)
        object.__setattr__(self, "temporal_features", _frozen(feats.copy()))
        object.__setattr__(self, "temporal_boxes", _frozen(boxes.copy()))
        sizes = [f.num_nodes for f in self.frames]
        object.__setattr__(self, "node_offsets", _frozen(np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)])))

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def num_nodes(self) -> int:
        return int(self.node_offsets[-1])

    @property
    def num_spatial_edges(self) -> int:
        return sum(f.num_edges for f in self.frames)

    @property
    def num_temporal_edges(self) -> int:
        return len(self.temporal)

    def global_index(self, frame_pos, node_index):
        """Flat node index over the whole video (frames concatenated in order)."""
        return self.node_offsets[np.asarray(frame_pos)] + np.asarray(node_index)

    @property
    def temporal_edges(self) -> list[TemporalEdge]:
        out = []
        for k, (s, d) in enumerate(self.temporal.connectivity):
            out.append(TemporalEdge(s, d, int(self.temporal.relations[k]), self.temporal_features[k],
                                    BBox(*self.temporal_boxes[k])))
        return out

    def __eq__(self, other):
        if not isinstance(other, VideoGraph):
            return NotImplemented
        return (
            self.meta == other.meta
            and len(self.frames) == len(other.frames)
            and all(a == b for a, b in zip(self.frames, other.frames))
            and self.temporal == other.temporal
            and _array_equal(self.temporal_features, other.temporal_features)
            and _array_equal(self.temporal_boxes, other.temporal_boxes)
        )


def validate_frame(frame: FrameGraph, dim: int | None = None, num_classes: int | None = None,
                   num_spatial_relations: int | None = None) -> None:
    """Raise ``GraphValidationError`` if ``frame`` breaks any declared invariant."""
    where = f"frame {frame.frame_index}"
    if frame.frame_index < 0:
        raise GraphValidationError(f"{where}: negative frame_index")
    if dim is not None and frame.features.shape[1] != dim:
        raise GraphValidationError(f"{where}: feature dimension {frame.features.shape[1]} != expected {dim}")
    if not np.all(np.isfinite(frame.features)) or not np.all(np.isfinite(frame.edge_features)):
        raise GraphValidationError(f"{where}: non-finite feature value")
    for i, b in enumerate(frame.boxes):
        check_box(b, f"{where} node {i}")
    for k, b in enumerate(frame.edge_boxes):
        check_box(b, f"{where} spatial edge {k}")
    if np.any(frame.class_ids < 0) or (num_classes is not None and np.any(frame.class_ids >= num_classes)):
        bad = frame.class_ids[(frame.class_ids < 0) | (frame.class_ids >= (num_classes or np.iinfo(np.int64).max))]
        raise GraphValidationError(f"{where}: class id {int(bad[0])} outside vocabulary of {num_classes}")
    if np.any((frame.confidences < 0) | (frame.confidences > 1)) or not np.all(np.isfinite(frame.confidences)):
        raise GraphValidationError(f"{where}: confidence outside [0, 1]")
    if frame.num_edges:
        ei = frame.edge_index
        if np.any(ei < 0) or np.any(ei >= frame.num_nodes):
            raise GraphValidationError(f"{where}: spatial edge endpoint out of range")
        if np.any(ei[:, 0] == ei[:, 1]):
            raise GraphValidationError(f"{where}: spatial edge with src == dst")
        rel = frame.edge_relations
        if np.any(rel < 0) or (num_spatial_relations is not None and np.any(rel >= num_spatial_relations)):
            raise GraphValidationError(f"{where}: spatial relation id outside [0, {num_spatial_relations})")


def validate_sequence(frames: Sequence[FrameGraph], dim: int | None = None, num_classes: int | None = None,
                      num_spatial_relations: int | None = None) -> None:
    prev = -1
    for f in frames:
        if f.frame_index <= prev:
            raise GraphValidationError(f"frame {f.frame_index}: frame_index not strictly increasing (after {prev})")
        prev = f.frame_index
        validate_frame(f, dim, num_classes, num_spatial_relations)


def validate_video_graph(g: VideoGraph) -> None:
    meta = g.meta
    validate_sequence(g.frames, meta.dim, meta.num_classes, meta.num_spatial_relations)
    te = g.temporal
    n_frames = g.num_frames
    for name in ("src_frame", "dst_frame"):
        col = getattr(te, name)
        if np.any((col < 0) | (col >= n_frames)):
            raise GraphValidationError(f"temporal edge {name} out of range")
    if len(te):
        sizes = np.array([f.num_nodes for f in g.frames])
        if np.any(te.src_node < 0) or np.any(te.src_node >= sizes[te.src_frame]) or \
                np.any(te.dst_node < 0) or np.any(te.dst_node >= sizes[te.dst_frame]):
            raise GraphValidationError("temporal edge endpoint does not resolve to a node")
        gap = np.abs(te.dst_frame - te.src_frame)
        if np.any(gap == 0):
            raise GraphValidationError("temporal edge within a single frame")
        if meta.horizons and not np.all(np.isin(gap, meta.horizons)):
            raise GraphValidationError(f"temporal edge gap outside horizon set {meta.horizons}")
        lo = meta.num_spatial_relations
        if np.any((te.relations < lo) | (te.relations >= lo + NUM_TEMPORAL_RELATIONS)):
            raise GraphValidationError("temporal relation id outside the temporal vocabulary")
    if g.temporal_features.shape != (len(te), meta.dim) or g.temporal_boxes.shape != (len(te), 4):
        raise GraphValidationError("temporal edge feature/box arrays misaligned with connectivity")
