"""Temporal edges between frame graphs and assembly of the video graph.

Two kernels score node pairs across frames: generalized IoU of the boxes and
cosine similarity of the features. For each kernel, every node picks its most
similar node in the other frame (both directions), and every pick becomes a
pair of directed edges (forward and backward).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import (
    BOX_MATCH,
    FEATURE_MATCH,
    BBox,
    FrameGraph,
    GraphMeta,
    Node,
    NodeRef,
    TemporalEdgeSet,
    VideoGraph,
    enclosing_boxes,
)


class Kernel(enum.Enum):
    BOX = BOX_MATCH
    FEATURE = FEATURE_MATCH


class HorizonMode(str, enum.Enum):
    EXPONENTIAL = "exponential"
    DENSE = "dense"
    ADJACENT = "adjacent"


def _as_box(b) -> tuple[float, float, float, float]:
    return b.as_tuple() if isinstance(b, BBox) else tuple(float(v) for v in b)


def giou(a, b) -> float:
    """Generalized IoU of two boxes; 1.0 when both collapse onto the same point."""
    ax1, ay1, ax2, ay2 = _as_box(a)
    bx1, by1, bx2, by2 = _as_box(b)
    enclosure = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    if enclosure <= 0.0:
        return 1.0
    inter = max(0.0, min(ax2, bx2) - max(ax1, bx1)) * max(0.0, min(ay2, by2) - max(ay1, by1))
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    iou = inter / union if union > 0.0 else 0.0
    return iou - (enclosure - union) / enclosure


def giou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise GIoU between the rows of ``a`` (n, 4) and ``b`` (m, 4)."""
    a = np.asarray(a, dtype=np.float64)[:, None, :]
    b = np.asarray(b, dtype=np.float64)[None, :, :]
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0.0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0.0, None)
    inter = iw * ih
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    union = area_a + area_b - inter
    enclosure = (np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])) * \
                (np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
        out = np.where(enclosure > 0, iou - (enclosure - union) / enclosure, 1.0)
    return out


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"cosine_sim: length mismatch {a.shape} vs {b.shape}")
    na, nb = math.sqrt(float(a @ a)), math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na[:, None] * nb[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 0, (a @ b.T) / denom, 0.0)
    return np.clip(out, -1.0, 1.0)


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray
    kernel: Kernel

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _node_arrays(nodes) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(nodes, FrameGraph):
        return nodes.boxes, nodes.features
    nodes = list(nodes)
    boxes = np.array([_as_box(n.box) for n in nodes], dtype=np.float64).reshape(-1, 4)
    feats = np.array([np.asarray(n.feature, dtype=np.float64) for n in nodes]).reshape(len(nodes), -1)
    return boxes, feats


def pairwise_similarity(src: Sequence[Node] | FrameGraph, dst: Sequence[Node] | FrameGraph,
                        kernel: Kernel) -> SimilarityMatrix:
    """Kernel value for every (src, dst) node pair; accepts node lists or frame graphs."""
    sb, sf = _node_arrays(src)
    db, df = _node_arrays(dst)
    if kernel is Kernel.BOX:
        values = giou_matrix(sb, db) if len(sb) and len(db) else np.zeros((len(sb), len(db)))
    elif kernel is Kernel.FEATURE:
        values = cosine_matrix(sf, df) if len(sf) and len(df) else np.zeros((len(sf), len(df)))
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return SimilarityMatrix(values, kernel)


def _match_pairs(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise then column-wise argmax matches; np.argmax keeps the first maximum."""
    n, m = values.shape
    rows_i = np.arange(n)
    rows_j = np.argmax(values, axis=1)
    cols_j = np.arange(m)
    cols_i = np.argmax(values, axis=0)
    return np.concatenate([rows_i, cols_i]), np.concatenate([rows_j, cols_j])


def _match_edge_set(values: np.ndarray, t: int, w: int, relation: int) -> TemporalEdgeSet:
    n, m = values.shape
    if n == 0 or m == 0:
        return TemporalEdgeSet.empty()
    mi, mj = _match_pairs(values)
    k = len(mi)
    # interleave forward (t -> t+w) and backward (t+w -> t) edge of each match
    src_frame = np.empty(2 * k, dtype=np.int64)
    dst_frame = np.empty(2 * k, dtype=np.int64)
    src_node = np.empty(2 * k, dtype=np.int64)
    dst_node = np.empty(2 * k, dtype=np.int64)
    src_frame[0::2], dst_frame[0::2] = t, t + w
    src_frame[1::2], dst_frame[1::2] = t + w, t
    src_node[0::2], dst_node[0::2] = mi, mj
    src_node[1::2], dst_node[1::2] = mj, mi
    return TemporalEdgeSet(src_frame, src_node, dst_frame, dst_node, np.full(2 * k, relation, dtype=np.int64))


def best_match_edges(m: SimilarityMatrix, t: int, w: int,
                     relation_offset: int = 0) -> list[tuple[NodeRef, NodeRef, int]]:
    """Directed edges from best-match selection on one similarity matrix.

    Each row picks its best column and each column its best row (ties go to
    the smallest index). Every pick yields a forward and a backward edge, so
    an n x m matrix gives ``2 * (n + m)`` edges. Duplicates are kept.
    """
    es = _match_edge_set(m.values, t, w, relation_offset + m.kernel.value)
    return [(s, d, int(r)) for (s, d), r in zip(es.connectivity, es.relations)]


def build_temporal_edges(g_t: FrameGraph, g_tw: FrameGraph, t: int = 0, w: int = 1,
                         relation_offset: int = 0) -> TemporalEdgeSet:
    """Temporal edges between two frame graphs at positions ``t`` and ``t + w``.

    Yields ``4 * (|N_t| + |N_t+w|)`` edges when both frames have nodes, none otherwise.
    Order: box kernel, then feature kernel.
    """
    if w == 0:
        raise ValueError("build_temporal_edges needs two distinct frames")
    if g_t.num_nodes == 0 or g_tw.num_nodes == 0:
        return TemporalEdgeSet.empty()
    parts = []
    for kernel in (Kernel.BOX, Kernel.FEATURE):
        sim = pairwise_similarity(g_t, g_tw, kernel)
        parts.append(_match_edge_set(sim.values, t, w, relation_offset + kernel.value))
    return TemporalEdgeSet.concatenate(parts)


@dataclass(frozen=True)
class HorizonSchedule:
    mode: HorizonMode
    l: int
    horizons: tuple[int, ...]


def make_schedule(mode: HorizonMode | str, l: int = 3, T: int = 1) -> HorizonSchedule:
    """Temporal horizons for a ``T``-frame sequence; horizons ``>= T`` are dropped."""
    mode = HorizonMode(mode)
    if T < 1 or l < 0:
        raise ValueError(f"make_schedule: need T >= 1 and l >= 0, got T={T}, l={l}")
    if mode is HorizonMode.EXPONENTIAL:
        ws = [2 ** k for k in range(l + 1)]
    elif mode is HorizonMode.DENSE:
        ws = list(range(1, T))
    else:
        ws = [1]
    return HorizonSchedule(mode, l, tuple(w for w in ws if w <= T - 1))


def assemble_video_graph(frames: Sequence[FrameGraph], schedule: HorizonSchedule | Sequence[int],
                         num_classes: int, num_spatial_relations: int, dim: int | None = None) -> VideoGraph:
    """Join frame graphs into one video graph with temporal edges at every horizon.

    Each temporal edge gets the sum of its endpoint features and the box
    enclosing both endpoint boxes. Edges are ordered by (t, w, kernel).
    """
    frames = tuple(frames)
    horizons = tuple(sorted(schedule.horizons if isinstance(schedule, HorizonSchedule) else schedule))
    if dim is None:
        if not frames:
            raise ValueError("assemble_video_graph: dim is required for an empty sequence")
        dim = frames[0].dim
    for f in frames:
        if f.dim != dim:
            raise ValueError(f"frame {f.frame_index}: feature dimension {f.dim} != {dim}")
    meta = GraphMeta(dim, num_classes, num_spatial_relations, horizons)
    T = len(frames)
    parts = []
    for t in range(T):
        for w in horizons:
            if t + w < T:
                parts.append(build_temporal_edges(frames[t], frames[t + w], t, w, num_spatial_relations))
    temporal = TemporalEdgeSet.concatenate(parts)

    all_feats = np.concatenate([f.features for f in frames]) if frames else np.zeros((0, dim), np.float32)
    all_boxes = np.concatenate([f.boxes for f in frames]) if frames else np.zeros((0, 4))
    offsets = np.concatenate([[0], np.cumsum([f.num_nodes for f in frames], dtype=np.int64)])
    src = offsets[temporal.src_frame] + temporal.src_node
    dst = offsets[temporal.dst_frame] + temporal.dst_node
    feats = all_feats[src] + all_feats[dst]
    boxes = enclosing_boxes(all_boxes[src], all_boxes[dst])
    return VideoGraph(frames=frames, temporal=temporal, temporal_features=feats, temporal_boxes=boxes, meta=meta)
