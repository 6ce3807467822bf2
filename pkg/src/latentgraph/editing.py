"""Graph editing: keep one node per (frame, editable class), scored by temporal degree.

A node's dropout probability is ``1 / deg`` over temporal edges (1 for
unmatched nodes) and its score is ``(1 - p) * confidence``. Within each frame
only the best-scoring node of each editable class survives.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .graph import TemporalEdgeSet, VideoGraph


class ScoreMode(str, enum.Enum):
    DEGREE_CONFIDENCE = "degree_confidence"


@dataclass(frozen=True)
class EditConfig:
    editable_classes: frozenset[int] = field(default_factory=frozenset)
    p_edit: float = 0.5
    score_mode: ScoreMode = ScoreMode.DEGREE_CONFIDENCE
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.p_edit <= 1.0:
            raise ValueError(f"p_edit must be in [0, 1], got {self.p_edit}")
        object.__setattr__(self, "editable_classes", frozenset(int(c) for c in self.editable_classes))
        object.__setattr__(self, "score_mode", ScoreMode(self.score_mode))


@dataclass(frozen=True)
class NodeScoreTable:
    dropout: np.ndarray
    score: np.ndarray


def temporal_degrees(g: VideoGraph) -> np.ndarray:
    """Temporal-edge degree of every node, flat over the video (frame order)."""
    te = g.temporal
    src = g.global_index(te.src_frame, te.src_node)
    dst = g.global_index(te.dst_frame, te.dst_node)
    return np.bincount(np.concatenate([src, dst]).astype(np.int64), minlength=g.num_nodes)


def node_scores(g: VideoGraph, degrees: np.ndarray, config: EditConfig | None = None) -> NodeScoreTable:
    degrees = np.asarray(degrees)
    dropout = np.ones(len(degrees))
    np.divide(1.0, degrees, out=dropout, where=degrees > 0)
    conf = np.concatenate([f.confidences for f in g.frames]) if g.frames else np.zeros(0)
    return NodeScoreTable(dropout=dropout, score=(1.0 - dropout) * conf)


def edit_graph(g: VideoGraph, config: EditConfig) -> VideoGraph:
    """Drop all but the top-scoring node of each editable class in each frame."""
    if not config.editable_classes:
        return g
    scores = node_scores(g, temporal_degrees(g), config).score
    editable = np.array(sorted(config.editable_classes), dtype=np.int64)
    keeps = []
    for t, frame in enumerate(g.frames):
        keep = np.ones(frame.num_nodes, dtype=bool)
        s = scores[g.node_offsets[t]:g.node_offsets[t + 1]]
        for c in np.unique(frame.class_ids[np.isin(frame.class_ids, editable)]):
            members = np.flatnonzero(frame.class_ids == c)
            if len(members) > 1:
                keep[members] = False
                keep[members[np.argmax(s[members])]] = True
        keeps.append(keep)
    if all(k.all() for k in keeps):
        return g

    frames = [f.subset(k) for f, k in zip(g.frames, keeps)]
    remaps = []
    for k in keeps:
        r = np.full(len(k), -1, dtype=np.int64)
        r[k] = np.arange(int(k.sum()))
        remaps.append(r)
    flat_keep = np.concatenate(keeps)
    flat_remap = np.concatenate(remaps)
    te = g.temporal
    src = g.global_index(te.src_frame, te.src_node)
    dst = g.global_index(te.dst_frame, te.dst_node)
    ekeep = flat_keep[src] & flat_keep[dst]
    temporal = TemporalEdgeSet(te.src_frame[ekeep], flat_remap[src[ekeep]], te.dst_frame[ekeep],
                               flat_remap[dst[ekeep]], te.relations[ekeep])
    return VideoGraph(frames=frames, temporal=temporal, temporal_features=g.temporal_features[ekeep],
                      temporal_boxes=g.temporal_boxes[ekeep], meta=g.meta)


def should_edit(config: EditConfig, rng: np.random.Generator, training: bool = True) -> bool:
    """Edit decision for one sample: a single Bernoulli(p_edit) draw in training, always at inference."""
    if not config.enabled:
        return False
    if not training:
        return True
    return bool(rng.random() < config.p_edit)


def maybe_edit(g: VideoGraph, config: EditConfig, rng: np.random.Generator, training: bool = True) -> VideoGraph:
    """Training-time augmentation: edit with probability ``p_edit``.

    Outside training the edit is applied whenever editing is enabled.
    """
    return edit_graph(g, config) if should_edit(config, rng, training) else g
