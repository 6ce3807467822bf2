"""Flatten video graphs into arrays and constant sparse operators for the decoder.

Temporal edges that repeat the same (src, dst, relation) triple are stored
once with a multiplicity; since their features are identical, the messages
they carry are identical too and the multiplicity enters only as a weight in
the mean aggregation. This gives the same result as processing every copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graph import VideoGraph


@dataclass
class GraphTensors:
    node_feats: np.ndarray          # (N, D)
    node_frame: np.ndarray          # (N,) frame row each node pools into
    edge_src: np.ndarray            # (E,)
    edge_dst: np.ndarray            # (E,)
    edge_rel: np.ndarray            # (E,)
    edge_mult: np.ndarray           # (E,) multiplicity of the edge
    edge_feats: np.ndarray          # (E, D)
    num_frames: int
    frame_sample: np.ndarray        # (T,) which sample each frame row belongs to
    global_feats: np.ndarray | None = None  # (T, F)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.node_frame)

    @property
    def num_edges(self) -> int:
        return len(self.edge_rel)

    @property
    def num_samples(self) -> int:
        return int(self.frame_sample.max()) + 1 if self.num_frames else 0

    def last_frame_rows(self) -> np.ndarray:
        """Row of the last frame of every sample."""
        ends = np.flatnonzero(np.diff(np.append(self.frame_sample, -1)) != 0)
        return ends

    def operators(self, dtype, num_relations: int) -> dict:
        """Sparse gather/scatter/pool operators in ``dtype`` (cached)."""
        key = (np.dtype(dtype).name, num_relations)
        if key in self._cache:
            return self._cache[key]
        N, E, T = self.num_nodes, self.num_edges, self.num_frames
        rows = np.arange(E)
        ones = np.ones(E)
        gather_src = sp.csr_matrix((ones, (rows, self.edge_src)), shape=(E, N), dtype=dtype)
        gather_dst = sp.csr_matrix((ones, (rows, self.edge_dst)), shape=(E, N), dtype=dtype)
        incident = np.bincount(self.edge_src, weights=self.edge_mult, minlength=N) + \
            np.bincount(self.edge_dst, weights=self.edge_mult, minlength=N)
        inv = np.zeros(N)
        np.divide(1.0, incident, out=inv, where=incident > 0)
        scatter_src = sp.csr_matrix((self.edge_mult * inv[self.edge_src], (self.edge_src, rows)),
                                    shape=(N, E), dtype=dtype)
        scatter_dst = sp.csr_matrix((self.edge_mult * inv[self.edge_dst], (self.edge_dst, rows)),
                                    shape=(N, E), dtype=dtype)
        rel_onehot = sp.csr_matrix((ones, (rows, self.edge_rel)), shape=(E, num_relations), dtype=dtype)
        counts = np.bincount(self.node_frame, minlength=T).astype(np.float64)
        inv_c = np.zeros(T)
        np.divide(1.0, counts, out=inv_c, where=counts > 0)
        pool = sp.csr_matrix((inv_c[self.node_frame], (self.node_frame, np.arange(N))), shape=(T, N), dtype=dtype)
        ops = {
            "gather_src": gather_src,
            "gather_dst": gather_dst,
            "scatter_src": scatter_src,
            "scatter_dst": scatter_dst,
            "rel_onehot": rel_onehot,
            "pool": pool,
            "has_edges": (incident > 0).astype(dtype),
        }
        self._cache[key] = ops
        return ops

    def causal_shift(self, lag: int, dtype) -> sp.csr_matrix:
        """(T, T) operator mapping row t to row t - lag of the same sample (zero before its start)."""
        key = ("shift", lag, np.dtype(dtype).name)
        if key not in self._cache:
            t = np.arange(self.num_frames)
            src = t - lag
            ok = src >= 0
            ok[ok] &= self.frame_sample[src[ok]] == self.frame_sample[t[ok]]
            self._cache[key] = sp.csr_matrix((np.ones(int(ok.sum())), (t[ok], src[ok])),
                                             shape=(self.num_frames, self.num_frames), dtype=dtype)
        return self._cache[key]


def tensorize(g: VideoGraph, global_feats: np.ndarray | None = None) -> GraphTensors:
    N = g.num_nodes
    node_feats = np.concatenate([f.features for f in g.frames]) if g.frames else np.zeros((0, g.meta.dim), np.float32)
    node_frame = np.repeat(np.arange(g.num_frames), [f.num_nodes for f in g.frames]).astype(np.int64)

    s_src, s_dst, s_rel, s_feat = [], [], [], []
    for t, f in enumerate(g.frames):
        if f.num_edges:
            s_src.append(g.node_offsets[t] + f.edge_index[:, 0])
            s_dst.append(g.node_offsets[t] + f.edge_index[:, 1])
            s_rel.append(f.edge_relations)
            s_feat.append(f.edge_features)

    te = g.temporal
    t_src = g.global_index(te.src_frame, te.src_node).astype(np.int64)
    t_dst = g.global_index(te.dst_frame, te.dst_node).astype(np.int64)
    n_rel = g.meta.num_relations
    key = (t_src * max(N, 1) + t_dst) * n_rel + te.relations
    _, first, mult = np.unique(key, return_index=True, return_counts=True)

    n_spatial = sum(len(a) for a in s_src)
    src = np.concatenate(s_src + [t_src[first]]).astype(np.int64)
    dst = np.concatenate(s_dst + [t_dst[first]]).astype(np.int64)
    rel = np.concatenate(s_rel + [te.relations[first]]).astype(np.int64)
    feats = np.concatenate(s_feat + [g.temporal_features[first]]) if len(src) else np.zeros((0, g.meta.dim), np.float32)
    multiplicity = np.concatenate([np.ones(n_spatial), mult.astype(np.float64)])
    if global_feats is not None:
        global_feats = np.asarray(global_feats, dtype=np.float32)
        if global_feats.shape[0] != g.num_frames:
            raise ValueError(f"global features have {global_feats.shape[0]} rows for {g.num_frames} frames")
    return GraphTensors(
        node_feats=node_feats, node_frame=node_frame, edge_src=src, edge_dst=dst, edge_rel=rel,
        edge_mult=multiplicity, edge_feats=feats, num_frames=g.num_frames,
        frame_sample=np.zeros(g.num_frames, dtype=np.int64), global_feats=global_feats,
    )


def collate(items: Sequence[GraphTensors]) -> GraphTensors:
    """Disjoint union of several prepared graphs (one sample id per item)."""
    if len(items) == 1:
        return items[0]
    node_off = np.cumsum([0] + [it.num_nodes for it in items])
    frame_off = np.cumsum([0] + [it.num_frames for it in items])
    has_global = [it.global_feats is not None for it in items]
    if any(has_global) and not all(has_global):
        raise ValueError("collate: some samples lack global features")
    return GraphTensors(
        node_feats=np.concatenate([it.node_feats for it in items]),
        node_frame=np.concatenate([it.node_frame + frame_off[i] for i, it in enumerate(items)]),
        edge_src=np.concatenate([it.edge_src + node_off[i] for i, it in enumerate(items)]),
        edge_dst=np.concatenate([it.edge_dst + node_off[i] for i, it in enumerate(items)]),
        edge_rel=np.concatenate([it.edge_rel for it in items]),
        edge_mult=np.concatenate([it.edge_mult for it in items]),
        edge_feats=np.concatenate([it.edge_feats for it in items]),
        num_frames=int(frame_off[-1]),
        frame_sample=np.concatenate([np.full(it.num_frames, i, dtype=np.int64) for i, it in enumerate(items)]),
        global_feats=np.concatenate([it.global_feats for it in items]) if all(has_global) else None,
    )
