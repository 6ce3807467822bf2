"""Deterministic synthetic frame-graph sequences with ground truth.

Objects are persistent tracks with a class-specific base feature, a box doing
a bounded random walk and an on/off occlusion process. Duplicate detections
(same class, shifted box, feature pulled toward another class, low
confidence, short-lived) can be injected next to visible tracks.

Two label rules:

* ``clip``: criterion ``k`` holds iff anatomy tracks ``k`` and ``k + 1`` are
  both visible in the last frame.
* ``video``: a scripted sequence of phases. Each phase has a marker object
  whose visibility follows the occlusion process while the phase lasts;
  markers of other phases show up as sporadic false detections. The phase of
  a frame is only recoverable by pooling marker evidence over neighbouring
  frames.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .graph import FEATURE_DTYPE, FrameGraph
from .io import atomic_write_text, frame_to_record

NUM_SPATIAL_RELATIONS = 4  # left of, right of, above, below
LEFT_OF, RIGHT_OF, ABOVE, BELOW = range(NUM_SPATIAL_RELATIONS)


@dataclass(frozen=True)
class WorldConfig:
    task: str = "clip"
    num_anatomy: int = 5
    num_tools: int = 2
    tracks: int = 5
    T: int = 10
    dim: int = 16
    motion_step: float = 0.02
    occlusion_rate: float = 0.03
    mean_gap: float = 4.0
    max_gap: int = 8
    dup_rate: float = 0.0
    dup_feature_shift: float = 0.5
    feature_noise: float = 0.1
    num_criteria: int = 3
    num_phases: int = 4
    marker_occlusion_rate: float = 0.5
    distractor_rate: float = 0.15
    global_dim: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("clip", "video"):
            raise ValueError(f"unknown label rule {self.task!r}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        for name in ("occlusion_rate", "dup_rate", "dup_feature_shift", "marker_occlusion_rate", "distractor_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.mean_gap < 0 or self.feature_noise < 0 or self.motion_step < 0:
            raise ValueError("mean_gap, feature_noise and motion_step must be non-negative")
        if self.task == "clip" and min(self.tracks, self.num_anatomy) < self.num_criteria + 1:
            raise ValueError("clip rule needs num_criteria + 1 anatomy tracks")
        if self.tracks > self.num_anatomy and self.num_tools == 0:
            raise ValueError("tracks beyond the anatomy classes need at least one tool class")

    @property
    def num_classes(self) -> int:
        return self.num_anatomy + self.num_tools + (self.num_phases if self.task == "video" else 0)

    @property
    def anatomy_classes(self) -> frozenset[int]:
        return frozenset(range(self.num_anatomy))

    def marker_class(self, phase: int) -> int:
        return self.num_anatomy + self.num_tools + phase

    def track_class(self, k: int) -> int:
        if k < self.num_anatomy:
            return k
        return self.num_anatomy + (k - self.num_anatomy) % self.num_tools

    @property
    def num_outputs(self) -> int:
        return self.num_criteria if self.task == "clip" else self.num_phases

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown world config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SyntheticSequence:
    frames: list[FrameGraph]
    labels: np.ndarray                      # (K,) clip criteria or (T,) phase ids
    track_ids: list[np.ndarray]             # per frame, per node; -1 for distractors
    is_duplicate: list[np.ndarray]
    global_feats: np.ndarray | None = None  # (T, global_dim)
    extra: dict = field(default_factory=dict)


def class_bases(config: WorldConfig) -> np.ndarray:
    """Unit-norm base feature per class, shared by every sequence of a world."""
    rng = np.random.default_rng([config.seed, 0xBA5E])
    b = rng.normal(size=(config.num_classes, config.dim))
    return b / np.linalg.norm(b, axis=1, keepdims=True)


def _global_projection(config: WorldConfig) -> np.ndarray:
    rng = np.random.default_rng([config.seed, 0x6105])
    return rng.normal(size=(config.dim, config.global_dim)) / np.sqrt(config.dim)


def _visibility(rng: np.random.Generator, T: int, rate: float, mean_gap: float, max_gap: int) -> np.ndarray:
    """On/off occlusion process: a visible object starts a gap with prob ``rate``; gaps are geometric."""
    vis = np.ones(T, dtype=bool)
    if mean_gap <= 0 or rate <= 0:
        return vis
    on_mean = 1.0 / rate
    t = 0
    visible = rng.random() < on_mean / (on_mean + mean_gap)
    while t < T:
        if visible:
            while t < T and rng.random() >= rate:
                t += 1
            t += 1  # the frame where the gap starts is still visible
        else:
            gap = min(int(rng.geometric(1.0 / max(mean_gap, 1.0))), max_gap)
            vis[t:t + gap] = False
            t += gap
        visible = not visible
    return vis


def _walk(rng: np.random.Generator, T: int, step: float) -> np.ndarray:
    """(T, 4) boxes: fixed size, centre doing a clipped random walk."""
    w, h = rng.uniform(0.1, 0.3, size=2)
    c = rng.uniform([w / 2, h / 2], [1 - w / 2, 1 - h / 2])
    boxes = np.empty((T, 4))
    for t in range(T):
        if t:
            c = c + rng.normal(0.0, step, size=2)
        c = np.clip(c, [w / 2, h / 2], [1 - w / 2, 1 - h / 2])
        boxes[t] = [c[0] - w / 2, c[1] - h / 2, c[0] + w / 2, c[1] + h / 2]
    return np.clip(boxes, 0.0, 1.0)


def _shift_box(box: np.ndarray, offset: np.ndarray) -> np.ndarray:
    w, h = box[2] - box[0], box[3] - box[1]
    x1 = np.clip(box[0] + offset[0], 0.0, 1.0 - w)
    y1 = np.clip(box[1] + offset[1], 0.0, 1.0 - h)
    return np.array([x1, y1, x1 + w, y1 + h])


def spatial_relation(a: np.ndarray, b: np.ndarray) -> int:
    """Geometric relation of box ``a`` with respect to box ``b`` by dominant centre offset."""
    dx = (a[0] + a[2] - b[0] - b[2]) / 2
    dy = (a[1] + a[3] - b[1] - b[3]) / 2
    if abs(dx) >= abs(dy):
        return LEFT_OF if dx < 0 else RIGHT_OF
    return ABOVE if dy < 0 else BELOW


def _frame(t: int, feats, boxes, classes, confs) -> FrameGraph:
    n = len(classes)
    feats = np.asarray(feats, dtype=FEATURE_DTYPE)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(n, 4)
    src, dst, rel = [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            src.append(i)
            dst.append(j)
            rel.append(spatial_relation(boxes[i], boxes[j]))
    src, dst = np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)
    efeat = ((feats[src] + feats[dst]) * FEATURE_DTYPE(0.5)) if len(src) else np.zeros((0, feats.shape[1]))
    ebox = np.concatenate([np.minimum(boxes[src, :2], boxes[dst, :2]), np.maximum(boxes[src, 2:], boxes[dst, 2:])],
                          axis=1) if len(src) else np.zeros((0, 4))
    return FrameGraph(t, feats, boxes, classes, confs, np.stack([src, dst], axis=1) if len(src) else
                      np.zeros((0, 2), np.int64), efeat, ebox, rel)


def _phase_schedule(rng: np.random.Generator, T: int, P: int) -> np.ndarray:
    """Ordered phases 0..P-1 with random lengths of at least ``T // (2P)`` frames."""
    P = min(P, T)
    min_len = max(1, T // (2 * P))
    spare = T - min_len * P
    cuts = np.sort(rng.integers(0, spare + 1, size=P - 1))
    lengths = np.diff(np.concatenate([[0], cuts, [spare]])) + min_len
    return np.repeat(np.arange(P), lengths)


def generate_sequence(config: WorldConfig, seed: int | np.random.SeedSequence) -> SyntheticSequence:
    rng = np.random.default_rng(seed)
    T, D = config.T, config.dim
    bases = class_bases(config)
    sigma = config.feature_noise

    # persistent tracks
    track_class = [config.track_class(k) for k in range(config.tracks)]
    visible = [_visibility(rng, T, config.occlusion_rate, config.mean_gap, config.max_gap) for _ in track_class]
    boxes = [_walk(rng, T, config.motion_step) for _ in track_class]

    phases = None
    if config.task == "video":
        phases = _phase_schedule(rng, T, config.num_phases)
        marker_vis = _visibility(rng, T, config.marker_occlusion_rate, config.mean_gap, config.max_gap)
        marker_boxes = [_walk(rng, T, config.motion_step) for _ in range(config.num_phases)]

    # duplicate state per track: (offset, feature base, confidence) while alive
    dup_alive: list[tuple | None] = [None] * config.tracks
    dup_continue = (1.0 - config.occlusion_rate) / 2.0
    anatomy = [c for c in range(config.num_anatomy)]

    frames, tids, dups = [], [], []
    for t in range(T):
        feats, bxs, cls, confs, tid, dup = [], [], [], [], [], []
        for k, c in enumerate(track_class):
            if not visible[k][t]:
                dup_alive[k] = None
                continue
            feats.append(bases[c] + sigma * rng.normal(size=D))
            bxs.append(boxes[k][t])
            cls.append(c)
            confs.append(rng.uniform(0.7, 1.0))
            tid.append(k)
            dup.append(False)
            if dup_alive[k] is not None and rng.random() >= dup_continue:
                dup_alive[k] = None
            elif dup_alive[k] is None and rng.random() < config.dup_rate:
                others = [o for o in anatomy if o != c] or [c]
                other = others[rng.integers(len(others))]
                shift = config.dup_feature_shift
                base = (1.0 - shift) * bases[c] + shift * bases[other]
                offset = rng.uniform(0.05, 0.15, size=2) * rng.choice([-1.0, 1.0], size=2)
                dup_alive[k] = (offset, base, rng.uniform(0.3, 0.6))
            if dup_alive[k] is not None:
                offset, base, conf = dup_alive[k]
                feats.append(base + sigma * rng.normal(size=D))
                bxs.append(_shift_box(boxes[k][t], offset))
                cls.append(c)
                confs.append(conf)
                tid.append(k)
                dup.append(True)
        if phases is not None:
            p = int(phases[t])
            if marker_vis[t]:
                mc = config.marker_class(p)
                feats.append(bases[mc] + sigma * rng.normal(size=D))
                bxs.append(marker_boxes[p][t])
                cls.append(mc)
                confs.append(rng.uniform(0.7, 1.0))
                tid.append(config.tracks + p)
                dup.append(False)
            if config.num_phases > 1 and rng.random() < config.distractor_rate:
                q = int(rng.choice([o for o in range(config.num_phases) if o != p]))
                feats.append(bases[config.marker_class(q)] + sigma * rng.normal(size=D))
                bxs.append(marker_boxes[q][t])
                cls.append(config.marker_class(q))
                confs.append(rng.uniform(0.3, 0.8))
                tid.append(-1)
                dup.append(False)
        order = rng.permutation(len(cls))
        frames.append(_frame(t, np.array(feats).reshape(-1, D)[order], np.array(bxs).reshape(-1, 4)[order],
                             np.array(cls, dtype=np.int64)[order], np.array(confs)[order]))
        tids.append(np.array(tid, dtype=np.int64)[order])
        dups.append(np.array(dup, dtype=bool)[order])

    if config.task == "clip":
        last = [visible[k][T - 1] for k in range(config.tracks)]
        labels = np.array([last[k] and last[k + 1] for k in range(config.num_criteria)], dtype=np.int64)
    else:
        labels = phases.astype(np.int64)

    global_feats = None
    if config.global_dim > 0:
        proj = _global_projection(config)
        summed = np.stack([f.features.astype(np.float64).sum(axis=0) if f.num_nodes else np.zeros(D)
                           for f in frames])
        global_feats = (summed @ proj + 0.1 * rng.normal(size=(T, config.global_dim))).astype(np.float32)
    return SyntheticSequence(frames, labels, tids, dups, global_feats,
                             {"visible": np.array(visible).reshape(len(track_class), T)})


def sample_seed(global_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([global_seed, index])


def sequence_digest(seq: SyntheticSequence) -> str:
    h = hashlib.sha256()
    for f in seq.frames:
        for name in ("features", "boxes", "class_ids", "confidences", "edge_index", "edge_relations"):
            h.update(np.ascontiguousarray(getattr(f, name)).tobytes())
    return h.hexdigest()


def generate_splits(config: WorldConfig, n_train: int, n_val: int, n_test: int,
                    seed: int | None = None) -> dict[str, list[SyntheticSequence]]:
    """In-memory dataset; sample ``i`` (counted across splits) uses seed (global seed, i)."""
    seed = config.seed if seed is None else seed
    out, idx = {}, 0
    for split, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        out[split] = []
        for _ in range(n):
            out[split].append(generate_sequence(config, sample_seed(seed, idx)))
            idx += 1
    return out


MANIFEST_VERSION = 1


def generate_dataset(config: WorldConfig, n_train: int, n_val: int, n_test: int, out_dir,
                     seed: int | None = None, extra: dict | None = None) -> dict:
    """Write one frame-graph file per sequence plus ``manifest.json``; returns the manifest.

    The manifest lists ``{sample_id, split, task, path, labels}`` per sample
    (paths relative to the manifest) and echoes the world config; ``extra``
    entries are added to the manifest as-is.
    """
    if min(n_train, n_val, n_test) < 0:
        raise ValueError("split sizes must be non-negative")
    out_dir = Path(out_dir)
    splits = generate_splits(config, n_train, n_val, n_test, seed)
    samples = []
    for split, seqs in splits.items():
        for i, seq in enumerate(seqs):
            sid = f"{split}_{i:04d}"
            rel = f"frames/{sid}.jsonl"
            text = "".join(json.dumps(frame_to_record(f), separators=(",", ":")) + "\n" for f in seq.frames)
            atomic_write_text(out_dir / rel, text)
            entry = {"sample_id": sid, "split": split, "task": config.task, "path": rel,
                     "labels": seq.labels.tolist()}
            if seq.global_feats is not None:
                gpath = f"global/{sid}.json"
                atomic_write_text(out_dir / gpath, json.dumps(seq.global_feats.astype(np.float64).tolist()))
                entry["global_path"] = gpath
            samples.append(entry)
    manifest = {
        "version": MANIFEST_VERSION,
        "world": config.to_dict(),
        "seed": config.seed if seed is None else seed,
        "meta": {"dim": config.dim, "num_classes": config.num_classes,
                 "num_spatial_relations": NUM_SPATIAL_RELATIONS, "num_outputs": config.num_outputs,
                 "editable_classes": sorted(config.anatomy_classes)},
        "samples": samples,
        **(extra or {}),
    }
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=1))
    return manifest
