"""Desk-scale ablation benchmarks on synthetic worlds.

Each run generates a world from ``seed``, assembles video graphs with the
requested horizon schedule, trains a decoder and reports the test metric.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .decoder import GnnConfig, ModelConfig, Task, TcnConfig
from .editing import EditConfig
from .synth import NUM_SPATIAL_RELATIONS, SyntheticSequence, WorldConfig, generate_splits
from .temporal import HorizonMode, assemble_video_graph, make_schedule
from .training import LabeledSample, TrainConfig, evaluate, train

log = logging.getLogger(__name__)


def to_samples(seqs: Sequence[SyntheticSequence], world: WorldConfig, mode: HorizonMode | str = "exponential",
               l: int = 3, prefix: str = "s") -> list[LabeledSample]:
    out = []
    for i, s in enumerate(seqs):
        schedule = make_schedule(mode, l, len(s.frames))
        g = assemble_video_graph(s.frames, schedule, world.num_classes, NUM_SPATIAL_RELATIONS, world.dim)
        if world.task == "clip":
            out.append(LabeledSample(f"{prefix}{i}", g, clip_labels=s.labels, global_feats=s.global_feats))
        else:
            out.append(LabeledSample(f"{prefix}{i}", g, frame_labels=s.labels, global_feats=s.global_feats))
    return out


@dataclass
class RunResult:
    arm: str
    seed: int
    metric: float
    seconds: float
    history: list[dict] = field(default_factory=list)


@dataclass
class AblationReport:
    runs: list[RunResult]

    def mean(self, arm: str) -> float:
        return float(np.mean([r.metric for r in self.runs if r.arm == arm]))

    def arms(self) -> list[str]:
        return list(dict.fromkeys(r.arm for r in self.runs))

    def summary(self) -> dict:
        return {arm: {"mean": self.mean(arm), "per_seed": [r.metric for r in self.runs if r.arm == arm]}
                for arm in self.arms()}


def _model_config(world: WorldConfig, samples: Sequence[LabeledSample], gnn: GnnConfig) -> ModelConfig:
    task = Task.CLIP_MULTILABEL if world.task == "clip" else Task.VIDEO_SEGMENTATION
    return ModelConfig(input_dim=world.dim, num_relations=samples[0].graph.meta.num_relations,
                       num_outputs=world.num_outputs, task=task, gnn=gnn, tcn=TcnConfig())


def _run(arm: str, seed: int, world: WorldConfig, train_s, val_s, test_s, gnn: GnnConfig,
         tc: TrainConfig) -> RunResult:
    t0 = time.perf_counter()
    mc = _model_config(world, train_s, gnn)
    state = train(train_s, mc, tc, seed=seed, val_samples=val_s or None)
    res = evaluate(test_s, state.best_store, mc, tc.edit, tc.eval_batch_size)
    r = RunResult(arm, seed, res.metric, time.perf_counter() - t0, state.history)
    log.info("%s seed %d: %.4f (%.1fs)", arm, seed, r.metric, r.seconds)
    return r


# Defaults sized to finish each arm in about a minute per seed on one core. Visibility is persistent so the
# clip label (last-frame co-visibility) is learnable from every frame; duplicates carry the appearance of a
# different anatomy class, i.e. a confusable false detection.
EDIT_WORLD = WorldConfig(task="clip", T=10, occlusion_rate=0.05, mean_gap=5.0, dup_rate=0.3, dup_feature_shift=1.0)
EDIT_GNN = GnnConfig(num_layers=2, hidden=32, rel_dim=8, dropout=0.1)
EDIT_TRAIN = TrainConfig(epochs=40, lr=3e-3, batch_size=32)


def editing_ablation(seeds: Sequence[int] = (0, 1, 2), world: WorldConfig = EDIT_WORLD, n_train: int = 200,
                     n_val: int = 50, n_test: int = 100, gnn: GnnConfig = EDIT_GNN,
                     train_config: TrainConfig = EDIT_TRAIN) -> AblationReport:
    """Clip task with duplicate detections: editing on (p_edit in training, always at test) vs off."""
    runs = []
    for seed in seeds:
        w = replace(world, seed=seed)
        splits = generate_splits(w, n_train, n_val, n_test, seed=seed)
        train_s, val_s, test_s = (to_samples(splits[k], w, prefix=k) for k in ("train", "val", "test"))
        for arm, enabled in (("edit", True), ("no_edit", False)):
            edit = EditConfig(editable_classes=w.anatomy_classes, p_edit=train_config.edit.p_edit, enabled=enabled)
            runs.append(_run(arm, seed, w, train_s, val_s, test_s, gnn, replace(train_config, edit=edit)))
    return AblationReport(runs)


# Phase markers are occluded half the time with gaps up to 8 frames, so a frame often has to borrow its phase
# evidence from frames several steps away. Two GNN layers keep adjacent-only edges to a reach of two frames.
HORIZON_WORLD = WorldConfig(task="video", T=64, tracks=3, num_anatomy=3, num_tools=1, num_criteria=1,
                            occlusion_rate=0.15, mean_gap=4.0, max_gap=8, marker_occlusion_rate=0.5,
                            distractor_rate=0.15)
HORIZON_GNN = GnnConfig(num_layers=2, hidden=16, rel_dim=8, dropout=0.0)
HORIZON_TRAIN = TrainConfig(epochs=30, lr=3e-3, batch_size=16, edit=EditConfig(enabled=False))
HORIZON_ARMS = {"exponential": ("exponential", 3), "adjacent": ("adjacent", 0), "dense": ("dense", 0)}


def horizon_ablation(seeds: Sequence[int] = (0, 1, 2), world: WorldConfig = HORIZON_WORLD, n_train: int = 200,
                     n_val: int = 0, n_test: int = 50, gnn: GnnConfig = HORIZON_GNN,
                     train_config: TrainConfig = HORIZON_TRAIN, arms: dict = HORIZON_ARMS) -> AblationReport:
    """Segmentation task: multi-horizon temporal edges vs adjacent-only vs dense."""
    runs = []
    for seed in seeds:
        w = replace(world, seed=seed)
        splits = generate_splits(w, n_train, n_val, n_test, seed=seed)
        for arm, (mode, l) in arms.items():
            train_s, val_s, test_s = (to_samples(splits[k], w, mode, l, prefix=k) for k in ("train", "val", "test"))
            runs.append(_run(arm, seed, w, train_s, val_s, test_s, gnn, train_config))
    return AblationReport(runs)
