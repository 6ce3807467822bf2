"""Training and evaluation of the decoder on labelled video graphs."""

from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .batching import GraphTensors, collate, tensorize
from .decoder import ModelConfig, Task, expected_shapes, forward_frames, init_params
from .editing import EditConfig, edit_graph, should_edit
from .graph import VideoGraph
from .io import atomic_write_text
from .metrics import map_over_criteria, video_macro_f1
from .nn import CheckpointError, ParamStore, Tape, adam_step, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class LabelError(ValueError):
    pass


@dataclass
class LabeledSample:
    """A video graph with clip-level or frame-level labels.

    ``frame_labels`` is (T, K) binary for multilabel tasks or (T,) class ids
    for segmentation; ``-1`` marks a frame without a label.
    """

    sample_id: str
    graph: VideoGraph
    clip_labels: np.ndarray | None = None
    frame_labels: np.ndarray | None = None
    global_feats: np.ndarray | None = None


def propagate_labels(sample: LabeledSample, task: Task | str) -> np.ndarray:
    """Per-frame targets; a clip label is copied to every frame."""
    task = Task(task)
    T = sample.graph.num_frames
    if sample.frame_labels is not None:
        y = np.asarray(sample.frame_labels)
        if y.shape[0] != T:
            raise LabelError(f"{sample.sample_id}: {y.shape[0]} frame labels for {T} frames")
        missing = np.flatnonzero((y < 0).reshape(T, -1).any(axis=1))
        if len(missing):
            raise LabelError(f"{sample.sample_id}: frames {missing.tolist()} have no label")
        return y
    if sample.clip_labels is None:
        raise LabelError(f"{sample.sample_id}: no labels")
    y = np.asarray(sample.clip_labels)
    if task is Task.CLIP_MULTILABEL:
        return np.tile(y.reshape(1, -1), (T, 1))
    return np.full(T, int(y.reshape(-1)[0]), dtype=np.int64)


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 3e-4
    batch_size: int = 128
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    edit: EditConfig = field(default_factory=EditConfig)
    eval_batch_size: int = 64

    def to_dict(self) -> dict:
        d = asdict(self)
        d["edit"] = {"editable_classes": sorted(self.edit.editable_classes), "p_edit": self.edit.p_edit,
                     "score_mode": self.edit.score_mode.value, "enabled": self.edit.enabled}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "edit" in d:
            d["edit"] = EditConfig(**d["edit"])
        return cls(**d)


def _loss(tape: Tape, task: Task, logits, targets: np.ndarray, weights: np.ndarray):
    if task is Task.CLIP_MULTILABEL:
        return tape.bce_with_logits(logits, targets, weights)
    return tape.softmax_cross_entropy(logits, targets, weights)


def frame_accuracy(logits: np.ndarray, targets: np.ndarray, task: Task) -> float:
    if task is Task.CLIP_MULTILABEL:
        return float(np.mean((logits > 0) == (targets > 0)))
    return float(np.mean(np.argmax(logits, axis=1) == targets))


class _Prepared:
    """Lazily tensorized samples, edited and unedited."""

    def __init__(self, samples: Sequence[LabeledSample], task: Task, edit: EditConfig):
        self.samples = list(samples)
        self.task = task
        self.edit = edit
        self.targets = [propagate_labels(s, task) for s in self.samples]
        self._cache: dict[tuple[int, bool], GraphTensors] = {}

    def get(self, i: int, edited: bool) -> GraphTensors:
        key = (i, edited)
        if key not in self._cache:
            s = self.samples[i]
            g = edit_graph(s.graph, self.edit) if edited else s.graph
            self._cache[key] = tensorize(g, s.global_feats)
        return self._cache[key]

    def batch(self, idx: Sequence[int], edited: Sequence[bool]):
        items = [self.get(i, e) for i, e in zip(idx, edited)]
        targets = np.concatenate([self.targets[i] for i in idx])
        weights = np.concatenate([np.full(len(self.targets[i]), 1.0 / (len(idx) * len(self.targets[i])))
                                  for i in idx])
        return collate(items), targets, weights


def _check_arity(samples: Sequence[LabeledSample], config: ModelConfig) -> None:
    for s in samples:
        y = propagate_labels(s, config.task)
        if config.task is Task.CLIP_MULTILABEL and y.shape[1] != config.num_outputs:
            raise LabelError(f"{s.sample_id}: {y.shape[1]} labels per frame, model has {config.num_outputs} outputs")
        if config.task is Task.VIDEO_SEGMENTATION and (y.ndim != 1 or y.max() >= config.num_outputs):
            raise LabelError(f"{s.sample_id}: class ids must be in [0, {config.num_outputs})")


@dataclass
class EvalResult:
    loss: float
    metric: float
    frame_accuracy: float
    predictions: list[np.ndarray]


def evaluate(samples: Sequence[LabeledSample], store: ParamStore, config: ModelConfig, edit: EditConfig,
             batch_size: int = 64, prepared: _Prepared | None = None) -> EvalResult:
    """Inference over ``samples`` (editing applied whenever enabled); returns task metric and per-sample logits."""
    prep = prepared or _Prepared(samples, config.task, edit)
    n = len(prep.samples)
    preds, losses, accs, sizes = [], [], [], []
    for lo in range(0, n, batch_size):
        idx = list(range(lo, min(n, lo + batch_size)))
        batch, targets, weights = prep.batch(idx, [edit.enabled] * len(idx))
        tape = Tape()
        logits = forward_frames(tape, store, config, batch, training=False)
        losses.append(_loss(tape, config.task, logits, targets, weights).value[0, 0])
        accs.append(frame_accuracy(logits.value, targets, config.task))
        sizes.append(len(idx))
        bounds = np.cumsum([0] + [prep.samples[i].graph.num_frames for i in idx])
        preds += [logits.value[a:b].astype(np.float64) for a, b in zip(bounds[:-1], bounds[1:])]
    sizes = np.array(sizes, dtype=np.float64)
    if config.task is Task.CLIP_MULTILABEL:
        scores = np.stack([p[-1] for p in preds])
        truth = np.stack([t[-1] for t in prep.targets])
        metric = map_over_criteria(scores, truth).mean
    else:
        metric = video_macro_f1([p.argmax(axis=1) for p in preds], prep.targets).mean
    return EvalResult(float(np.dot(losses, sizes) / sizes.sum()), metric, float(np.dot(accs, sizes) / sizes.sum()),
                      preds)


@dataclass
class TrainState:
    store: ParamStore
    best_store: ParamStore
    epoch: int = 0
    best_metric: float = -np.inf
    best_epoch: int = -1
    history: list[dict] = field(default_factory=list)


def train(train_samples: Sequence[LabeledSample], model_config: ModelConfig, train_config: TrainConfig, seed: int = 0,
          val_samples: Sequence[LabeledSample] | None = None, state: TrainState | None = None,
          on_epoch: Callable[[TrainState], None] | None = None) -> TrainState:
    """Adam training with frame-wise supervision.

    Each step averages the frame-mean loss of ``batch_size`` samples. All
    randomness (sample order, edit draws, dropout masks) is derived from
    ``(seed, epoch, ...)``, so training resumed from a saved ``TrainState``
    continues exactly as an uninterrupted run would. The returned state keeps
    the parameters with the best validation metric (last epoch when there is
    no validation set).
    """
    if not train_samples:
        raise ValueError("train: empty dataset")
    _check_arity(train_samples, model_config)
    task = model_config.task
    edit = train_config.edit
    prep = _Prepared(train_samples, task, edit)
    val_prep = _Prepared(val_samples, task, edit) if val_samples else None
    if state is None:
        store = init_params(model_config, np.random.default_rng([seed, 0x1417]))
        state = TrainState(store=store, best_store=store.copy())

    n = len(prep.samples)
    bs = max(1, min(train_config.batch_size, n))
    while state.epoch < train_config.epochs:
        epoch = state.epoch
        order = np.random.default_rng([seed, epoch, 0]).permutation(n)
        edit_rng = np.random.default_rng([seed, epoch, 1])
        edited = {int(i): should_edit(edit, edit_rng, training=True) for i in order}
        total_loss, correct, count = 0.0, 0.0, 0
        for step, lo in enumerate(range(0, n, bs)):
            idx = [int(i) for i in order[lo:lo + bs]]
            batch, targets, weights = prep.batch(idx, [edited[i] for i in idx])
            tape = Tape()
            logits = forward_frames(tape, state.store, model_config, batch, training=True,
                                    rng=np.random.default_rng([seed, epoch, 2, step]))
            loss = _loss(tape, task, logits, targets, weights)
            tape.backward(loss)
            state.store.clip_grad_norm(train_config.clip_norm)
            adam_step(state.store, train_config.lr, train_config.beta1, train_config.beta2, train_config.eps)
            total_loss += float(loss.value[0, 0]) * len(idx)
            correct += frame_accuracy(logits.value, targets, task) * len(targets)
            count += len(targets)
        record = {"epoch": epoch, "split": "train", "loss": total_loss / n, "metric": correct / count}
        state.history.append(record)
        log.info("epoch %d train loss %.4f acc %.4f", epoch, record["loss"], record["metric"])
        if val_prep is not None:
            res = evaluate(val_samples, state.store, model_config, edit, train_config.eval_batch_size, val_prep)
            state.history.append({"epoch": epoch, "split": "val", "loss": res.loss, "metric": res.metric})
            if res.metric > state.best_metric:
                state.best_metric, state.best_epoch = res.metric, epoch
                state.best_store = state.store.copy()
        else:
            state.best_metric, state.best_epoch = record["metric"], epoch
            state.best_store = state.store.copy()
        state.epoch += 1
        if on_epoch is not None:
            on_epoch(state)
    return state


# -- checkpoints ----------------------------------------------------------

def save_model(path, store: ParamStore, model_config: ModelConfig, train_config: TrainConfig | None = None,
               extra: dict | None = None, include_optimizer: bool = False) -> None:
    config = {"model": model_config.to_dict()}
    if train_config is not None:
        config["train"] = train_config.to_dict()
    buf = io.StringIO()
    save_checkpoint(buf, store, config, extra, include_optimizer)
    atomic_write_text(path, buf.getvalue())


def load_model(path) -> tuple[ParamStore, ModelConfig, dict]:
    with open(path) as fh:
        doc_text = fh.read()
    try:
        config = json.loads(doc_text).get("config", {})
        model_config = ModelConfig.from_dict(config["model"])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"truncated or malformed checkpoint: {exc.msg}") from exc
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CheckpointError(f"checkpoint has no usable model config: {exc!r}") from exc
    store, config, extra = load_checkpoint(io.StringIO(doc_text), expected_shapes(model_config))
    return store, model_config, {"config": config, "extra": extra}


def save_train_state(path, state: TrainState, model_config: ModelConfig, train_config: TrainConfig,
                     seed: int) -> None:
    extra = {"epoch": state.epoch, "best_metric": state.best_metric if np.isfinite(state.best_metric) else None,
             "best_epoch": state.best_epoch, "history": state.history, "seed": seed,
             "best": state.best_store.state_dict(include_optimizer=False)}
    save_model(path, state.store, model_config, train_config, extra, include_optimizer=True)


def load_train_state(path) -> tuple[TrainState, ModelConfig, TrainConfig, int]:
    store, model_config, info = load_model(path)
    extra = info["extra"]
    best = ParamStore.from_state_dict(extra["best"], expected_shapes(model_config))
    bm = extra.get("best_metric")
    state = TrainState(store=store, best_store=best, epoch=int(extra["epoch"]),
                       best_metric=-np.inf if bm is None else float(bm), best_epoch=int(extra["best_epoch"]),
                       history=list(extra["history"]))
    return state, model_config, TrainConfig.from_dict(info["config"]["train"]), int(extra["seed"])
