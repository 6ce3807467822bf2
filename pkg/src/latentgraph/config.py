"""Run configuration: task defaults, overlaid by a JSON file, overlaid by command-line flags."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .decoder import GnnConfig, ModelConfig, Task, TcnConfig
from .editing import EditConfig
from .synth import WorldConfig
from .temporal import HorizonMode, HorizonSchedule, make_schedule
from .training import TrainConfig


class ConfigError(ValueError):
    pass


# Per-task defaults: clip clips of 10 frames with 5 layers, whole-video segmentation with 8.
TASK_DEFAULTS = {
    "clip": {
        "model": {"gnn": {"num_layers": 5, "dropout": 0.25}},
        "train": {"lr": 3e-4, "batch_size": 128},
    },
    "video": {
        "model": {"gnn": {"num_layers": 8, "dropout": 0.0}},
        "train": {"lr": 1e-3, "batch_size": 1},
    },
}

BASE = {
    "seed": 0,
    "task": "clip",
    "world": {k: v for k, v in WorldConfig().to_dict().items() if k not in ("task", "seed")},
    "splits": {"train": 200, "val": 50, "test": 50},
    "schedule": {"mode": "exponential", "l": 3},
    "edit": {"editable_classes": None, "p_edit": 0.5, "enabled": True, "score_mode": "degree_confidence"},
    "model": {"gnn": {"num_layers": 5, "hidden": 64, "rel_dim": 16, "dropout": 0.25, "residual": True},
              "tcn": {"enabled": False, "input_dim": 0, "channels": 32, "num_blocks": 4}},
    "train": {"epochs": 50, "lr": 3e-4, "batch_size": 128, "clip_norm": 5.0, "beta1": 0.9, "beta2": 0.999,
              "eps": 1e-8, "eval_batch_size": 64},
    "graph": {"num_classes": None, "num_spatial_relations": None},
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict) and base[k] and not isinstance(v, dict):
            raise ConfigError(f"config key {where + k!r} must be an object")
        if isinstance(base[k], dict) and base[k] and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    """Fully resolved settings for one command; ``data`` is the echo written into outputs."""

    data: dict

    @classmethod
    def resolve(cls, *layers: dict, default_task: str | None = None) -> "RunConfig":
        """Task defaults overlaid by ``layers`` in order; the last layer naming a task picks the defaults."""
        task = default_task or BASE["task"]
        for layer in layers:
            task = layer.get("task", task)
        if task not in TASK_DEFAULTS:
            raise ConfigError(f"unknown task {task!r} (expected clip or video)")
        data = _merge(BASE, TASK_DEFAULTS[task])
        for layer in layers:
            data = _merge(data, layer)
        data["task"] = task
        rc = cls(data)
        rc.validate()
        return rc

    def validate(self) -> None:
        try:
            self.world_config()
            self.schedule(2)
            self.edit_config(frozenset())
            self.gnn_config()
            self.tcn_config()
            self.train_config(frozenset())
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def task(self) -> Task:
        return Task(self.data["task"])

    def world_config(self) -> WorldConfig:
        return WorldConfig.from_dict({"task": self.data["task"], "seed": self.seed, **self.data["world"]})

    def schedule(self, T: int) -> HorizonSchedule:
        s = self.data["schedule"]
        return make_schedule(HorizonMode(s["mode"]), int(s["l"]), T)

    def edit_config(self, default_classes: frozenset[int]) -> EditConfig:
        e = self.data["edit"]
        classes = default_classes if e["editable_classes"] is None else frozenset(e["editable_classes"])
        return EditConfig(classes, float(e["p_edit"]), e["score_mode"], bool(e["enabled"]))

    def gnn_config(self) -> GnnConfig:
        return GnnConfig(**self.data["model"]["gnn"])

    def tcn_config(self) -> TcnConfig:
        return TcnConfig(**self.data["model"]["tcn"])

    def model_config(self, input_dim: int, num_relations: int, num_outputs: int) -> ModelConfig:
        return ModelConfig(input_dim, num_relations, num_outputs, self.task, self.gnn_config(), self.tcn_config())

    def train_config(self, default_classes: frozenset[int]) -> TrainConfig:
        return TrainConfig(**self.data["train"], edit=self.edit_config(default_classes))


def read_config_file(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: no such config file") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed config ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return doc


@dataclass
class ConfigSources:
    """Config file plus flag overrides, resolved on demand over command-specific base layers."""

    file_doc: dict
    overrides: dict
    file_name: str = "flags"

    def resolve(self, *base: dict, default_task: str | None = None) -> RunConfig:
        try:
            return RunConfig.resolve(*base, self.file_doc, self.overrides, default_task=default_task)
        except ConfigError as exc:
            raise ConfigError(f"{self.file_name}: {exc}") from exc
