"""Message-passing decoder over video graphs, with optional TCN fusion.

Per layer, every edge ``s -> d`` runs a two-layer perceptron on
``[h_s | h_e | rel_emb | h_d]`` whose output splits into a message for ``s``,
a new edge feature and a message for ``d``. Nodes average the messages
addressed to them (edge multiplicity counts) and add an MLP of that average
to their current feature. Node features are mean-pooled per frame, the TCN
output is added when enabled, and a linear head yields per-frame logits.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from .batching import GraphTensors, tensorize
from .graph import VideoGraph
from .nn import ParamStore, Tape, Tensor, glorot


class Task(str, enum.Enum):
    CLIP_MULTILABEL = "clip"
    VIDEO_SEGMENTATION = "video"


@dataclass(frozen=True)
class GnnConfig:
    num_layers: int = 5
    hidden: int = 64
    rel_dim: int = 16
    dropout: float = 0.25
    residual: bool = True

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")


@dataclass(frozen=True)
class TcnConfig:
    enabled: bool = False
    input_dim: int = 0
    channels: int = 32
    kernel_size: int = 3
    num_blocks: int = 4  # dilations 1, 2, ..., 2**(num_blocks - 1)
    causal: bool = True

    def __post_init__(self):
        if self.kernel_size != 3:
            raise ValueError("only kernel size 3 is supported")
        if not self.causal:
            raise ValueError("only causal TCNs are supported")

    @property
    def dilations(self) -> tuple[int, ...]:
        return tuple(2 ** k for k in range(self.num_blocks))

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel_size - 1) * sum(self.dilations)

    @staticmethod
    def blocks_for_length(length: int) -> int:
        """Smallest block count whose receptive field covers ``length`` frames."""
        k = 1
        while 1 + 2 * (2 ** k - 1) < length:
            k += 1
        return k


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_relations: int
    num_outputs: int
    task: Task = Task.CLIP_MULTILABEL
    gnn: GnnConfig = field(default_factory=GnnConfig)
    tcn: TcnConfig = field(default_factory=TcnConfig)

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["gnn"] = GnnConfig(**d.get("gnn", {}))
        d["tcn"] = TcnConfig(**d.get("tcn", {}))
        return cls(**d)


def _linear_params(store: ParamStore, name: str, fan_in: int, fan_out: int, rng) -> None:
    store.add(f"{name}.W", glorot(rng, fan_in, fan_out, store.dtype))
    store.add(f"{name}.b", np.zeros((1, fan_out), dtype=store.dtype))


def init_params(config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ParamStore:
    store = ParamStore(dtype)
    H, R = config.gnn.hidden, config.gnn.rel_dim
    _linear_params(store, "node_in", config.input_dim, H, rng)
    _linear_params(store, "edge_in", config.input_dim, H, rng)
    store.add("rel_emb", glorot(rng, config.num_relations, R, store.dtype))
    for layer in range(config.gnn.num_layers):
        _linear_params(store, f"gnn{layer}.msg1", 3 * H + R, H, rng)
        _linear_params(store, f"gnn{layer}.msg2", H, 3 * H, rng)
        _linear_params(store, f"gnn{layer}.node1", H, H, rng)
        _linear_params(store, f"gnn{layer}.node2", H, H, rng)
    if config.tcn.enabled:
        C = config.tcn.channels
        _linear_params(store, "tcn.in", config.tcn.input_dim, C, rng)
        for k in range(config.tcn.num_blocks):
            _linear_params(store, f"tcn.block{k}", config.tcn.kernel_size * C, C, rng)
        _linear_params(store, "tcn.out", C, H, rng)
    _linear_params(store, "head", H, config.num_outputs, rng)
    return store


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, int]]:
    return init_params(config, np.random.default_rng(0)).shapes()


def _lin(tape: Tape, store: ParamStore, name: str, x: Tensor) -> Tensor:
    return tape.linear(x, store[f"{name}.W"], store[f"{name}.b"])


def _const(a: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(a, dtype=dtype))


def gnn_layer(tape: Tape, store: ParamStore, layer: int, h: Tensor, e: Tensor, rel: Tensor, ops: dict,
              hidden: int, dropout: float = 0.0, residual: bool = True, training: bool = False,
              rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """One round of message passing; returns updated node and edge features.

    ``rel`` is the relation embedding table (num_relations, R); edges pick
    their row through ``ops["rel_onehot"]``.
    """
    if e.shape[0] == 0:
        return h, e
    H = hidden
    # The first edge-MLP layer acts on [h_src | e | rel | h_dst]; its weight is split by input block so the
    # node terms are projected once per node and then gathered onto edges.
    W1, b1 = store[f"gnn{layer}.msg1.W"], store[f"gnn{layer}.msg1.b"]
    R = rel.shape[1]
    src_term = tape.spmm(ops["gather_src"], tape.matmul(h, tape.slice_rows(W1, 0, H)))
    edge_term = tape.matmul(e, tape.slice_rows(W1, H, 2 * H))
    rel_term = tape.spmm(ops["rel_onehot"], tape.matmul(rel, tape.slice_rows(W1, 2 * H, 2 * H + R)))
    dst_term = tape.spmm(ops["gather_dst"], tape.matmul(h, tape.slice_rows(W1, 2 * H + R, 3 * H + R)))
    pre = tape.add_n(src_term, edge_term, rel_term, dst_term, b1)
    z = tape.dropout(tape.relu(pre), dropout, rng, training)
    W2, b2 = store[f"gnn{layer}.msg2.W"], store[f"gnn{layer}.msg2.b"]
    m_src, e_new, m_dst = (
        tape.linear(z, tape.slice_cols(W2, k * H, (k + 1) * H), tape.slice_cols(b2, k * H, (k + 1) * H))
        for k in range(3))
    agg = tape.add(tape.spmm(ops["scatter_src"], m_src), tape.spmm(ops["scatter_dst"], m_dst))
    u = tape.relu(_lin(tape, store, f"gnn{layer}.node1", agg))
    u = tape.dropout(u, dropout, rng, training)
    u = tape.scale_rows(_lin(tape, store, f"gnn{layer}.node2", u), ops["has_edges"])
    if residual:
        h_new = tape.add(h, u)
    else:
        h_new = tape.add(tape.scale_rows(h, 1.0 - ops["has_edges"]), u)
    return h_new, e_new


def frame_pool(tape: Tape, ops: dict, h: Tensor) -> Tensor:
    """Mean node feature per frame; frames without nodes pool to zero."""
    return tape.spmm(ops["pool"], h)


def tcn_forward(tape: Tape, store: ParamStore, config: TcnConfig, batch: GraphTensors, x: Tensor) -> Tensor:
    """Causal dilated residual TCN over per-frame global features (T, F) -> (T, H)."""
    if x.shape[1] != config.input_dim:
        raise ValueError(f"tcn: global features have {x.shape[1]} columns, expected {config.input_dim}")
    dtype = store.dtype
    y = _lin(tape, store, "tcn.in", x)
    for k, d in enumerate(config.dilations):
        taps = [y] + [tape.spmm(batch.causal_shift(j * d, dtype), y) for j in range(1, config.kernel_size)]
        y = tape.add(y, tape.relu(_lin(tape, store, f"tcn.block{k}", tape.concat_cols(taps))))
    return _lin(tape, store, "tcn.out", y)


def forward_frames(tape: Tape, store: ParamStore, config: ModelConfig, batch: GraphTensors, training: bool = False,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Per-frame logits (T, K) for every frame row of ``batch``."""
    dtype = store.dtype
    ops = batch.operators(dtype, config.num_relations)
    g = config.gnn
    h = tape.relu(_lin(tape, store, "node_in", _const(batch.node_feats, dtype)))
    e = tape.relu(_lin(tape, store, "edge_in", _const(batch.edge_feats, dtype)))
    rel = store["rel_emb"]
    for layer in range(g.num_layers):
        h, e = gnn_layer(tape, store, layer, h, e, rel, ops, g.hidden, g.dropout, g.residual, training, rng)
    pooled = frame_pool(tape, ops, h)
    if config.tcn.enabled:
        if batch.global_feats is None:
            raise ValueError("TCN enabled but the sample has no global frame features")
        pooled = tape.add(pooled, tcn_forward(tape, store, config.tcn, batch, _const(batch.global_feats, dtype)))
    pooled = tape.dropout(pooled, g.dropout, rng, training)
    return _lin(tape, store, "head", pooled)


def select_task_rows(tape: Tape, config: ModelConfig, batch: GraphTensors, logits: Tensor) -> Tensor:
    if config.task is Task.CLIP_MULTILABEL:
        return tape.take_rows(logits, batch.last_frame_rows())
    return logits


def forward(g: VideoGraph | GraphTensors, store: ParamStore, config: ModelConfig,
            global_feats: np.ndarray | None = None) -> np.ndarray:
    """Inference logits: the last frame's row for clip tasks, every frame for segmentation."""
    batch = g if isinstance(g, GraphTensors) else tensorize(g, global_feats)
    if not isinstance(g, GraphTensors) and g.meta.dim != config.input_dim:
        raise ValueError(f"graph feature dim {g.meta.dim} != model input dim {config.input_dim}")
    tape = Tape()
    logits = select_task_rows(tape, config, batch, forward_frames(tape, store, config, batch, training=False))
    return logits.value
