"""Latent spatiotemporal graphs for video understanding.

Per-frame object graphs are linked across time by box and appearance
matching at several horizons, optionally pruned to one node per class, and
decoded by a message-passing network with frame pooling.
"""

from .decoder import GnnConfig, ModelConfig, Task, TcnConfig, forward, init_params
from .editing import EditConfig, edit_graph, maybe_edit, node_scores, temporal_degrees
from .graph import (
    BBox,
    FrameGraph,
    GraphMeta,
    GraphValidationError,
    Node,
    NodeRef,
    SpatialEdge,
    TemporalEdge,
    TemporalEdgeSet,
    VideoGraph,
    validate_frame,
    validate_sequence,
    validate_video_graph,
)
from .io import (
    GraphFormatError,
    export_dot,
    load_video_graph,
    read_frame_graphs,
    read_video_graph,
    save_video_graph,
    write_frame_graphs,
    write_video_graph,
)
from .metrics import average_precision, macro_f1, map_over_criteria, video_macro_f1
from .temporal import (
    HorizonMode,
    HorizonSchedule,
    Kernel,
    assemble_video_graph,
    best_match_edges,
    build_temporal_edges,
    cosine_sim,
    giou,
    make_schedule,
    pairwise_similarity,
)

__version__ = "0.1.0"
