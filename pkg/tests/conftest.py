import numpy as np
import pytest

from latentgraph.graph import FrameGraph


def random_frame(rng: np.random.Generator, t: int, n: int, dim: int = 4, num_classes: int = 5,
                 num_rel: int = 3, edge_p: float = 0.4) -> FrameGraph:
    """Random valid frame graph with ``n`` nodes and a random spatial edge set."""
    xy = rng.uniform(0, 0.7, size=(n, 2))
    wh = rng.uniform(0.01, 0.3, size=(n, 2))
    boxes = np.concatenate([xy, xy + wh], axis=1)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j and rng.random() < edge_p]
    ei = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    eb = np.concatenate([np.minimum(boxes[ei[:, 0], :2], boxes[ei[:, 1], :2]),
                         np.maximum(boxes[ei[:, 0], 2:], boxes[ei[:, 1], 2:])], axis=1) if len(ei) else np.zeros((0, 4))
    return FrameGraph(
        frame_index=t,
        features=rng.normal(size=(n, dim)),
        boxes=boxes,
        class_ids=rng.integers(0, num_classes, size=n),
        confidences=rng.uniform(0.1, 1.0, size=n),
        edge_index=ei,
        edge_features=rng.normal(size=(len(ei), dim)),
        edge_boxes=eb,
        edge_relations=rng.integers(0, num_rel, size=len(ei)),
    )


def random_sequence(rng: np.random.Generator, T: int, max_nodes: int = 6, dim: int = 4, num_classes: int = 5,
                    num_rel: int = 3) -> list[FrameGraph]:
    return [random_frame(rng, t, int(rng.integers(0, max_nodes + 1)), dim, num_classes, num_rel) for t in range(T)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
