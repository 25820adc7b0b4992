"""Small hand-built inputs shared by several test modules."""
import numpy as np

from qgnntrack.graphbuild import SubGraph

FIVE_NODE_X = np.array([
    [0.10, 0.30, 0.45],
    [0.25, 0.35, 0.50],
    [0.30, 0.60, 0.55],
    [0.50, 0.40, 0.60],
    [0.55, 0.70, 0.65],
])
FIVE_NODE_EDGES = np.array([[0, 1], [0, 2], [1, 3], [2, 4]])
FIVE_NODE_LABELS = np.array([1, 0, 1, 0])


def five_node_graph() -> SubGraph:
    return SubGraph(FIVE_NODE_X.copy(), FIVE_NODE_EDGES.copy(), FIVE_NODE_LABELS.copy(),
                    layers=[0, 1, 1, 2, 2], meta={"event_id": 0, "slice": (0, 0), "scaled": True,
                                                  "sector_axis": "phi", "sector_bounds": (0.0, 1.0),
                                                  "bounds": [(0.0, 1.0)] * 3})


def random_graph(rng, n_nodes: int, n_edges: int) -> SubGraph:
    X = rng.uniform(0, 1, (n_nodes, 3))
    edges = rng.integers(0, n_nodes, (n_edges, 2)) if n_nodes else np.zeros((0, 2), int)
    labels = rng.integers(0, 2, n_edges)
    return SubGraph(X, edges, labels)
