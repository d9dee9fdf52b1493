"""Small generated datasets for tests, demos and runtime probes."""

from __future__ import annotations

import numpy as np

from .graph import Graph, SparseAdjacency
from .tensor import Tensor

# Masked five-node alignment example: n1 and n4 carry distinct features, the
# other three are zeroed. Nodes are 0-based here (n1 -> 0, ..., n5 -> 4).
ALIGN_EDGES = [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (1, 4, 1.0)]
ALIGN_SRC, ALIGN_DST = 0, 3


def masked_path_graph() -> Graph:
    feats = np.zeros((5, 2))
    feats[ALIGN_SRC, 0] = 1.0
    feats[ALIGN_DST, 1] = 1.0
    return Graph(SparseAdjacency.from_edges(5, ALIGN_EDGES), Tensor(feats))


def ring_with_chords(n: int, chords: int, rng: np.random.Generator) -> SparseAdjacency:
    """Connected graph: a cycle plus ``chords`` random extra edges."""
    edges = [(i, (i + 1) % n, 1.0) for i in range(n)]
    for _ in range(chords):
        i, j = rng.choice(n, size=2, replace=False)
        edges.append((int(i), int(j), 1.0))
    return SparseAdjacency.from_edges(n, edges)


def planted_partition(
    n: int,
    num_classes: int,
    feature_dim: int,
    seed: int = 0,
    p_in: float = 0.1,
    p_out: float = 0.01,
    signal: float = 1.0,
    splits: tuple[int, int] | None = None,
) -> Graph:
    """Stochastic block model with class-shifted Gaussian features.

    ``splits=(n_train, n_val)`` assigns the first nodes of a random order to
    train and val and the rest to test; ``None`` puts every node in train.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    rows, cols = np.nonzero(upper)
    adj = SparseAdjacency.from_edges(n, [(int(i), int(j), 1.0) for i, j in zip(rows, cols)])
    centers = rng.normal(size=(num_classes, feature_dim))
    feats = signal * centers[labels] + rng.normal(size=(n, feature_dim))
    masks = {}
    if splits is None:
        masks["train"] = np.ones(n, dtype=bool)
    else:
        order = rng.permutation(n)
        n_train, n_val = splits
        for name, idx in (("train", order[:n_train]), ("val", order[n_train:n_train + n_val]), ("test", order[n_train + n_val:])):
            m = np.zeros(n, dtype=bool)
            m[idx] = True
            masks[name] = m
    return Graph(adj, Tensor(feats), labels.astype(np.int64), masks)


def overfit_graph(seed: int = 0) -> Graph:
    """20 nodes, 2 classes, every node in the train mask."""
    return planted_partition(20, 2, 8, seed=seed, p_in=0.3, p_out=0.05, signal=0.5)
