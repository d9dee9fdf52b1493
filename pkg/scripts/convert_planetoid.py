"""Convert the Planetoid ``ind.<name>.*`` pickles into the hdgcn graph format.

Uses the standard public split: the first 20 labelled nodes per class block
(140 for Cora) for training, the next 500 for validation and the 1000 listed
in ``ind.<name>.test.index`` for testing. Features are row-normalised.

    python3 scripts/convert_planetoid.py path/to/planetoid/data cora data/cora.graph
"""

import argparse
import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from hdgcn.graph import Graph, SparseAdjacency, write_graph
from hdgcn.tensor import Tensor


def _load(root: Path, name: str, part: str):
    with open(root / f"ind.{name}.{part}", "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert(root: Path, name: str) -> Graph:
    x, y, tx, ty, allx, ally, adj_lists = (_load(root, name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_idx = np.loadtxt(root / f"ind.{name}.test.index", dtype=np.int64)
    order = np.sort(test_idx)

    feats = sp.vstack([allx, tx]).tolil()
    labels = np.vstack([ally, ty])
    feats[test_idx, :] = feats[order, :]
    labels[test_idx, :] = labels[order, :]
    feats = np.asarray(feats.todense(), dtype=np.float64)
    sums = feats.sum(axis=1, keepdims=True)
    feats = np.divide(feats, sums, out=np.zeros_like(feats), where=sums > 0)

    n = feats.shape[0]
    edges = {(min(i, j), max(i, j)) for i, nbrs in adj_lists.items() for j in nbrs if i != j and j < n}
    adjacency = SparseAdjacency.from_edges(n, [(i, j, 1.0) for i, j in sorted(edges)])

    y_int = np.where(labels.sum(axis=1) > 0, labels.argmax(axis=1), -1).astype(np.int64)
    masks = {k: np.zeros(n, dtype=bool) for k in ("train", "val", "test")}
    masks["train"][: y.shape[0]] = True
    masks["val"][y.shape[0]: y.shape[0] + 500] = True
    masks["test"][test_idx] = True
    return Graph(adjacency, Tensor(feats), y_int, masks)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", type=Path, help="directory holding ind.<name>.* files")
    ap.add_argument("name", default="cora", nargs="?")
    ap.add_argument("out", type=Path, nargs="?", default=Path("data/cora.graph"))
    args = ap.parse_args()
    g = convert(args.root, args.name)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_graph(args.out, g)
    print(f"{args.out}: {g.n} nodes, {g.adjacency.nnz // 2} edges, {g.features.cols} features, "
          + ", ".join(f"{k}={int(m.sum())}" for k, m in g.masks.items()))


if __name__ == "__main__":
    main()
