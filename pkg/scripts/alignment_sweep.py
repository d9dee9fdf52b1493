"""Alignment steps with and without the random-walk transition on the masked
five-node example, swept over thresholds and edge weights."""

import argparse

import numpy as np

from hdgcn.graph import SparseAdjacency, feature_alignment_steps
from hdgcn.synthetic import ALIGN_DST, ALIGN_EDGES, ALIGN_SRC, masked_path_graph


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-steps", type=int, default=500)
    ap.add_argument("--weights", type=int, default=5, help="random edge-weight draws per threshold")
    args = ap.parse_args()
    g = masked_path_graph()
    print("threshold,weights,with_transition,without,gap")
    rng = np.random.default_rng(0)
    for threshold in (0.9, 0.95, 0.99, 0.999):
        draws = [("unit", g.adjacency)]
        for k in range(args.weights):
            w = rng.uniform(0.2, 3.0, size=len(ALIGN_EDGES))
            draws.append((f"random{k}", SparseAdjacency.from_edges(5, [(i, j, float(x)) for (i, j, _), x in zip(ALIGN_EDGES, w)])))
        for label, adj in draws:
            with_t = feature_alignment_steps(adj, g.features, ALIGN_SRC, ALIGN_DST, True, threshold, args.max_steps)
            without = feature_alignment_steps(adj, g.features, ALIGN_SRC, ALIGN_DST, False, threshold, args.max_steps)
            gap = "" if with_t is None or without is None else without - with_t
            print(f"{threshold},{label},{with_t if with_t is not None else ''},{without if without is not None else ''},{gap}")


if __name__ == "__main__":
    main()
