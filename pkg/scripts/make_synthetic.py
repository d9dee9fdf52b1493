"""Write the small synthetic datasets used by the example configs into data/."""

import argparse
from pathlib import Path

import numpy as np

from hdgcn.graph import write_graph
from hdgcn.synthetic import masked_path_graph, overfit_graph, planted_partition


def toy_corpus(n_docs: int, rng: np.random.Generator) -> str:
    pos, neg, filler = ["good", "fine", "great", "nice"], ["bad", "poor", "awful", "dull"], ["the", "a", "film", "was", "plot"]
    lines = []
    for i in range(n_docs):
        label = i % 2
        words = rng.choice((pos if label else neg) + filler, size=int(rng.integers(5, 12)))
        lines.append(f"{label}\t{' '.join(words)}")
    return "\n".join(lines) + "\n"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("data"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    write_graph(args.out / "overfit.graph", overfit_graph(args.seed))
    write_graph(args.out / "masked_path.graph", masked_path_graph())
    write_graph(
        args.out / "sbm.graph",
        planted_partition(600, 4, 32, seed=args.seed, p_in=0.02, p_out=0.002, signal=0.6, splits=(80, 120)),
    )
    (args.out / "toy_train.tsv").write_text(toy_corpus(200, rng), encoding="utf-8")
    (args.out / "toy_test.tsv").write_text(toy_corpus(60, rng), encoding="utf-8")
    for p in sorted(args.out.iterdir()):
        print(p)


if __name__ == "__main__":
    main()
