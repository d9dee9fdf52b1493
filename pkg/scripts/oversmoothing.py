"""Row-variance trajectories of chained static and dynamic units.

Prints one CSV row per (seed, mode, unit). ``--activation`` and ``--trained``
let the dynamic chain be probed beyond the identity-weight setting used by the
acceptance test.
"""

import argparse

import numpy as np

from hdgcn.graph import Graph, row_variance
from hdgcn.model import OrderWeights, hd_cheb_unit_forward, static_cheb_forward
from hdgcn.mvcattn import MVCAttnWeights
from hdgcn.synthetic import ring_with_chords
from hdgcn.tensor import Parameter, Tensor


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--units", type=int, default=8)
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--M", type=int, default=10)
    ap.add_argument("--activation", default="identity")
    args = ap.parse_args()

    eye = Tensor(np.eye(args.d))
    wins = 0
    print("seed,mode,unit,row_variance")
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed)
        a = ring_with_chords(args.n, 10, rng)
        g = Graph(a)
        x = Tensor(rng.normal(size=(args.n, args.d)))
        zs, zd = x, x
        print(f"{seed},both,0,{row_variance(x, a):.6e}")
        for k in range(1, args.units + 1):
            zs = static_cheb_forward(g, zs, eye, args.activation, k)
            ow = OrderWeights(Parameter(f"w{k}", np.eye(args.d)), MVCAttnWeights.init(args.d, args.M, rng, prefix=f"o{k}"))
            zd, _ = hd_cheb_unit_forward(g, zd, ow, args.activation, k)
            print(f"{seed},static,{k},{row_variance(zs, a):.6e}")
            print(f"{seed},dynamic,{k},{row_variance(zd, a):.6e}")
        wins += row_variance(zd, a) > row_variance(zs, a)
    print(f"# dynamic terminal variance above static in {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
