"""Wall time and peak traced memory of one attention pass as n grows."""

import argparse
import time
import tracemalloc

import numpy as np

from hdgcn.mvcattn import MVCAttnWeights, mvc_attention
from hdgcn.tensor import Tensor


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[512, 1024, 2048, 4096, 8192, 16384])
    ap.add_argument("--M", type=int, default=10)
    ap.add_argument("--d-k", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    w = MVCAttnWeights.init(args.d_k, args.M, rng)
    print("n,best_seconds,seconds_per_node_us,peak_mib")
    for n in args.sizes:
        z = Tensor(rng.normal(size=(n, args.d_k)))
        mvc_attention(z, w)
        best = float("inf")
        for _ in range(args.repeats):
            start = time.perf_counter()
            mvc_attention(z, w)
            best = min(best, time.perf_counter() - start)
        tracemalloc.start()
        mvc_attention(z, w)
        peak = tracemalloc.get_traced_memory()[1]
        tracemalloc.stop()
        print(f"{n},{best:.5f},{best / n * 1e6:.3f},{peak / 2**20:.2f}")


if __name__ == "__main__":
    main()
