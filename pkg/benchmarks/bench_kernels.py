"""Compare the compiled and pure-numpy MLP kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--rows 16000] [--repeat 5] [--json out.json]

Times a full forward pass and one Adam training epoch for a few network
shapes on each available backend and reports the speed-up.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from hybridwind.nn import MlpNetwork, backend
from hybridwind.nn._reference import LOSS_MAE

SHAPES = ((3, 16, 16, 1), (8, 32, 32, 1), (8, 64, 64, 1))


def _epoch(kernels, net, X, y, mult, order, lr=1e-3):
    moments = [[np.zeros_like(a) for a in group] for group in (net.weights, net.biases, net.weights, net.biases)]
    kernels.adam_epoch(net.weights, net.biases, net.activation_codes, net.bound, X, y, mult, order, 128, lr,
                       LOSS_MAE, 0.5, *moments, 0, 0.9, 0.999, 1e-8)


def bench(rows: int, repeat: int) -> list[dict]:
    rng = np.random.default_rng(0)
    results = []
    for sizes in SHAPES:
        X = rng.normal(size=(rows, sizes[0]))
        y = rng.normal(size=rows)
        mult = np.ones(rows)
        order = rng.permutation(rows).astype(np.intp)
        for name in backend.BACKENDS:
            if name not in backend.available():
                continue
            kernels = backend.get(name)
            net = MlpNetwork.init(sizes, "relu", "identity", seed=0)
            fwd = min(timeit.repeat(
                lambda: kernels.forward(net.weights, net.biases, net.activation_codes, net.bound, X),
                number=5, repeat=repeat)) / 5
            ep = min(timeit.repeat(lambda: _epoch(kernels, net.copy(), X, y, mult, order),
                                   number=1, repeat=repeat))
            results.append({"shape": "x".join(map(str, sizes)), "backend": name, "rows": rows,
                            "forward_s": fwd, "epoch_s": ep})
    return results


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=16000)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write results here")
    args = parser.parse_args(argv)
    results = bench(args.rows, args.repeat)
    print(f"{'shape':>12s} {'backend':>9s} {'forward ms':>11s} {'epoch ms':>9s} {'speed-up':>9s}")
    reference = {r["shape"]: r for r in results if r["backend"] == "python"}
    for r in results:
        ref = reference[r["shape"]]
        print(f"{r['shape']:>12s} {r['backend']:>9s} {1e3 * r['forward_s']:11.2f} {1e3 * r['epoch_s']:9.2f} "
              f"{ref['epoch_s'] / r['epoch_s']:8.2f}x")
    if "compiled" not in backend.available():
        print("compiled backend not built; only the numpy fallback was timed", file=sys.stderr)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
