"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from hrcount.engine import Tensor, backward, conv2d, kernels, maxpool2x2, sequential
from hrcount.engine import sum as tsum


def cases(rng):
    x = rng.standard_normal((4, 16, 64, 64)).astype(np.float32)
    cols = kernels.im2col(x, 3, 3, 1, 1)
    w = rng.standard_normal((16, 16, 3, 3)).astype(np.float32)
    y, idx = kernels.maxpool2x2_forward(x)

    def conv_step():
        xt = Tensor(x, requires_grad=True)
        wt = Tensor(w, requires_grad=True)
        backward(tsum(maxpool2x2(conv2d(xt, wt, padding=1))))

    return {
        "im2col 4x16x64x64 k3": lambda: kernels.im2col(x, 3, 3, 1, 1),
        "col2im 4x16x64x64 k3": lambda: kernels.col2im(cols, x.shape, 3, 3, 1, 1),
        "maxpool fwd": lambda: kernels.maxpool2x2_forward(x),
        "maxpool bwd": lambda: kernels.maxpool2x2_backward(y, idx),
        "conv+pool fwd/bwd": conv_step,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    results = {}
    with sequential():
        for name in backends:
            with kernels.backend(name):
                for case, fn in cases(rng).items():
                    fn()
                    best = min(timeit.repeat(fn, number=1, repeat=args.repeat))
                    results.setdefault(case, {})[name] = best * 1e3
    print(f"{'case':<24}" + "".join(f"{b + ' ms':>14}" for b in backends)
          + ("   speedup" if len(backends) > 1 else ""))
    for case, row in results.items():
        line = f"{case:<24}" + "".join(f"{row[b]:>14.3f}" for b in backends)
        if "cython" in row and "python" in row:
            line += f"{row['python'] / row['cython']:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
