"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from simulmma.kernels import compiled_available, get_backend


def cases(rng):
    # (batch*heads, T, S) of a training step, and a Monte-Carlo draw
    p = rng.uniform(1e-3, 1 - 1e-3, size=(64, 12, 14))
    mask = np.ones((64, 14))
    g = rng.normal(size=p.shape)
    mc_p = np.full((2, 3), 0.5)
    mc_u = rng.random((200_000, 2, 3))
    return p, mask, g, mc_p, mc_u


def bench(backend, repeat):
    impl = get_backend(backend)
    p, mask, g, mc_p, mc_u = cases(np.random.default_rng(0))
    _, r = impl.alignment_forward(p, mask)
    jobs = {
        "alignment_forward": lambda: impl.alignment_forward(p, mask),
        "alignment_backward": lambda: impl.alignment_backward(p, mask, r, g),
        "sample_paths_200k": lambda: impl.sample_paths(mc_p, mc_u),
    }
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in jobs.items()}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["python"] + (["compiled"] if compiled_available() else [])
    results = {b: bench(b, args.repeat) for b in backends}
    print(f"{'kernel':<22}" + "".join(f"{b:>14}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name in results["python"]:
        row = f"{name:<22}" + "".join(f"{results[b][name] * 1e3:>12.3f}ms" for b in backends)
        if len(backends) > 1:
            row += f"{results['python'][name] / results['compiled'][name]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
