"""Time forward-backward and Viterbi on the numba and numpy backends.

    python3 benchmarks/bench_fb.py --labels 12 --frames 50 200 800 --repeats 20

Each timing is the best of ``--repeats`` calls after one warm-up call, so numba
compilation is excluded. Both backends are also checked for agreement.
"""
import argparse
import time

import numpy as np

from lfmmi_cl import fb
from lfmmi_cl import graph as G
from lfmmi_cl._accel import HAS_NUMBA


def den_graph(labels: int, seed: int) -> G.Graph:
    rng = np.random.default_rng(seed)
    seqs = [rng.integers(0, labels, size=20).tolist() for _ in range(50)]
    lm = G.estimate_bigram_lm(seqs, labels, 1.0)
    return G.build_denominator_graph(G.with_self_loops(lm, 0.5))


def best_of(fn, repeats: int) -> float:
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--labels", type=int, default=12)
    ap.add_argument("--frames", type=int, nargs="+", default=[50, 200, 800])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = ["numba", "numpy"] if HAS_NUMBA else ["numpy"]
    g = den_graph(args.labels, args.seed)
    rng = np.random.default_rng(args.seed + 1)
    print(f"graph: {g.num_states} states, {g.num_arcs} arcs, {args.labels} labels")
    print(f"{'op':<10}{'T':>6}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    for T in args.frames:
        em = rng.normal(size=(T, args.labels))
        ref = fb.forward_backward(g, em, backend="numpy")
        for b in backends:
            r = fb.forward_backward(g, em, backend=b)
            if abs(r.total_logprob - ref.total_logprob) > 1e-9 or np.abs(r.gamma - ref.gamma).max() > 1e-9:
                raise SystemExit(f"backend {b} disagrees with numpy at T={T}")
        ops = {
            "fb": lambda b: fb.forward_backward(g, em, backend=b),
            "viterbi": lambda b: fb.viterbi(g, em, backend=b),
        }
        for name, op in ops.items():
            times = [best_of(lambda: op(b), args.repeats) for b in backends]
            speed = f"{times[-1] / times[0]:>9.1f}x" if len(times) == 2 else ""
            print(f"{name:<10}{T:>6}" + "".join(f"{1e3 * t:>12.3f}" for t in times) + speed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
