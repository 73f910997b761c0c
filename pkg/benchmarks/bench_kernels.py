"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from vfc_offload import kernels
from vfc_offload.model import SystemConfig, build_table
from vfc_offload.sim import stream
from vfc_offload.solver import greedy_policy, normalize, solver_params


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(table, nt):
    p = nt.params
    pol = greedy_policy(table)
    cum = table.successor_cumulative()
    start = table.empty_state()

    def vi(mod):
        mod.value_iteration(nt.state_ptr, nt.row_ptr, nt.cols, nt.probs, nt.reward, nt.gamma,
                            np.zeros(nt.n_states + 1), p.threshold, 1_000_000)

    def paths(mod):
        for j in range(500):
            mod.simulate_path(stream(0, j), start, table.terminal, pol.rows, table.succ_ptr,
                              table.succ_index, cum, table.sigma, table.income, table.billed,
                              table.flag, table.event_kind, table.config.alpha, 1e-6)

    def backoff(mod):
        mod.backoff_slots(stream(0), 0.5, 3, 1, 1_000_000, True)

    def slots(mod):
        mod.slot_status_counts(stream(0), 0.2, 5, 1_000_000)

    return {"value iteration (K=12)": vi, "500 sample paths (K=12, greedy)": paths,
            "1e6 backoff chains": backoff, "1e6 slot draws (M=5)": slots}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    table = build_table(SystemConfig(k_max=12))
    nt = normalize(table, solver_params(table))
    backends = kernels.available_backends()
    names = sorted(backends)
    print(f"{'kernel':34s}" + "".join(f"{n:>12s}" for n in names) + f"{'ratio':>10s}")
    for label, fn in cases(table, nt).items():
        t = {n: best_of(lambda: fn(backends[n]), args.repeat) for n in names}
        ratio = t["python"] / t["cython"] if "cython" in t else float("nan")
        print(f"{label:34s}" + "".join(f"{t[n]:11.4f}s" for n in names) + f"{ratio:9.1f}x")


if __name__ == "__main__":
    main()
