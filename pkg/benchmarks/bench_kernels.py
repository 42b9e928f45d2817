"""Compare the compiled kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the switch is read at import.

    python3 benchmarks/bench_kernels.py [--n 1000] [--m 50] [--sweeps 20]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from bartlab._accel import USE_NUMBA
from bartlab.covariates import DgpSpec, bin_features, sample_dgp
from bartlab.samplers import SamplerConfig, init_state, step_default
from bartlab.trees import Tree, leaf_assignment

n, m, sweeps = (int(a) for a in sys.argv[1:4])
data = bin_features(sample_dgp(DgpSpec("low_dim_smooth", d=5, calibration_draws=20000), n, 0), "quantiles", 32)


def timed(fn, reps):
    fn()  # warm-up, includes compilation
    t = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t) / reps


cfg = SamplerConfig(m=m, iterations=2, burn_in=0)
state = init_state(cfg, data)
rng = np.random.default_rng(0)
for _ in range(50):  # grow some structure first
    state, _, _ = step_default(state, data, cfg, rng)


def sweep():
    global state
    state, _, _ = step_default(state, data, cfg, rng)


X_big = np.random.default_rng(1).integers(0, 32, (200_000, 5)).astype(np.int32)
deep = Tree((0, 15, (1, 7, (2, 3, (), ()), (3, 20, (), ())), (4, 9, (), (0, 25, (), ()))))


def route():
    leaf_assignment(deep, X_big)


print(json.dumps({
    "numba": USE_NUMBA,
    "default_sweep_ms": 1e3 * timed(sweep, sweeps),
    "route_200k_ms": 1e3 * timed(route, sweeps),
}))
"""


def run(disable, args):
    env = {**os.environ, "BARTLAB_DISABLE_NUMBA": "1" if disable else "0"}
    out = subprocess.run(
        [sys.executable, "-c", WORKER, str(args.n), str(args.m), str(args.sweeps)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=1000, help="training rows")
    p.add_argument("--m", type=int, default=50, help="trees for the default sampler")
    p.add_argument("--sweeps", type=int, default=20, help="timed sweeps per backend")
    args = p.parse_args()
    fast, slow = run(False, args), run(True, args)
    print(f"n={args.n} m={args.m}")
    print(f"{'kernel':<24}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for key, label in (("default_sweep_ms", "default sweep"), ("route_200k_ms", "route 200k rows")):
        a, b = fast[key], slow[key]
        print(f"{label:<24}{a:>12.3f}{b:>12.3f}{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
