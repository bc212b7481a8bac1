"""Time the compiled and interpreted kernel paths on the same workloads.

Each path runs in its own interpreter because the choice is fixed at import
time by ``STOCH_SQP_DISABLE_JIT``. Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
import numpy as np
from stochsqp import JIT_ENABLED, problems as P
from stochsqp import kernels as K
from stochsqp.bench import RunConfig, run_experiment

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)

def best(fn):
    fn()  # warm-up: compilation or first-call overhead
    times = []
    for _ in range(repeat):
        t = time.perf_counter(); fn(); times.append(time.perf_counter() - t)
    return min(times)

n, m = 200, 50
H = np.eye(n); J = rng.standard_normal((m, n))
top, bottom, g = rng.standard_normal(n), rng.standard_normal(m), rng.standard_normal(n)
params = np.array([1.0, 0.5, 0.5, 100.0, 100.0, 1.0, 2.0, 1e-2, 0.0, 0.0])
ds = P.make_synthetic_dataset(2000, 50, seed=0)
XT, y, x = np.ascontiguousarray(ds.X.T), ds.y.copy(), rng.standard_normal(50)
idx = np.arange(2000, dtype=np.int64)
lr = P.build_logistic_problem(ds, 5, seed=1)
noisy = P.AdditiveNoiseProblem(P.get_synthetic("rosen100", 0), 0.1)

out = {"jit": JIT_ENABLED, "seconds": {
    "minres_sqp n=200 m=50 (to 1e-12)": best(lambda: K.minres_sqp(H, J, top, bottom, g, params, 1000, 1e-12)),
    "logistic_grads 2000x50": best(lambda: K.logistic_grads(XT, y, x, idx)),
    "run logistic N=2000 (5 epochs)": best(lambda: run_experiment(RunConfig("lr", "inexact-adaptive", 0, max_epochs=5), lr)),
    "run rosen100 noisy (20 epochs)": best(lambda: run_experiment(RunConfig("r", "inexact-adaptive", 0, max_epochs=20), noisy)),
}}
print(json.dumps(out))
"""


def measure(disable_jit: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("STOCH_SQP_DISABLE_JIT", None)
    if disable_jit:
        env["STOCH_SQP_DISABLE_JIT"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env, check=True,
                          capture_output=True, text=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    jit, plain = measure(False, args.repeat), measure(True, args.repeat)
    if not jit["jit"]:
        print("numba unavailable: both columns use the interpreted path")
    width = max(len(k) for k in jit["seconds"])
    print(f"{'workload':<{width}}  {'numba [s]':>10}  {'numpy [s]':>10}  {'speedup':>8}")
    for key, t_jit in jit["seconds"].items():
        t_plain = plain["seconds"][key]
        print(f"{key:<{width}}  {t_jit:>10.4f}  {t_plain:>10.4f}  {t_plain / t_jit:>7.1f}x")


if __name__ == "__main__":
    main()
