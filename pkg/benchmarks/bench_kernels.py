"""Compare the numba kernels against the pure-Python fallback.

Each workload runs in a fresh interpreter, once with numba and once with
``ORBITKIT_DISABLE_NUMBA=1``.  A warm-up call absorbs JIT compilation, so
the timings are steady-state.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--words 400]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
import orbitkit
from orbitkit import fixtures as fx
from orbitkit.expr import evaluate_many
from orbitkit.flow import flow_words, random_words

n_words, repeat = int(sys.argv[1]), int(sys.argv[2])
H = fx.heisenberg()
S = fx.so3_s2().F0
words = random_words(np.random.default_rng(0), 2, n_words, 4, 1.0)
words3 = random_words(np.random.default_rng(1), 3, max(1, n_words // 4), 4, 1.0)
exprs = [c for X in S for c in X.components]
pts = np.random.default_rng(2).uniform(-1, 1, (20000, 9))

cases = {
    "expr-eval 20k x 27": lambda: evaluate_many(exprs, pts),
    f"heisenberg words x{n_words}": lambda: flow_words(H, words, [0, 0, 0]),
    f"so3 words x{len(words3)}": lambda: flow_words(S, words3, np.eye(3).ravel()),
}
out = {"numba": orbitkit.NUMBA_ENABLED, "times": {}}
for name, fn in cases.items():
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out["times"][name] = best
print(json.dumps(out))
"""


def run(disable: bool, n_words: int, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("ORBITKIT_DISABLE_NUMBA", None)
    if disable:
        env["ORBITKIT_DISABLE_NUMBA"] = "1"
    proc = subprocess.run(
        [sys.executable, "-c", WORKER, str(n_words), str(repeat)], capture_output=True, text=True, env=env, check=True
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--words", type=int, default=400)
    args = ap.parse_args(argv)
    jit = run(False, args.words, args.repeat)
    py = run(True, args.words, args.repeat)
    if not jit["numba"]:
        print("numba is not importable; both columns use the fallback", file=sys.stderr)
    print(f"{'workload':<28}{'numba [s]':>12}{'python [s]':>12}{'speed-up':>10}")
    for name, t_jit in jit["times"].items():
        t_py = py["times"][name]
        print(f"{name:<28}{t_jit:>12.4f}{t_py:>12.4f}{t_py / t_jit:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
