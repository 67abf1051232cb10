"""Time the alignment kernels with and without numba.

Each backend runs in its own interpreter (the switch is read at import), on
the same seeded branch-free pairs. The first call per process pays numba's
compile or cache-load cost and is excluded.

    python3 benchmarks/bench_jit.py --sizes 16,32,64,128 --samples 5
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = """
import json, sys, time
import numpy as np
from cswx import _jit
from cswx.bench import sample_tree_of_length
from cswx.cswx import align
from cswx.rcswx import align_recursive
from cswx.scoring import preset
from cswx.serialise import serialise
sizes, samples, seed = json.loads(sys.argv[1])
m = preset("sm0")
warm = serialise(sample_tree_of_length(4, np.random.default_rng(0)))
align(warm, warm, m); align_recursive(warm, warm, m)
rows = []
for size in sizes:
    rng = np.random.default_rng([seed, size])
    for _ in range(samples):
        s1 = serialise(sample_tree_of_length(size, rng, True))
        s2 = serialise(sample_tree_of_length(size, rng, True))
        for name, fn in (("cswx", align), ("rcswx", align_recursive)):
            t0 = time.perf_counter()
            d = fn(s1, s2, m).distance
            rows.append([name, size, time.perf_counter() - t0, d])
print(json.dumps({"backend": _jit.backend(), "rows": rows}))
"""


def run_backend(disable: bool, sizes, samples: int, seed: int) -> dict:
    env = dict(os.environ)
    env.pop("CSWX_DISABLE_JIT", None)
    if disable:
        env["CSWX_DISABLE_JIT"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, json.dumps([sizes, samples, seed])],
                         capture_output=True, text=True, env=env, check=True)
    return json.loads(res.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="16,32,64,128")
    ap.add_argument("--samples", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    jit = run_backend(False, sizes, args.samples, args.seed)
    py = run_backend(True, sizes, args.samples, args.seed)
    if [r[3] for r in jit["rows"]] != [r[3] for r in py["rows"]]:
        sys.exit("backends disagree on distances")
    print(f"method,size,{jit['backend']}_ms,{py['backend']}_ms,speedup")
    for method in ("cswx", "rcswx"):
        for size in sizes:
            a = sorted(r[2] for r in jit["rows"] if r[0] == method and r[1] == size)
            b = sorted(r[2] for r in py["rows"] if r[0] == method and r[1] == size)
            ma, mb = a[len(a) // 2], b[len(b) // 2]
            print(f"{method},{size},{ma * 1e3:.3f},{mb * 1e3:.3f},{mb / ma:.1f}")


if __name__ == "__main__":
    main()
