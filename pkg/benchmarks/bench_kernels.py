"""Compare the compiled kernels with the NumPy fallback.

Each backend runs in its own interpreter (the backend is fixed at import), so
the script re-invokes itself with ``PLATOON_FRL_KERNELS`` set.

    python3 benchmarks/bench_kernels.py            # both backends, table
    python3 benchmarks/bench_kernels.py --json     # machine-readable
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def measure(repeat: int) -> dict:
    from platoon_frl import kernels
    from platoon_frl.ddpg import AgentConfig, DDPGAgent, train_step

    rng = np.random.default_rng(0)
    z = rng.normal(size=(64, 256))
    gamma, beta = np.ones(256), np.zeros(256)
    out, xhat, inv, mean, var = kernels.bn_act_forward(z, gamma, beta, 1e-3, True)
    dout = rng.normal(size=z.shape)
    n = 40_000
    p, g, m, v = rng.normal(size=n), rng.normal(size=n), np.zeros(n), np.zeros(n)
    tgt, src = rng.normal(size=n), rng.normal(size=n)
    a4, b4, c4 = rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    x4, u, w = rng.normal(size=(2, 4)), rng.normal(size=2), rng.normal(size=2)

    agent = DDPGAgent(AgentConfig(), {k: np.random.default_rng(i) for i, k in enumerate(("init", "noise", "replay"))})
    for _ in range(200):
        agent.remember(rng.normal(size=4), rng.normal(size=4), rng.uniform(-2.5, 2.5), -rng.uniform(), False)

    cases = {
        "bn_act_forward 64x256": lambda: kernels.bn_act_forward(z, gamma, beta, 1e-3, True),
        "bn_act_backward 64x256": lambda: kernels.bn_act_backward(dout, out, xhat, gamma, inv, True),
        "bn_act_eval 64x256": lambda: kernels.bn_act_eval(z, gamma, beta, mean, var, 1e-3, True),
        "adam_update 40k": lambda: kernels.adam_update(p, g, m, v, 1e-4, 0.9, 0.999, 1e-7),
        "lerp_ 40k": lambda: kernels.lerp_(tgt, src, 0.001),
        "affine_step 2 vehicles": lambda: kernels.affine_step(a4, b4, c4, x4, u, w),
        "train_step (full nets, batch 64)": lambda: train_step(agent),
    }
    results = {}
    for name, fn in cases.items():
        number = 20 if name.startswith("train_step") else 200
        best = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
        results[name] = best * 1e6
    return {"backend": kernels.BACKEND, "microseconds": results}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--json", action="store_true")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        print(json.dumps(measure(args.repeat)))
        return

    runs = {}
    for backend in ("auto", "python"):
        env = dict(os.environ, PLATOON_FRL_KERNELS=backend)
        proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout)
        runs[res["backend"]] = res["microseconds"]
    if args.json:
        print(json.dumps(runs, indent=1))
        return
    if "cython" not in runs:
        print("compiled extension not built; only the fallback was measured")
    names = list(next(iter(runs.values())))
    print(f"{'case':36s} {'cython us':>11s} {'python us':>11s} {'speedup':>8s}")
    for name in names:
        c = runs.get("cython", {}).get(name)
        py = runs["python"][name]
        speed = f"{py / c:7.2f}x" if c else "     n/a"
        print(f"{name:36s} {c if c else float('nan'):11.1f} {py:11.1f} {speed}")


if __name__ == "__main__":
    main()
