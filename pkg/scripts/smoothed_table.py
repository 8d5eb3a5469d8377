"""Transport distance of harmonic smoothed rectification from the Gaussian-latent fixed point.

Prints one row per c0 with the distance after every step, next to the
discrete-OT optimum of the same particles.

    python scripts/smoothed_table.py --n 20000 --K 5
"""

import argparse
import time

import numpy as np

from rectiflow import IntegratorConfig, Kernel, NoiseSchedule, smoothed_rectify_iterate
from rectiflow.ot import discrete_ot_exact
from rectiflow.scenarios import build_scenario


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--c0", type=float, nargs="+", default=[0.0, 0.01, 0.05, 0.1, 0.2])
    p.add_argument("--steps", type=int, default=10, help="rk4 steps per rectification")
    p.add_argument("--factor", type=float, default=0.5, help="kernel bandwidth factor")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    coupling, _ = build_scenario("gauss-latent-fp", args.n, args.seed)
    opt = np.sqrt(discrete_ot_exact(coupling.x0, coupling.x1).cost)
    print(f"start {np.sqrt(8.0):.3f}   discrete OT optimum {opt:.3f}")
    print("c0     " + " ".join(f"step {i + 1:<2d}" for i in range(args.K)) + "   seconds")
    for c0 in args.c0:
        t0 = time.time()
        rep = smoothed_rectify_iterate(coupling, NoiseSchedule.harmonic(c0), args.K,
                                       Kernel(factor=args.factor), IntegratorConfig("rk4", args.steps),
                                       seed=args.seed + 1)
        row = " ".join(f"{d:7.3f}" for d in rep.transport_distances)
        print(f"{c0:<6g} {row}   {time.time() - t0:7.0f}", flush=True)


if __name__ == "__main__":
    main()
