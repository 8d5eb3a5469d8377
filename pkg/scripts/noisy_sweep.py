"""Noisy (bridge SDE) rectification iterated on the two-disc scenarios.

For each eps, iterates noisy rectification with the kernel drift and prints
the transport cost after every iteration. Exploratory: convergence toward
the entropic optimum is slow for small eps.

    python scripts/noisy_sweep.py --scenario disconnected-nonopt --iters 10
"""

import argparse

from rectiflow import IntegratorConfig, Kernel, NoiseSchedule, smoothed_rectify_iterate, transport_cost
from rectiflow.scenarios import build_scenario


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--scenario", default="disconnected-nonopt")
    p.add_argument("--eps", type=float, nargs="+", default=[0.05, 0.1, 0.5, 1.0])
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--steps", type=int, default=200, help="Euler-Maruyama steps")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    coupling, meta = build_scenario(args.scenario, args.n, args.seed)
    print(f"{args.scenario}: start cost {transport_cost(coupling):.3f}, "
          f"optimum {meta.optimal_cost}")
    for eps in args.eps:
        rep = smoothed_rectify_iterate(coupling, NoiseSchedule.constant(0.0), args.iters, Kernel(),
                                       IntegratorConfig("euler", args.steps), seed=args.seed,
                                       noise_eps=eps)
        costs = " ".join(f"{s.transport_cost:.3f}" for s in rep.steps)
        print(f"eps {eps:<5g} {costs}", flush=True)


if __name__ == "__main__":
    main()
