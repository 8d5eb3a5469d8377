"""Numerical checks of the counterexamples.

1. The two-disc couplings and the Gaussian-latent pairing are straight fixed
   points; only one of the disc pairings is optimal.
2. The antipodal coupling collapses at t = 1/2.
3. Smoothing the antipodal source makes the loss small while the cost stays
   near 4 per dimension, far from the optimum.

    python scripts/counterexamples.py
"""

import argparse

import numpy as np
from scipy.integrate import quad

from rectiflow import IntegratorConfig, rectify
from rectiflow.errors import NonRectifiableError
from rectiflow.ot import transport_cost
from rectiflow.rectification import loss_eval, optimality_gap
from rectiflow.scenarios import ScenarioSpec, build_scenario
from rectiflow.velocity import scenario_field


def antipodal_loss(c: float, d: int = 1) -> float:
    """Exact loss of the antipodal pair with source noise level ``c``."""
    def resid(t):
        var_t = (1 - 2 * t) ** 2 + c * c * (1 - t) ** 2
        cov = -(2 * (1 - 2 * t) + c * c * (1 - t))
        return 4 + c * c - cov ** 2 / var_t

    return d * quad(resid, 0, 1, points=[0.5], limit=500)[0]


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    print("fixed points")
    for name in ("disconnected-opt", "disconnected-nonopt", "gauss-latent-fp"):
        c, meta = build_scenario(name, args.n, args.seed)
        loss = loss_eval(scenario_field(name), c, 500, seed=1)
        out, _ = rectify(c, meta.field_source, IntegratorConfig("rk4", 50), compute_loss=False)
        gap = optimality_gap(c, "discrete_exact")
        print(f"  {name:20s} loss {loss:.1e}  row move {np.abs(out.x1 - c.x1).max():.1e}  "
              f"cost {transport_cost(c):7.3f}  gap {gap:6.3f}")

    print("antipodal collapse")
    c, meta = build_scenario("antipodal", args.n, args.seed)
    try:
        rectify(c, meta.field_source, IntegratorConfig("rk4", 1000))
    except NonRectifiableError as exc:
        print(f"  aborted at t = {exc.t_star:.5f}, spread {exc.min_spread:.1e}")

    print("smoothed antipodal, d = 1 (optimum ~ 0, cost ~ 4)")
    for lvl in (0.2, 0.1, 0.05, 0.02, 0.01, 0.005):
        c, meta = build_scenario(ScenarioSpec("antipodal", {"c": lvl, "dim": 1}), 50_000, args.seed)
        mc = loss_eval(meta.field_source.build(), c, 1000, seed=2)
        print(f"  c = {lvl:<6g} loss {mc:.4f} (exact {antipodal_loss(lvl):.4f})  "
              f"cost {transport_cost(c):.3f}  W2^2 {meta.optimal_cost:.2e}")


if __name__ == "__main__":
    main()
