"""Analytic throughput against the propagation delay for every scenario.

    python3 scripts/delta_sweep.py --gamma 20 --points 25 --max-delta 2e-3

Prints CSV (delta, then one theta column per scenario); a blank cell means
the model left its domain (saturated window or unstable queue) at that delta.
"""
import argparse
import csv
import sys

import numpy as np

from nclab import ModelParams, Scenario, SolverOptions, analyze, build_chain
from nclab.errors import NCLabError

SCENARIOS = [Scenario(1), Scenario(2), Scenario(1, True), Scenario(2, True),
             Scenario(2, False, True), Scenario(2, True, True)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--gamma", type=float, default=20.0)
    ap.add_argument("--mu", type=float, default=250.0)
    ap.add_argument("--points", type=int, default=21)
    ap.add_argument("--max-delta", type=float, default=2e-3)
    ap.add_argument("--beta", type=int, default=7)
    args = ap.parse_args()

    topo = build_chain(args.k)
    deltas = np.linspace(0.0, args.max_delta, args.points)
    w = csv.writer(sys.stdout)
    w.writerow(["delta"] + [sc.label() for sc in SCENARIOS])
    for d in deltas:
        row = [repr(float(d))]
        for sc in SCENARIOS:
            sc = Scenario(sc.flows, sc.retransmission, sc.coding, beta=args.beta)
            params = ModelParams(float(d), args.mu, args.gamma,
                                 args.gamma if sc.flows == 2 else 0.0)
            try:
                row.append(repr(analyze(topo, sc, params, SolverOptions()).theta))
            except NCLabError:
                row.append("")
        w.writerow(row)


if __name__ == "__main__":
    main()
