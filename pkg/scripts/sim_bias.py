"""Simulated vs analytic throughput over a range of source rates.

    python3 scripts/sim_bias.py --flows 1 --delta 6.8e-4 --reps 10

Shows how far the packet-level model drifts from the analysis as load grows.
"""
import argparse

from nclab import ModelParams, Scenario, SimOptions, analyze, build_chain, run_replications


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--flows", type=int, default=1, choices=(1, 2))
    ap.add_argument("--retx", action="store_true")
    ap.add_argument("--coding", action="store_true")
    ap.add_argument("--delta", type=float, default=6.8e-4)
    ap.add_argument("--gammas", type=float, nargs="+", default=[5, 10, 15, 20, 25, 30])
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--horizon", type=float, default=170.0)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    topo = build_chain(5)
    sc = Scenario(args.flows, args.retx, args.coding)
    opts = SimOptions(horizon_s=args.horizon, seed=args.seed)
    print(f"{'gamma':>7} {'theta':>9} {'theta_sim':>9} {'ci':>7} {'rel':>8} {'z':>6}")
    for g in args.gammas:
        params = ModelParams(args.delta, gamma_1=g, gamma_k=g if args.flows == 2 else 0.0)
        theta = analyze(topo, sc, params).theta
        res = run_replications(topo, sc, params, opts, args.reps)
        z = (res.theta - theta) / res.stderr if res.stderr else float("nan")
        print(f"{g:7.3f} {theta:9.4f} {res.theta:9.4f} {res.ci_halfwidth:7.4f} "
              f"{(res.theta - theta) / theta:+8.4f} {z:+6.2f}")


if __name__ == "__main__":
    main()
