"""Sweep eps over six decades for N=3, alpha=2, p=2, q=4 and fit the scaling slopes at both ends."""
import argparse
from pathlib import Path

from choquard.asymptotics import (
    SweepPlan, fit_exponent, limit_rescaled, log_spaced, predicted_exponents, profile_distance, run_sweep,
    write_records,
)
from choquard.functionals import ProblemParams
from choquard.profiles import limit_ground_state
from choquard.solver import SolverConfig

WINDOWS = {"0": (1e-3, 1e-1), "inf": (1e1, 1e3)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out", default="runs/gp_scaling")
    ap.add_argument("--per-decade", type=int, default=4)
    args = ap.parse_args()
    params = ProblemParams(3, 2.0, 2.0, 4.0)
    recs = run_sweep(SweepPlan(params, log_spaced(1e-3, 1e3, args.per_decade), SolverConfig()))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(recs, out / "records.csv")
    print(f"{sum(r.converged for r in recs)}/{len(recs)} converged; records in {out / 'records.csv'}")

    print(f"{'limit':<5} {'obs':<7} {'fitted':>8} {'stated':>8} {'rescaling':>10}")
    for lim, window in WINDOWS.items():
        table = predicted_exponents(params, lim)
        for obs in ("u0", "mass", "grad2", "lq", "dpp", "action"):
            e = table[obs]
            s = fit_exponent(recs, obs, window).slope
            stated = "-" if e.exponent is None else f"{float(e.exponent):.3f}"
            best = "-" if e.best is None else f"{float(e.best):.3f}"
            print(f"{lim:<5} {obs:<7} {s:8.3f} {stated:>8} {best:>10}")

    ref = limit_ground_state("pure_power", params).u
    print("distance of the rescaled state to the pure-power limit:")
    for r in recs:
        if r.converged and r.param >= 1.0:
            print(f"  eps={r.param:9.4g}  {profile_distance(limit_rescaled(r.state, 'pure_power'), ref):.3e}")


if __name__ == "__main__":
    main()
