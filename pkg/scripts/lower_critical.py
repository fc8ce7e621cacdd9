"""Lower-critical Choquard exponent: mass slope as eps -> 0 for N=3, alpha=2, p=5/3, q=2.4."""
import argparse
from pathlib import Path

from choquard.asymptotics import SweepPlan, classify_regime, fit_exponent, log_spaced, run_sweep, write_records
from choquard.functionals import ProblemParams
from choquard.solver import SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out", default="runs/lower_critical")
    ap.add_argument("--q", type=float, default=2.4)
    args = ap.parse_args()
    params = ProblemParams(3, 2.0, 5 / 3, args.q)
    print(classify_regime(params).summary())
    recs = run_sweep(SweepPlan(params, log_spaced(1e-5, 1.0, 4), SolverConfig()))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(recs, out / "records.csv")
    N, q = params.N, params.q
    target = (4 - N * (q - 2)) / (2 * (q - 2))
    for window in ((1e-5, 1e-3), (1e-4, 1e-2), (1e-3, 1e-1)):
        fit = fit_exponent(recs, "mass", window)
        print(f"mass slope on [{window[0]:g}, {window[1]:g}]: {fit.slope:.4f} +- {fit.stderr:.1e}  (limit {target:.4f})")


if __name__ == "__main__":
    main()
