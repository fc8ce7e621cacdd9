"""Amplitudes of the explicit limit profiles, best constants and rho_0 values on a large graded grid."""
import argparse
import math

from choquard.functionals import ProblemParams
from choquard.profiles import (
    RegimeError, U_residual, V_residual, W_residual, best_constant, profile_grid, resolve_U_amplitude,
    resolve_V_amplitude, rho0,
)
from choquard.riesz import build_operator

CASES = [  # (N, alpha, p, q)
    (3, 2.0, 5 / 3, 3.0),
    (5, 1.0, 2.0, 3.0),
    (5, 1.0, 1.5, 10 / 3),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--M", type=int, default=2000)
    ap.add_argument("--R", type=float, default=1000.0)
    args = ap.parse_args()
    for N, alpha, p, q in CASES:
        g = profile_grid(N, args.R, args.M, 3.0)
        op = build_operator(g, alpha)
        A = resolve_U_amplitude(N, alpha, g, op)
        kappa = resolve_V_amplitude(N, alpha, g, op)
        print(f"N={N} alpha={alpha:g} p={p:.6g} q={q:.6g}")
        print(f"  U amplitude {A:.10f}  residual {U_residual(A, N, alpha, g, op):.1e}")
        print(f"  V multiplier {kappa:.10f}  residual {V_residual(g, op, kappa):.1e}")
        print(f"  W residual {W_residual(g):.1e}")
        base = ProblemParams(N, alpha, (N + alpha) / N, 2 * N / (N - 2))
        S = best_constant("S", base, g, op)
        talenti = math.pi * N * (N - 2) * (math.gamma(N / 2) / math.gamma(N)) ** (2 / N)
        print(f"  S {S:.10f} (closed form {talenti:.10f})")
        for kind in ("S1", "Salpha"):
            print(f"  {kind} {best_constant(kind, base, g, op):.10f}")
        params = ProblemParams(N, alpha, p, q)
        for kind in ("lower", "critical_choquard", "bubble"):
            try:
                print(f"  rho0[{kind}] {rho0(kind, params, g, op):.10g}")
            except RegimeError as exc:
                print(f"  rho0[{kind}] n/a: {exc}")


if __name__ == "__main__":
    main()
