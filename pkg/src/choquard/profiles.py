"""Explicit limit profiles, concentration parameters and best constants.

Profiles
    U_1 = (A / (1 + r^2))^{N/2}              lower-critical Choquard bubble
    W_1 = [N(N-2)]^{(N-2)/4} (1 + r^2)^{-(N-2)/2}    Sobolev bubble
    V_1 = kappa W_1                          upper-critical Choquard bubble
and their rescalings rho^{-k} P_1(x / rho) with k = N/2 for U and
(N-2)/2 for V, W.

All norms of these polynomially decaying profiles are grid quadrature on
[0, R] plus the exact tail integral over [R, inf) of the closed-form
integrand.  Norms that diverge raise `RegimeError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .functionals import FunctionalCoefficients, ProblemParams
from .radial import (
    InvalidParameter,
    RadialField,
    RadialGrid,
    build_grid,
    fd_weights,
    gradient_energy,
    lebesgue_integral,
    sphere_area,
)
from .riesz import RieszOperator, build_operator, choquard_energy, riesz_constant
from .solver import GroundState, SolverConfig, Workspace, solve


class RegimeError(InvalidParameter):
    pass


KINDS = ("U", "V", "W")


@dataclass(frozen=True)
class ProfileSpec:
    kind: str
    rho: float = 1.0
    A: float | None = None  # amplitude of U; multiplier kappa of V (default 1)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameter(f"profile kind must be one of {KINDS}")
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise InvalidParameter("rho must be positive")
        if self.A is not None and not self.A > 0:
            raise InvalidParameter("amplitude A must be positive")


def emden_fowler_amplitude(N: int) -> float:
    return (N * (N - 2)) ** ((N - 2) / 4)


def _power(kind: str, N: int) -> float:
    return N / 2 if kind == "U" else (N - 2) / 2


def _decay(kind: str, N: int) -> float:
    """Profile ~ r^{-decay} at infinity."""
    return float(N) if kind == "U" else float(N - 2)


def profile_value(spec: ProfileSpec, N: int, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    x = r / spec.rho
    k = _power(spec.kind, N)
    if spec.kind == "U":
        if spec.A is None:
            raise InvalidParameter("U profile needs a resolved amplitude A")
        base = (spec.A / (1.0 + x * x)) ** (N / 2)
    else:
        base = emden_fowler_amplitude(N) * (1.0 + x * x) ** (-(N - 2) / 2)
        if spec.kind == "V" and spec.A is not None:
            base = spec.A * base
    return spec.rho ** (-k) * base


def profile_derivative(spec: ProfileSpec, N: int, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    x = r / spec.rho
    e = _decay(spec.kind, N)  # P = c (1 + x^2)^{-e/2}
    return profile_value(spec, N, r) * (-e * x / (1.0 + x * x)) / spec.rho


def bubble(spec: ProfileSpec, grid: RadialGrid) -> RadialField:
    return RadialField(grid, profile_value(spec, grid.N, grid.nodes))


def profile_grid(N: int, R: float = 1000.0, M: int = 4000, gamma: float = 3.0) -> RadialGrid:
    """Default grid for polynomially decaying profiles."""
    return build_grid(N, R, M, gamma)


# ---------------------------------------------------------------- tails

def _tail(fn, R: float, N: int) -> float:
    """omega int_R^inf fn(r) r^{N-1} dr."""
    val, _ = quad(lambda r: fn(r) * r ** (N - 1), R, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    return sphere_area(N) * val


def _check_lebesgue(kind: str, N: int, s: float):
    if s * _decay(kind, N) <= N:
        raise RegimeError(
            f"int |{kind}_1|^{s:g} diverges in N={N} (profile decays like r^-{_decay(kind, N):g})"
        )


def profile_lebesgue(spec: ProfileSpec, grid: RadialGrid, s: float) -> float:
    """int |P|^s over R^N (grid part plus exact tail)."""
    N = grid.N
    _check_lebesgue(spec.kind, N, s)
    f = bubble(spec, grid)
    return lebesgue_integral(f, s) + _tail(lambda r: profile_value(spec, N, r) ** s, grid.R, N)


def profile_gradient(spec: ProfileSpec, grid: RadialGrid) -> float:
    N = grid.N
    f = bubble(spec, grid)
    # the face sum stops at the last node, not at R
    return gradient_energy(f) + _tail(lambda r: profile_derivative(spec, N, r) ** 2, grid.nodes[-1], N)


def profile_choquard(spec: ProfileSpec, grid: RadialGrid, op: RieszOperator, p: float) -> float:
    """D_p of the profile.

    The exterior correction uses the far-field law of the potential, which
    is valid when |P|^p is integrable; otherwise only the truncated value is
    available and the grid radius must be large.
    """
    N = grid.N
    if 2 * N * p / (N + op.alpha) * _decay(spec.kind, N) <= N:
        raise RegimeError(f"D_p of {spec.kind}_1 diverges for p={p:g}")
    f = bubble(spec, grid)
    val = choquard_energy(op.for_grid(grid), f, p)
    if p * _decay(spec.kind, N) > N:
        mass = lebesgue_integral(f, p)
        tail = _tail(lambda r: r ** (op.alpha - N) * profile_value(spec, N, r) ** p, grid.R, N)
        val += 2.0 * op.A * mass * tail
    return val


# ---------------------------------------------------------------- U amplitude

def _potential_at_origin(grid: RadialGrid, op: RieszOperator, values: np.ndarray, exterior) -> float:
    """(I_alpha * f)(0): grid potential extrapolated evenly to r = 0 from the
    first three nodes, plus the exact contribution of |y| > R given the
    closed-form exterior density."""
    N, alpha = grid.N, op.alpha
    pot = op.for_grid(grid).potential(values)[:3]
    w = fd_weights(0.0, (np.arange(3) + 0.5) ** 2, 0)[0]
    outside = op.A * _tail(lambda r: r ** (alpha - N) * exterior(r), grid.R, N)
    return float(w @ pot) + outside


def _bubble_density(N: int, alpha: float):
    return lambda r: (1.0 + r * r) ** (-(N + alpha) / 2)


def resolve_U_amplitude(N: int, alpha: float, grid: RadialGrid | None = None, op: RieszOperator | None = None,
                        verify: bool = True) -> float:
    """Amplitude A for which U_1 = (A/(1+r^2))^{N/2} solves U = (I*U^p) U^{alpha/N}.

    Root-finding on the residual at r = 0, where the potential of the base
    profile is computed by quadrature.  With verify=True the full-field
    residual is checked afterwards (relative L2 <= 1e-4).
    """
    if not 0 < alpha < N:
        raise InvalidParameter("alpha must lie in (0, N)")
    grid = grid if grid is not None else profile_grid(N)
    if op is None:
        op = build_operator(grid, alpha)
    dens = _bubble_density(N, alpha)
    c0 = _potential_at_origin(grid, op, dens(grid.nodes), dens)

    # residual at the origin: A^{N/2} - c0 A^{(N+2 alpha)/2}, scaled by A^{-N/2}
    def g(A):
        return 1.0 - c0 * A**alpha

    lo, hi = 1e-8, 1e8
    if g(lo) * g(hi) > 0:
        raise RegimeError("U amplitude: root not bracketed")
    A = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if verify:
        res = U_residual(A, N, alpha, grid, op)
        if res > 1e-4:
            raise RegimeError(f"U amplitude residual {res:.2e} exceeds 1e-4")
    return A


def resolve_V_amplitude(N: int, alpha: float, grid: RadialGrid | None = None,
                        op: RieszOperator | None = None) -> float:
    """Multiplier kappa with -Delta(kappa W_1) = (I*(kappa W_1)^p)(kappa W_1)^{p-1}, p = (N+alpha)/(N-2).

    Both sides share the profile (1+r^2)^{-(N+2)/2}, so matching at r = 0
    fixes kappa; kappa = 1 only for special (N, alpha), e.g. N = 3, alpha = 2.
    """
    if N < 3:
        raise InvalidParameter("upper-critical bubble needs N >= 3")
    grid = grid if grid is not None else profile_grid(N)
    if op is None:
        op = build_operator(grid, alpha)
    p = (N + alpha) / (N - 2)
    a = emden_fowler_amplitude(N)
    dens = _bubble_density(N, alpha)
    c0 = _potential_at_origin(grid, op, dens(grid.nodes), dens)

    # -Delta W_1(0) = a^{(N+2)/(N-2)};  RHS(0) = kappa^{2p-2} a^{2p-1} c0 (times kappa)
    def g(logk):
        return (2 * p - 2) * logk + (2 * p - 1) * math.log(a) + math.log(c0) - (N + 2) / (N - 2) * math.log(a)

    return math.exp(brentq(g, -50.0, 50.0, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def U_residual(A: float, N: int, alpha: float, grid: RadialGrid, op: RieszOperator) -> float:
    """Relative L2 residual of U - (I*U^p) U^{alpha/N} for U = U_1 with amplitude A."""
    p = (N + alpha) / N
    U = bubble(ProfileSpec("U", 1.0, A), grid).values
    pot = op.for_grid(grid).potential(U**p)
    res = U - pot * U ** (alpha / N)
    w = grid.weights
    return math.sqrt(float(w @ res**2) / float(w @ U**2))


def V_residual(grid: RadialGrid, op: RieszOperator, kappa: float | None = None) -> float:
    """Relative L2 residual of -Delta V - (I*V^p) V^{p-1}, p = (N+alpha)/(N-2), at V_1 (over r <= R/10)."""
    N = grid.N
    p = (N + op.alpha) / (N - 2)
    if kappa is None:
        kappa = resolve_V_amplitude(N, op.alpha, grid, op)
    V = bubble(ProfileSpec("V", 1.0, kappa), grid)
    pot = op.for_grid(grid).potential(V.values**p)
    res = -V.laplacian() - pot * V.values ** (p - 1)
    return _core_residual(grid, res, -V.laplacian())


def W_residual(grid: RadialGrid) -> float:
    """Relative L2 residual of -Delta W - W^{2*-1} at W_1 (over r <= R/10)."""
    N = grid.N
    W = bubble(ProfileSpec("W"), grid)
    res = -W.laplacian() - W.values ** ((N + 2) / (N - 2))
    return _core_residual(grid, res, -W.laplacian())


def _core_residual(grid: RadialGrid, res: np.ndarray, scale: np.ndarray) -> float:
    # the truncated potential is wrong near r = R; judge the core
    m = grid.nodes <= grid.R / 10
    w = grid.weights[m]
    return math.sqrt(float(w @ res[m] ** 2) / float(w @ scale[m] ** 2))


# ---------------------------------------------------------------- rho_0

def rho0(kind: str, params: ProblemParams, grid: RadialGrid | None = None, op: RieszOperator | None = None,
         A: float | None = None) -> float:
    """Concentration parameter of the limit bubble.

    kind 'lower'              U-bubble, lower-critical p
    kind 'critical_choquard'  V-bubble, upper-critical p (N >= 5)
    kind 'bubble'             W-bubble, Sobolev-critical q (N >= 5)
    """
    N, alpha, p, q = params.N, params.alpha, params.p, params.q
    grid = grid if grid is not None else profile_grid(N)
    if kind == "lower":
        if not params.is_lower:
            raise RegimeError("lower-critical rho_0 needs p = (N+alpha)/N")
        X = 4 - N * (q - 2)
        if not X > 0:
            raise RegimeError("lower-critical rho_0 needs q < 2 + 4/N")
        if A is None:
            A = resolve_U_amplitude(N, alpha, grid, op, verify=False)
        spec = ProfileSpec("U", 1.0, A)
        g2 = profile_gradient(spec, grid)
        lq = profile_lebesgue(spec, grid, q)
        return (2 * q * g2 / (N * (q - 2) * lq)) ** (2 / X)
    if kind == "critical_choquard":
        if not params.is_upper:
            raise RegimeError("critical-Choquard rho_0 needs p = (N+alpha)/(N-2)")
        if N < 5:
            raise RegimeError("|V_1|_2 diverges for N <= 4")
        ts = params.two_star
        spec = ProfileSpec("V", 1.0, resolve_V_amplitude(N, alpha, grid, op))
        lq = profile_lebesgue(spec, grid, q)
        l2 = profile_lebesgue(spec, grid, 2.0)
        return (2 * (ts - q) * lq / (q * (ts - 2) * l2)) ** (2 / ((N - 2) * (q - 2)))
    if kind == "bubble":
        if not params.is_sobolev:
            raise RegimeError("bubble rho_0 needs q = 2*")
        if N < 5:
            raise RegimeError("|W_1|_2 diverges for N <= 4")
        if op is None:
            op = build_operator(grid, alpha)
        spec = ProfileSpec("W")
        d = profile_choquard(spec, grid, op, p)
        l2 = profile_lebesgue(spec, grid, 2.0)
        e = (N - 2) * (p - 1) - alpha
        return (((N + alpha) - p * (N - 2)) * d / (2 * p * l2)) ** (1 / e)
    raise InvalidParameter(f"unknown rho_0 kind {kind!r}")


# ---------------------------------------------------------------- best constants

def sobolev_quotient(f: RadialField) -> float:
    N = f.grid.N
    ts = 2 * N / (N - 2)
    return gradient_energy(f) / lebesgue_integral(f, ts) ** (2 / ts)


def S1_quotient(f: RadialField, op: RieszOperator) -> float:
    N = f.grid.N
    p = (N + op.alpha) / N
    return lebesgue_integral(f, 2.0) / choquard_energy(op.for_grid(f.grid), f, p) ** (N / (N + op.alpha))


def Salpha_quotient(f: RadialField, op: RieszOperator) -> float:
    N = f.grid.N
    p = (N + op.alpha) / (N - 2)
    return gradient_energy(f) / choquard_energy(op.for_grid(f.grid), f, p) ** ((N - 2) / (N + op.alpha))


def Sp_quotient(f: RadialField, op: RieszOperator, p: float) -> float:
    return (gradient_energy(f) + lebesgue_integral(f, 2.0)) / choquard_energy(op.for_grid(f.grid), f, p) ** (1 / p)


def Sq_quotient(f: RadialField, q: float) -> float:
    return (gradient_energy(f) + lebesgue_integral(f, 2.0)) / lebesgue_integral(f, q) ** (2 / q)


def best_constant(kind: str, params: ProblemParams, grid: RadialGrid | None = None, op: RieszOperator | None = None,
                  state: GroundState | None = None, config: SolverConfig | None = None) -> float:
    """Best constant of the named inequality.

    S, S1, Salpha: quotient at the explicit extremal (tail-corrected).
    Sp, Sq: quotient at the computed limit ground state (solved if not given).
    """
    N, alpha, p, q = params.N, params.alpha, params.p, params.q
    if kind in ("S", "S1", "Salpha"):
        grid = grid if grid is not None else profile_grid(N)
        if kind == "S":
            spec = ProfileSpec("W")
            ts = 2 * N / (N - 2)
            return profile_gradient(spec, grid) / profile_lebesgue(spec, grid, ts) ** (2 / ts)
        if op is None:
            op = build_operator(grid, alpha)
        if kind == "S1":
            pl = (N + alpha) / N
            A = resolve_U_amplitude(N, alpha, grid, op, verify=False)
            spec = ProfileSpec("U", 1.0, A)
            return profile_lebesgue(spec, grid, 2.0) / profile_choquard(spec, grid, op, pl) ** (N / (N + alpha))
        pu = (N + alpha) / (N - 2)
        spec = ProfileSpec("V")
        return profile_gradient(spec, grid) / profile_choquard(spec, grid, op, pu) ** ((N - 2) / (N + alpha))
    if kind == "Sp":
        st = state if state is not None else limit_ground_state("pure_choquard", params, config)
        return (st.grad2 + st.mass) / st.dpp ** (1 / p)
    if kind == "Sq":
        st = state if state is not None else limit_ground_state("pure_power", params, config)
        return (st.grad2 + st.mass) / st.lq ** (2 / q)
    raise InvalidParameter(f"unknown best-constant kind {kind!r}")


def perturbed_quotients(kind: str, f: RadialField, op: RieszOperator | None, deltas=(1e-2, -1e-2), p=None, q=None):
    """Quotient at f + delta * eta for a fixed smooth perturbation eta (for minimality checks)."""
    r = f.grid.nodes
    eta = np.exp(-((r - 1.0) ** 2)) * f.values.max()
    out = []
    for d in deltas:
        g = RadialField(f.grid, f.values + d * eta)
        if kind == "S":
            out.append(sobolev_quotient(g))
        elif kind == "S1":
            out.append(S1_quotient(g, op))
        elif kind == "Salpha":
            out.append(Salpha_quotient(g, op))
        elif kind == "Sp":
            out.append(Sp_quotient(g, op, p))
        elif kind == "Sq":
            out.append(Sq_quotient(g, q))
        else:
            raise InvalidParameter(f"unknown best-constant kind {kind!r}")
    return out


# ---------------------------------------------------------------- limit states

def limit_ground_state(kind: str, params: ProblemParams, config: SolverConfig | None = None,
                       workspace: Workspace | None = None) -> GroundState:
    """Ground state of -Delta v + v = v^{q-1} ('pure_power') or
    -Delta v + v = (I*|v|^p) v^{p-1} ('pure_choquard')."""
    config = config if config is not None else SolverConfig()
    if kind == "pure_power":
        if not params.q < params.two_star:
            raise RegimeError("pure-power limit needs q < 2*")
        c = FunctionalCoefficients(1.0, 1.0, 0.0, 1.0)
    elif kind == "pure_choquard":
        if not (params.p_lower < params.p < params.p_upper):
            raise RegimeError("pure-Choquard limit needs (N+alpha)/N < p < (N+alpha)/(N-2)")
        c = FunctionalCoefficients(1.0, 1.0, 1.0, 0.0)
    else:
        raise InvalidParameter(f"unknown limit kind {kind!r}")
    return solve(params, config, workspace, coefficients=c)


def least_action_from_constant(kind: str, params: ProblemParams, S: float) -> float:
    """m_0 implied by the best constant: ((q-2)/2q) S_q^{q/(q-2)} or ((p-1)/2p) S_p^{p/(p-1)}."""
    if kind == "Sq":
        q = params.q
        return (q - 2) / (2 * q) * S ** (q / (q - 2))
    if kind == "Sp":
        p = params.p
        return (p - 1) / (2 * p) * S ** (p / (p - 1))
    raise InvalidParameter(kind)


__all__ = [
    "ProfileSpec",
    "RegimeError",
    "bubble",
    "profile_grid",
    "profile_value",
    "profile_lebesgue",
    "profile_gradient",
    "profile_choquard",
    "resolve_U_amplitude",
    "resolve_V_amplitude",
    "U_residual",
    "V_residual",
    "W_residual",
    "rho0",
    "best_constant",
    "perturbed_quotients",
    "limit_ground_state",
    "least_action_from_constant",
    "emden_fowler_amplitude",
]
