"""Four-coefficient functional and its Nehari / Pohozaev structure.

    I(u) = 1/2 a_grad |grad u|^2 + 1/2 a_mass |u|_2^2
           - a_choq/(2p) D_p(u) - a_pow/q |u|_q^q

covers the action, the energy and every rescaled functional used in the
limit analysis.  `op` may be None whenever a_choq == 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.optimize import brentq

from .radial import InvalidParameter, RadialField, gradient_energy, lebesgue_integral
from .riesz import RieszOperator, choquard_energy

_CRIT_TOL = 1e-12
T_BRACKET = (1e-8, 1e8)

FORMULATIONS = ("frequency", "lambda", "mu")


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= _CRIT_TOL * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class ProblemParams:
    """Exponents plus the formulation: frequency (eps), lambda or mu form."""

    N: int
    alpha: float
    p: float
    q: float
    formulation: str = "frequency"
    value: float = 1.0

    def __post_init__(self):
        N, a, p, q = self.N, self.alpha, self.p, self.q
        for name in ("alpha", "p", "q", "value"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameter(f"{name} must be finite")
        if int(N) != N or N < 3:
            raise InvalidParameter(f"N must be an integer >= 3, got {N}")
        if not 0 < a < N:
            raise InvalidParameter(f"alpha must lie in (0, N), got {a}")
        lo, hi = (N + a) / N, (N + a) / (N - 2)
        if not (lo - _CRIT_TOL <= p <= hi + _CRIT_TOL):
            raise InvalidParameter(f"p must lie in [{lo:g}, {hi:g}], got {p}")
        if not (2 < q <= 2 * N / (N - 2) + _CRIT_TOL):
            raise InvalidParameter(f"q must lie in (2, {2 * N / (N - 2):g}], got {q}")
        if self.formulation not in FORMULATIONS:
            raise InvalidParameter(f"formulation must be one of {FORMULATIONS}")
        if not self.value > 0:
            raise InvalidParameter(f"formulation parameter must be positive, got {self.value}")

    def with_value(self, value: float) -> "ProblemParams":
        return ProblemParams(self.N, self.alpha, self.p, self.q, self.formulation, value)

    # derived exponents
    @property
    def two_star(self) -> float:
        return 2 * self.N / (self.N - 2)

    @property
    def p_lower(self) -> float:
        return (self.N + self.alpha) / self.N

    @property
    def p_upper(self) -> float:
        return (self.N + self.alpha) / (self.N - 2)

    @property
    def q_bar(self) -> float:
        return 2 * (2 * self.p + self.alpha) / (2 + self.alpha)

    @property
    def p0(self) -> float:
        return 1 + (2 + self.alpha) / self.N

    @property
    def q0(self) -> float:
        return 2 + 4 / self.N

    @property
    def Lambda1(self) -> float:
        p, q, a = self.p, self.q, self.alpha
        return (q * (2 + a) - 2 * (2 * p + a)) / (4 * (p - 1))

    @property
    def Lambda2(self) -> float:
        p, q, a = self.p, self.q, self.alpha
        return (2 * (2 * p + a) - q * (2 + a)) / (2 * (q - 2))

    @property
    def is_lower(self) -> bool:
        return _close(self.p, self.p_lower)

    @property
    def is_upper(self) -> bool:
        return _close(self.p, self.p_upper)

    @property
    def is_sobolev(self) -> bool:
        return _close(self.q, self.two_star)

    @property
    def sigma(self) -> float | None:
        N, q, p, a = self.N, self.q, self.p, self.alpha
        if self.is_lower:
            return 4 / (4 - N * (q - 2))
        if self.is_upper:
            return (self.two_star - 2) / (q - 2)
        if self.is_sobolev:
            return 2 / ((N - 2) * (p - 1) - a)
        return None

    def coefficients(self) -> "FunctionalCoefficients":
        if self.formulation == "frequency":
            return FunctionalCoefficients.action(self.value)
        if self.formulation == "lambda":
            return FunctionalCoefficients.lambda_form(self.value)
        return FunctionalCoefficients.mu_form(self.value)


@dataclass(frozen=True)
class FunctionalCoefficients:
    a_grad: float
    a_mass: float
    a_choq: float
    a_pow: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidParameter(f"{f.name} must be finite and >= 0, got {v}")

    @classmethod
    def action(cls, eps: float):
        return cls(1.0, eps, 1.0, 1.0)

    @classmethod
    def energy(cls):
        return cls(1.0, 0.0, 1.0, 1.0)

    @classmethod
    def lambda_form(cls, lam: float):
        return cls(1.0, 1.0, 1.0, lam)

    @classmethod
    def mu_form(cls, mu: float):
        return cls(1.0, 1.0, mu, 1.0)

    @classmethod
    def lower_critical_J(cls, lam: float, sigma: float):
        return cls(lam**sigma, 1.0, 1.0, lam**sigma)

    @classmethod
    def upper_critical_J(cls, lam: float, sigma: float):
        return cls(1.0, lam**sigma, 1.0, lam**sigma)

    @classmethod
    def sobolev_critical_J(cls, mu: float, sigma: float):
        return cls(1.0, mu**sigma, mu**sigma, 1.0)

    def scaled(self, factor: float) -> "FunctionalCoefficients":
        return FunctionalCoefficients(*(factor * x for x in self.as_tuple()))

    def as_tuple(self) -> tuple:
        return (self.a_grad, self.a_mass, self.a_choq, self.a_pow)


@dataclass(frozen=True)
class Norms:
    """The four integrals every functional here is built from."""

    grad2: float
    mass: float
    lq: float
    dpp: float

    def scaled(self, a: float, L: float, N: int, alpha: float, p: float, q: float) -> "Norms":
        """Norms of x -> a u(x / L) given those of u."""
        return Norms(
            a * a * L ** (N - 2) * self.grad2,
            a * a * L**N * self.mass,
            a**q * L**N * self.lq,
            a ** (2 * p) * L ** (N + alpha) * self.dpp,
        )


def _dpp(u: RadialField, op: RieszOperator | None, p: float, need: bool) -> float:
    if op is None:
        if need:
            raise InvalidParameter("a Riesz operator is required when a_choq > 0")
        return 0.0
    return choquard_energy(op, u, p)


def compute_norms(u: RadialField, op: RieszOperator | None, p: float, q: float, need_choq: bool = True) -> Norms:
    return Norms(
        gradient_energy(u),
        lebesgue_integral(u, 2.0),
        lebesgue_integral(u, q),
        _dpp(u, op, p, need_choq),
    )


def action_from_norms(n: Norms, c: FunctionalCoefficients, p: float, q: float) -> float:
    return (
        0.5 * c.a_grad * n.grad2
        + 0.5 * c.a_mass * n.mass
        - c.a_choq / (2 * p) * n.dpp
        - c.a_pow / q * n.lq
    )


def pohozaev_from_norms(n: Norms, c: FunctionalCoefficients, N: int, alpha: float, p: float, q: float) -> float:
    return (
        0.5 * (N - 2) * c.a_grad * n.grad2
        + 0.5 * N * c.a_mass * n.mass
        - (N + alpha) / (2 * p) * c.a_choq * n.dpp
        - N / q * c.a_pow * n.lq
    )


def nehari_from_norms(n: Norms, c: FunctionalCoefficients) -> float:
    """<I'(u), u>."""
    return c.a_grad * n.grad2 + c.a_mass * n.mass - c.a_choq * n.dpp - c.a_pow * n.lq


def h1_sq(n: Norms, c: FunctionalCoefficients) -> float:
    """Coefficient-weighted H1 norm squared (plain H1 if a_mass = 0)."""
    if c.a_mass > 0:
        return c.a_grad * n.grad2 + c.a_mass * n.mass
    return n.grad2 + n.mass


def _need(c: FunctionalCoefficients) -> bool:
    return c.a_choq > 0


def _op_for(u: RadialField, op: RieszOperator | None):
    return None if op is None else op.for_grid(u.grid)


def action(u: RadialField, op: RieszOperator | None, c: FunctionalCoefficients, p: float, q: float) -> float:
    op = _op_for(u, op)
    return action_from_norms(compute_norms(u, op, p, q, _need(c)), c, p, q)


def pohozaev(u: RadialField, op: RieszOperator | None, c: FunctionalCoefficients, p: float, q: float) -> float:
    op = _op_for(u, op)
    alpha = op.alpha if op is not None else 0.0
    n = compute_norms(u, op, p, q, _need(c))
    return pohozaev_from_norms(n, c, u.grid.N, alpha, p, q)


def spow(u: np.ndarray, s: float) -> np.ndarray:
    """Sign-preserving power |u|^s sign(u)."""
    return np.abs(u) ** s * np.sign(u)


def nonlinearity(u: np.ndarray, op: RieszOperator | None, c: FunctionalCoefficients, p: float, q: float) -> np.ndarray:
    """a_choq (I*|u|^p)|u|^{p-2}u + a_pow |u|^{q-2}u at the nodes."""
    out = c.a_pow * spow(u, q - 1.0) if c.a_pow > 0 else np.zeros_like(u)
    if c.a_choq > 0:
        if op is None:
            raise InvalidParameter("a Riesz operator is required when a_choq > 0")
        out = out + c.a_choq * op.potential(np.abs(u) ** p) * spow(u, p - 1.0)
    return out


def el_residual(u: RadialField, op: RieszOperator | None, c: FunctionalCoefficients, p: float, q: float, skip: int = 0):
    """Strong-form residual field and its L2 norm relative to |u|_{H1}.

    Uses node finite differences for the Laplacian, independent of the face
    quadrature that defines the discrete gradient energy.  `skip` drops that
    many nodes at each end from the norm.
    """
    op = _op_for(u, op)
    v = u.values
    res = -c.a_grad * u.laplacian() + c.a_mass * v - nonlinearity(v, op, c, p, q)
    w = u.grid.weights
    sl = slice(skip, len(v) - skip if skip else None)
    num = math.sqrt(float(w[sl] @ (res[sl] ** 2)))
    n = compute_norms(u, op, p, q, _need(c))
    den = math.sqrt(h1_sq(n, c))
    return RadialField(u.grid, res), (num / den if den > 0 else num)


def discrete_gradient(u: RadialField, op: RieszOperator | None, c: FunctionalCoefficients, p: float, q: float) -> np.ndarray:
    """W^{-1} times the gradient of the discrete functional."""
    op = _op_for(u, op)
    g = u.grid
    v = u.values
    return c.a_grad * (g.stiffness @ v) / g.weights + c.a_mass * v - nonlinearity(v, op, c, p, q)


def nehari_scale(A: float, C: float, D: float, p: float, q: float) -> float:
    """Unique t > 0 with A t^2 = C t^{2p} + D t^q."""
    if not A > 0:
        raise InvalidParameter("Nehari projection needs a positive quadratic part")
    if C < 0 or D < 0 or C + D <= 0:
        raise InvalidParameter("Nehari projection needs C, D >= 0 with C + D > 0")
    if C == 0:
        return (A / D) ** (1.0 / (q - 2))
    if D == 0:
        return (A / C) ** (1.0 / (2 * p - 2))

    def g(tau):
        return A - C * math.exp((2 * p - 2) * tau) - D * math.exp((q - 2) * tau)

    # sharp bracket from the single-power solutions
    t1 = math.log(A / C) / (2 * p - 2)
    t2 = math.log(A / D) / (q - 2)
    # below lo each power term is at most A/2, above hi either one alone exceeds A
    lo = min(t1 - math.log(2.0) / (2 * p - 2), t2 - math.log(2.0) / (q - 2)) - 1e-12
    hi = min(t1, t2) + 1e-12
    lo_lim, hi_lim = (math.log(x) for x in T_BRACKET)
    if g(lo) < 0 or g(hi) > 0 or hi < lo_lim or lo > hi_lim:
        raise InvalidParameter("Nehari scale outside the search bracket [1e-8, 1e8]")
    tau = brentq(g, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    # one Newton polish
    gp = -(2 * p - 2) * C * math.exp((2 * p - 2) * tau) - (q - 2) * D * math.exp((q - 2) * tau)
    tau -= g(tau) / gp
    return math.exp(tau)


def nehari_project(u: RadialField, op: RieszOperator | None, c: FunctionalCoefficients, p: float, q: float):
    op = _op_for(u, op)
    n = compute_norms(u, op, p, q, _need(c))
    A = c.a_grad * n.grad2 + c.a_mass * n.mass
    t = nehari_scale(A, c.a_choq * n.dpp, c.a_pow * n.lq, p, q)
    return t, RadialField(u.grid, t * u.values)


def dilation_path(n: Norms, c: FunctionalCoefficients, N: int, alpha: float, p: float, q: float):
    """Coefficients (c1, c2, c3) of t -> c1 t^{N-2} + c2 t^N - c3 t^{N+alpha}."""
    c1 = 0.5 * c.a_grad * n.grad2
    c2 = 0.5 * c.a_mass * n.mass - c.a_pow / q * n.lq
    c3 = c.a_choq / (2 * p) * n.dpp
    return c1, c2, c3


def dilation_max(u: RadialField, op: RieszOperator | None, c: FunctionalCoefficients, p: float, q: float):
    """Maximiser t* of t -> I(u(./t)) and the maximal value."""
    op = _op_for(u, op)
    alpha = op.alpha if op is not None else 0.0
    n = compute_norms(u, op, p, q, _need(c))
    return dilation_max_from_norms(n, c, u.grid.N, alpha, p, q)


def dilation_max_from_norms(n: Norms, c: FunctionalCoefficients, N: int, alpha: float, p: float, q: float):
    c1, c2, c3 = dilation_path(n, c, N, alpha, p, q)
    if c1 <= 0:
        raise InvalidParameter("dilation path needs a positive gradient term")
    if c3 <= 0 and c2 >= 0:
        raise InvalidParameter("dilation path is unbounded above")

    # f'(t) / t^{N-3}; it is positive at 0 and has exactly one root
    def h(tau):
        t = math.exp(tau)
        return (N - 2) * c1 + N * c2 * t * t - (N + alpha) * c3 * t ** (2 + alpha)

    lo, hi = (math.log(x) for x in T_BRACKET)
    if h(hi) >= 0:
        raise InvalidParameter("dilation maximiser outside [1e-8, 1e8]")
    tau = brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=300)
    t = math.exp(tau)
    value = c1 * t ** (N - 2) + c2 * t**N - c3 * t ** (N + alpha)
    return t, value


def tau(u: RadialField, op: RieszOperator | None, kind: int, p: float) -> float:
    """tau_1 = |u|_2^2 / D_p, tau_2 = |grad u|^2 / D_p, tau_3 = |grad u|^2 / |u|_{2*}^{2*}."""
    if kind in (1, 2):
        op = _op_for(u, op)
        den = _dpp(u, op, p, True)
        num = lebesgue_integral(u, 2.0) if kind == 1 else gradient_energy(u)
    elif kind == 3:
        N = u.grid.N
        den = lebesgue_integral(u, 2 * N / (N - 2))
        num = gradient_energy(u)
    else:
        raise InvalidParameter(f"tau kind must be 1, 2 or 3, got {kind}")
    if den <= 0:
        raise InvalidParameter("tau quotient has a zero denominator")
    return num / den


DIAGNOSTIC_COLUMNS = ("action", "pohozaev", "nehari", "tau1", "tau2", "tau3")


def diagnostics_row(u: RadialField, op: RieszOperator | None, c: FunctionalCoefficients, p: float, q: float) -> dict:
    """One CSV row: action, Pohozaev P, Nehari <I'(u),u>, tau_1..tau_3."""
    op = _op_for(u, op)
    alpha = op.alpha if op is not None else 0.0
    n = compute_norms(u, op, p, q, op is not None)
    N = u.grid.N
    lq2 = lebesgue_integral(u, 2 * N / (N - 2))
    return {
        "action": action_from_norms(n, c, p, q),
        "pohozaev": pohozaev_from_norms(n, c, N, alpha, p, q),
        "nehari": nehari_from_norms(n, c),
        "tau1": n.mass / n.dpp if n.dpp > 0 else math.nan,
        "tau2": n.grad2 / n.dpp if n.dpp > 0 else math.nan,
        "tau3": n.grad2 / lq2 if lq2 > 0 else math.nan,
    }


@dataclass(frozen=True)
class CriticalRescaling:
    """w(x) = a v(b x) maps the lambda/mu form onto its J functional."""

    kind: str
    a: float
    b: float
    sigma: float
    J: FunctionalCoefficients
    I: FunctionalCoefficients


def critical_rescaling(params: ProblemParams, kind: str | None = None) -> CriticalRescaling:
    """Rescaling for a critical family; `kind` is 'lower', 'upper' or 'sobolev'.

    The parameter is params.value, read as lambda for 'lower'/'upper' and as
    mu for 'sobolev'.  Without `kind` the first critical family that
    applies is used.
    """
    N, al, p, q, t = params.N, params.alpha, params.p, params.q, params.value
    if kind is None:
        kind = next((k for k, ok in (("lower", params.is_lower), ("upper", params.is_upper),
                                     ("sobolev", params.is_sobolev)) if ok), None)
        if kind is None:
            raise InvalidParameter("parameters are not in a critical family")
    ts = 2 * N / (N - 2)
    if kind == "lower":
        if not params.is_lower:
            raise InvalidParameter("lower rescaling needs p = (N+alpha)/N")
        X = 4 - N * (q - 2)
        if X <= 0:
            raise InvalidParameter("lower rescaling needs q < 2 + 4/N")
        sig = 4 / X
        return CriticalRescaling(kind, t ** (-N / X), t ** (-2 / X), sig,
                                 FunctionalCoefficients.lower_critical_J(t, sig),
                                 FunctionalCoefficients.lambda_form(t))
    if kind == "upper":
        if not params.is_upper:
            raise InvalidParameter("upper rescaling needs p = (N+alpha)/(N-2)")
        sig = (ts - 2) / (q - 2)
        return CriticalRescaling(kind, t ** (1 / (q - 2)), t ** ((ts - 2) / (2 * (q - 2))), sig,
                                 FunctionalCoefficients.upper_critical_J(t, sig),
                                 FunctionalCoefficients.lambda_form(t))
    if kind == "sobolev":
        if not params.is_sobolev:
            raise InvalidParameter("Sobolev rescaling needs q = 2N/(N-2)")
        e = (N - 2) * (p - 1) - al
        if e <= 0:
            raise InvalidParameter("Sobolev rescaling needs (N-2)(p-1) > alpha")
        sig = 2 / e
        return CriticalRescaling(kind, t ** ((N - 2) / (2 * e)), t ** (1 / e), sig,
                                 FunctionalCoefficients.sobolev_critical_J(t, sig),
                                 FunctionalCoefficients.mu_form(t))
    raise InvalidParameter(f"unknown rescaling kind {kind!r}")
