"""Regime taxonomy, predicted scaling exponents, frequency sweeps and fits.

Exponents are kept as exact fractions.  Every predicted entry carries a
short source label naming the regime statement it comes from.  For
gradient norms in the interior regime above the q-split the stated law
and the law implied by the limit rescaling disagree; the table keeps the
stated value in `exponent` and the rescaling value in `consistent`.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from .functionals import ProblemParams
from .radial import InvalidParameter, RadialField, gradient_energy, inner, power_rescale, resample
from .solver import GroundState, SolverConfig, Workspace, continue_branch, solve

log = logging.getLogger(__name__)

OBSERVABLES = ("u0", "mass", "grad2", "lq", "dpp", "energy", "action")
LIMITS = ("0", "inf")
_TOL = 1e-12


def _fr(x) -> Fraction:
    return Fraction(x).limit_denominator(10**6)


def _cmp(a: float, b: float) -> int:
    if math.isclose(a, b, rel_tol=_TOL, abs_tol=_TOL):
        return 0
    return -1 if a < b else 1


def _inside(x: float, lo: float, hi: float) -> bool:
    return _cmp(x, lo) > 0 and _cmp(x, hi) < 0


# ---------------------------------------------------------------- regimes

@dataclass(frozen=True)
class RegimeInfo:
    params: ProblemParams
    p_class: str  # lower | interior | upper | outside
    q_class: str  # interior | sobolev | outside
    family: str  # lower-critical | upper-critical | sobolev-critical | interior | uncovered
    covered: bool
    q_bar: float
    p0: float
    q0: float
    q_vs_qbar: int
    p_vs_p0: int
    q_vs_q0: int
    mass_at_zero: str | None  # "0" | "finite" | "inf" | None (no statement)
    mass_at_infinity: str | None
    finite_note: str = ""
    note: str = ""

    def summary(self) -> str:
        return (
            f"{self.family}: p {self.p_class}, q {self.q_class}; q vs q_bar={self.q_bar:.6g}: {self.q_vs_qbar:+d}, "
            f"p vs p0={self.p0:.6g}: {self.p_vs_p0:+d}, q vs q0={self.q0:.6g}: {self.q_vs_q0:+d}; "
            f"M(0)={self.mass_at_zero}, M(inf)={self.mass_at_infinity}"
        )


_FINITE_Q0 = "finite: (2/(N+2)) S_q0^((N+2)/2), value from computed best constant"
_FINITE_P0 = "finite: ((2+alpha)/(N+2+alpha)) S_p0^((N+2+alpha)/(2+alpha)), value from computed best constant"


def _interior_mass_limits(cq: int, cp: int):
    if cq < 0 or cp < 0:
        m0, n0 = "0", ""
    elif cq == 0 and cp > 0:
        m0, n0 = "finite", _FINITE_Q0
    elif cq > 0 and cp == 0:
        m0, n0 = "finite", _FINITE_P0
    elif cq > 0 and cp > 0:
        m0, n0 = "inf", ""
    else:
        m0, n0 = None, ""
    if cq > 0 or cp > 0:
        mi, ni = "0", ""
    elif cq == 0 and cp < 0:
        mi, ni = "finite", _FINITE_Q0
    elif cq < 0 and cp == 0:
        mi, ni = "finite", _FINITE_P0
    elif cq < 0 and cp < 0:
        mi, ni = "inf", ""
    else:
        mi, ni = None, ""
    return m0, mi, "; ".join(x for x in (n0, ni) if x)


def classify_regime(params: ProblemParams) -> RegimeInfo:
    N, alpha, p, q = params.N, params.alpha, params.p, params.q
    ts = params.two_star
    q_bar, p0, q0 = params.q_bar, params.p0, params.q0
    if params.is_lower:
        pc = "lower"
    elif params.is_upper:
        pc = "upper"
    elif _inside(p, params.p_lower, params.p_upper):
        pc = "interior"
    else:
        pc = "outside"
    qc = "sobolev" if params.is_sobolev else ("interior" if _inside(q, 2.0, ts) else "outside")
    cqb, cp, cq = _cmp(q, q_bar), _cmp(p, p0), _cmp(q, q0)
    m0 = mi = None
    fnote = note = ""
    covered = False
    family = "uncovered"
    if pc == "lower" and qc == "interior":
        family = "lower-critical"
        covered = _inside(q, 2.0, q0)
        if covered:
            m0, mi = "0", "inf"
        else:
            note = "lower-critical p needs q < 2 + 4/N"
    elif pc == "upper" and qc == "interior":
        family = "upper-critical"
        if N >= 4:
            covered = True
            if cq < 0:
                m0, mi = "0", "0"
            elif cq > 0:
                m0, mi = "inf", "0"
            else:
                note = "q = q0 has no stated mass limits"
        else:
            covered = _inside(q, 4.0, 6.0)
            if covered:
                m0, mi = "inf", "0"
            else:
                note = "N = 3 upper-critical p needs q in (4, 6)"
    elif qc == "sobolev" and pc in ("interior", "lower"):
        family = "sobolev-critical"
        lo = 1 + alpha / (N - 2)
        if N >= 4:
            covered = _inside(p, lo, params.p_upper)
            if covered:
                if alpha < N - 2 and _cmp(p, p0) < 0:
                    m0, mi = "0", "0"
                elif _cmp(p, max(lo, p0)) > 0:
                    m0, mi = "inf", "0"
                else:
                    note = "no stated mass limits at this p"
        else:
            covered = _inside(p, 2 + alpha, 3 + alpha)
            if covered:
                m0, mi = "inf", "0"
            else:
                note = "N = 3 Sobolev-critical q needs p in (2+alpha, 3+alpha)"
        if not covered and not note:
            note = "p outside (1 + alpha/(N-2), (N+alpha)/(N-2))"
    elif pc == "interior" and qc == "interior":
        family = "interior"
        covered = True
        m0, mi, fnote = _interior_mass_limits(cq, cp)
    else:
        note = "both nonlinearities critical or exponents outside the admissible ranges"
    return RegimeInfo(params, pc, qc, family, covered, q_bar, p0, q0, cqb, cp, cq, m0, mi, fnote, note)


# ---------------------------------------------------------------- exponents

@dataclass(frozen=True)
class ExponentEntry:
    observable: str
    exponent: Fraction | None  # as stated; None = no prediction
    log_power: Fraction = Fraction(0)  # power of |ln eps| multiplying eps^exponent
    source: str = ""
    consistent: Fraction | None = None  # value implied by the limit rescaling, if it differs

    @property
    def predicted(self) -> bool:
        return self.exponent is not None

    @property
    def has_log(self) -> bool:
        return self.log_power != 0

    @property
    def disputed(self) -> bool:
        return self.consistent is not None and self.consistent != self.exponent

    @property
    def best(self) -> Fraction | None:
        """The rescaling-consistent exponent (equal to `exponent` unless disputed)."""
        return self.consistent if self.consistent is not None else self.exponent


@dataclass(frozen=True)
class ExponentTable:
    params: ProblemParams
    limit: str
    regime: RegimeInfo
    entries: dict
    note: str = ""

    def __getitem__(self, obs: str) -> ExponentEntry:
        return self.entries[obs]

    def value(self, obs: str) -> float | None:
        e = self.entries[obs].exponent
        return None if e is None else float(e)

    def rows(self):
        for obs in OBSERVABLES:
            e = self.entries[obs]
            yield obs, e


def _local(N, a, p, q):
    """Pure-power limit: u ~ eps^{1/(q-2)} w(eps^{1/2} x)."""
    g = (2 * N - q * (N - 2)) / (2 * (q - 2))
    return {
        "u0": 1 / (q - 2),
        "mass": (4 - N * (q - 2)) / (2 * (q - 2)),
        "grad2": g,
        "lq": g,
        "dpp": (4 * p - (N + a) * (q - 2)) / (2 * (q - 2)),
        "energy": g,
        "action": g,
    }


def _choquard(N, a, p, q):
    """Pure-Choquard limit: u ~ eps^{(2+a)/(4(p-1))} w(eps^{1/2} x)."""
    g = (N + a - p * (N - 2)) / (2 * (p - 1))
    return {
        "u0": (2 + a) / (4 * (p - 1)),
        "mass": (2 + a - N * (p - 1)) / (2 * (p - 1)),
        "grad2": g,
        "lq": q * (2 + a) / (4 * (p - 1)) - Fraction(N, 2),
        "dpp": g,
        "energy": g,
        "action": g,
    }


def _lower_bubble(N, a, p, q):
    X = 4 - N * (q - 2)
    g = N * (2 * N - q * (N - 2)) / (a * X)
    return {
        "u0": 2 * N / (a * X),
        "mass": Fraction(N) / a,
        "grad2": g,
        "lq": g,
        "dpp": (N + a) / a,
        "energy": (N + a) / a,
        "action": (N + a) / a,
    }


def _entries(values: dict, source: str, logs: dict | None = None, skip=(), consistent: dict | None = None) -> dict:
    logs = logs or {}
    consistent = consistent or {}
    out = {}
    for obs in OBSERVABLES:
        if obs in skip or obs not in values:
            out[obs] = ExponentEntry(obs, None, Fraction(0), f"no prediction ({source})")
        else:
            out[obs] = ExponentEntry(obs, values[obs], logs.get(obs, Fraction(0)), source, consistent.get(obs))
    return out


def predicted_exponents(params: ProblemParams, limit: str) -> ExponentTable:
    """Predicted eps-exponents of the observables as eps -> 0 ('0') or eps -> inf ('inf')."""
    if limit not in LIMITS:
        raise InvalidParameter("limit must be '0' or 'inf'")
    info = classify_regime(params)
    N = params.N
    a, p, q = _fr(params.alpha), _fr(params.p), _fr(params.q)
    small = limit == "0"
    if not info.covered:
        return ExponentTable(params, limit, info, _entries({}, "regime not covered"), info.note or "not covered")

    if info.family == "lower-critical":
        q_split = 2 + 4 * a / (N * (2 + a))
        c = _cmp(float(q), float(q_split))
        local_side = (c <= 0) if small else (c > 0)
        tag = "lower-critical p, " + ("q at or below" if c <= 0 else "q above") + " the 2+4a/(N(2+a)) split"
        vals = _local(N, a, p, q) if local_side else _lower_bubble(N, a, p, q)
        # the boundary q is included for u0, mass and gradient only
        skip = ("lq", "dpp", "energy", "action") if c == 0 else ()
        return ExponentTable(params, limit, info, _entries(vals, tag, skip=skip))

    if info.family == "upper-critical":
        if small:
            return ExponentTable(params, limit, info, _entries(_local(N, a, p, q), "upper-critical p, eps -> 0"))
        zero = {k: Fraction(0) for k in ("grad2", "dpp", "energy", "action")}
        if N >= 5:
            vals = {
                "u0": 1 / (q - 2),
                "mass": -4 / ((N - 2) * (q - 2)),
                "lq": -(2 * N - q * (N - 2)) / ((N - 2) * (q - 2)),
                **zero,
            }
            return ExponentTable(params, limit, info, _entries(vals, "upper-critical p, N >= 5, eps -> inf"))
        if N == 4:
            vals = {"u0": 1 / (q - 2), "mass": -2 / (q - 2), "lq": -(4 - q) / (q - 2), **zero}
            logs = {"u0": 2 / (q - 2), "mass": -(4 - q) / (q - 2), "lq": -(4 - q) / (q - 2)}
            return ExponentTable(params, limit, info, _entries(vals, "upper-critical p, N = 4, eps -> inf", logs))
        vals = {"u0": 1 / (2 * (q - 4)), "mass": -(q - 2) / (2 * (q - 4)), "lq": -(6 - q) / (2 * (q - 4)), **zero}
        return ExponentTable(params, limit, info, _entries(vals, "upper-critical p, N = 3, eps -> inf"))

    if info.family == "sobolev-critical":
        if small:
            return ExponentTable(params, limit, info, _entries(_choquard(N, a, p, q), "Sobolev-critical q, eps -> 0"))
        zero = {k: Fraction(0) for k in ("grad2", "lq", "energy", "action")}
        if N >= 5:
            e = (N - 2) * (p - 1) - a
            vals = {"u0": (N - 2) / (2 * e), "mass": -2 / e, "dpp": -(N + a - p * (N - 2)) / e, **zero}
            return ExponentTable(params, limit, info, _entries(vals, "Sobolev-critical q, N >= 5, eps -> inf"))
        if N == 4:
            e = 2 * p - 2 - a
            if not p > 2:
                return ExponentTable(params, limit, info, _entries({}, "N = 4 needs p > 2"), "N = 4 needs p > 2")
            vals = {"u0": 1 / e, "mass": -2 / e, "dpp": -(4 + a - 2 * p) / e, **zero}
            logs = {"u0": 1 / e, "mass": -(4 + a - 2 * p) / e, "dpp": -(4 + a - 2 * p) / e}
            return ExponentTable(params, limit, info, _entries(vals, "Sobolev-critical q, N = 4, eps -> inf", logs))
        e = p - 2 - a
        vals = {"u0": 1 / (4 * e), "mass": -(p - 1 - a) / (2 * e), "dpp": -(3 + a - p) / (2 * e), **zero}
        return ExponentTable(params, limit, info, _entries(vals, "Sobolev-critical q, N = 3, eps -> inf"))

    # interior
    c = info.q_vs_qbar
    loc, cho = _local(N, a, p, q), _choquard(N, a, p, q)
    if c == 0:
        vals = loc if small else cho
        tag = "interior, q = q_bar (only u0 and mass stated)"
        return ExponentTable(params, limit, info, _entries(vals, tag, skip=("grad2", "lq", "dpp", "energy", "action")))
    local_side = (c < 0) if small else (c > 0)
    vals = dict(loc if local_side else cho)
    # the reference gradient law uses one exponent per limit on both sides of q_bar
    stated_grad = loc["grad2"] if small else cho["grad2"]
    consistent = {}
    if stated_grad != vals["grad2"]:
        consistent["grad2"] = vals["grad2"]
        vals["grad2"] = stated_grad
    side = "below" if c < 0 else "above"
    tag = f"interior, q {side} q_bar, eps -> {'0' if small else 'inf'}"
    return ExponentTable(params, limit, info, _entries(vals, tag, consistent=consistent))


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepRecord:
    param: float
    u0: float
    mass: float
    grad2: float
    lq: float
    dpp: float
    energy: float
    action: float
    converged: bool
    iters: int
    seconds: float
    nehari_residual: float = math.nan
    pohozaev_residual: float = math.nan
    discrete_residual: float = math.nan
    state: GroundState | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_state(cls, param: float, gs: GroundState, seconds: float | None = None) -> "SweepRecord":
        return cls(
            param=param,
            u0=gs.u0,
            mass=gs.mass,
            grad2=gs.grad2,
            lq=gs.lq,
            dpp=gs.dpp,
            energy=gs.energy,
            action=gs.action,
            converged=bool(gs.converged),
            iters=int(gs.iterations),
            seconds=float(gs.seconds if seconds is None else seconds),
            nehari_residual=gs.nehari_residual,
            pohozaev_residual=gs.pohozaev_residual,
            discrete_residual=gs.discrete_residual,
            state=gs,
        )

    def observable(self, name: str) -> float:
        if name not in OBSERVABLES:
            raise InvalidParameter(f"unknown observable {name!r}")
        return getattr(self, name)


@dataclass
class SweepPlan:
    params: ProblemParams
    values: list
    config: SolverConfig = field(default_factory=SolverConfig)
    pivot: float | None = None  # start value; default: the value closest to 1 in log scale
    warm: bool = True
    workers: int | None = None  # thread count for cold-started sweeps

    def __post_init__(self):
        vals = [float(v) for v in self.values]
        if not vals:
            raise InvalidParameter("sweep needs at least one parameter value")
        if any(v <= 0 or not math.isfinite(v) for v in vals):
            raise InvalidParameter("sweep values must be positive")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidParameter("sweep values must be strictly increasing")
        self.values = vals


def log_spaced(lo: float, hi: float, per_decade: int) -> list:
    """Log-spaced values from lo to hi inclusive, per_decade points per decade."""
    if not (0 < lo < hi):
        raise InvalidParameter("need 0 < lo < hi")
    n = int(round(math.log10(hi / lo) * per_decade))
    return [float(v) for v in 10.0 ** np.linspace(math.log10(lo), math.log10(hi), n + 1)]


def _pivot_index(values, pivot):
    target = 0.0 if pivot is None else math.log(pivot)
    return int(np.argmin([abs(math.log(v) - target) for v in values]))


def run_sweep(plan: SweepPlan, workspace: Workspace | None = None, progress=None) -> list:
    """Solve at each plan value, warm-starting outward from the pivot.

    Records come back in increasing parameter order whatever the solve order.
    A point that fails to converge is recorded; the next point is then
    seeded from the last converged neighbour.
    """
    params, cfg = plan.params, plan.config
    if workspace is None:
        workspace = Workspace.for_params(params, cfg)
    vals = plan.values
    k = _pivot_index(vals, plan.pivot)
    recs: dict[int, SweepRecord] = {}

    def run(i, prev):
        pr = params.with_value(vals[i])
        t0 = time.perf_counter()
        if plan.warm and prev is not None and prev.converged:
            gs = continue_branch(prev, pr, cfg, workspace)
        else:
            gs = solve(pr, cfg, workspace)
        rec = SweepRecord.from_state(vals[i], gs, time.perf_counter() - t0)
        recs[i] = rec
        if progress is not None:
            progress(rec)
        if not gs.converged:
            log.warning("sweep point %s=%g did not converge: %s", params.formulation, vals[i], gs.message)
        return gs if gs.converged else prev

    if not plan.warm:
        # independent cold starts; the shared workspace is read-only once built
        workspace.lu
        with ThreadPoolExecutor(max_workers=plan.workers) as pool:
            list(pool.map(lambda i: run(i, None), range(len(vals))))
        return [recs[i] for i in range(len(vals))]
    start = run(k, None)
    prev = start
    for i in range(k - 1, -1, -1):
        prev = run(i, prev)
    prev = start
    for i in range(k + 1, len(vals)):
        prev = run(i, prev)
    return [recs[i] for i in range(len(vals))]


# ---------------------------------------------------------------- fitting

@dataclass(frozen=True)
class FitResult:
    slope: float
    stderr: float
    raw_slope: float
    raw_stderr: float
    n: int
    corrected: bool
    window: tuple

    def __iter__(self):
        yield self.slope
        yield self.stderr


class InsufficientData(InvalidParameter):
    pass


def _linfit(x: np.ndarray, y: np.ndarray):
    res = stats.linregress(x, y)
    return float(res.slope), float(res.stderr)


def fit_arrays(params: np.ndarray, values: np.ndarray, log_power: float = 0.0, window=None) -> FitResult:
    x = np.asarray(params, float)
    y = np.asarray(values, float)
    if window is not None:
        lo, hi = window
        m = (x >= lo * (1 - 1e-9)) & (x <= hi * (1 + 1e-9))
        x, y = x[m], y[m]
    if len(x) < 4:
        raise InsufficientData(f"need >= 4 records in the fit window, have {len(x)}")
    if np.any(y == 0) or not np.all(np.isfinite(y)):
        raise InsufficientData("observable vanishes or is not finite in the window")
    lx, ly = np.log(x), np.log(np.abs(y))
    raw = _linfit(lx, ly)
    if log_power:
        if np.any(np.isclose(x, 1.0)):
            raise InsufficientData("log-corrected fit window must exclude eps = 1")
        corr = _linfit(lx, ly - log_power * np.log(np.abs(lx)))
        return FitResult(corr[0], corr[1], raw[0], raw[1], len(x), True, (float(x.min()), float(x.max())))
    return FitResult(raw[0], raw[1], raw[0], raw[1], len(x), False, (float(x.min()), float(x.max())))


def fit_exponent(records, observable: str, window=None, log_power: float | None = None,
                 table: ExponentTable | None = None) -> FitResult:
    """Least-squares slope of log|observable| against log(param) over converged records.

    With a known log power k (given, or flagged in `table`) the fit is of
    log|obs| - k log|ln param|; the raw slope is reported alongside.
    """
    if observable not in OBSERVABLES:
        raise InvalidParameter(f"unknown observable {observable!r}")
    if log_power is None:
        log_power = float(table[observable].log_power) if table is not None else 0.0
    good = [r for r in records if r.converged]
    x = [r.param for r in good]
    y = [r.observable(observable) for r in good]
    if window is None:
        window = default_window(x, limit=table.limit if table is not None else "0")
    return fit_arrays(np.array(x), np.array(y), log_power, window)


def default_window(params, limit: str = "0", decades: float = 2.0):
    """The two extreme decades of the sweep on the requested side."""
    x = np.sort(np.asarray(params, float))
    if len(x) == 0:
        raise InsufficientData("no records")
    if limit == "0":
        return float(x[0]), float(x[0] * 10**decades)
    return float(x[-1] / 10**decades), float(x[-1])


# ---------------------------------------------------------------- profiles

def limit_rescaled(state: GroundState, kind: str) -> RadialField:
    """w(x) = eps^{-a} u(eps^{-1/2} x) with a = 1/(q-2) ('pure_power') or (2+alpha)/(4(p-1)) ('pure_choquard')."""
    pr = state.params
    if pr.formulation != "frequency":
        raise InvalidParameter("limit rescaling is defined for the frequency formulation")
    eps = pr.value
    if kind == "pure_power":
        a = 1 / (pr.q - 2)
    elif kind == "pure_choquard":
        a = (2 + pr.alpha) / (4 * (pr.p - 1))
    else:
        raise InvalidParameter(f"unknown limit kind {kind!r}")
    return power_rescale(state.u, eps ** (-a), eps**-0.5)


def profile_distance(field_: RadialField, reference: RadialField, mode: str = "L2_relative") -> float:
    """Relative distance ||f - ref|| / ||ref|| after bringing ref onto f's grid."""
    if field_.grid.N != reference.grid.N:
        raise InvalidParameter("fields live in different dimensions")
    ref = reference if reference.grid.same_as(field_.grid) else resample(reference, field_.grid)
    d = RadialField(field_.grid, field_.values - ref.values)
    if mode == "L2_relative":
        return math.sqrt(inner(d, d) / inner(ref, ref))
    if mode == "H1_relative":
        return math.sqrt((inner(d, d) + gradient_energy(d)) / (inner(ref, ref) + gradient_energy(ref)))
    raise InvalidParameter(f"unknown distance mode {mode!r}")


# ---------------------------------------------------------------- mass map

@dataclass
class MassRoot:
    eps: float
    state: GroundState
    rel_error: float

    def __iter__(self):
        yield self.eps
        yield self.state


def mass_map_invert(c_squared: float, bracket, params: ProblemParams, config: SolverConfig = SolverConfig(),
                    records=None, per_decade: int = 4, rtol: float = 1e-6, workspace: Workspace | None = None):
    """All eps in `bracket` with M(eps) = c^2 along the computed branch.

    Sign changes of M - c^2 between consecutive converged sweep samples are
    refined by Brent's method in log eps, each evaluation warm-started from
    the closest state already computed.
    """
    if not c_squared > 0:
        raise InvalidParameter("c^2 must be positive")
    if params.formulation != "frequency":
        raise InvalidParameter("mass-map inversion works on the frequency formulation")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 < lo < hi:
        raise InvalidParameter("bracket must satisfy 0 < lo < hi")
    if workspace is None:
        workspace = Workspace.for_params(params, config)
    if records is None:
        records = run_sweep(SweepPlan(params, log_spaced(lo, hi, per_decade), config), workspace)
    good = [r for r in records if r.converged and lo * (1 - 1e-12) <= r.param <= hi * (1 + 1e-12)]
    good.sort(key=lambda r: r.param)
    roots = []
    for i, r in enumerate(good):
        if r.mass == c_squared:
            roots.append(MassRoot(r.param, r.state, 0.0))
        if i + 1 < len(good):
            b = good[i + 1]
            if (r.mass - c_squared) * (b.mass - c_squared) < 0:
                roots.append(_refine(c_squared, r, b, params, config, workspace, rtol))
    if not roots:
        log.info("no sign change of M - c^2 in [%g, %g]", lo, hi)
    return roots


def _refine(c2, a: SweepRecord, b: SweepRecord, params, config, ws, rtol) -> MassRoot:
    cache: dict[float, GroundState] = {math.log(a.param): a.state, math.log(b.param): b.state}

    def state_at(t):
        if t in cache:
            return cache[t]
        near = min(cache, key=lambda s: abs(s - t))
        gs = continue_branch(cache[near], params.with_value(math.exp(t)), config, ws)
        if not gs.converged:
            gs = solve(params.with_value(math.exp(t)), config, ws)
        if not gs.converged:
            raise RuntimeError(f"mass-map refinement: no convergence at eps={math.exp(t):g}")
        cache[t] = gs
        return gs

    def f(t):
        return state_at(t).mass / c2 - 1.0

    t = brentq(f, math.log(a.param), math.log(b.param), xtol=1e-12, rtol=1e-14, maxiter=100)
    gs = state_at(t)
    err = abs(gs.mass / c2 - 1.0)
    if err > rtol:
        log.warning("mass-map root at eps=%g has relative error %.2e", math.exp(t), err)
    return MassRoot(math.exp(t), gs, err)


# ---------------------------------------------------------------- CSV

RECORD_COLUMNS = (
    "param", "u0", "mass", "grad2", "lq", "dpp", "energy", "action", "converged", "iters", "seconds",
)
EXTRA_COLUMNS = ("nehari_residual", "pohozaev_residual", "discrete_residual")
FIT_COLUMNS = ("observable", "window_lo", "window_hi", "slope", "stderr", "predicted", "corrected_flag")


def fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, Fraction):
        v = float(v)
    return "%.17g" % float(v)


def write_records(records, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS + EXTRA_COLUMNS)
        for r in records:
            w.writerow([fmt(getattr(r, c)) for c in RECORD_COLUMNS + EXTRA_COLUMNS])
    return path


def read_records(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for c in RECORD_COLUMNS + EXTRA_COLUMNS:
                if c not in row:
                    if c in RECORD_COLUMNS:
                        raise InvalidParameter(f"records file lacks column {c!r}")
                    continue
                s = row[c]
                if c == "converged":
                    kw[c] = s.strip() in ("1", "True", "true")
                elif c == "iters":
                    kw[c] = int(s)
                else:
                    kw[c] = float(s) if s != "" else math.nan
            out.append(SweepRecord(**kw))
    return out


@dataclass(frozen=True)
class FitRow:
    observable: str
    window_lo: float
    window_hi: float
    slope: float
    stderr: float
    predicted: float | None
    corrected_flag: bool


def write_fits(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_COLUMNS)
        for r in rows:
            w.writerow([r.observable, fmt(r.window_lo), fmt(r.window_hi), fmt(r.slope), fmt(r.stderr),
                        fmt(r.predicted), fmt(bool(r.corrected_flag))])
    return path


def read_fits(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(FitRow(
                row["observable"], float(row["window_lo"]), float(row["window_hi"]), float(row["slope"]),
                float(row["stderr"]), float(row["predicted"]) if row["predicted"] else None,
                row["corrected_flag"] == "1",
            ))
    return out


def fit_table(records, params: ProblemParams, limits=LIMITS, observables=OBSERVABLES, decades: float = 2.0):
    """Fit every predicted observable at both ends of a sweep; rows for fits.csv."""
    xs = [r.param for r in records if r.converged]
    rows = []
    for lim in limits:
        table = predicted_exponents(params, lim)
        win = default_window(xs, lim, decades)
        for obs in observables:
            e = table[obs]
            try:
                fr = fit_exponent(records, obs, win, float(e.log_power), None)
            except InsufficientData as exc:
                log.info("skip %s at %s: %s", obs, lim, exc)
                continue
            rows.append(FitRow(obs, win[0], win[1], fr.slope, fr.stderr,
                               None if e.exponent is None else float(e.exponent), fr.corrected))
    return rows
