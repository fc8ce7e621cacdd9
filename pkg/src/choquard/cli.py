"""Command-line front end.

    choquard {solve,sweep,fit,profiles,mass-map,verify} [-c CONFIG] [-o OUT] [--set KEY=VALUE ...]

Configs are flat `key = value` files with `#` comments.  Every run
directory receives `config.txt`, the effective configuration, which
parses back to the same RunConfig.

Exit codes: 0 success, 2 invalid configuration, 3 solver did not converge,
4 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import asymptotics as asy
from . import profiles as prof
from .functionals import (
    FORMULATIONS,
    ProblemParams,
    action_from_norms,
    compute_norms,
    critical_rescaling,
)
from .radial import (
    InvalidParameter,
    RadialField,
    ball_volume,
    build_grid,
    face_aligned_grid,
    power_rescale,
    volume_integral,
    write_field_csv,
)
from .riesz import build_operator, exterior_potential, grid_hash, riesz_constant
from .solver import Gaussian, SolverConfig, Workspace, save_run, solve

log = logging.getLogger("choquard")

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_VERIFY = 0, 2, 3, 4
SUBCOMMANDS = ("solve", "sweep", "fit", "profiles", "mass-map", "verify")
ENV_OUT = "CHOQUARD_OUT"
CONFIG_NAME = "config.txt"


class ConfigError(InvalidParameter):
    pass


class ConfigWarning(UserWarning):
    pass


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    # problem
    N: int | None = None
    alpha: float | None = None
    p: float | None = None
    q: float | None = None
    formulation: str = "frequency"
    value: float = 1.0
    # solver and grid
    max_iters: int = 5000
    tol: float = 1e-8
    step0: float = 1.0
    backtrack: float = 0.5
    seed_amplitude: float = 1.0
    seed_width: float = 1.0
    R: float = 30.0
    M: int = 2000
    gamma: float | None = None
    # sweep
    sweep_lo: float = 1e-3
    sweep_hi: float = 1e3
    per_decade: int = 4
    pivot: float | None = None
    warm: bool = True
    workers: int | None = None
    # fit
    fit_decades: float = 2.0
    # mass map
    c_squared: float | None = None
    bracket_lo: float | None = None
    bracket_hi: float | None = None
    mass_rtol: float = 1e-6
    # explicit profiles
    profile_R: float = 1000.0
    profile_M: int = 4000
    profile_gamma: float = 3.0
    # output
    out: str | None = None
    name: str | None = None

    def params(self) -> ProblemParams:
        return ProblemParams(self.N, self.alpha, self.p, self.q, self.formulation, self.value)

    def solver(self) -> SolverConfig:
        return SolverConfig(
            max_iters=self.max_iters,
            tol=self.tol,
            step0=self.step0,
            backtrack=self.backtrack,
            initial=Gaussian(self.seed_amplitude, self.seed_width),
            R=self.R,
            M=self.M,
            gamma=self.gamma,
        )

    def sweep_values(self) -> list:
        return asy.log_spaced(self.sweep_lo, self.sweep_hi, self.per_decade)


_FIELDS = {f.name: f for f in fields(RunConfig)}
REQUIRED = {
    "solve": ("N", "alpha", "p", "q"),
    "sweep": ("N", "alpha", "p", "q"),
    "mass-map": ("N", "alpha", "p", "q", "c_squared"),
    "profiles": ("N", "alpha"),
    "fit": ("N", "alpha", "p", "q"),
    "verify": (),
}
_CHOICES = {"formulation": FORMULATIONS}


def _base_type(name: str) -> type:
    t = _FIELDS[name].type
    for cand in (int, float, bool, str):
        if cand.__name__ in t.split("|")[0]:
            return cand
    raise AssertionError(name)


def _optional(name: str) -> bool:
    return "None" in _FIELDS[name].type


def _parse_value(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown key '{key}'")
    raw = raw.strip()
    if _optional(key) and raw.lower() in ("", "none", "auto"):
        return None
    t = _base_type(key)
    try:
        if t is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if t is int:
            v = Fraction(raw)
            if v.denominator != 1:
                raise ValueError(raw)
            return int(v)
        if t is float:
            # accepts 5/3 as well as decimal literals
            v = float(Fraction(raw)) if "/" in raw else float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"malformed value for '{key}': {raw!r}") from None
    if key in _CHOICES and raw not in _CHOICES[key]:
        raise ConfigError(f"malformed value for '{key}': {raw!r} (choose from {', '.join(_CHOICES[key])})")
    if raw == "":
        raise ConfigError(f"malformed value for '{key}': empty")
    return raw


def parse_lines(lines, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    values: dict = {}
    for k, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{k}: expected 'key = value', got {text!r}")
        key, _, raw = text.partition("=")
        key = key.strip()
        val = _parse_value(key, raw)
        if key in values:
            warnings.warn(f"{source}:{k}: duplicate key '{key}', last value wins", ConfigWarning, stacklevel=2)
        values[key] = val
    return replace(base if base is not None else RunConfig(), **values)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_lines(text.splitlines(), str(path))


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    lines = [f"{k} = {format_value(v)}" for k, v in asdict(cfg).items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def require(cfg: RunConfig, sub: str):
    missing = [k for k in REQUIRED[sub] if getattr(cfg, k) is None]
    if missing:
        raise ConfigError(f"missing required key(s) for {sub}: {', '.join(missing)}")


def output_root(cli_out: str | None, cfg: RunConfig) -> Path:
    return Path(cli_out or cfg.out or os.environ.get(ENV_OUT) or "runs")


# ---------------------------------------------------------------- verification suite

@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(math.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} (tol {self.tol:.0e})"


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def check_quadrature() -> list:
    out = []
    for N, R, gam in ((3, 1.0, 1.0), (4, 2.0, 2.0), (5, 3.0, 3.0)):
        g = build_grid(N, R, 2000, gam)
        out.append(Check(f"ball volume N={N}", _rel(float(g.weights.sum()), ball_volume(N, R)), 1e-10))
    g = build_grid(3, 30.0, 2000, 2.0)
    gauss = volume_integral(RadialField(g, np.exp(-g.nodes**2)))
    out.append(Check("Gaussian integral N=3", _rel(gauss, math.pi**1.5), 1e-8))
    return out


def check_kernel(M: int = 2000) -> list:
    """Newtonian ball values, weighted symmetry and far-field behaviour."""
    out = []
    g = face_aligned_grid(3, 1.0, 30.0, M, 3.0)
    r = g.nodes
    op = build_operator(g, 2.0)
    ball = (r < 1.0).astype(float)
    pot = op.potential(ball)
    for x in (2.0, 5.0, 10.0):
        i = int(np.argmin(abs(r - x)))
        out.append(Check(f"unit ball exterior r~{x:g}", _rel(pot[i], 1 / (3 * r[i])), 1e-4))
    out.append(Check("unit ball centre", _rel(pot[0], (3 - r[0] ** 2) / 6), 1e-4))
    i = int(np.argmin(abs(r - 20.0)))
    gauss = op.potential(np.exp(-(r**2)))
    out.append(Check("Gaussian far field r~20", _rel(gauss[i], math.sqrt(math.pi) / (4 * r[i])), 1e-6))
    sym = g.weights[:, None] * op.K
    out.append(Check("weighted symmetry", float(np.max(abs(sym - sym.T)) / np.max(abs(sym))), 1e-12))
    win = (r >= 3.0) & (r <= g.R / 2)
    mass = float(g.weights @ ball)
    lead = riesz_constant(3, 2.0) * mass / r[win]
    out.append(Check("far-field law alpha=2", float(np.max(abs(pot[win] / lead - 1))), 1e-3))
    for alpha in (0.5, 1.0, 2.5):
        pa = build_operator(g, alpha).potential(ball)
        series = exterior_potential(g, ball, alpha, r[win])
        out.append(Check(f"exterior multipole alpha={alpha:g}", float(np.max(abs(pa[win] / series - 1))), 1e-10))
    return out


def check_ground_state(M: int = 2000) -> list:
    params = ProblemParams(3, 2.0, 2.0, 4.0)
    gs = solve(params, SolverConfig(M=M))
    return [
        Check("ground state converged", 0.0 if gs.converged else math.inf, 0.5),
        Check("Nehari residual", abs(gs.nehari_residual), 1e-6),
        Check("Pohozaev residual", abs(gs.pohozaev_residual), 1e-6),
        Check("strong-form residual", gs.el_residual_norm, 1e-6),
    ]


RESCALING_CASES = {
    "lower": ((3, 2.0, 5 / 3, 3.0, 0.1), (4, 1.0, 5 / 4, 2.5, 3.0), (5, 3.0, 8 / 5, 2.2, 0.7)),
    "upper": ((5, 1.0, 2.0, 3.0, 0.1), (3, 2.0, 5.0, 4.0, 2.5), (4, 0.5, 2.25, 3.5, 0.3)),
    "sobolev": ((3, 1.0, 2.5, 6.0, 0.3), (5, 1.0, 2.0, 10 / 3, 4.0), (4, 2.0, 2.5, 4.0, 0.05)),
}


def rescaling_identities(kind: str, N: int, alpha: float, p: float, q: float, t: float, M: int = 800) -> dict:
    """Relative errors of the norm identities and of the functional equality
    under the critical-family rescaling w(x) = a v(b x) of a test field v."""
    form = "mu" if kind == "sobolev" else "lambda"
    params = ProblemParams(N, alpha, p, q, form, t)
    rs = critical_rescaling(params, kind)
    g = build_grid(N, 30.0, M, 2.0)
    op = build_operator(g, alpha)
    r = g.nodes
    v = RadialField(g, np.exp(-(r**2) / 2) * (1 + 0.3 * r))
    w = power_rescale(v, rs.a, rs.b)
    nv = compute_norms(v, op, p, q)
    nw = compute_norms(w, op.for_grid(w.grid), p, q)
    s = rs.sigma
    if kind == "lower":
        pairs = {
            "mass": (nw.mass, nv.mass),
            "choquard": (nw.dpp, nv.dpp),
            "gradient": (t**s * nw.grad2, nv.grad2),
            "power": (t**s * nw.lq, t * nv.lq),
        }
    elif kind == "upper":
        pairs = {
            "gradient": (nw.grad2, nv.grad2),
            "choquard": (nw.dpp, nv.dpp),
            "mass": (t**s * nw.mass, nv.mass),
            "power": (t**s * nw.lq, t * nv.lq),
        }
    else:
        pairs = {
            "gradient": (nw.grad2, nv.grad2),
            "power": (nw.lq, nv.lq),
            "mass": (t**s * nw.mass, nv.mass),
            "choquard": (t**s * nw.dpp, t * nv.dpp),
        }
    errs = {k: _rel(a, b) for k, (a, b) in pairs.items()}
    errs["functional"] = _rel(action_from_norms(nw, rs.J, p, q), action_from_norms(nv, rs.I, p, q))
    return errs


def check_rescaling() -> list:
    out = []
    for kind, cases in RESCALING_CASES.items():
        for case in cases:
            errs = rescaling_identities(kind, *case)
            tag = ",".join(f"{x:g}" for x in case)
            out.append(Check(f"{kind} rescaling ({tag}) worst identity", max(errs.values()), 1e-12))
    return out


def verification_suite(M: int = 2000) -> list:
    return check_quadrature() + check_kernel(M) + check_ground_state(M) + check_rescaling()


# ---------------------------------------------------------------- subcommands

def _prepare(cfg: RunConfig, sub: str, root: Path) -> Path:
    d = root / (cfg.name or sub)
    d.mkdir(parents=True, exist_ok=True)
    write_config(cfg, d / CONFIG_NAME)
    return d


def cmd_solve(cfg: RunConfig, root: Path) -> int:
    require(cfg, "solve")
    params = cfg.params()
    d = _prepare(cfg, "solve", root)
    gs = solve(params, cfg.solver())
    save_run(gs, d)
    print(f"{d}: action={gs.action:.12g} mass={gs.mass:.12g} u0={gs.u0:.12g} "
          f"iters={gs.iterations} converged={gs.converged}")
    if not gs.converged:
        _diag(f"solve: not converged ({gs.message})")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, root: Path) -> int:
    require(cfg, "sweep")
    params = cfg.params()
    plan = asy.SweepPlan(params, cfg.sweep_values(), cfg.solver(), cfg.pivot, cfg.warm, cfg.workers)
    d = _prepare(cfg, "sweep", root)
    recs = asy.run_sweep(plan)
    asy.write_records(recs, d / "records.csv")
    bad = [r.param for r in recs if not r.converged]
    print(f"{d / 'records.csv'}: {len(recs)} points, {len(bad)} not converged")
    if bad:
        _diag(f"sweep: {len(bad)} point(s) did not converge, first at {params.formulation}={bad[0]:g}")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_fit(cfg: RunConfig, records_path: Path, out_dir: Path | None) -> int:
    require(cfg, "fit")
    params = cfg.params()
    recs = asy.read_records(records_path)
    rows = asy.fit_table(recs, params, decades=cfg.fit_decades)
    d = out_dir if out_dir is not None else records_path.parent
    d.mkdir(parents=True, exist_ok=True)
    asy.write_fits(rows, d / "fits.csv")
    report = fit_report(rows, params)
    (d / "fit_report.txt").write_text(report, encoding="utf-8")
    print(report, end="")
    return EXIT_OK


def fit_report(rows, params: ProblemParams) -> str:
    info = asy.classify_regime(params)
    lines = [info.summary(), f"{'observable':<10} {'window':<23} {'fitted':>9} {'stderr':>9} {'predicted':>10}"]
    for r in rows:
        pred = "-" if r.predicted is None else f"{r.predicted:.4f}"
        win = f"[{r.window_lo:.3g}, {r.window_hi:.3g}]"
        flag = " (log-corrected)" if r.corrected_flag else ""
        lines.append(f"{r.observable:<10} {win:<23} {r.slope:>9.4f} {r.stderr:>9.2e} {pred:>10}{flag}")
    return "\n".join(lines) + "\n"


def cmd_profiles(cfg: RunConfig, root: Path) -> int:
    require(cfg, "profiles")
    N, alpha = cfg.N, cfg.alpha
    d = _prepare(cfg, "profiles", root)
    grid = build_grid(N, cfg.profile_R, cfg.profile_M, cfg.profile_gamma)
    op = build_operator(grid, alpha)
    h = grid_hash(grid)
    A = prof.resolve_U_amplitude(N, alpha, grid, op, verify=False)
    kappa = prof.resolve_V_amplitude(N, alpha, grid, op)
    write_field_csv(prof.bubble(prof.ProfileSpec("U", 1.0, A), grid), d / "U.csv")
    write_field_csv(prof.bubble(prof.ProfileSpec("V"), grid), d / "V.csv")
    write_field_csv(prof.bubble(prof.ProfileSpec("W"), grid), d / "W.csv")
    tag = f"N={N} alpha={format_value(float(alpha))}"
    rows = [("U_amplitude", tag, A), ("V_multiplier", tag, kappa)]
    base = ProblemParams(N, alpha, (N + alpha) / N, 2 * N / (N - 2))
    for kind in ("S", "S1", "Salpha"):
        rows.append((kind, tag, prof.best_constant(kind, base, grid, op)))
    if cfg.p is not None and cfg.q is not None:
        params = cfg.params()
        ptag = f"{tag} p={format_value(float(cfg.p))} q={format_value(float(cfg.q))}"
        for kind in ("lower", "critical_choquard", "bubble"):
            try:
                rows.append((f"rho0_{kind}", ptag, prof.rho0(kind, params, grid, op)))
            except prof.RegimeError as exc:
                log.info("rho0 %s skipped: %s", kind, exc)
        ws = Workspace.for_params(params, cfg.solver())
        for kind, lim in (("Sq", "pure_power"), ("Sp", "pure_choquard")):
            try:
                st = prof.limit_ground_state(lim, params, cfg.solver(), ws)
            except prof.RegimeError as exc:
                log.info("%s skipped: %s", kind, exc)
                continue
            if not st.converged:
                _diag(f"profiles: {lim} limit state did not converge")
                return EXIT_NOT_CONVERGED
            rows.append((kind, ptag, prof.best_constant(kind, params, state=st)))
    with open(d / "constants.csv", "w", encoding="utf-8") as fh:
        fh.write("kind,params,value,grid_hash\n")
        for kind, ptag, val in rows:
            fh.write(f"{kind},{ptag},{asy.fmt(float(val))},{h}\n")
    print(f"{d}: {len(rows)} constants, grid {h}")
    return EXIT_OK


def cmd_mass_map(cfg: RunConfig, root: Path) -> int:
    require(cfg, "mass-map")
    params = cfg.params()
    lo = cfg.bracket_lo if cfg.bracket_lo is not None else cfg.sweep_lo
    hi = cfg.bracket_hi if cfg.bracket_hi is not None else cfg.sweep_hi
    d = _prepare(cfg, "mass-map", root)
    try:
        roots = asy.mass_map_invert(cfg.c_squared, (lo, hi), params, cfg.solver(),
                                    per_decade=cfg.per_decade, rtol=cfg.mass_rtol)
    except RuntimeError as exc:
        _diag(f"mass-map: {exc}")
        return EXIT_NOT_CONVERGED
    with open(d / "roots.csv", "w", encoding="utf-8") as fh:
        fh.write("param,mass,rel_error,u0,action\n")
        for rt in roots:
            s = rt.state
            fh.write(",".join(asy.fmt(float(x)) for x in (rt.eps, s.mass, rt.rel_error, s.u0, s.action)) + "\n")
    print(f"{d / 'roots.csv'}: {len(roots)} root(s)")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, root: Path | None) -> int:
    checks = verification_suite(cfg.M)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    if failed:
        _diag(f"verify: {len(failed)} check(s) failed, first: {failed[0].name}")
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _diag(msg: str):
    print(f"choquard: {msg}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="choquard", description="Radial Choquard ground-state laboratory.")
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("-c", "--config", help="key = value config file")
    ap.add_argument("-o", "--out", help=f"output root (default: ${ENV_OUT} or ./runs)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    ap.add_argument("--records", help="fit: records.csv to fit (its directory's config.txt supplies parameters)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def load_effective(args) -> RunConfig:
    cfg = RunConfig()
    if args.records and not args.config:
        sibling = Path(args.records).parent / CONFIG_NAME
        if sibling.exists():
            cfg = parse_config(sibling)
    if args.config:
        cfg = parse_config(args.config)
    if args.set:
        cfg = parse_lines(args.set, "--set", cfg)
    return cfg


def run_command(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    with warnings.catch_warnings():
        warnings.simplefilter("always", ConfigWarning)
        warnings.showwarning = lambda m, *a, **k: _diag(f"warning: {m}")
        try:
            cfg = load_effective(args)
            root = output_root(args.out, cfg)
            cmd = args.command
            if cmd == "solve":
                return cmd_solve(cfg, root)
            if cmd == "sweep":
                return cmd_sweep(cfg, root)
            if cmd == "fit":
                if not args.records:
                    raise ConfigError("fit needs --records PATH")
                rp = Path(args.records)
                if not rp.exists():
                    raise ConfigError(f"records file not found: {rp}")
                return cmd_fit(cfg, rp, Path(args.out) if args.out else None)
            if cmd == "profiles":
                return cmd_profiles(cfg, root)
            if cmd == "mass-map":
                return cmd_mass_map(cfg, root)
            return cmd_verify(cfg, root)
        except (InvalidParameter, ValueError) as exc:
            _diag(f"invalid configuration: {exc}")
            return EXIT_CONFIG


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
