import math

import numpy as np
import pytest

from choquard.functionals import ProblemParams
from choquard.radial import InvalidParameter, dilate
from choquard.riesz import build_operator
from choquard.profiles import (
    ProfileSpec,
    RegimeError,
    S1_quotient,
    Salpha_quotient,
    Sp_quotient,
    Sq_quotient,
    U_residual,
    V_residual,
    W_residual,
    best_constant,
    bubble,
    emden_fowler_amplitude,
    least_action_from_constant,
    limit_ground_state,
    perturbed_quotients,
    profile_choquard,
    profile_grid,
    profile_lebesgue,
    profile_value,
    resolve_U_amplitude,
    resolve_V_amplitude,
    rho0,
    sobolev_quotient,
)
from choquard.solver import shooting_oracle


def talenti(N):
    return math.pi * N * (N - 2) * (math.gamma(N / 2) / math.gamma(N)) ** (2 / N)


@pytest.fixture(scope="module")
def p3():
    g = profile_grid(3, 1000.0, 2000, 3.0)
    return g, build_operator(g, 2.0)


@pytest.fixture(scope="module")
def p5():
    g = profile_grid(5, 1000.0, 2000, 3.0)
    return g, build_operator(g, 1.0)


# ---------------------------------------------------------------- explicit bubbles


def test_bubble_values():
    assert profile_value(ProfileSpec("V"), 4, 0.0) == pytest.approx(math.sqrt(8), rel=1e-15)
    assert profile_value(ProfileSpec("W"), 3, 0.0) == pytest.approx(3**0.25, rel=1e-15)
    r = np.array([1e4, 1e6])
    for N in (3, 5):
        tail = r ** (N - 2) * profile_value(ProfileSpec("V"), N, r)
        assert tail[-1] == pytest.approx(emden_fowler_amplitude(N), rel=1e-10)


def test_profile_spec_validation():
    with pytest.raises(InvalidParameter):
        ProfileSpec("X")
    with pytest.raises(InvalidParameter):
        ProfileSpec("W", 0.0)
    with pytest.raises(InvalidParameter):
        profile_value(ProfileSpec("U"), 3, 1.0)  # amplitude not resolved


@pytest.mark.parametrize("kind,A", [("U", 1.7), ("V", None), ("W", None)])
def test_dilation_law_is_relabeling(p3, kind, A):
    g, _ = p3
    rho = 2.5
    k = 1.5 if kind == "U" else 0.5
    one = bubble(ProfileSpec(kind, 1.0, A), g)
    moved = dilate(one, rho)
    direct = profile_value(ProfileSpec(kind, rho, A), 3, moved.grid.nodes)
    assert np.allclose(direct, rho ** (-k) * one.values, rtol=1e-13, atol=0)


def test_V_and_W_coincide(p3):
    g, _ = p3
    assert np.array_equal(bubble(ProfileSpec("V"), g).values, bubble(ProfileSpec("W"), g).values)


def test_V_and_W_certify_their_equations(p3, p5):
    g3, op3 = p3
    assert W_residual(g3) <= 1e-4
    # for N = 3, alpha = 2 the Choquard equation is solved by W_1 itself
    assert resolve_V_amplitude(3, 2.0, g3, op3) == pytest.approx(1.0, abs=1e-8)
    assert V_residual(g3, op3, 1.0) <= 1e-4
    g5, op5 = p5
    assert W_residual(g5) <= 1e-4
    assert V_residual(g5, op5) <= 1e-4


# ---------------------------------------------------------------- U amplitude


def test_U_amplitude_closed_form(p3):
    # N=3, alpha=2: I_2 * (1+r^2)^{-5/2} = (1+r^2)^{-1/2} / 3, which forces A^2 = 3
    g, op = p3
    A = resolve_U_amplitude(3, 2.0, g, op)
    assert A == pytest.approx(math.sqrt(3), rel=1e-8)
    assert U_residual(A, 3, 2.0, g, op) <= 1e-4
    # only one multiple solves the equation
    assert U_residual(1.05 * A, 3, 2.0, g, op) > 1e-2


def test_U_amplitude_other_dimension():
    g = profile_grid(4, 1000.0, 1500, 2.0)
    op = build_operator(g, 1.0)
    A = resolve_U_amplitude(4, 1.0, g, op)
    assert U_residual(A, 4, 1.0, g, op) <= 1e-4


def test_U_on_its_Nehari_set(p3):
    g, op = p3
    spec = ProfileSpec("U", 1.0, resolve_U_amplitude(3, 2.0, g, op))
    l2 = profile_lebesgue(spec, g, 2.0)
    assert profile_choquard(spec, g, op, 5 / 3) == pytest.approx(l2, rel=1e-4)


def test_divergent_norms_raise(p3):
    g, op = p3
    with pytest.raises(RegimeError):
        profile_lebesgue(ProfileSpec("W"), g, 2.0)
    with pytest.raises(RegimeError):
        rho0("critical_choquard", ProblemParams(3, 2.0, 5.0, 4.0), g, op)


# ---------------------------------------------------------------- rho_0


def test_rho0_lower_stable_under_refinement(p3):
    P = ProblemParams(3, 2.0, 5 / 3, 3.0)
    g, op = p3
    a = rho0("lower", P, g, op)
    g2 = profile_grid(3, 1000.0, 4000, 3.0)
    b = rho0("lower", P, g2)
    assert a > 0 and abs(a / b - 1) < 1e-4


def test_rho0_critical_choquard_stable(p5):
    P = ProblemParams(5, 1.0, 2.0, 3.0)
    g, op = p5
    a = rho0("critical_choquard", P, g, op)
    b = rho0("critical_choquard", P, profile_grid(5, 2000.0, 3000, 3.0))
    assert a > 0 and abs(a / b - 1) < 1e-4


def test_rho0_vanishes_towards_critical_q(p5):
    g, op = p5
    qs = [3.0, 3.2, 3.3, 3.33, 3.333]
    vals = [rho0("critical_choquard", ProblemParams(5, 1.0, 2.0, q), g, op) for q in qs]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 0.05 * vals[0]


def test_rho0_bubble_positive(p5):
    g, op = p5
    assert rho0("bubble", ProblemParams(5, 1.0, 1.5, 10 / 3), g, op) > 0
    with pytest.raises(RegimeError):
        rho0("bubble", ProblemParams(5, 1.0, 1.5, 3.0), g, op)
    with pytest.raises(InvalidParameter):
        rho0("middle", ProblemParams(5, 1.0, 1.5, 3.0), g, op)


# ---------------------------------------------------------------- best constants


def test_sobolev_constant_matches_closed_form():
    P = ProblemParams(5, 1.0, 2.0, 3.0)
    a = best_constant("S", P, profile_grid(5, 1000.0, 2000, 3.0))
    b = best_constant("S", P, profile_grid(5, 1000.0, 4000, 3.0))
    assert abs(a / b - 1) < 1e-5
    assert b == pytest.approx(talenti(5), rel=1e-6)


def test_extremals_are_local_minima(p3, p5):
    g3, op3 = p3
    g5, op5 = p5
    A = resolve_U_amplitude(3, 2.0, g3, op3)
    cases = [
        ("S", bubble(ProfileSpec("W"), g5), None, sobolev_quotient),
        ("S1", bubble(ProfileSpec("U", 1.0, A), g3), op3, lambda f: S1_quotient(f, op3)),
        ("Salpha", bubble(ProfileSpec("V"), g3), op3, lambda f: Salpha_quotient(f, op3)),
    ]
    for kind, f, op, quotient in cases:
        base = quotient(f)
        for val in perturbed_quotients(kind, f, op):
            assert val > base


def test_quotients_invariant_under_dilation_and_scaling(p3):
    g, op = p3
    A = resolve_U_amplitude(3, 2.0, g, op)
    u = bubble(ProfileSpec("U", 1.0, A), g)
    w = bubble(ProfileSpec("W"), g)
    quotients = [
        (w, sobolev_quotient),
        (u, lambda f: S1_quotient(f, op)),
        (w, lambda f: Salpha_quotient(f, op)),
    ]
    for f, Q in quotients:
        base = Q(f)
        assert Q(dilate(f, 1.7)) == pytest.approx(base, rel=1e-10)
        assert Q(3.0 * f) == pytest.approx(base, rel=1e-12)
    assert Sp_quotient(2.0 * w, op, 2.0) == pytest.approx(Sp_quotient(w, op, 2.0), rel=1e-12)
    assert Sq_quotient(2.0 * w, 4.0) == pytest.approx(Sq_quotient(w, 4.0), rel=1e-12)


def test_unknown_constant_kind():
    with pytest.raises(InvalidParameter):
        best_constant("Sx", ProblemParams(3, 2.0, 2.0, 4.0))


# ---------------------------------------------------------------- limit states


@pytest.fixture(scope="module")
def pure_power():
    P = ProblemParams(3, 2.0, 2.0, 4.0)
    return P, limit_ground_state("pure_power", P)


def test_pure_power_limit_matches_shooting(pure_power):
    _, st = pure_power
    u0, f = shooting_oracle(3, 4.0, 1.0, st.u.grid)
    assert np.max(abs(st.u.values - f.values)) <= 1e-4 * u0


def test_pure_power_identities(pure_power):
    P, st = pure_power
    N, q, m0 = P.N, P.q, st.action
    assert st.grad2 == pytest.approx(N * m0, rel=1e-5)
    assert st.mass == pytest.approx((2 * N - q * (N - 2)) / (q - 2) * m0, rel=1e-5)
    Sq = best_constant("Sq", P, state=st)
    assert least_action_from_constant("Sq", P, Sq) == pytest.approx(m0, rel=1e-5)


def test_pure_choquard_limit():
    P = ProblemParams(3, 2.0, 2.0, 4.0)
    st = limit_ground_state("pure_choquard", P)
    assert st.converged
    assert abs(st.nehari_residual) <= 1e-6 and abs(st.pohozaev_residual) <= 1e-6
    Sp = best_constant("Sp", P, state=st)
    assert least_action_from_constant("Sp", P, Sp) == pytest.approx(st.action, rel=1e-4)


def test_limit_state_regime_errors():
    with pytest.raises(RegimeError):
        limit_ground_state("pure_power", ProblemParams(3, 1.0, 2.5, 6.0))
    with pytest.raises(RegimeError):
        limit_ground_state("pure_choquard", ProblemParams(3, 2.0, 5 / 3, 3.0))
    with pytest.raises(InvalidParameter):
        limit_ground_state("mixed", ProblemParams(3, 2.0, 2.0, 3.0))
