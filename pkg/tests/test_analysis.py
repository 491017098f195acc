"""Thinning-law fit, regime labels, bound solver and maximum-principle report."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tearfilm.analysis import (
    InsufficientDataError,
    Regime,
    check_maximum_principle,
    classify_regime,
    fit_thinning_rate,
    solve_bound_fixed_point,
)
from tearfilm.experiments import fig1_params, flat_start
from tearfilm.integrator import Event, EventKind, RunResult, StepController, integrate
from tearfilm.model import ConstantSbar, DomainError, ModelParams


def _law(t, m, eta, c):
    return (c + eta * (m - 1) * t) ** (-1.0 / (m - 1))


# -- thinning fit ---------------------------------------------------------------------


@settings(max_examples=20)
@given(m=st.sampled_from([1.5, 2.0, 3.0, 6.0]), c=st.floats(0.5, 20.0))
def test_fit_recovers_exact_exponent(m, c):  # [derived] synthetic law data
    t = np.geomspace(1e-3, 2000.0, 400)
    fit = fit_thinning_rate(t, _law(t, m, 100.0, c), m, 100.0)
    assert fit.exponent == pytest.approx(-1.0 / (m - 1.0), abs=1e-6)
    assert fit.predicted == -1.0 / (m - 1.0)
    assert fit.relative_residual < 1e-6


def test_fit_undefined_for_m_at_most_one():
    t = np.linspace(0, 1, 50)
    for m in (0.0, 0.5, 1.0):
        fit = fit_thinning_rate(t, np.exp(-t), m, 100.0)
        assert not fit.fitted and math.isnan(fit.exponent)


def test_fit_needs_data():
    with pytest.raises(InsufficientDataError):
        fit_thinning_rate(np.arange(5.0), np.ones(5), 2.0, 1.0)


def test_fit_rejects_bad_input():
    with pytest.raises(DomainError):
        fit_thinning_rate(np.arange(20.0), np.ones(20), 2.0, 0.0)
    with pytest.raises(ValueError):
        fit_thinning_rate(np.arange(20.0), np.ones(19), 2.0, 1.0)


# -- regime classification -------------------------------------------------------------


@pytest.fixture(scope="module")
def short_run():
    return integrate(flat_start(81), fig1_params(), StepController(), t_end=0.01)


def _with_event(result, kind, x_c=None):
    return RunResult(result.snapshots, result.series, Event(kind, result.event.t_stop, x_c),
                     result.final)


def test_rupture_is_finite_time_rupture(short_run):
    label = classify_regime(_with_event(short_run, EventKind.RUPTURE, 0.4), fig1_params())
    assert label.regime == Regime.FINITE_TIME_RUPTURE and label.evidence["x_c"] == 0.4


def test_transient_state_never_converged(short_run):
    # the final state is its own "equilibrium", but it is far from stationary
    label = classify_regime(_with_event(short_run, EventKind.STEADY_STATE), fig1_params(),
                            equilibrium=short_run.final)
    assert label.regime != Regime.CONVERGE_TO_EQUILIBRIUM
    assert label.evidence["steady_residual"] > 1e-6


def test_classification_deterministic(short_run):
    a = classify_regime(short_run, fig1_params())
    b = classify_regime(short_run, fig1_params())
    assert a == b and a.regime == Regime.UNCLASSIFIED


# -- a-priori bound ----------------------------------------------------------------------


@pytest.mark.parametrize("A,C,tau,H", [(3, 1, 0, 4.0), (4, 0, 0.7, 3.0), (0, 0, 1.0, 1.0),
                                        (8, 2, 1.0, 4 + math.sqrt(15))])
def test_bound_closed_forms(A, C, tau, H):  # [derived] algebraic roots
    assert solve_bound_fixed_point(A, C, tau) == pytest.approx(H, abs=1e-10)


def test_bound_matches_damped_iteration():  # [derived] independent fixed-point iteration
    A, C, tau = 5.0, 0.7, 1.5
    H = C + 1.0
    for _ in range(10_000):
        H_new = math.sqrt(A + C * H**tau) + C + 1.0
        if abs(H_new - H) < 1e-15:
            break
        H = 0.5 * (H + H_new)
    assert solve_bound_fixed_point(A, C, tau) == pytest.approx(H, abs=1e-10)
    assert H == pytest.approx(5.41887, abs=1e-5)


@given(A=st.floats(0, 50), C=st.floats(0, 5), tau=st.floats(0, 1.99), dA=st.floats(0.01, 10))
def test_bound_monotone_in_A(A, C, tau, dA):
    H = solve_bound_fixed_point(A, C, tau)
    assert solve_bound_fixed_point(A + dA, C, tau) >= H
    assert H == pytest.approx(math.sqrt(A + C * H**tau) + C + 1.0, rel=1e-10)


def test_bound_domain_errors():
    with pytest.raises(DomainError):
        solve_bound_fixed_point(1, 1, 2.0)
    with pytest.raises(DomainError):
        solve_bound_fixed_point(-1, 1, 1.0)


# -- maximum principle ----------------------------------------------------------------------


def test_maximum_principle_reports_violation(short_run):  # [derived] synthetic excursion
    series = dict(short_run.series)
    series["min_s"] = series["min_s"].copy()
    series["min_s"][3] = fig1_params().salt_floor - 1.0
    fake = RunResult(short_run.snapshots, series, short_run.event, short_run.final)
    rep = check_maximum_principle(fake, fig1_params(), 1e-8)
    assert rep.lower_violation == pytest.approx(1.0) and not rep.ok
    series["min_s"] = np.full_like(series["min_s"], fig1_params().salt_floor)
    series["max_s"] = np.minimum(series["max_s"], fig1_params().sbar_sup)
    series["max_s"][5] = fig1_params().sbar_sup + 1.0
    rep = check_maximum_principle(fake, fig1_params(), 1e-8)
    assert rep.upper_violation == pytest.approx(1.0) and rep.lower_violation == 0.0


def test_maximum_principle_clean_run():
    params = ModelParams(3.5, 4.5, ConstantSbar(1.5))
    r = integrate(flat_start(81), params, StepController(), t_end=0.5)
    rep = check_maximum_principle(r, params, 1e-8)
    assert rep.ok and rep.sbar_sup == 1.5 and rep.salt_floor == 1.0
    assert not rep.pointwise_excess


def test_undershoot_shrinks_with_resolution():
    """Steep salt fronts undershoot the floor on coarse meshes only."""
    v = [check_maximum_principle(integrate(flat_start(n), fig1_params(), StepController(),
                                           t_end=0.01), fig1_params()).lower_violation
         for n in (201, 401)]
    assert v[1] < 0.5 * v[0]
