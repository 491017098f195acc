"""Banded solver, Newton iteration, step control and full runs."""

import numpy as np
import pytest
import scipy.integrate
from hypothesis import given
from hypothesis import strategies as st

from tearfilm import keller_box as kb
from tearfilm.integrator import (
    EventKind,
    SingularMatrixError,
    StepController,
    StepFailure,
    advance_step,
    damped_newton,
    integrate,
    newton_solve,
    relative_change,
    solve_banded,
)
from tearfilm.model import ConstantSbar, ModelParams, SolutionState, StepSbar
from tearfilm.verification import (
    constant_fixed_point_drift,
    manufactured_space_orders,
    manufactured_time_orders,
    oracle_equivalence,
)


class _Banded:
    def __init__(self, ab, lower, upper, residual):
        self.ab, self.lower, self.upper, self.residual = ab, lower, upper, residual


def _dense(ab, lower, upper):
    n = ab.shape[1]
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(max(0, i - lower), min(n, i + upper + 1)):
            A[i, j] = ab[upper + i - j, j]
    return A


# -- solve_banded ----------------------------------------------------------------


def test_solve_banded_identity():
    n = 12
    ab = np.zeros((17, n))
    ab[8] = 1.0
    r = np.arange(n, dtype=float)
    assert np.array_equal(solve_banded(_Banded(ab, 8, 8, r)), -r)


@given(seed=st.integers(0, 10_000), n=st.integers(10, 40))
def test_solve_banded_matches_dense(seed, n):
    rng = np.random.default_rng(seed)
    ab = rng.standard_normal((17, n))
    ab[8] += 20.0  # diagonally dominant
    r = rng.standard_normal(n)
    A = _dense(ab, 8, 8)
    expected = np.linalg.solve(A, -r)
    np.testing.assert_allclose(solve_banded(_Banded(ab, 8, 8, r)), expected, rtol=1e-9, atol=1e-12)


def test_solve_banded_singular_raises():
    with pytest.raises(SingularMatrixError):
        solve_banded(_Banded(np.zeros((17, 10)), 8, 8, np.ones(10)))


# -- Newton ------------------------------------------------------------------------


def test_damped_newton_affine_one_iteration():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])

    state = {"u": np.zeros(2)}

    def residual_tracking(u):
        state["u"] = u
        return A @ u - b, None

    u, iters = damped_newton(residual_tracking,
                             lambda _s: np.linalg.solve(A, -(A @ state["u"] - b)),
                             np.zeros(2), 1e-12, 5)
    assert iters == 1
    np.testing.assert_allclose(u, np.linalg.solve(A, b), rtol=1e-14)


def test_newton_constant_guess_needs_no_iterations():
    p = ModelParams(2, 3, ConstantSbar(1.5))
    box = kb.initialize_box_state(SolutionState.uniform(21, 2.0, 1.0, 1.5))
    new, iters = newton_solve(box, box, p, 1e-2, StepController())
    assert iters == 0 and np.array_equal(new.values, box.values)


def test_newton_superlinear_decay():
    """Residual norms on the step-capacity problem fall faster than linearly."""
    p = ModelParams(3.5, 4.5, StepSbar(2.0, 100.0, 0.5))
    box = kb.initialize_box_state(SolutionState.uniform(201, 2.0))
    dt = 1e-3
    old = box
    norms = []
    u = box.flat()
    for _ in range(5):
        sys_ = kb.assemble_system(old, box.with_flat(u), p, dt, theta=1.0)
        norms.append(np.max(np.abs(sys_.residual)))
        if norms[-1] < 1e-13:
            break
        u = u + solve_banded(sys_)
    ratios = np.array(norms[1:]) / np.array(norms[:-1])
    assert np.all(np.diff(ratios) < 0), norms
    assert norms[-1] < 1e-13


# -- step control ------------------------------------------------------------------


def test_controller_validation():
    with pytest.raises(ValueError):
        StepController(dt=2.0, dt_max=1.0)
    with pytest.raises(ValueError):
        StepController(theta=0.3)
    with pytest.raises(ValueError):
        StepController(growth=0.9)


def test_step_rejection_then_retry():
    p = ModelParams(0.5, 1.5, StepSbar(2.0, 100.0, 0.5))
    box = kb.initialize_box_state(SolutionState.uniform(81, 2.0))
    ctrl = StepController(dt=0.5, dt_max=0.5)
    new, dt, _ = advance_step(box, ctrl, p)
    assert dt < 0.5  # the large first step was cut back
    assert relative_change(box, new) <= ctrl.max_rel_change
    assert new.time == pytest.approx(dt)


def test_step_failure_below_dt_min():
    p = ModelParams(0.5, 1.5, StepSbar(2.0, 100.0, 0.5))
    box = kb.initialize_box_state(SolutionState.uniform(41, 2.0))
    ctrl = StepController(dt=0.5, dt_min=0.4, dt_max=0.5)
    with pytest.raises(StepFailure):
        advance_step(box, ctrl, p)


def test_dt_never_exceeds_dt_max():
    r = integrate(SolutionState.uniform(41, 2.0), ModelParams(3.5, 4.5, StepSbar(2.0, 100.0, 0.2)),
                  StepController(dt_max=0.05), t_end=2.0)
    assert np.max(r.series["dt"]) <= 0.05 * (1 + 1e-12)


def test_constant_fixed_point_exact():
    assert constant_fixed_point_drift(ModelParams(2, 3, ConstantSbar(1.7)), h0=0.8) == 0.0


# -- full runs ---------------------------------------------------------------------


def test_already_steady_start():
    r = integrate(SolutionState.uniform(21, 2.0), ModelParams(1, 2, ConstantSbar(1.0)), t_end=1.0)
    assert r.event.kind == EventKind.STEADY_STATE


def test_output_times_hit_exactly():
    r = integrate(SolutionState.uniform(41, 2.0), ModelParams(3.5, 4.5, StepSbar(2.0, 100.0, 0.5)),
                  t_end=0.02, output_times=(0.0, 0.005, 0.0123))
    assert [s.time for s in r.snapshots] == pytest.approx([0.0, 0.005, 0.0123], abs=1e-14)


def test_fluid_mass_balance():  # [derived] time-integrated dM/dt against M(t) - M(0)
    r = integrate(SolutionState.uniform(201, 2.0), ModelParams(3.5, 4.5, StepSbar(2.0, 100.0, 0.5)),
                  t_end=0.05)
    t, M, dM = r.series["t"], r.series["M"], r.series["dM_dt"]
    integrated = scipy.integrate.cumulative_trapezoid(dM, t)
    change = M[1:] - M[0]
    assert np.max(np.abs(integrated - change)) <= 0.02 * np.max(np.abs(change))


def test_fixed_mesh_salt_conservation_short():
    r = integrate(SolutionState.uniform(101, 2.0), ModelParams(3.5, 4.5, StepSbar(2.0, 100.0, 0.5)),
                  t_end=0.05)
    Q = r.series["Q"]
    # drift is set by the Newton tolerance, not by the discretisation
    assert np.max(np.abs(Q - Q[0])) / Q[0] < 10 * StepController().newton_tol


# -- convergence and oracle ---------------------------------------------------------


def test_manufactured_space_order():  # [derived] exact solution with forcing
    errs, orders = manufactured_space_orders()
    assert min(orders) >= 1.8, (errs, orders)


def test_manufactured_time_order():  # [derived] Crank-Nicolson is second order
    errs, orders = manufactured_time_orders()
    assert min(orders) >= 1.8, (errs, orders)


@pytest.mark.slow
def test_oracle_equivalence():  # [derived] independent explicit integrator
    assert oracle_equivalence() <= 1e-5
