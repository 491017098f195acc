"""Keller-box assembly: relations, symmetry, Jacobians, band structure."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tearfilm import keller_box as kb
from tearfilm.integrator import StepController, newton_solve
from tearfilm.model import ConstantSbar, ModelParams, SolutionState, StepSbar, compute_salt_mass
from tearfilm.verification import (
    jacobian_fd_error,
    reflect_residual,
    reflection_defect,
    smooth_random_state,
)

STEP = StepSbar(2.0, 100.0, 0.5)


def relation_residual(state):
    U, dx = state.values, np.diff(state.mesh)
    out = []
    for f, g in ((kb.H, kb.K), (kb.K, kb.P), (kb.P, kb.Q), (kb.S, kb.W)):
        out.append(U[1:, f] - U[:-1, f] - 0.5 * dx * (U[:-1, g] + U[1:, g]))
    return np.max(np.abs(out))


# -- initialisation -------------------------------------------------------------


def test_initialize_constant_has_zero_derivatives():
    box = kb.initialize_box_state(SolutionState.uniform(9, 2.0, h0=0.7, s0=3.0))
    assert np.all(box.values[:, 2:] == 0.0)


def test_initialize_satisfies_relations():
    rng = np.random.default_rng(1)
    x = np.sort(np.concatenate([[0, 2], rng.uniform(0, 2, 30)]))
    box = kb.initialize_box_state(SolutionState(x, 1 + 0.3 * np.sin(3 * x), 2 + np.cos(x)))
    assert relation_residual(box) < 1e-12


def test_initialize_too_coarse():
    with pytest.raises(kb.MeshTooCoarseError):
        kb.initialize_box_state(SolutionState.uniform(4, 2.0))


def test_initialize_quadratic_slope():  # [derived] k = 2x solves the relations exactly
    for n in (21, 41, 81):
        x = np.linspace(0, 2, n)
        box = kb.initialize_box_state(SolutionState(x, x**2, np.ones(n)))
        assert np.max(np.abs(box.k - 2 * x)) < 1e-11
        assert np.max(np.abs(box.p - 2)) < 1e-9


def test_initialize_cosine_converges_second_order():  # [derived] analytic derivatives
    errs = []
    for n in (41, 81, 161):
        x = np.linspace(0, 2, n)
        c, s = np.cos(math.pi * x / 2), np.sin(math.pi * x / 2)
        box = kb.initialize_box_state(SolutionState(x, 1 + 0.1 * c, np.ones(n)))
        a = math.pi / 2
        errs.append(max(np.max(np.abs(box.k + 0.1 * a * s)),
                        np.max(np.abs(box.p + 0.1 * a**2 * c)) / a,
                        np.max(np.abs(box.q - 0.1 * a**3 * s)) / a**2))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), (errs, orders)


def test_initialize_commutes_with_reflection():
    rng = np.random.default_rng(4)
    x = np.linspace(0, 2, 17)
    st_ = SolutionState(x, 1 + 0.2 * rng.random(17), 1 + rng.random(17))
    mirrored = SolutionState(x, st_.h[::-1], st_.s[::-1])
    a = kb.initialize_box_state(mirrored).values
    b = kb.reflect_state(kb.initialize_box_state(st_)).values
    np.testing.assert_allclose(a, b, atol=1e-12)


# -- reflection -----------------------------------------------------------------


def test_reflect_is_involution():
    U = smooth_random_state(9)
    V = kb.reflect_state(kb.reflect_state(U))
    assert np.array_equal(V.values, U.values) and np.array_equal(V.mesh, U.mesh)


def test_reflect_constant_fixed():
    U = kb.initialize_box_state(SolutionState.uniform(9, 2.0, 1.3, 2.0))
    assert np.array_equal(kb.reflect_state(U).values, U.values)


def test_reflect_linear_profile():
    x = np.linspace(0, 2, 9)
    U = kb.initialize_box_state(SolutionState(x, 1 + x, np.ones(9)))
    R = kb.reflect_state(U)
    np.testing.assert_allclose(R.h, 3 - x, atol=1e-15)
    np.testing.assert_allclose(R.k, -U.k[::-1], atol=0)


@pytest.mark.parametrize("m,n", [(0, 1), (0.5, 1.5), (2, 3), (3.5, 4.5)])
def test_reflection_equivariance_exact(m, n):
    assert reflection_defect(ModelParams(m, n, STEP)) == 0.0


@given(m=st.floats(0, 6), n=st.floats(0, 7), seed=st.integers(0, 10_000))
def test_reflection_equivariance_property(m, n, seed):
    assert reflection_defect(ModelParams(m, n, STEP), seed=seed) <= 1e-12


# -- residual and Jacobian --------------------------------------------------------


def test_constant_state_has_zero_residual():
    p = ModelParams(2, 3, ConstantSbar(1.7))
    U = kb.initialize_box_state(SolutionState.uniform(11, 2.0, 0.8, 1.7))
    assert np.all(kb.assemble_system(U, U, p, 0.3).residual == 0.0)
    assert np.all(kb.assemble_steady(U, p).residual == 0.0)


@pytest.mark.parametrize("kind", ["dynamic", "steady"])
@pytest.mark.parametrize("m,n,eps", [(0, 1, 0), (0.5, 1.5, 0), (3.5, 4.5, 0), (2, 3, 0.05)])
def test_jacobian_matches_finite_differences(kind, m, n, eps):  # [derived] FD oracle, N = 9
    p = ModelParams(m, n, STEP, epsilon=eps)
    assert jacobian_fd_error(kind, p, n_nodes=9) <= 1e-6


@given(m=st.floats(0, 6), n=st.floats(0, 7), eps=st.floats(0, 0.1), theta=st.floats(0.5, 1.0),
       seed=st.integers(0, 1000))
def test_jacobian_property(m, n, eps, theta, seed):
    p = ModelParams(m, n, STEP, epsilon=eps)
    assert jacobian_fd_error("dynamic", p, n_nodes=7, seed=seed, theta=theta) <= 1e-6


def test_band_structure():
    U, V = smooth_random_state(9), smooth_random_state(9, seed=5)
    J = kb.assemble_system(V, U, ModelParams(1, 2, STEP), 0.1).to_dense()
    i, j = np.nonzero(J)
    assert np.max(np.abs(i - j)) <= kb.BANDWIDTH
    # no coupling between unknowns of nodes more than one apart
    cell_of_row = np.clip((i - 3) // kb.NVAR, 0, 7)
    node_of_col = j // kb.NVAR
    assert np.all((node_of_col - cell_of_row >= -1) & (node_of_col - cell_of_row <= 2))


def test_nonpositive_thickness_rejected():
    U = smooth_random_state(9)
    vals = U.values.copy()
    vals[4, kb.H] = 0.0
    with pytest.raises(kb.EvaluationError):
        kb.assemble_system(U, kb.BoxState(U.mesh, vals), ModelParams(1, 2, STEP), 0.1)


def test_mesh_mismatch_rejected():
    U = smooth_random_state(9)
    V = kb.BoxState(U.mesh * 1.0001, U.values)
    with pytest.raises(ValueError):
        kb.assemble_system(U, V, ModelParams(1, 2, STEP), 0.1)


def test_zero_forcing_is_no_forcing():
    U, V = smooth_random_state(9), smooth_random_state(9, seed=2)
    p = ModelParams(1, 2, STEP)
    a = kb.assemble_system(V, U, p, 0.1).residual
    b = kb.assemble_system(V, U, p, 0.1, forcing=np.zeros((8, 2))).residual
    assert np.array_equal(a, b)


def test_reflect_residual_is_involution():
    R = np.random.default_rng(0).standard_normal(6 * 9)
    assert np.array_equal(reflect_residual(reflect_residual(R, 9), 9), R)


def test_one_step_conserves_salt():
    """Trapezoidal salt mass moves by at most ``10 * tol * N`` in one converged step."""
    x = np.linspace(0, 2, 41)
    ctrl = StepController(dt=1e-3)
    p = ModelParams(1.5, 2.5, STEP)
    old = kb.initialize_box_state(SolutionState(x, 1 + 0.1 * np.cos(np.pi * x), np.ones(41)))
    new, _ = newton_solve(old, old, p, 1e-3, ctrl, theta=1.0)
    dQ = abs(compute_salt_mass(new.to_solution()) - compute_salt_mass(old.to_solution()))
    assert dQ <= 10 * ctrl.newton_tol * x.size
