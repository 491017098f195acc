"""Reference configurations and the reproduction runs built on them.

Every function returns plain results; printing and file output live in
``scripts/`` and the CLI.
"""

from __future__ import annotations

import concurrent.futures
import os
from dataclasses import dataclass

import numpy as np

from .analysis import (
    InsufficientDataError,
    check_maximum_principle,
    classify_regime,
    fit_thinning_rate,
)
from .config import HorizonRule
from .equilibrium import (
    ContinuationSettings,
    EquilibriumProblem,
    continue_branch,
    find_critical_parameter,
    solve_equilibrium,
)
from .integrator import EventKind, StepController, integrate
from .model import ModelParams, SolutionState, StepSbar, fig2_sbar
from .moving_mesh import FIXED_MESH, MeshPolicy

LENGTH = 2.0
Q0 = 2.0  # salt mass of h0 = s0 = 1 on [0, 2]
SWEEP_M = tuple(0.5 * i for i in range(13))
SWEEP_HORIZON = HorizonRule(t_max=2000.0, h_target=1e-5, eta=100.0)


def step_params(m, xi, n=None):
    """Step capacity 2 / 100 of half-width ``xi`` about the centre."""
    return ModelParams(m, m + 1.0 if n is None else n, StepSbar(2.0, 100.0, xi))


def fig1_params():
    return step_params(3.5, 0.5)


def fig2_params():
    return ModelParams(0.0, 3.0, fig2_sbar())


def fig3_params():
    return step_params(0.5, 0.5)


def flat_start(n_nodes):
    return SolutionState.uniform(n_nodes, LENGTH)


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------


def salt_drift(result):
    q = np.asarray(result.series["Q"])
    return float(np.max(np.abs(q - q[0])) / abs(q[0]))


def conservation_run(n_nodes=801, adaptive=False, t_end=1.0):
    """Fig. 1 configuration to ``t_end``; returns ``(result, relative salt drift)``."""
    policy = MeshPolicy() if adaptive else FIXED_MESH
    r = integrate(flat_start(n_nodes), fig1_params(), StepController(), policy, t_end)
    return r, salt_drift(r)


def bound_run(params, n_nodes, t_end=1.0, rupture_floor=1e-8, tolerance=1e-8):
    r = integrate(flat_start(n_nodes), params, StepController(), FIXED_MESH, t_end,
                  rupture_floor=rupture_floor)
    return r, check_maximum_principle(r, params, tolerance)


def rupture_run(n_nodes, rupture_floor=1e-8, t_end=1.0):
    """Fig. 3 configuration on an adaptive mesh of ``n_nodes`` nodes."""
    return integrate(flat_start(n_nodes), fig3_params(), StepController(), MeshPolicy(), t_end,
                     rupture_floor=rupture_floor)


def steady_run(xi=0.2, m=3.5, n_nodes=401, t_end=5000.0):
    """Long backward-Euler run that should settle onto the equilibrium."""
    ctrl = StepController(dt_max=10.0, theta=1.0)
    return integrate(flat_start(n_nodes), step_params(m, xi), ctrl, FIXED_MESH, t_end,
                     rupture_floor=1e-8)


# ---------------------------------------------------------------------------
# regime sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    m: float
    xi: float
    t_end: float
    regime: str
    event: str
    t_stop: float
    h_min: float
    x_c: float | None
    exponent: float
    predicted: float
    relative_residual: float
    evidence: dict


def regime_run(xi, m, n_nodes=401, horizon=SWEEP_HORIZON, eta=100.0):
    """One sweep member: adaptive run, thinning fit, nearby equilibrium, label."""
    params = step_params(m, xi)
    t_end = horizon.t_end(m, eta)
    r = integrate(flat_start(n_nodes), params, StepController(dt_max=10.0), MeshPolicy(), t_end,
                  rupture_floor=1e-8)
    fit = eq = None
    if r.event.kind != EventKind.RUPTURE:
        if m > 1:
            try:
                fit = fit_thinning_rate(r.series["t"], r.series["h_min"], m, eta)
            except InsufficientDataError:
                fit = None
        final = r.final.to_solution()
        try:
            eq = solve_equilibrium(EquilibriumProblem(params, Q0, final.mesh), final)
        except Exception:  # no equilibrium near the final state
            eq = None
    label = classify_regime(r, params, eq, fit)
    nan = float("nan")
    return SweepRow(
        m=m, xi=xi, t_end=t_end, regime=label.value, event=r.event.kind.value,
        t_stop=r.event.t_stop, h_min=float(r.series["h_min"][-1]), x_c=r.event.x_c,
        exponent=fit.exponent if fit else nan, predicted=fit.predicted if fit else nan,
        relative_residual=fit.relative_residual if fit else nan, evidence=label.evidence,
    )


def regime_sweep(xi, ms=SWEEP_M, workers=None, n_nodes=401):
    workers = workers or os.cpu_count() or 1
    if workers == 1:
        return [regime_run(xi, m, n_nodes) for m in ms]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(regime_run, xi, m, n_nodes) for m in ms]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# equilibrium branches
# ---------------------------------------------------------------------------


def xi_branch(m=3.5, start=0.1, stop=0.45, n_nodes=401, settings=ContinuationSettings()):
    problem = EquilibriumProblem.uniform(step_params(m, start), Q0, n_nodes)
    return continue_branch(problem, "xi", start, stop, settings=settings)


def m_branch(xi=0.3, start=3.5, stop=2.5, n_nodes=401, lead_in_from=0.1):
    """Branch in ``m`` (with ``n = m + 1``) at fixed ``xi``.

    The starting equilibrium comes from a branch in ``xi`` begun at
    ``lead_in_from``, where the cold Newton solve converges.
    """
    lead = xi_branch(start, lead_in_from, xi, n_nodes)
    if lead.termination != "range_end":
        raise RuntimeError(f"lead-in branch stopped early: {lead.termination}")
    seed = lead.points[-1].solution.to_solution()
    problem = EquilibriumProblem.uniform(step_params(start, xi), Q0, n_nodes)
    return continue_branch(problem, "m", start, stop, initial=seed)


def critical_values(branch):
    return find_critical_parameter(branch)


def equilibrium_on(mesh, xi=0.2, m=3.5):
    """Equilibrium on a given mesh, reached by a branch in ``xi`` from 0.1."""
    problem = EquilibriumProblem(step_params(m, 0.1), Q0, mesh)
    branch = continue_branch(problem, "xi", 0.1, xi)
    if branch.termination != "range_end":
        raise RuntimeError(f"branch stopped early: {branch.termination}")
    return branch.points[-1].solution
