"""Adaptive implicit time stepping with damped Newton and event detection."""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import keller_box as kb
from .model import (
    SolutionState,
    compute_fluid_mass,
    compute_salt_mass,
    sbar_node_average,
)
from .moving_mesh import FIXED_MESH, equidistribute, needs_rezone, policy_monitor, remesh

log = logging.getLogger(__name__)

SERIES_COLUMNS = (
    "t", "dt", "Q", "M", "dM_dt", "h_min", "x_argmin",
    "max_abs_sx", "min_s", "max_s", "newton_iters",
)


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class ConvergenceError(RuntimeError):
    pass


class StepFailure(RuntimeError):
    """The step size fell below ``dt_min`` without a converged Newton solve."""


@dataclass
class StepController:
    dt: float = 1e-6
    dt_min: float = 1e-14
    dt_max: float = 1.0
    growth: float = 1.2
    shrink: float = 0.5
    newton_tol: float = 1e-10
    max_newton_iters: int = 12
    theta: float = 0.5
    fast_iters: int = 4  # grow dt after a solve taking at most this many iterations
    max_rel_change: float = 0.05  # largest accepted per-step relative change of h and s

    def __post_init__(self):
        if not 0 < self.dt_min <= self.dt <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt <= dt_max")
        if not 0 < self.shrink < 1 < self.growth:
            raise ValueError("need 0 < shrink < 1 < growth")
        if not 0.5 <= self.theta <= 1:
            raise ValueError("theta must lie in [1/2, 1]")


class EventKind(str, enum.Enum):
    RUPTURE = "Rupture"
    STEADY_STATE = "SteadyState"
    HORIZON_REACHED = "HorizonReached"
    THINNING_ONGOING = "ThinningOngoing"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    t_stop: float
    x_c: float | None = None
    detail: str = ""


@dataclass
class RunResult:
    snapshots: list
    series: dict
    event: Event
    final: kb.BoxState
    bound_violations: list = field(default_factory=list)
    remesh_log: list = field(default_factory=list)
    max_sbar_excess: float = float("-inf")  # largest pointwise s - Sbar seen at any step

    def column(self, name):
        return self.series[name]


# ---------------------------------------------------------------------------
# linear algebra and Newton
# ---------------------------------------------------------------------------


def solve_banded(system):
    """Return ``delta`` with ``J delta = -R`` (banded LU, partial pivoting)."""
    try:
        delta = scipy.linalg.solve_banded(
            (system.lower, system.upper), system.ab, -system.residual, check_finite=True
        )
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    if not np.all(np.isfinite(delta)):
        raise SingularMatrixError("non-finite solution of the banded system")
    return delta


def damped_newton(residual_fn, solve_fn, u0, tol, max_iters, admissible=None, floor=2.0**-20):
    """Generic damped Newton on ``residual_fn(u) -> (R, system)``.

    The step is halved while the trial iterate is inadmissible, fails to
    evaluate, or increases the residual 2-norm.  Returns ``(u, iterations)``.
    """
    u = u0
    R, system = residual_fn(u)
    for it in range(max_iters + 1):
        if np.max(np.abs(R)) <= tol:
            return u, it
        if it == max_iters:
            break
        delta = solve_fn(system)
        norm = np.linalg.norm(R)
        lam = 1.0
        while True:
            trial = u + lam * delta
            if admissible is None or admissible(trial):
                try:
                    R_t, sys_t = residual_fn(trial)
                except (kb.EvaluationError, FloatingPointError):
                    R_t = None
                if R_t is not None and np.all(np.isfinite(R_t)) and np.linalg.norm(R_t) < norm:
                    break
            lam *= 0.5
            if lam < floor:
                raise ConvergenceError(f"damping floor reached at iteration {it}")
        u, R, system = trial, R_t, sys_t
    raise ConvergenceError(
        f"no convergence in {max_iters} iterations (|R| = {np.max(np.abs(R)):.3e})"
    )


def newton_solve(old, guess, params, dt, controller, theta=None, sbar_node=None, forcing=None):
    """Damped Newton for one implicit step; returns ``(state, iterations)``."""
    theta = controller.theta if theta is None else theta
    if sbar_node is None:
        sbar_node = sbar_node_average(params.sbar, old.mesh, params.domain_length)

    def residual_fn(u):
        system = kb.assemble_system(old, guess.with_flat(u), params, dt, theta, sbar_node, forcing)
        return system.residual, system

    def admissible(u):
        return bool(np.all(u[kb.H :: kb.NVAR] > 0))

    u, iters = damped_newton(
        residual_fn, solve_banded, guess.flat(), controller.newton_tol,
        controller.max_newton_iters, admissible,
    )
    return guess.with_flat(u, time=old.time + dt), iters


def advance_step(state, controller, params, theta=None, dt_cap=None, sbar_node=None):
    """Take one accepted step, shrinking ``dt`` on Newton failure.

    Returns ``(new_state, dt_used, newton_iterations)`` and leaves the
    proposed next step size in ``controller.dt``.
    """
    while True:
        dt = controller.dt if dt_cap is None else min(controller.dt, dt_cap)
        try:
            new, iters = newton_solve(state, state, params, dt, controller, theta, sbar_node)
        except (ConvergenceError, SingularMatrixError, kb.EvaluationError) as exc:
            _shrink(controller, dt, controller.shrink, state.time, exc)
            continue
        change = relative_change(state, new)
        if change > controller.max_rel_change:
            factor = max(controller.shrink, 0.9 * controller.max_rel_change / change)
            _shrink(controller, dt, factor, state.time, f"relative change {change:.3g}")
            continue
        uncapped = dt_cap is None or dt >= controller.dt
        if uncapped and iters <= controller.fast_iters and change < 0.5 * controller.max_rel_change:
            controller.dt = min(controller.dt * controller.growth, controller.dt_max)
        return new, dt, iters


def relative_change(old, new):
    dh = np.abs(new.h - old.h) / old.h
    ds = np.abs(new.s - old.s) / np.maximum(np.abs(old.s), 1e-300)
    return float(max(dh.max(), ds.max()))


def _shrink(controller, dt, factor, t, reason):
    controller.dt = dt * factor
    log.debug("step rejected at t=%.6g dt=%.3e: %s", t, dt, reason)
    if controller.dt < controller.dt_min:
        raise StepFailure(f"dt fell below dt_min at t = {t:.10g}")


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------


def diagnostics(state, params):
    sol = state.to_solution() if isinstance(state, kb.BoxState) else state
    x, h, s = sol.mesh, sol.h, sol.s
    i = int(np.argmin(h))
    M, dM = compute_fluid_mass(sol, params)
    sx = np.abs(np.diff(s) / np.diff(x))
    return {
        "Q": compute_salt_mass(sol), "M": M, "dM_dt": dM,
        "h_min": float(h[i]), "x_argmin": float(x[i]),
        "max_abs_sx": float(sx.max()), "min_s": float(s.min()), "max_s": float(s.max()),
    }


def _check_hypotheses(initial, params):
    sup = params.sbar_sup
    if np.min(initial.h) < params.height_floor:
        warnings.warn("initial h falls below params.height_floor", stacklevel=3)
    if np.min(initial.s) < params.salt_floor or np.max(initial.s) > sup:
        warnings.warn("initial s outside [salt_floor, sup Sbar]", stacklevel=3)


def _thinning_tail(t, h_min, jitter=0.05):
    """Sustained algebraic decrease over the second half of the run.

    Rises of up to ``jitter`` (relative) above the running minimum are
    tolerated; they come from the minimum hopping between nodes.
    """
    t = np.asarray(t)
    h_min = np.asarray(h_min)
    tail = t >= 0.5 * t[-1]
    if tail.sum() < 5 or t[-1] <= 0:
        return False
    tt, hh = t[tail], h_min[tail]
    if np.any(hh[1:] > (1.0 + jitter) * np.minimum.accumulate(hh)[:-1]) or hh[-1] >= hh[0]:
        return False
    slope = np.log(hh[-1] / hh[0]) / np.log(tt[-1] / tt[0])
    return bool(slope < -0.02)


def integrate(
    initial,
    params,
    controller=None,
    mesh_policy=FIXED_MESH,
    t_end=1.0,
    output_times=(),
    rupture_floor=None,
    steady_tol=1e-9,
    max_steps=2_000_000,
    bound_tol=None,
):
    """Integrate from ``initial`` until a singularity, steady state or ``t_end``."""
    controller = StepController() if controller is None else controller
    _check_hypotheses(initial, params)
    if rupture_floor is None:
        rupture_floor = 1e-5 * float(np.min(initial.h))
    if bound_tol is None:
        bound_tol = 10.0 * controller.newton_tol
    sup = params.sbar_sup
    outputs = sorted(float(t) for t in output_times if initial.time <= t <= t_end)

    state = kb.initialize_box_state(initial)
    sbar_node = sbar_node_average(params.sbar, state.mesh, params.domain_length)
    rows = []
    snapshots = []
    violations = []
    remesh_log = []

    excess = [float("-inf")]

    def record(st, dt, iters):
        d = diagnostics(st, params)
        sb = params.sbar.values(st.mesh, params.domain_length)
        excess[0] = max(excess[0], float(np.max(st.s - sb)))
        rows.append((st.time, dt, d["Q"], d["M"], d["dM_dt"], d["h_min"], d["x_argmin"],
                     d["max_abs_sx"], d["min_s"], d["max_s"], iters))
        if d["min_s"] < params.salt_floor - bound_tol:
            violations.append(("lower", st.time, params.salt_floor - d["min_s"]))
        if d["max_s"] > sup + bound_tol:
            violations.append(("upper", st.time, d["max_s"] - sup))
        return d

    def snapshot_due(st):
        while outputs and outputs[0] <= st.time + 1e-12 * max(1.0, st.time):
            outputs.pop(0)
            snapshots.append(st.to_solution())

    record(state, 0.0, 0)
    snapshot_due(state)
    fresh = True  # first step after (re)initialisation uses backward Euler
    steps_since_rezone = 0
    quiet_steps = 0
    event = None

    for _ in range(max_steps):
        if state.time >= t_end * (1 - 1e-14):
            break
        cap = t_end - state.time
        if outputs:
            cap = min(cap, outputs[0] - state.time)
        try:
            new, dt, iters = advance_step(
                state, controller, params, theta=1.0 if fresh else None, dt_cap=cap,
                sbar_node=sbar_node,
            )
        except StepFailure as exc:
            d = diagnostics(state, params)
            event = Event(EventKind.RUPTURE, state.time, d["x_argmin"], f"step collapse: {exc}")
            break
        fresh = False
        rate = np.max(np.abs(new.values[:, :2] - state.values[:, :2])) / dt
        state = new
        d = record(state, dt, iters)
        snapshot_due(state)
        if d["h_min"] < rupture_floor:
            event = Event(EventKind.RUPTURE, state.time, d["x_argmin"], "h_min below rupture floor")
            break
        quiet_steps = quiet_steps + 1 if rate < steady_tol else 0
        if quiet_steps >= 3:
            event = Event(EventKind.STEADY_STATE, state.time)
            break

        steps_since_rezone += 1
        sol = state.to_solution()
        if needs_rezone(sol, mesh_policy, steps_since_rezone):
            steps_since_rezone = 0
            n_new = mesh_policy.n_nodes or sol.mesh.size
            new_mesh = equidistribute(sol.mesh, policy_monitor(sol, mesh_policy), n_new)
            if n_new != sol.mesh.size or np.max(np.abs(new_mesh - sol.mesh)) > 1e-3 * np.min(
                np.diff(sol.mesh)
            ):
                moved = remesh(sol, new_mesh)
                q_before, q_after = compute_salt_mass(sol), compute_salt_mass(moved)
                remesh_log.append((state.time, q_after - q_before))
                state = kb.initialize_box_state(moved)
                sbar_node = sbar_node_average(params.sbar, state.mesh, params.domain_length)
                fresh = True
    if event is None:
        t_stop = state.time
        if t_stop >= t_end * (1 - 1e-14):
            series_t = np.array([r[0] for r in rows])
            series_h = np.array([r[5] for r in rows])
            kind = (EventKind.THINNING_ONGOING if _thinning_tail(series_t, series_h)
                    else EventKind.HORIZON_REACHED)
            event = Event(kind, t_stop)
        else:
            event = Event(EventKind.HORIZON_REACHED, t_stop, detail="step limit reached")

    series = {name: np.array([r[i] for r in rows]) for i, name in enumerate(SERIES_COLUMNS)}
    series["newton_iters"] = series["newton_iters"].astype(int)
    return RunResult(snapshots, series, event, state, violations, remesh_log, excess[0])
