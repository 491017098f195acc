"""Stationary solutions with prescribed salt mass, and branch continuation.

The steady Keller-box rows are rank deficient by one: summing the salt rows
weighted by the cell widths telescopes to the boundary salt fluxes, which
vanish.  The system is closed by a bordering multiplier ``mu`` entering every
salt row as ``mu * (h_a + h_b) / 2`` together with the integral row
``trapz(h s) - Q0``.  Summing the salt rows then gives ``mu * trapz(h) = 0``,
so ``mu`` vanishes at every solution and serves as a consistency check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import keller_box as kb
from .integrator import ConvergenceError, SingularMatrixError, damped_newton
from .model import ConstantSbar, ModelParams, SolutionState, StepSbar, sbar_node_average

log = logging.getLogger(__name__)

STEADY_TOL = 1e-10


@dataclass(frozen=True)
class EquilibriumProblem:
    params: ModelParams
    Q0: float
    mesh: np.ndarray

    def __post_init__(self):
        if not self.Q0 > 0:
            raise ValueError(f"Q0 must be > 0, got {self.Q0}")
        mesh = np.asarray(self.mesh, dtype=float)
        if mesh.ndim != 1 or mesh.size < 5 or np.any(np.diff(mesh) <= 0):
            raise ValueError("mesh must be strictly increasing with at least 5 nodes")
        if mesh[0] != 0.0 or not np.isclose(mesh[-1], self.params.domain_length, rtol=1e-14):
            raise ValueError("mesh must span [0, params.domain_length]")
        object.__setattr__(self, "mesh", mesh)

    @classmethod
    def uniform(cls, params, Q0, n_nodes):
        return cls(params, Q0, np.linspace(0.0, params.domain_length, n_nodes))


@dataclass
class BorderedSystem:
    residual: np.ndarray
    jacobian: sp.csc_matrix


@dataclass(frozen=True)
class Equilibrium:
    state: kb.BoxState
    mu: float
    iterations: int
    residual: float

    @property
    def h(self):
        return self.state.h

    @property
    def s(self):
        return self.state.s

    def to_solution(self):
        return self.state.to_solution()


def _band_triplets(system):
    """(row, col, value) of the nonzero band entries."""
    n = system.size
    r, c = np.nonzero(system.ab)
    rows = c + r - system.upper
    keep = (rows >= 0) & (rows < n)
    return rows[keep], c[keep], system.ab[r[keep], c[keep]]


def _trap_weights(x):
    dx = np.diff(x)
    wt = np.zeros(x.size)
    wt[:-1] += 0.5 * dx
    wt[1:] += 0.5 * dx
    return wt


def assemble_steady_system(problem, state, mu=0.0, sbar_node=None):
    """Bordered steady residual ``(6N + 1,)`` and its sparse Jacobian.

    ``state`` is a :class:`BoxState` on ``problem.mesh``.
    """
    params, x = problem.params, problem.mesh
    if sbar_node is None:
        sbar_node = sbar_node_average(params.sbar, x, params.domain_length)
    base = kb.assemble_steady(state, params, sbar_node)
    N = x.size
    n = kb.NVAR * N
    h, s = state.h, state.s
    R = np.empty(n + 1)
    R[:n] = base.residual
    salt_rows = kb.cell_row_index(np.arange(N - 1), 5)
    h_mid = 0.5 * (h[:-1] + h[1:])
    R[salt_rows] += mu * h_mid
    wt = _trap_weights(x)
    R[n] = float(np.dot(wt, h * s)) - problem.Q0

    rows, cols, vals = _band_triplets(base)
    h_cols = kb.NVAR * np.arange(N) + kb.H
    s_cols = kb.NVAR * np.arange(N) + kb.S
    rows = [rows, salt_rows, salt_rows, salt_rows, np.full(N, n), np.full(N, n)]
    cols = [cols, h_cols[:-1], h_cols[1:], np.full(N - 1, n), h_cols, s_cols]
    vals = [vals, np.full(N - 1, 0.5 * mu), np.full(N - 1, 0.5 * mu), h_mid, wt * s, wt * h]
    jac = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n + 1, n + 1)
    )
    return BorderedSystem(R, jac)


def _sparse_solve(system):
    try:
        lu = spla.splu(system.jacobian)
        delta = lu.solve(-system.residual)
    except RuntimeError as exc:  # splu reports exact singularity this way
        raise SingularMatrixError(str(exc)) from exc
    if not np.all(np.isfinite(delta)):
        raise SingularMatrixError("non-finite solution of the bordered system")
    return delta


def _admissible(z):
    return bool(np.all(z[kb.H : -1 : kb.NVAR] > 0))


def _as_box(problem, guess):
    if isinstance(guess, Equilibrium):
        guess = guess.state
    if isinstance(guess, kb.BoxState):
        if guess.mesh.size != problem.mesh.size or np.any(guess.mesh != problem.mesh):
            guess = guess.to_solution()
        else:
            return guess
    if isinstance(guess, SolutionState):
        if guess.mesh.size != problem.mesh.size or np.any(guess.mesh != problem.mesh):
            h = np.interp(problem.mesh, guess.mesh, guess.h)
            s = np.interp(problem.mesh, guess.mesh, guess.s)
            guess = SolutionState(problem.mesh, h, s)
        return kb.initialize_box_state(guess)
    raise TypeError(f"cannot use {type(guess).__name__} as an equilibrium guess")


def equilibrium_seed(problem):
    """Constant state with the mean capacity and the prescribed salt mass."""
    p = problem.params
    L = p.domain_length
    sigma = float(p.sbar.antiderivative(np.array([L]), L)[0] - p.sbar.antiderivative(np.array([0.0]), L)[0]) / L
    sol = SolutionState(problem.mesh, np.full(problem.mesh.size, problem.Q0 / (sigma * L)),
                        np.full(problem.mesh.size, sigma))
    return kb.initialize_box_state(sol)


def solve_equilibrium(problem, guess=None, tol=STEADY_TOL, max_iters=60, mu0=0.0, sbar_node=None):
    """Damped Newton on the bordered steady system.

    ``guess`` may be a :class:`SolutionState`, :class:`BoxState` or a previous
    :class:`Equilibrium`; without one, :func:`homotopy_solve` starts from the
    constant seed.  Raises :class:`ConvergenceError` when Newton fails.
    """
    if guess is None:
        return homotopy_solve(problem, tol=tol, max_iters=max_iters)
    box = _as_box(problem, guess)
    if sbar_node is None:
        sbar_node = sbar_node_average(problem.params.sbar, problem.mesh, problem.params.domain_length)

    def residual_fn(z):
        st = box.with_flat(z[:-1])
        system = assemble_steady_system(problem, st, z[-1], sbar_node)
        return system.residual, system

    z0 = np.concatenate([box.flat(), [mu0]])
    z, iters = damped_newton(residual_fn, _sparse_solve, z0, tol, max_iters, _admissible)
    R, _ = residual_fn(z)
    return Equilibrium(box.with_flat(z[:-1]), float(z[-1]), iters, float(np.max(np.abs(R))))


def homotopy_solve(problem, tol=STEADY_TOL, max_iters=60, min_step=1e-4):
    """Reach the target capacity from the constant seed by blending.

    The nodal capacity ``(1 - tau) * mean + tau * Sbar`` is stepped from
    ``tau = 0``, where the seed is exact, to ``tau = 1`` with warm starts;
    the step halves on failure and grows on success.
    """
    p = problem.params
    target = sbar_node_average(p.sbar, problem.mesh, p.domain_length)
    seed = equilibrium_seed(problem)
    sigma = float(seed.s[0])
    current = Equilibrium(seed, 0.0, 0, 0.0)
    tau, step = 0.0, 0.25
    while tau < 1.0:
        trial = min(1.0, tau + step)
        blend = (1.0 - trial) * sigma + trial * target
        try:
            current = solve_equilibrium(problem, current, tol, max_iters, current.mu, blend)
        except (ConvergenceError, SingularMatrixError, kb.EvaluationError):
            step *= 0.5
            if step < min_step:
                raise ConvergenceError(f"homotopy stalled at tau = {tau:.6g}") from None
            continue
        tau = trial
        step = min(2.0 * step, 0.5)
    return current


# ---------------------------------------------------------------------------
# continuation
# ---------------------------------------------------------------------------


def set_parameter(params, name, value, couple_n=True):
    """Copy of ``params`` with the continuation parameter replaced.

    ``xi`` changes the step half-width, ``sigma`` a constant capacity, and
    ``m`` the source exponent (also moving ``n = m + 1`` when ``couple_n``).
    """
    if name == "xi":
        if not isinstance(params.sbar, StepSbar):
            raise ValueError("continuation in xi needs a step capacity profile")
        return replace(params, sbar=replace(params.sbar, xi=value))
    if name == "sigma":
        if not isinstance(params.sbar, ConstantSbar):
            raise ValueError("continuation in sigma needs a constant capacity profile")
        return replace(params, sbar=ConstantSbar(value))
    if name == "m":
        return replace(params, m=value, n=value + 1.0 if couple_n else params.n)
    if name == "n":
        return replace(params, n=value)
    raise ValueError(f"unknown continuation parameter {name!r}")


def get_parameter(params, name):
    """Current value of a continuation parameter (inverse of :func:`set_parameter`)."""
    if name == "xi":
        return params.sbar.xi
    if name == "sigma":
        return params.sbar.value
    if name in ("m", "n"):
        return getattr(params, name)
    raise ValueError(f"unknown continuation parameter {name!r}")


@dataclass
class BranchPoint:
    parameter: float
    min_h: float
    argmin_x: float
    max_s: float
    solution: Equilibrium


@dataclass
class EquilibriumBranch:
    parameter_name: str
    points: list = field(default_factory=list)
    arclength_steps: list = field(default_factory=list)
    termination: str = ""

    @property
    def parameters(self):
        return np.array([p.parameter for p in self.points])

    @property
    def min_h(self):
        return np.array([p.min_h for p in self.points])

    @property
    def max_s(self):
        return np.array([p.max_s for p in self.points])

    @property
    def argmin_x(self):
        return np.array([p.argmin_x for p in self.points])

    def rows(self):
        return [(p.parameter, p.min_h, p.argmin_x, p.max_s) for p in self.points]


def _branch_point(value, eq):
    h = eq.state.h
    i = int(np.argmin(h))
    return BranchPoint(float(value), float(h[i]), float(eq.state.mesh[i]), float(np.max(eq.state.s)), eq)


@dataclass(frozen=True)
class ContinuationSettings:
    ds: float = 0.02
    ds_min: float = 1e-6
    ds_max: float = 0.2
    grow: float = 1.5
    fast_iters: int = 4
    max_iters: int = 12
    max_points: int = 2000
    h_fold_floor: float = 1e-3
    fd_step: float = 1e-7
    couple_n: bool = True


def continue_branch(problem, parameter, start, stop, initial=None, settings=ContinuationSettings()):
    """Trace equilibria from ``parameter = start`` toward ``stop``.

    Pseudo-arclength predictor-corrector in the scaled norm
    ``|dz|^2 / dim + dlambda^2``; the step halves on corrector failure and
    grows after quick convergence.  Stops at ``stop``, when ``min h`` drops
    below ``settings.h_fold_floor``, or when the corrector fails at
    ``settings.ds_min``.
    """
    direction = 1.0 if stop >= start else -1.0

    def prob_at(lam):
        return replace(problem, params=set_parameter(problem.params, parameter, lam, settings.couple_n))

    first = solve_equilibrium(prob_at(start), initial)
    branch = EquilibriumBranch(parameter)
    branch.points.append(_branch_point(start, first))

    dim = first.state.values.size + 1
    wz = 1.0 / dim  # weight of solution components in the arclength norm

    def F(z, lam):
        p = prob_at(lam)
        sb = sbar_node_average(p.params.sbar, p.mesh, p.params.domain_length)
        return assemble_steady_system(p, first.state.with_flat(z[:-1]), z[-1], sb)

    def dF_dlam(z, lam):
        d = settings.fd_step * max(1.0, abs(lam))
        return (F(z, lam + d).residual - F(z, lam - d).residual) / (2.0 * d)

    def tangent(z, lam, prev=None):
        sysm = F(z, lam)
        Fl = dF_dlam(z, lam)
        if prev is None:
            dz = _sparse_solve(BorderedSystem(Fl, sysm.jacobian))  # J dz = -F_lambda
            t = np.concatenate([dz, [1.0]]) * direction
        else:
            A = sp.bmat([[sysm.jacobian, sp.csc_matrix(Fl[:, None])],
                         [sp.csr_matrix(prev[None, :-1] * wz), sp.csr_matrix([[prev[-1]]])]],
                        format="csc")
            rhs = np.zeros(dim + 1)
            rhs[-1] = 1.0
            t = spla.splu(A).solve(rhs)
        return t / np.sqrt(wz * np.dot(t[:-1], t[:-1]) + t[-1] ** 2)

    z = np.concatenate([first.state.flat(), [first.mu]])
    lam = float(start)
    tau = tangent(z, lam)
    ds = settings.ds
    branch.termination = "max_points"
    while len(branch.points) < settings.max_points:
        # do not overshoot the end of the range by more than a fraction
        if tau[-1] * direction > 0:
            ds = min(ds, max(abs(stop - lam) / abs(tau[-1]), settings.ds_min))
        z_pred, lam_pred = z + ds * tau[:-1], lam + ds * tau[-1]

        def residual_fn(v, z_pred=z_pred, lam_pred=lam_pred):
            zz, ll = v[:-1], v[-1]
            sysm = F(zz, ll)
            arc = wz * np.dot(tau[:-1], zz - z_pred) + tau[-1] * (ll - lam_pred)
            A = sp.bmat([[sysm.jacobian, sp.csc_matrix(dF_dlam(zz, ll)[:, None])],
                         [sp.csr_matrix(wz * tau[None, :-1]), sp.csr_matrix([[tau[-1]]])]],
                        format="csc")
            R = np.concatenate([sysm.residual, [arc]])
            return R, BorderedSystem(R, A)

        try:
            v, iters = _corrector(residual_fn, np.concatenate([z_pred, [lam_pred]]), settings)
        except (ConvergenceError, SingularMatrixError, kb.EvaluationError) as exc:
            ds *= 0.5
            log.debug("corrector failed (%s); ds -> %.3g", exc, ds)
            if ds < settings.ds_min:
                branch.termination = "corrector_failure"
                break
            continue
        z_new, lam_new = v[:-1], float(v[-1])
        if (stop - lam_new) * direction <= 1e-9 * max(1.0, abs(stop)):
            # land exactly on the end of the range
            try:
                eq = solve_equilibrium(prob_at(stop), first.state.with_flat(z_new[:-1]),
                                       max_iters=settings.max_iters, mu0=z_new[-1])
            except (ConvergenceError, SingularMatrixError, kb.EvaluationError):
                ds *= 0.5
                if ds < settings.ds_min:
                    branch.termination = "corrector_failure"
                    break
                continue
            branch.points.append(_branch_point(stop, eq))
            branch.arclength_steps.append(ds)
            branch.termination = "range_end"
            break
        tau = tangent(z_new, lam_new, tau)
        z, lam = z_new, lam_new
        eq = Equilibrium(first.state.with_flat(z[:-1]), float(z[-1]), iters,
                         float(np.max(np.abs(F(z, lam).residual))))
        branch.points.append(_branch_point(lam, eq))
        branch.arclength_steps.append(ds)
        if branch.points[-1].min_h < settings.h_fold_floor:
            branch.termination = "h_fold_floor"
            break
        if iters <= settings.fast_iters:
            ds = min(ds * settings.grow, settings.ds_max)
    return branch


def _corrector(residual_fn, v0, settings):
    def admissible(v):
        return bool(np.all(v[kb.H : -2 : kb.NVAR] > 0))

    return damped_newton(residual_fn, _sparse_solve, v0, STEADY_TOL, settings.max_iters, admissible)


# ---------------------------------------------------------------------------
# critical parameter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriticalEstimate:
    found: bool
    value: float = float("nan")
    uncertainty: float = float("nan")
    exponent: float = float("nan")
    pattern: str = "none"  # "touchdown", "fold" or "none"
    residual: float = float("nan")


def _power_law_fit(lam, y, direction):
    """Fit ``y = A * (direction * (lam_c - lam))**beta``; returns (lam_c, beta, rms)."""
    lam = np.asarray(lam, dtype=float)
    logy = np.log(y)
    far = lam[-1] + direction * 1e-12

    def rms(lam_c):
        d = direction * (lam_c - lam)
        X = np.column_stack([np.ones_like(d), np.log(d)])
        coef, *_ = np.linalg.lstsq(X, logy, rcond=None)
        r = logy - X @ coef
        return float(np.sqrt(np.mean(r * r))), coef

    span = abs(lam[-1] - lam[0])
    lo, hi = sorted((far, lam[-1] + direction * 10.0 * max(span, 1e-6)))
    best = scipy.optimize.minimize_scalar(lambda c: rms(c)[0], bounds=(lo, hi), method="bounded",
                                          options={"xatol": 1e-12})
    err, coef = rms(best.x)
    return float(best.x), float(coef[1]), err


def find_critical_parameter(branch, threshold=0.0, n_fit=8):
    """Extrapolate ``min h_eq`` along the branch to ``threshold``.

    A fold (the parameter turning back) is reported at its extreme value;
    otherwise a power law ``min_h - threshold ~ (lam_c - lam)^beta`` is fitted
    to the last ``n_fit`` points.  The uncertainty is the spread of ``lam_c``
    over fits with ``n_fit - 2 .. n_fit + 2`` points.
    """
    lam = branch.parameters
    y = branch.min_h - threshold
    if lam.size < 5 or np.any(y <= 0) and not np.all(y[:-1] > 0):
        return CriticalEstimate(False)
    steps = np.diff(lam)
    direction = np.sign(steps[0]) if steps.size else 1.0
    turned = np.nonzero(np.sign(steps) != direction)[0]
    if turned.size:
        k = turned[0]
        return CriticalEstimate(True, float(lam[k]), float(abs(steps[k])), pattern="fold")
    tail = y[-min(n_fit, y.size):]
    if not np.all(np.diff(tail) < 0):
        return CriticalEstimate(False)
    estimates = []
    for k in range(max(4, n_fit - 2), min(n_fit + 2, lam.size) + 1):
        estimates.append(_power_law_fit(lam[-k:], y[-k:], direction))
    k0 = min(n_fit, lam.size) - max(4, n_fit - 2)
    lam_c, beta, err = estimates[min(k0, len(estimates) - 1)]
    spread = float(np.ptp([e[0] for e in estimates])) if len(estimates) > 1 else float("nan")
    return CriticalEstimate(True, lam_c, spread, beta, "touchdown", err)
