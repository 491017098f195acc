"""Self-checks of the discretisation against independent references.

* finite-difference Jacobians of the dynamic, steady and bordered systems;
* a manufactured smooth solution (with forcing) for observed orders;
* an explicit method-of-lines integrator written directly from the PDE;
* reflection equivariance and the constant fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import keller_box as kb
from .equilibrium import EquilibriumProblem, assemble_steady_system
from .integrator import StepController, advance_step, newton_solve
from .model import ConstantSbar, ModelParams, SolutionState, sbar_node_average


# ---------------------------------------------------------------------------
# Jacobians by central differences
# ---------------------------------------------------------------------------


def smooth_random_state(n_nodes, length=2.0, seed=0, amplitude=0.2):
    """Positive random Keller-box state built from a few cosine modes."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, length, n_nodes)
    vals = np.empty((n_nodes, kb.NVAR))
    for j in range(kb.NVAR):
        c = rng.uniform(-1, 1, 3)
        modes = sum(c[i] * np.cos((i + 1) * math.pi * x / length) for i in range(3))
        vals[:, j] = amplitude * modes
    vals[:, kb.H] += 1.0
    vals[:, kb.S] += 1.5
    # perturb the derivative fields so no relation holds exactly
    vals[:, 2:] += 0.05 * rng.standard_normal((n_nodes, kb.NVAR - 2))
    return kb.BoxState(x, vals)


def _fd_columns(fun, u, step):
    cols = []
    for j in range(u.size):
        e = np.zeros_like(u)
        d = step * max(1.0, abs(u[j]))
        e[j] = d
        cols.append((fun(u + e) - fun(u - e)) / (2.0 * d))
    return np.column_stack(cols)


def jacobian_fd_error(kind, params, n_nodes=9, seed=0, dt=1e-2, theta=0.5, step=1e-6):
    """Largest entrywise relative mismatch of an analytic Jacobian.

    ``kind`` is ``"dynamic"``, ``"steady"`` or ``"bordered"``.  The error is
    ``max |J - J_fd| / max(1, max |J|)``.
    """
    new = smooth_random_state(n_nodes, params.domain_length, seed)
    if kind == "dynamic":
        old = smooth_random_state(n_nodes, params.domain_length, seed + 1)

        def fun(u):
            return kb.assemble_system(old, new.with_flat(u), params, dt, theta).residual

        J = kb.assemble_system(old, new, params, dt, theta).to_dense()
        u = new.flat()
    elif kind == "steady":
        def fun(u):
            return kb.assemble_steady(new.with_flat(u), params).residual

        J = kb.assemble_steady(new, params).to_dense()
        u = new.flat()
    elif kind == "bordered":
        problem = EquilibriumProblem(params, 2.0, new.mesh)

        def fun(v):
            return assemble_steady_system(problem, new.with_flat(v[:-1]), v[-1]).residual

        u = np.append(new.flat(), 0.3)
        J = assemble_steady_system(problem, new, u[-1]).jacobian.toarray()
    else:
        raise ValueError(f"unknown Jacobian kind {kind!r}")
    J_fd = _fd_columns(fun, u, step)
    return float(np.max(np.abs(J - J_fd)) / max(1.0, np.max(np.abs(J))))


# ---------------------------------------------------------------------------
# manufactured solution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Manufactured:
    """``h = 1 + A(t) cos(kx)``, ``s = sigma + B(t) cos(kx)`` with ``k = pi / L``.

    Both satisfy the zero-flux boundary conditions, so the discrete problem
    needs no boundary forcing.
    """

    params: ModelParams
    a: float = 0.2
    b: float = 0.3
    sigma: float = 1.5
    omega: float = 2.0

    @property
    def kappa(self):
        return math.pi / self.params.domain_length

    def amplitudes(self, t):
        w = self.omega
        A = self.a * math.cos(w * t)
        B = self.b * (1.0 + math.sin(w * t))
        dA = -self.a * w * math.sin(w * t)
        dB = self.b * w * math.cos(w * t)
        return A, B, dA, dB

    def exact(self, x, t):
        A, B, _, _ = self.amplitudes(t)
        c = np.cos(self.kappa * x)
        return 1.0 + A * c, self.sigma + B * c

    def exact_box(self, x, t):
        """Keller-box state holding the exact nodal derivatives."""
        A, B, _, _ = self.amplitudes(t)
        k = self.kappa
        C, S = np.cos(k * x), np.sin(k * x)
        vals = np.column_stack([1.0 + A * C, self.sigma + B * C, -B * k * S,
                                -A * k * S, -A * k**2 * C, A * k**3 * S])
        return kb.BoxState(np.asarray(x, dtype=float), vals, t)

    def forcing(self, x, t):
        """Right-hand sides ``(f_h, f_s)`` that make the pair an exact solution."""
        p = self.params
        k = self.kappa
        A, B, dA, dB = self.amplitudes(t)
        C, S = np.cos(k * x), np.sin(k * x)
        h, s = 1.0 + A * C, self.sigma + B * C
        hx, hxxx, hxxxx = -A * k * S, A * k**3 * S, A * k**4 * C
        sx, sxx = -B * k * S, -B * k**2 * C
        ht, st = dA * C, dB * C
        F = h**p.n * hxxx
        Fx = p.n * h ** (p.n - 1.0) * hx * hxxx + h**p.n * hxxxx
        sbar = p.sbar.values(x, p.domain_length)
        f_h = ht + Fx + h**p.m * (sbar - s)
        Gx = hx * sx + h * sxx - Fx * s - F * sx
        f_s = ht * s + h * st - Gx
        return np.column_stack([f_h, f_s])


def manufactured_error(mms, n_nodes, dt, t_end, theta=0.5):
    """Sup-norm error in ``(h, s)`` at ``t_end`` on a uniform mesh with fixed ``dt``."""
    p = mms.params
    x = np.linspace(0.0, p.domain_length, n_nodes)
    xm = 0.5 * (x[:-1] + x[1:])
    state = mms.exact_box(x, 0.0)
    ctrl = StepController(dt=dt, dt_max=dt, newton_tol=1e-11, max_newton_iters=20)
    sb = sbar_node_average(p.sbar, x, p.domain_length)
    steps = int(round(t_end / dt))
    f_old = mms.forcing(xm, 0.0)
    for i in range(steps):
        t_new = (i + 1) * dt
        f_new = mms.forcing(xm, t_new)
        f = theta * f_new + (1.0 - theta) * f_old
        state, _ = newton_solve(state, state, p, dt, ctrl, theta, sb, forcing=f)
        f_old = f_new
    he, se = mms.exact(x, steps * dt)
    return float(max(np.max(np.abs(state.h - he)), np.max(np.abs(state.s - se))))


def observed_orders(errors):
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


def manufactured_space_orders(params=None, nodes=(21, 41, 81), t_end=0.05, dt=1e-4):
    params = params or ModelParams(2.0, 3.0, ConstantSbar(2.0))
    mms = Manufactured(params)
    errs = [manufactured_error(mms, n, dt, t_end) for n in nodes]
    return errs, observed_orders(errs)


def manufactured_time_orders(params=None, n_nodes=161, t_end=0.4, dts=(0.1, 0.05, 0.025)):
    params = params or ModelParams(2.0, 3.0, ConstantSbar(2.0))
    mms = Manufactured(params, a=0.05, b=0.1)
    # subtract the spatial part by comparing against a fine-step run on the same mesh
    ref = _mms_final(mms, n_nodes, dts[-1] / 8, t_end)
    errs = [float(np.max(np.abs(_mms_final(mms, n_nodes, dt, t_end) - ref))) for dt in dts]
    return errs, observed_orders(errs)


def _mms_final(mms, n_nodes, dt, t_end, theta=0.5):
    p = mms.params
    x = np.linspace(0.0, p.domain_length, n_nodes)
    xm = 0.5 * (x[:-1] + x[1:])
    state = mms.exact_box(x, 0.0)
    ctrl = StepController(dt=dt, dt_max=dt, newton_tol=1e-11, max_newton_iters=20)
    sb = sbar_node_average(p.sbar, x, p.domain_length)
    f_old = mms.forcing(xm, 0.0)
    for i in range(int(round(t_end / dt))):
        f_new = mms.forcing(xm, (i + 1) * dt)
        f = theta * f_new + (1.0 - theta) * f_old
        state, _ = newton_solve(state, state, p, dt, ctrl, theta, sb, forcing=f)
        f_old = f_new
    return np.concatenate([state.h, state.s])


# ---------------------------------------------------------------------------
# explicit method-of-lines oracle
# ---------------------------------------------------------------------------


def _even_pad(v, width=2):
    return np.concatenate([v[width:0:-1], v, v[-2 : -width - 2 : -1]])


def explicit_rhs(h, hs, dx, params, sbar):
    """Conservative central differences with mirror ghost nodes.

    Unknowns are nodal ``h`` and ``hs``; face fluxes use the face average of
    ``h`` for the mobility.
    """
    s = hs / h
    H = _even_pad(h)
    S_ = _even_pad(s)
    # faces i+1/2 for i = -1 .. N-1 (N + 1 faces, outermost are mirror faces)
    h3 = (H[3:] - 3.0 * H[2:-1] + 3.0 * H[1:-2] - H[:-3]) / dx**3
    hf = 0.5 * (H[1:-2] + H[2:-1])
    sf = 0.5 * (S_[1:-2] + S_[2:-1])
    sxf = (S_[2:-1] - S_[1:-2]) / dx
    F = hf**params.n * h3
    G = hf * sxf - F * sf
    dh = -(F[1:] - F[:-1]) / dx - h**params.m * (sbar - s)
    dhs = (G[1:] - G[:-1]) / dx
    return dh, dhs


def explicit_oracle(initial, params, t_end, dt=None, safety=0.2):
    """Classical RK4 on the explicit semi-discretisation with a tiny step."""
    x = initial.mesh
    dx = x[1] - x[0]
    if not np.allclose(np.diff(x), dx, rtol=1e-12):
        raise ValueError("the explicit oracle needs a uniform mesh")
    sbar = params.sbar.values(x, params.domain_length)
    h = np.array(initial.h, dtype=float)
    hs = h * np.array(initial.s, dtype=float)
    if dt is None:
        mob = np.max(h) ** params.n
        dt = safety * dx**4 / (16.0 * mob)
    steps = int(math.ceil(t_end / dt))
    dt = t_end / steps
    for _ in range(steps):
        k1 = explicit_rhs(h, hs, dx, params, sbar)
        k2 = explicit_rhs(h + 0.5 * dt * k1[0], hs + 0.5 * dt * k1[1], dx, params, sbar)
        k3 = explicit_rhs(h + 0.5 * dt * k2[0], hs + 0.5 * dt * k2[1], dx, params, sbar)
        k4 = explicit_rhs(h + dt * k3[0], hs + dt * k3[1], dx, params, sbar)
        h = h + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        hs = hs + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return SolutionState(x, h, hs / h, t_end)


def smooth_initial(n_nodes, length=2.0, a=0.1, b=0.1):
    x = np.linspace(0.0, length, n_nodes)
    c = np.cos(math.pi * x / length)
    return SolutionState(x, 1.0 + a * c, 1.0 + b * c)


# ---------------------------------------------------------------------------
# symmetry and fixed points
# ---------------------------------------------------------------------------

# sign of each cell row under reflection: relation rows (h,k), (k,p), (p,q),
# (s,w), then the film and salt rows
_CELL_ROW_PARITY = np.array([-1.0, 1.0, -1.0, -1.0, 1.0, 1.0])


def reflect_residual(R, n_nodes):
    """Map the residual of a state to the residual of its mirror image."""
    cells = R[3:-3].reshape(n_nodes - 1, kb.NVAR)[::-1] * _CELL_ROW_PARITY
    return np.concatenate([-R[-3:], cells.reshape(-1), -R[:3]])


def reflection_defect(params, n_nodes=9, seed=0, dt=1e-2, theta=0.5):
    """``max |R(reflect U) - reflect(R(U))|`` for the dynamic and steady residuals."""
    U = smooth_random_state(n_nodes, params.domain_length, seed)
    V = smooth_random_state(n_nodes, params.domain_length, seed + 7)
    rU, rV = kb.reflect_state(U), kb.reflect_state(V)
    dyn = kb.assemble_system(V, U, params, dt, theta).residual
    dyn_r = kb.assemble_system(rV, rU, params, dt, theta).residual
    st = kb.assemble_steady(U, params).residual
    st_r = kb.assemble_steady(rU, params).residual
    return float(max(np.max(np.abs(dyn_r - reflect_residual(dyn, n_nodes))),
                     np.max(np.abs(st_r - reflect_residual(st, n_nodes)))))


def constant_fixed_point_drift(params, h0=1.0, n_nodes=41, steps=100, dt=1e-2):
    """Largest change of any unknown after ``steps`` steps from a constant equilibrium.

    ``params.sbar`` must be constant; ``s`` starts at that constant.
    """
    sigma = params.sbar.value
    x = np.linspace(0.0, params.domain_length, n_nodes)
    start = kb.initialize_box_state(SolutionState(x, np.full(n_nodes, h0), np.full(n_nodes, sigma)))
    ctrl = StepController(dt=dt, dt_max=dt)
    state = start
    for _ in range(steps):
        state, _, _ = advance_step(state, ctrl, params)
    return float(np.max(np.abs(state.values - start.values)))


def oracle_params():
    """Smooth short-run configuration for the oracle comparison."""
    return ModelParams(3.5, 4.5, ConstantSbar(1.5), salt_floor=0.9, height_floor=0.9)


def _richardson(coarse, fine):
    """Second-order extrapolation onto the coarse nodes (fine mesh = coarse halved)."""
    return (4.0 * fine[::2] - coarse) / 3.0


def oracle_equivalence(params=None, n_coarse=21, t_end=0.01, dt_max=1e-4):
    """Sup-norm gap between the implicit solver and the explicit oracle.

    Each method is run on a uniform mesh and on its halving, and the pair is
    Richardson-extrapolated in space, so the comparison is between the two
    continuum limits rather than between two different O(dx^2) errors.
    """
    from .integrator import integrate

    params = params or oracle_params()
    n_fine = 2 * n_coarse - 1

    def implicit(n):
        r = integrate(smooth_initial(n), params,
                      StepController(dt=1e-6, dt_max=dt_max, newton_tol=1e-12), t_end=t_end)
        sol = r.final.to_solution()
        return sol.h, sol.s

    def explicit(n):
        sol = explicit_oracle(smooth_initial(n), params, t_end, safety=2.0)
        return sol.h, sol.s

    (hc, sc), (hf, sf) = implicit(n_coarse), implicit(n_fine)
    (oc, pc), (of, pf) = explicit(n_coarse), explicit(n_fine)
    dh = _richardson(hc, hf) - _richardson(oc, of)
    ds = _richardson(sc, sf) - _richardson(pc, pf)
    return float(max(np.max(np.abs(dh)), np.max(np.abs(ds))))
