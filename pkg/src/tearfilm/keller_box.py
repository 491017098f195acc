"""Midpoint Keller-box discretisation of the thin-film / osmolarity system.

The fourth-order system is written as six first-order fields per node,
``(h, s, w, k, p, q)`` with ``w = s_x``, ``k = h_x``, ``p = k_x``, ``q = p_x``.
Each cell ``[x_i, x_{i+1}]`` contributes six rows: four centred relations,
the film equation and the conservation-form salt equation.  Six boundary
rows impose ``k = q = w = 0`` at both ends.

Row scaling: relation rows are multiplied by the cell width and the two
evolution rows by ``dt``, so every residual entry carries the units of the
unknowns it constrains.

Row order is ``[k_0, q_0, w_0]``, the six rows of cell 0, ..., cell N-2,
then ``[k_N-1, q_N-1, w_N-1]``.  Unknowns are stored node-major.  With this
ordering the Jacobian has lower and upper bandwidth 8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SolutionState, sbar_node_average

NVAR = 6
H, S, W, K, P, Q = range(NVAR)
FIELDS = ("h", "s", "w", "k", "p", "q")
ODD_FIELDS = (W, K, Q)
BANDWIDTH = 8


class EvaluationError(ArithmeticError):
    """Mobility powers were requested at a nonpositive film thickness."""


class MeshTooCoarseError(ValueError):
    pass


@dataclass(frozen=True)
class BoxState:
    mesh: np.ndarray
    values: np.ndarray  # shape (N, 6)
    time: float = 0.0

    def __post_init__(self):
        mesh = np.asarray(self.mesh, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (mesh.size, NVAR):
            raise ValueError(f"expected values of shape ({mesh.size}, {NVAR}), got {values.shape}")
        object.__setattr__(self, "mesh", mesh)
        object.__setattr__(self, "values", values)

    h = property(lambda self: self.values[:, H])
    s = property(lambda self: self.values[:, S])
    w = property(lambda self: self.values[:, W])
    k = property(lambda self: self.values[:, K])
    p = property(lambda self: self.values[:, P])
    q = property(lambda self: self.values[:, Q])

    @property
    def n_nodes(self):
        return self.mesh.size

    def flat(self):
        return self.values.reshape(-1).copy()

    def with_flat(self, vec, time=None):
        return BoxState(self.mesh, np.asarray(vec, dtype=float).reshape(-1, NVAR).copy(),
                        self.time if time is None else time)

    def to_solution(self):
        return SolutionState(self.mesh, self.h, self.s, self.time)


@dataclass
class BandedSystem:
    """Residual plus band-stored Jacobian (LAPACK ``gbsv`` layout)."""

    residual: np.ndarray
    ab: np.ndarray
    lower: int = BANDWIDTH
    upper: int = BANDWIDTH

    @property
    def size(self):
        return self.residual.size

    def to_dense(self):
        n = self.size
        J = np.zeros((n, n))
        for d in range(-self.lower, self.upper + 1):
            row = self.upper - d
            if d >= 0:
                J[np.arange(n - d), np.arange(d, n)] = self.ab[row, d:]
            else:
                J[np.arange(-d, n), np.arange(n + d)] = self.ab[row, : n + d]
        return J


# ---------------------------------------------------------------------------
# initialisation and reflection
# ---------------------------------------------------------------------------


def _alternating(n):
    return np.where(np.arange(n) % 2 == 0, 1.0, -1.0)


def _integrate_relation(f, dx):
    """One solution of ``(g_a + g_b)/2 = (f_b - f_a)/dx``, taking ``g_0 = 0``.

    Any other solution differs from it by a multiple of ``(-1)^j``.
    """
    n = f.size
    rhs = 2.0 * np.diff(f) / dx
    g = np.zeros(n)
    # g_{j+1} = rhs_j - g_j, i.e. g_{j+1} = sum_i (-1)^(j-i) rhs_i
    sign = _alternating(n - 1)
    g[1:] = sign * np.cumsum(sign * rhs)
    return g


def _smoothest(f, dx):
    """Smoothest solution of the relation, fixing one alternating coefficient."""
    g = _integrate_relation(f, dx)
    alt = _alternating(f.size)
    return g + np.sum(np.diff(g) * alt[:-1]) / (2.0 * (f.size - 1)) * alt


def _derivative_chain(h, dx):
    """Solve the three stacked relations h -> k -> p -> q together.

    An alternating residue left at one level is amplified by every later
    level, so the three free coefficients are chosen jointly to minimise
    the summed squared first differences of ``k``, ``p`` and ``q``.
    """
    alt = _alternating(h.size)
    zero = np.zeros(h.size)

    def chain(base, c):
        k = base + c[0] * alt
        p = _integrate_relation(k, dx) + c[1] * alt
        q = _integrate_relation(p, dx) + c[2] * alt
        return k, p, q

    def rough(fields):
        return np.concatenate([np.diff(f) for f in fields])

    k0 = _integrate_relation(h, dx)
    offset = rough(chain(k0, (0.0, 0.0, 0.0)))
    # the chain is affine in c, so columns are responses to unit coefficients
    basis = np.column_stack([rough(chain(zero, e)) for e in np.eye(3)])
    c = np.linalg.lstsq(basis, -offset, rcond=None)[0]
    return chain(k0, c)


def initialize_box_state(state):
    """Lift ``(h, s)`` nodal data to a full Keller-box state.

    ``k, p, q, w`` satisfy every cell relation exactly; the residual freedom
    of the box relations is fixed by the smoothest choice, which reproduces
    the zero-flux boundary values for data compatible with them.
    """
    x = np.asarray(state.mesh, dtype=float)
    if x.size < 5:
        raise MeshTooCoarseError(f"need at least 5 nodes, got {x.size}")
    dx = np.diff(x)
    h = np.asarray(state.h, dtype=float)
    s = np.asarray(state.s, dtype=float)
    k, p, q = _derivative_chain(h, dx)
    w = _smoothest(s, dx)
    values = np.column_stack([h, s, w, k, p, q])
    return BoxState(x, values, float(getattr(state, "time", 0.0)))


def reflect_state(state, length=None):
    """Mirror a state about ``L/2``; ``w``, ``k`` and ``q`` change sign."""
    length = state.mesh[-1] if length is None else length
    mesh = (length - state.mesh[::-1]).copy()
    mesh[0] = 0.0
    mesh[-1] = length
    values = state.values[::-1].copy()
    values[:, list(ODD_FIELDS)] *= -1.0
    return BoxState(mesh, values, state.time)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def _check_positive(h):
    if not np.all(h > 0):
        raise EvaluationError(f"nonpositive film thickness (min h = {np.min(h):.3e})")


def _nodal_fluxes(U, params):
    """Capillary flux F = h^n (q - 3 eps h^-4 k), salt flux G = h w - F s, and partials."""
    h, s, w, k, q = U[:, H], U[:, S], U[:, W], U[:, K], U[:, Q]
    n, eps = params.n, params.epsilon
    hn = h ** n
    F = hn * q
    dF = {H: n * h ** (n - 1.0) * q, Q: hn}
    if eps > 0:
        c = 3.0 * eps * h ** (n - 4.0)
        F = F - c * k
        dF[H] = dF[H] - (n - 4.0) * 3.0 * eps * h ** (n - 5.0) * k
        dF[K] = -c
    G = h * w - F * s
    dG = {H: w - s * dF[H], W: h, S: -F}
    for var in (Q, K):
        if var in dF:
            dG[var] = -s * dF[var]
    return F, dF, G, dG


def _cell_operators(U, dx, sbar_node, params):
    """Spatial operators per cell and their partials w.r.t. the 12 local unknowns.

    Returns ``phi_h, phi_s`` of length N-1 and ``J_h, J_s`` of shape (N-1, 12),
    where the film row reads ``h_t + phi_h = 0`` and the salt row
    ``(hs)_t + phi_s = 0``.  The evaporative source is the cell mean of the
    nodal sources ``h^m (Sbar - s)``.
    """
    F, dF, G, dG = _nodal_fluxes(U, params)
    m = params.m
    h, s = U[:, H], U[:, S]
    gap = sbar_node - s
    h_m = h ** m
    src = h_m * gap
    phi_h = (F[1:] - F[:-1]) / dx + 0.5 * (src[:-1] + src[1:])
    phi_s = -(G[1:] - G[:-1]) / dx

    nc = dx.size
    J_h = np.zeros((nc, 2 * NVAR))
    J_s = np.zeros((nc, 2 * NVAR))
    dsrc_dh = 0.5 * m * h ** (m - 1.0) * gap if m != 0 else np.zeros(h.size)
    for var, d in dF.items():
        J_h[:, var] -= d[:-1] / dx
        J_h[:, NVAR + var] += d[1:] / dx
    J_h[:, H] += dsrc_dh[:-1]
    J_h[:, NVAR + H] += dsrc_dh[1:]
    J_h[:, S] -= 0.5 * h_m[:-1]
    J_h[:, NVAR + S] -= 0.5 * h_m[1:]
    for var, d in dG.items():
        J_s[:, var] += d[:-1] / dx
        J_s[:, NVAR + var] -= d[1:] / dx
    return phi_h, phi_s, J_h, J_s


def _relation_block(dx):
    """Residuals rows 0..3 (relations) have constant partials."""
    nc = dx.size
    J = np.zeros((nc, 4, 2 * NVAR))
    half = 0.5 * dx
    for row, (f, g) in enumerate(((H, K), (K, P), (P, Q), (S, W))):
        J[:, row, f] = -1.0
        J[:, row, NVAR + f] = 1.0
        J[:, row, g] = -half
        J[:, row, NVAR + g] = -half
    return J


def _relation_residual(U, dx):
    half = 0.5 * dx
    out = np.empty((dx.size, 4))
    for row, (f, g) in enumerate(((H, K), (K, P), (P, Q), (S, W))):
        out[:, row] = U[1:, f] - U[:-1, f] - half * (U[:-1, g] + U[1:, g])
    return out


def _pack(cell_res, cell_jac, U):
    """Scatter per-cell residual (nc, 6) and Jacobian (nc, 6, 12) plus boundary rows."""
    N = U.shape[0]
    n = NVAR * N
    R = np.empty(n)
    R[0], R[1], R[2] = U[0, K], U[0, Q], U[0, W]
    R[3 : n - 3] = cell_res.reshape(-1)
    R[n - 3], R[n - 2], R[n - 1] = U[-1, K], U[-1, Q], U[-1, W]

    ab = np.zeros((2 * BANDWIDTH + 1, n))
    u = BANDWIDTH
    for row, col in ((0, K), (1, Q), (2, W)):
        ab[u + row - col, col] = 1.0
    last = NVAR * (N - 1)
    for row, col in ((n - 3, last + K), (n - 2, last + Q), (n - 1, last + W)):
        ab[u + row - col, col] = 1.0

    nc = N - 1
    base_col = NVAR * np.arange(nc)
    for a in range(NVAR):
        for b in range(2 * NVAR):
            # row = 3 + 6i + a, col = 6i + b
            ab[u + 3 + a - b, base_col + b] = cell_jac[:, a, b]
    return R, ab


def assemble_system(old, new, params, dt, theta=0.5, sbar_node=None, forcing=None):
    """Residual and banded Jacobian of one theta-step from ``old`` to ``new``.

    The Jacobian is taken with respect to the flattened ``new`` state.
    ``forcing`` optionally adds a known right-hand side to the film and salt
    equations: an ``(N-1, 2)`` array of time-weighted cell values.
    """
    if old.mesh.shape != new.mesh.shape or not np.array_equal(old.mesh, new.mesh):
        raise ValueError("old and new states must share the mesh")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not 0.5 <= theta <= 1.0:
        raise ValueError("theta must lie in [1/2, 1]")
    Un, Uo = new.values, old.values
    _check_positive(Un[:, H])
    _check_positive(Uo[:, H])
    x = new.mesh
    dx = np.diff(x)
    if sbar_node is None:
        sbar_node = sbar_node_average(params.sbar, x, params.domain_length)

    phi_h, phi_s, J_h, J_s = _cell_operators(Un, dx, sbar_node, params)
    if theta < 1.0:
        phi_ho, phi_so, _, _ = _cell_operators(Uo, dx, sbar_node, params)
    else:
        phi_ho = phi_so = 0.0

    hn, sn = Un[:, H], Un[:, S]
    ho, so = Uo[:, H], Uo[:, S]
    nc = dx.size
    res = np.empty((nc, NVAR))
    res[:, :4] = _relation_residual(Un, dx)
    res[:, 4] = 0.5 * ((hn[:-1] + hn[1:]) - (ho[:-1] + ho[1:])) + dt * (
        theta * phi_h + (1.0 - theta) * phi_ho
    )
    qn, qo = hn * sn, ho * so
    res[:, 5] = 0.5 * ((qn[:-1] + qn[1:]) - (qo[:-1] + qo[1:])) + dt * (
        theta * phi_s + (1.0 - theta) * phi_so
    )
    if forcing is not None:
        res[:, 4:] -= dt * np.asarray(forcing, dtype=float)

    jac = np.zeros((nc, NVAR, 2 * NVAR))
    jac[:, :4, :] = _relation_block(dx)
    jac[:, 4, :] = dt * theta * J_h
    jac[:, 4, H] += 0.5
    jac[:, 4, NVAR + H] += 0.5
    jac[:, 5, :] = dt * theta * J_s
    jac[:, 5, H] += 0.5 * sn[:-1]
    jac[:, 5, S] += 0.5 * hn[:-1]
    jac[:, 5, NVAR + H] += 0.5 * sn[1:]
    jac[:, 5, NVAR + S] += 0.5 * hn[1:]

    R, ab = _pack(res, jac, Un)
    return BandedSystem(R, ab)


def assemble_steady(state, params, sbar_node=None):
    """Residual and Jacobian of the stationary operator (time terms dropped).

    Film rows hold ``phi_h``, salt rows ``phi_s``; no ``dt`` scaling.
    """
    U = state.values
    _check_positive(U[:, H])
    x = state.mesh
    dx = np.diff(x)
    if sbar_node is None:
        sbar_node = sbar_node_average(params.sbar, x, params.domain_length)
    phi_h, phi_s, J_h, J_s = _cell_operators(U, dx, sbar_node, params)
    nc = dx.size
    res = np.empty((nc, NVAR))
    res[:, :4] = _relation_residual(U, dx)
    res[:, 4] = phi_h
    res[:, 5] = phi_s
    jac = np.zeros((nc, NVAR, 2 * NVAR))
    jac[:, :4, :] = _relation_block(dx)
    jac[:, 4, :] = J_h
    jac[:, 5, :] = J_s
    R, ab = _pack(res, jac, U)
    return BandedSystem(R, ab)


def cell_row_index(cell, row):
    """Global row number of local row ``row`` (0..5) of cell ``cell``."""
    return 3 + NVAR * cell + row
