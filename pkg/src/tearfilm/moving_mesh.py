"""Static r-adaptive rezoning: monitor, equidistribution, monotone transfer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .model import SolutionState


@dataclass(frozen=True)
class MonitorWeights:
    alpha_h: float = 1.0
    alpha_s: float = 1.0
    beta: float = 1e-2
    delta_h: float = 1e-6


@dataclass(frozen=True)
class MeshPolicy:
    """When and how to rezone during a run.

    ``every`` rezones after that many accepted steps; ``imbalance`` also
    triggers a rezone once the largest per-cell monitor integral exceeds
    that multiple of the mean.  ``uniform_fraction`` of the monitor integral
    is spread evenly over the domain before equidistribution, so no cell grows
    beyond ``1 / uniform_fraction`` times the uniform width.
    """

    enabled: bool = True
    every: int = 5
    imbalance: float = 2.0
    weights: MonitorWeights = MonitorWeights()
    n_nodes: int | None = None
    uniform_fraction: float = 0.2

    def __post_init__(self):
        if self.every < 1:
            raise ValueError("mesh_policy.every must be >= 1")
        if not self.imbalance > 1:
            raise ValueError("mesh_policy.imbalance must be > 1")
        if not 0 <= self.uniform_fraction < 1:
            raise ValueError("mesh_policy.uniform_fraction must lie in [0, 1)")


FIXED_MESH = MeshPolicy(enabled=False)


def _smooth(values, passes=2):
    v = np.asarray(values, dtype=float).copy()
    for _ in range(passes):
        padded = np.concatenate([[v[1]], v, [v[-2]]])
        v = 0.25 * padded[:-2] + 0.5 * padded[1:-1] + 0.25 * padded[2:]
    return v


def compute_monitor(state, weights=MonitorWeights()):
    x = state.mesh
    hx = np.gradient(state.h, x)
    sx = np.gradient(state.s, x)
    M = np.sqrt(1.0 + weights.alpha_h * hx**2 + weights.alpha_s * sx**2)
    M = M + weights.beta / (state.h + weights.delta_h)
    return _smooth(M)


def blend_uniform(mesh, monitor, fraction):
    """Add a constant so that ``fraction`` of the total integral is uniform."""
    monitor = np.asarray(monitor, dtype=float)
    if fraction == 0:
        return monitor
    mesh = np.asarray(mesh, dtype=float)
    mean = np.sum(cell_integrals(mesh, monitor)) / (mesh[-1] - mesh[0])
    return monitor + fraction / (1.0 - fraction) * mean


def policy_monitor(state, policy):
    return blend_uniform(state.mesh, compute_monitor(state, policy.weights), policy.uniform_fraction)


def cell_integrals(mesh, monitor):
    mesh = np.asarray(mesh, dtype=float)
    monitor = np.asarray(monitor, dtype=float)
    return 0.5 * (monitor[1:] + monitor[:-1]) * np.diff(mesh)


def equidistribute(mesh, monitor, n_new=None):
    """Nodes splitting the integral of the piecewise-linear monitor evenly."""
    x = np.asarray(mesh, dtype=float)
    M = np.asarray(monitor, dtype=float)
    if np.any(M <= 0):
        raise ValueError("monitor must be positive")
    n_new = x.size if n_new is None else int(n_new)
    cum = np.concatenate([[0.0], np.cumsum(cell_integrals(x, M))])
    targets = cum[-1] * np.arange(1, n_new - 1) / (n_new - 1)
    j = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, x.size - 2)
    r = targets - cum[j]
    dx = x[j + 1] - x[j]
    slope = (M[j + 1] - M[j]) / dx
    # root of M_j t + slope t^2 / 2 = r, written to avoid cancellation
    t = 2.0 * r / (M[j] + np.sqrt(np.maximum(M[j] ** 2 + 2.0 * slope * r, 0.0)))
    interior = x[j] + np.clip(t, 0.0, dx)
    out = np.concatenate([[x[0]], interior, [x[-1]]])
    return np.maximum.accumulate(out)


def remesh(state, new_mesh):
    """Transfer ``h`` and ``s`` by monotone cubic Hermite interpolation."""
    new_mesh = np.asarray(new_mesh, dtype=float)
    if new_mesh[0] != state.mesh[0] or new_mesh[-1] != state.mesh[-1]:
        raise ValueError("both meshes must span the same interval")
    if np.array_equal(new_mesh, state.mesh):
        return state
    h = PchipInterpolator(state.mesh, state.h)(new_mesh)
    s = PchipInterpolator(state.mesh, state.s)(new_mesh)
    return SolutionState(new_mesh, h, s, state.time)


def needs_rezone(state, policy, steps_since):
    if not policy.enabled:
        return False
    if steps_since >= policy.every:
        return True
    I = cell_integrals(state.mesh, policy_monitor(state, policy))
    return bool(I.max() > policy.imbalance * I.mean())
