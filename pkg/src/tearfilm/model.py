"""Model parameters, effective salt capacity profiles and integral diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np


class DomainError(ValueError):
    """Raised when a coordinate or parameter lies outside its admissible range."""


# ---------------------------------------------------------------------------
# effective salt capacity profiles
# ---------------------------------------------------------------------------


def _log_cosh(z):
    z = np.abs(z)
    return z + np.log1p(np.exp(-2.0 * z)) - np.log(2.0)


@dataclass(frozen=True)
class ConstantSbar:
    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise DomainError(f"constant capacity must be >= 0, got {self.value}")

    def values(self, x, length):
        return np.full_like(np.asarray(x, dtype=float), self.value)

    def antiderivative(self, x, length):
        return self.value * np.asarray(x, dtype=float)

    def sup_norm(self, length):
        return float(self.value)

    def is_symmetric(self, length):
        return True


@dataclass(frozen=True)
class StepSbar:
    """``hi`` on the centred window ``|x - L/2| < xi`` and ``lo`` elsewhere."""

    lo: float
    hi: float
    xi: float

    def __post_init__(self):
        if not (self.lo > 0 and self.hi > 0):
            raise DomainError("step capacity needs lo > 0 and hi > 0")
        if not self.xi > 0:
            raise DomainError(f"step half-width xi must be > 0, got {self.xi}")

    def values(self, x, length):
        x = np.asarray(x, dtype=float)
        c = 0.5 * length
        left, right = c - self.xi, c + self.xi
        out = np.where((x > left) & (x < right), self.hi, self.lo).astype(float)
        mean = 0.5 * (self.lo + self.hi)
        out = np.where((x == left) | (x == right), mean, out)
        return out

    def antiderivative(self, x, length):
        x = np.asarray(x, dtype=float)
        c = 0.5 * length
        inside = np.clip(x, c - self.xi, c + self.xi) - (c - self.xi)
        return self.lo * x + (self.hi - self.lo) * inside

    def sup_norm(self, length):
        return float(max(self.lo, self.hi))

    def is_symmetric(self, length):
        return True


@dataclass(frozen=True)
class TanhSbar:
    """``base - amplitude * tanh(steepness * (|x - center| - half_width))``."""

    base: float
    amplitude: float
    steepness: float
    center: float
    half_width: float

    def values(self, x, length):
        x = np.asarray(x, dtype=float)
        arg = self.steepness * (np.abs(x - self.center) - self.half_width)
        return self.base - self.amplitude * np.tanh(arg)

    def antiderivative(self, x, length):
        # d/dx of sign(x-c) * [logcosh(k(|x-c|-w)) - logcosh(-kw)] / k
        # is tanh(k(|x-c|-w)).
        x = np.asarray(x, dtype=float)
        k = self.steepness
        r = x - self.center
        if k == 0:
            return self.base * x
        tanh_int = np.sign(r) * (
            _log_cosh(k * (np.abs(r) - self.half_width)) - _log_cosh(-k * self.half_width)
        ) / k
        return self.base * x - self.amplitude * tanh_int

    def _distance_range(self, length):
        near = 0.0 if 0.0 <= self.center <= length else min(abs(self.center), abs(self.center - length))
        far = max(abs(self.center), abs(self.center - length))
        return near, far

    def sup_norm(self, length):
        # monotone in the distance to the centre, so the extremes sit at the
        # nearest/farthest admissible distances
        ends = np.array(self._distance_range(length))
        vals = self.base - self.amplitude * np.tanh(self.steepness * (ends - self.half_width))
        return float(np.max(np.abs(vals)))

    def is_symmetric(self, length):
        return bool(np.isclose(self.center, 0.5 * length, rtol=0, atol=1e-14 * max(1.0, length)))

    def check(self, length):
        vals = self.values(np.array(self._distance_range(length)) + self.center, length)
        if np.min(vals) < 0:
            raise DomainError("tanh capacity becomes negative on the domain")


@dataclass(frozen=True)
class TableSbar:
    """Piecewise-linear capacity through sorted samples."""

    x: tuple
    y: tuple

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise DomainError("table capacity needs two equal-length 1-D sample arrays")
        if np.any(np.diff(x) <= 0):
            raise DomainError("table abscissae must be strictly increasing")
        if np.any(y < 0):
            raise DomainError("table capacity values must be >= 0")
        object.__setattr__(self, "x", tuple(float(v) for v in x))
        object.__setattr__(self, "y", tuple(float(v) for v in y))

    @property
    def _xa(self):
        return np.asarray(self.x)

    @property
    def _ya(self):
        return np.asarray(self.y)

    def values(self, x, length):
        return np.interp(np.asarray(x, dtype=float), self._xa, self._ya)

    def antiderivative(self, x, length):
        xs, ys = self._xa, self._ya
        x = np.asarray(x, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))])
        j = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
        slope = (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j])
        t = x - xs[j]
        return cum[j] + ys[j] * t + 0.5 * slope * t * t

    def sup_norm(self, length):
        return float(np.max(self._ya))

    def is_symmetric(self, length):
        xs, ys = self._xa, self._ya
        mirrored = np.interp(length - xs, xs, ys)
        return bool(np.allclose(mirrored, ys, rtol=1e-14, atol=0))

    def check(self, length):
        if self.x[0] > 0 or self.x[-1] < length:
            raise DomainError(f"table abscissae must cover [0, {length}]")


SbarProfile = Union[ConstantSbar, StepSbar, TanhSbar, TableSbar]


def fig2_sbar():
    """Smooth capacity ``50 - 48.8 tanh(20(|x-1| - 0.1))`` on ``[0, 2]``."""
    return TanhSbar(base=50.0, amplitude=48.8, steepness=20.0, center=1.0, half_width=0.1)


# ---------------------------------------------------------------------------
# parameters and state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    m: float
    n: float
    sbar: SbarProfile
    epsilon: float = 0.0
    domain_length: float = 2.0
    salt_floor: float = 1.0
    height_floor: float = 1.0

    def __post_init__(self):
        for name in ("m", "n", "epsilon"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"params.{name} must be >= 0, got {getattr(self, name)}")
        for name in ("domain_length", "salt_floor", "height_floor"):
            if not getattr(self, name) > 0:
                raise DomainError(f"params.{name} must be > 0, got {getattr(self, name)}")
        L = self.domain_length
        if isinstance(self.sbar, StepSbar) and not self.sbar.xi < 0.5 * L:
            raise DomainError(f"params.sbar.xi must be < L/2 = {0.5 * L}, got {self.sbar.xi}")
        if hasattr(self.sbar, "check"):
            self.sbar.check(L)
        if self.salt_floor > self.sbar_sup:
            raise DomainError("params.salt_floor exceeds the sup-norm of the capacity profile")

    @property
    def sbar_sup(self):
        return self.sbar.sup_norm(self.domain_length)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SolutionState:
    mesh: np.ndarray
    h: np.ndarray
    s: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        mesh, h, s = _frozen(self.mesh), _frozen(self.h), _frozen(self.s)
        if mesh.ndim != 1 or mesh.size < 2:
            raise DomainError("mesh must be a 1-D array with at least two nodes")
        if h.shape != mesh.shape or s.shape != mesh.shape:
            raise DomainError("h and s must have one entry per mesh node")
        if np.any(np.diff(mesh) <= 0):
            raise DomainError("mesh must be strictly increasing")
        if mesh[0] != 0.0:
            raise DomainError("mesh must start at x = 0")
        if self.time < 0:
            raise DomainError("time must be >= 0")
        object.__setattr__(self, "mesh", mesh)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "s", s)

    @property
    def length(self):
        return float(self.mesh[-1])

    @classmethod
    def uniform(cls, n_nodes, length, h0=1.0, s0=1.0, time=0.0):
        x = np.linspace(0.0, length, n_nodes)
        h = np.broadcast_to(h0(x) if callable(h0) else h0, x.shape)
        s = np.broadcast_to(s0(x) if callable(s0) else s0, x.shape)
        return cls(x, h, s, time)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def eval_sbar(profile, x, length):
    """Capacity at ``x``; a Step jump point takes the mean of both sides."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(xa > length):
        raise DomainError(f"x outside [0, {length}]")
    out = profile.values(xa, length)
    return float(out) if np.ndim(x) == 0 else out


def sbar_cell_average(profile, mesh, length):
    """Exact mean of the capacity over every cell ``[x_i, x_{i+1}]``."""
    mesh = np.asarray(mesh, dtype=float)
    if isinstance(profile, ConstantSbar):
        return np.full(mesh.size - 1, profile.value)
    F = profile.antiderivative(mesh, length)
    return np.diff(F) / np.diff(mesh)


def sbar_node_average(profile, mesh, length):
    """Mean of the capacity over each node's dual cell (midpoint to midpoint).

    Trapezoidal sums of these values integrate the capacity exactly.
    """
    mesh = np.asarray(mesh, dtype=float)
    if isinstance(profile, ConstantSbar):
        return np.full(mesh.size, profile.value)
    edges = np.concatenate([[mesh[0]], 0.5 * (mesh[1:] + mesh[:-1]), [mesh[-1]]])
    F = profile.antiderivative(edges, length)
    return np.diff(F) / np.diff(edges)


def compute_salt_mass(state):
    """Total salt ``Q``: trapezoidal integral of ``h*s``."""
    return float(np.trapezoid(state.h * state.s, state.mesh))


def compute_fluid_mass(state, params):
    """Fluid volume ``M`` and its rate ``dM/dt = -int h^m (Sbar - s)``."""
    M = float(np.trapezoid(state.h, state.mesh))
    sb = params.sbar.values(state.mesh, params.domain_length)
    dM_dt = -float(np.trapezoid(state.h ** params.m * (sb - state.s), state.mesh))
    return M, dM_dt
