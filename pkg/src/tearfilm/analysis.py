"""Post-processing: thinning-law fits, regime labels, a-priori bounds."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import keller_box as kb
from .integrator import EventKind
from .model import DomainError


class InsufficientDataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# thinning law  h_min ~ (c + eta (m - 1) t)^(-1/(m-1))
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThinningFit:
    exponent: float
    prefactor: float  # the offset c
    eta_local: float
    t_start: float
    t_end: float
    residual: float  # rms misfit of log h_min over the window
    relative_residual: float  # misfit relative to the spread of log h_min
    predicted: float
    n_points: int = 0

    @property
    def fitted(self):
        return math.isfinite(self.exponent)

    @property
    def relative_error(self):
        return abs(self.exponent - self.predicted) / abs(self.predicted)


def _no_fit(m, eta):
    nan = float("nan")
    return ThinningFit(nan, nan, eta, nan, nan, nan, nan, nan)


def _fit_window(t, h):
    """Indices of the final decade of decrease (or the final decade in time)."""
    above = np.nonzero(h >= 10.0 * h[-1])[0]
    if above.size:
        start = above[-1]
    else:
        start = int(np.searchsorted(t, 0.1 * t[-1]))
    return start


def fit_thinning_rate(t, h_min, m, eta_local, min_points=10):
    """Fit the algebraic thinning law over the final decade of decrease.

    ``log h_min = a + b log(c + eta (m-1) t)``: for each trial ``c`` the pair
    ``(a, b)`` is a linear least-squares solve, and ``c`` minimises the
    remaining misfit.  For ``m <= 1`` the law does not apply and a result with
    NaN exponent is returned.
    """
    if m <= 1:
        return _no_fit(m, eta_local)
    if not eta_local > 0:
        raise DomainError(f"eta_local must be > 0, got {eta_local}")
    t = np.asarray(t, dtype=float)
    h = np.asarray(h_min, dtype=float)
    if t.shape != h.shape:
        raise ValueError("t and h_min must have the same length")
    ok = (h > 0) & np.isfinite(h)
    t, h = t[ok], h[ok]
    if t.size < min_points:
        raise InsufficientDataError(f"need at least {min_points} samples, got {t.size}")
    start = _fit_window(t, h)
    tw, yw = t[start:], np.log(h[start:])
    if tw.size < min_points:
        raise InsufficientDataError(
            f"only {tw.size} samples in the fit window (need {min_points})"
        )
    rate = eta_local * (m - 1.0)
    t0 = tw[0]
    span = max(tw[-1] - t0, 1e-300)

    def solve(u):
        # offset tau0 = c / rate, parametrised as tau0 = exp(u) - t0 > -t0
        z = np.log(np.exp(u) + (tw - t0))
        X = np.column_stack([np.ones_like(z), z])
        coef, *_ = np.linalg.lstsq(X, yw, rcond=None)
        r = yw - X @ coef
        return float(np.dot(r, r)), coef

    grid = np.linspace(math.log(span) - 30.0, math.log(span) + 12.0, 421)
    costs = np.array([solve(u)[0] for u in grid])
    k = int(np.argmin(costs))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    best = scipy.optimize.minimize_scalar(lambda u: solve(u)[0], bounds=(lo, hi),
                                          method="bounded", options={"xatol": 1e-13})
    u = best.x if best.fun <= costs[k] else grid[k]
    cost, coef = solve(u)
    tau0 = math.exp(u) - t0
    rms = math.sqrt(cost / tw.size)
    spread = float(np.std(yw))
    return ThinningFit(
        exponent=float(coef[1]),
        prefactor=float(rate * tau0),
        eta_local=float(eta_local),
        t_start=float(tw[0]),
        t_end=float(tw[-1]),
        residual=rms,
        relative_residual=rms / spread if spread > 0 else float("inf"),
        predicted=-1.0 / (m - 1.0),
        n_points=int(tw.size),
    )


# ---------------------------------------------------------------------------
# regime classification
# ---------------------------------------------------------------------------


class Regime(str, enum.Enum):
    FINITE_TIME_RUPTURE = "FiniteTimeRupture"
    INFINITE_TIME_THINNING = "InfiniteTimeThinning"
    CONVERGE_TO_EQUILIBRIUM = "ConvergeToEquilibrium"
    UNCLASSIFIED = "Unclassified"


@dataclass(frozen=True)
class RegimeLabel:
    regime: Regime
    evidence: dict = field(default_factory=dict)

    @property
    def value(self):
        return self.regime.value


@dataclass(frozen=True)
class RegimeThresholds:
    fit_relative_residual: float = 0.05
    exponent_tolerance: float = 0.25
    equilibrium_distance: float = 1e-3
    steady_residual: float = 1e-6


def final_steady_residual(result, params):
    """Sup-norm of the stationary film and salt operators at the final state."""
    system = kb.assemble_steady(result.final, params)
    rows = np.arange(result.final.n_nodes - 1)
    idx = np.concatenate([kb.cell_row_index(rows, 4), kb.cell_row_index(rows, 5)])
    return float(np.max(np.abs(system.residual[idx])))


def equilibrium_distance(result, equilibrium):
    """Sup-norm distance in ``h`` and ``s`` between the final state and ``equilibrium``."""
    final = result.final.to_solution()
    eq = equilibrium.to_solution() if hasattr(equilibrium, "to_solution") else equilibrium
    h = np.interp(final.mesh, eq.mesh, eq.h)
    s = np.interp(final.mesh, eq.mesh, eq.s)
    return float(max(np.max(np.abs(final.h - h)), np.max(np.abs(final.s - s))))


def classify_regime(result, params, equilibrium=None, fit=None, thresholds=RegimeThresholds()):
    """Label a completed run from its terminal event and supporting evidence.

    Rupture maps to finite-time rupture.  Convergence to equilibrium needs a
    small stationary residual at the final state and either a steady-state
    event or proximity to the supplied equilibrium.  Otherwise a thinning fit
    close to the predicted exponent gives infinite-time thinning; anything
    else is reported as unclassified.
    """
    ev = result.event
    evidence = {"event": ev.kind.value, "t_stop": ev.t_stop}
    if ev.kind == EventKind.RUPTURE:
        evidence["x_c"] = ev.x_c
        return RegimeLabel(Regime.FINITE_TIME_RUPTURE, evidence)

    steady_res = final_steady_residual(result, params)
    evidence["steady_residual"] = steady_res
    if equilibrium is not None:
        evidence["equilibrium_distance"] = equilibrium_distance(result, equilibrium)
    near_eq = evidence.get("equilibrium_distance", math.inf) <= thresholds.equilibrium_distance
    if steady_res <= thresholds.steady_residual and (ev.kind == EventKind.STEADY_STATE or near_eq):
        return RegimeLabel(Regime.CONVERGE_TO_EQUILIBRIUM, evidence)

    if fit is not None and fit.fitted:
        evidence.update(exponent=fit.exponent, predicted=fit.predicted,
                        relative_residual=fit.relative_residual)
        good = (fit.relative_residual <= thresholds.fit_relative_residual
                and fit.relative_error <= thresholds.exponent_tolerance)
        if good and ev.kind in (EventKind.THINNING_ONGOING, EventKind.HORIZON_REACHED):
            return RegimeLabel(Regime.INFINITE_TIME_THINNING, evidence)
    return RegimeLabel(Regime.UNCLASSIFIED, evidence)


# ---------------------------------------------------------------------------
# a-priori upper bound and the maximum principle
# ---------------------------------------------------------------------------


def solve_bound_fixed_point(A, C, tau, tol=1e-12):
    """Root ``H >= C + 1`` of ``H = sqrt(A + C H^tau) + C + 1`` by bisection.

    ``A`` collects the data-dependent constants; ``tau < 2`` keeps the
    right-hand side sublinear so the root exists and is unique.
    """
    if not 0 <= tau < 2:
        raise DomainError(f"tau must lie in [0, 2), got {tau}")
    if A < 0 or C < 0:
        raise DomainError("A and C must be >= 0")

    def g(H):
        return H - math.sqrt(A + C * H**tau) - C - 1.0

    lo = C + 1.0
    if g(lo) == 0:
        return lo
    hi = 2.0 * lo
    while g(hi) <= 0:
        hi *= 2.0
    while hi - lo > tol * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class BoundReport:
    lower_violation: float
    upper_violation: float
    salt_floor: float
    sbar_sup: float
    pointwise_excess: bool
    max_pointwise_excess: float
    tolerance: float

    @property
    def ok(self):
        return self.lower_violation <= self.tolerance and self.upper_violation <= self.tolerance


def check_maximum_principle(result, params, tolerance=1e-9):
    """Bound report for ``salt_floor <= s <= sup Sbar`` over a run.

    Exceeding ``Sbar`` pointwise is allowed and reported separately.
    """
    sup = params.sbar_sup
    lam = params.salt_floor
    lower = max(0.0, float(lam - np.min(result.series["min_s"])))
    upper = max(0.0, float(np.max(result.series["max_s"]) - sup))
    excess = float(getattr(result, "max_sbar_excess", -math.inf))
    for snap in list(result.snapshots) + [result.final.to_solution()]:
        sb = params.sbar.values(snap.mesh, params.domain_length)
        excess = max(excess, float(np.max(snap.s - sb)))
    return BoundReport(lower, upper, lam, sup, excess > 0, excess, tolerance)
