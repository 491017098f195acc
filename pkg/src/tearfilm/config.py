"""Experiment configuration: YAML in, validated frozen dataclasses out."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .integrator import StepController
from .model import (
    ConstantSbar,
    DomainError,
    ModelParams,
    SolutionState,
    StepSbar,
    TableSbar,
    TanhSbar,
)
from .moving_mesh import FIXED_MESH, MeshPolicy, MonitorWeights

MODES = ("simulate", "equilibrium", "continue", "sweep", "fit-thinning", "check-bound")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, message, path=None, line=None):
        where = []
        if path:
            where.append(path)
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.path = path
        self.line = line


# ---------------------------------------------------------------------------
# small validation helpers
# ---------------------------------------------------------------------------


class _Section:
    """Read keys from one mapping, remembering which were consumed."""

    def __init__(self, data, path):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("expected a mapping", path)
        self.data = data
        self.path = path
        self.used = set()

    def key(self, name):
        return f"{self.path}.{name}" if self.path else name

    def get(self, name, default=None, kind=None, check=None, message=None):
        self.used.add(name)
        if name not in self.data or self.data[name] is None:
            return default
        value = self.data[name]
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"expected a number, got {value!r}", self.key(name))
            value = float(value)
            if not math.isfinite(value):
                raise ConfigError("must be finite", self.key(name))
        elif kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"expected an integer, got {value!r}", self.key(name))
        elif kind is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"expected true/false, got {value!r}", self.key(name))
        elif kind is str:
            if not isinstance(value, str):
                raise ConfigError(f"expected a string, got {value!r}", self.key(name))
        elif kind is list:
            if not isinstance(value, list):
                raise ConfigError(f"expected a list, got {value!r}", self.key(name))
        if check is not None and not check(value):
            raise ConfigError(message or f"invalid value {value!r}", self.key(name))
        return value

    def section(self, name):
        self.used.add(name)
        return _Section(self.data.get(name), self.key(name))

    def number_list(self, name, default=()):
        values = self.get(name, None, list)
        if values is None:
            return tuple(default)
        out = []
        for i, v in enumerate(values):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"expected a number, got {v!r}", f"{self.key(name)}[{i}]")
            out.append(float(v))
        return tuple(out)

    def finish(self):
        unknown = sorted(set(self.data) - self.used)
        if unknown:
            raise ConfigError(f"unknown key {unknown[0]!r}", self.key(unknown[0]))


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# ---------------------------------------------------------------------------
# config dataclasses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialData:
    """Constant values, tabulated ``(x, y)`` samples, or a profile CSV."""

    h: object = 1.0
    s: object = 1.0
    file: str | None = None

    def build(self, n_nodes, length, base_dir=Path(".")):
        if self.file is not None:
            x, h, s = read_profile_csv(base_dir / self.file)
            if not np.isclose(x[-1], length, rtol=1e-12):
                raise ConfigError(f"profile spans [0, {x[-1]}], expected [0, {length}]",
                                  "initial.file")
            return SolutionState(x, h, s)
        mesh = np.linspace(0.0, length, n_nodes)
        return SolutionState(mesh, self._eval(self.h, mesh), self._eval(self.s, mesh))

    @staticmethod
    def _eval(spec, mesh):
        if isinstance(spec, float):
            return np.full(mesh.size, spec)
        xs, ys = spec
        return np.interp(mesh, xs, ys)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    snapshot_times: tuple = ()
    profiles: bool = True


@dataclass(frozen=True)
class HorizonRule:
    """Per-run horizon for sweeps.

    With ``h_target`` set, a run with ``m > 1`` stops at the time the thinning
    law ``(1 + eta (m-1) t)^(-1/(m-1))`` reaches ``h_target``, capped at
    ``t_max``.  Runs with ``m <= 1`` always use ``t_max``.
    """

    t_max: float = 1.0
    h_target: float | None = None
    eta: float | None = None

    def t_end(self, m, eta_default):
        if self.h_target is None or m <= 1:
            return self.t_max
        eta = self.eta if self.eta is not None else eta_default
        t = (self.h_target ** (1.0 - m) - 1.0) / (eta * (m - 1.0))
        return float(min(self.t_max, max(t, 0.0)))


@dataclass(frozen=True)
class NumericsConfig:
    n_nodes: int = 401
    t_end: float = 1.0
    rupture_floor: float | None = None
    steady_tol: float = 1e-9
    max_steps: int = 2_000_000
    controller: dict = field(default_factory=dict)
    mesh: MeshPolicy = FIXED_MESH

    def make_controller(self):
        return StepController(**self.controller)


@dataclass(frozen=True)
class LeadIn:
    """Preliminary continuation from an easy start to the configured value.

    A cold Newton solve converges only near a nearly flat equilibrium (for a
    step capacity, narrow ``xi``), so harder targets are reached by tracing
    ``parameter`` from ``start`` up to its value in ``params``.
    """

    parameter: str = "xi"
    start: float = 0.1


@dataclass(frozen=True)
class EquilibriumConfig:
    Q0: float | None = None
    parameter: str = "xi"
    start: float | None = None
    stop: float | None = None
    couple_n: bool = True
    ds: float = 0.02
    ds_max: float = 0.2
    ds_min: float = 1e-6
    h_fold_floor: float = 1e-3
    threshold: float = 0.0
    lead_in: LeadIn | None = None


@dataclass(frozen=True)
class SweepConfig:
    parameter: str = "m"
    values: tuple = ()
    couple_n: bool = True
    horizon: HorizonRule = HorizonRule()
    classify: bool = True


@dataclass(frozen=True)
class FitConfig:
    series: str | None = None
    m: float | None = None
    eta: float | None = None


@dataclass(frozen=True)
class BoundConfig:
    A: float = 0.0
    C: float = 0.0
    tau: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    params: ModelParams | None
    initial: InitialData
    numerics: NumericsConfig
    output: OutputConfig
    equilibrium: EquilibriumConfig
    sweep: SweepConfig
    fit: FitConfig
    bound: BoundConfig
    base_dir: str = "."
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    def initial_state(self):
        return self.initial.build(self.numerics.n_nodes, self.params.domain_length, Path(self.base_dir))

    def effective(self):
        """Plain-data dump of the post-default configuration."""
        return {
            "mode": self.mode,
            "params": params_to_dict(self.params) if self.params is not None else None,
            "initial": {"h": _initial_to_data(self.initial.h), "s": _initial_to_data(self.initial.s),
                        "file": self.initial.file},
            "numerics": {
                "n_nodes": self.numerics.n_nodes,
                "t_end": self.numerics.t_end,
                "rupture_floor": self.numerics.rupture_floor,
                "steady_tol": self.numerics.steady_tol,
                "max_steps": self.numerics.max_steps,
                "controller": asdict(self.numerics.make_controller()),
                "mesh": _mesh_to_dict(self.numerics.mesh),
            },
            "output": {"directory": self.output.directory,
                       "snapshot_times": list(self.output.snapshot_times),
                       "profiles": self.output.profiles},
            "equilibrium": asdict(self.equilibrium),
            "sweep": {"parameter": self.sweep.parameter, "values": list(self.sweep.values),
                      "couple_n": self.sweep.couple_n, "classify": self.sweep.classify,
                      "horizon": asdict(self.sweep.horizon)},
            "fit": asdict(self.fit),
            "bound": asdict(self.bound),
        }


def _initial_to_data(spec):
    if isinstance(spec, float):
        return spec
    return {"x": list(spec[0]), "y": list(spec[1])}


def _mesh_to_dict(policy):
    d = {
        "adaptive": policy.enabled,
        "every": policy.every,
        "imbalance": policy.imbalance,
        "uniform_fraction": policy.uniform_fraction,
        "n_nodes": policy.n_nodes,
    }
    d.update(asdict(policy.weights))
    return d


def sbar_to_dict(sbar):
    if isinstance(sbar, ConstantSbar):
        return {"kind": "constant", "value": sbar.value}
    if isinstance(sbar, StepSbar):
        return {"kind": "step", "lo": sbar.lo, "hi": sbar.hi, "xi": sbar.xi}
    if isinstance(sbar, TanhSbar):
        return {"kind": "tanh", "base": sbar.base, "amplitude": sbar.amplitude,
                "steepness": sbar.steepness, "center": sbar.center, "half_width": sbar.half_width}
    return {"kind": "table", "x": list(sbar.x), "y": list(sbar.y)}


def params_to_dict(p):
    return {"m": p.m, "n": p.n, "epsilon": p.epsilon, "domain_length": p.domain_length,
            "salt_floor": p.salt_floor, "height_floor": p.height_floor, "sbar": sbar_to_dict(p.sbar)}


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _parse_sbar(sec, length):
    kind = sec.get("kind", None, str)
    if kind is None:
        raise ConfigError("missing capacity kind (constant, step, tanh or table)", sec.key("kind"))
    try:
        if kind == "constant":
            prof = ConstantSbar(sec.get("value", None, float))
        elif kind == "step":
            prof = StepSbar(sec.get("lo", 2.0, float), sec.get("hi", 100.0, float),
                            sec.get("xi", None, float))
        elif kind == "tanh":
            prof = TanhSbar(sec.get("base", None, float), sec.get("amplitude", None, float),
                            sec.get("steepness", None, float), sec.get("center", 0.5 * length, float),
                            sec.get("half_width", None, float))
        elif kind == "table":
            prof = TableSbar(sec.number_list("x"), sec.number_list("y"))
        else:
            raise ConfigError(f"unknown capacity kind {kind!r}", sec.key("kind"))
    except (DomainError, TypeError) as exc:
        raise ConfigError(str(exc), sec.path) from None
    sec.finish()
    return prof


def _parse_initial_field(sec, name):
    sec.used.add(name)
    value = sec.data.get(name)
    if value is None:
        return 1.0
    if isinstance(value, bool):
        raise ConfigError("expected a number or a table", sec.key(name))
    if isinstance(value, (int, float)):
        if not value > 0 and name == "h":
            raise ConfigError("initial film thickness must be > 0", sec.key(name))
        return float(value)
    tab = _Section(value, sec.key(name))
    xs = tab.number_list("x")
    ys = tab.number_list("y")
    tab.finish()
    if len(xs) < 2 or len(xs) != len(ys) or np.any(np.diff(xs) <= 0):
        raise ConfigError("table needs increasing x and matching y (at least two samples)",
                          sec.key(name))
    if name == "h" and min(ys) <= 0:
        raise ConfigError("initial film thickness must be > 0", sec.key(name))
    return (xs, ys)


def _parse_mesh(sec):
    adaptive = sec.get("adaptive", False, bool)
    weights = MonitorWeights(
        alpha_h=sec.get("alpha_h", 1.0, float, _nonneg, "must be >= 0"),
        alpha_s=sec.get("alpha_s", 1.0, float, _nonneg, "must be >= 0"),
        beta=sec.get("beta", 1e-2, float, _nonneg, "must be >= 0"),
        delta_h=sec.get("delta_h", 1e-6, float, _positive, "must be > 0"),
    )
    every = sec.get("every", 5, int, lambda v: v >= 1, "must be >= 1")
    imbalance = sec.get("imbalance", 2.0, float, lambda v: v > 1, "must be > 1")
    frac = sec.get("uniform_fraction", 0.2, float, lambda v: 0 <= v < 1, "must lie in [0, 1)")
    n_nodes = sec.get("n_nodes", None, int, lambda v: v >= 5, "must be >= 5")
    sec.finish()
    return MeshPolicy(enabled=adaptive, every=every, imbalance=imbalance, weights=weights,
                      n_nodes=n_nodes, uniform_fraction=frac)


_CONTROLLER_KEYS = {
    "dt": _positive, "dt_min": _positive, "dt_max": _positive, "growth": lambda v: v > 1,
    "shrink": lambda v: 0 < v < 1, "newton_tol": _positive, "theta": lambda v: 0.5 <= v <= 1,
    "max_rel_change": _positive,
}


def _parse_numerics(sec):
    controller = {}
    for key, check in _CONTROLLER_KEYS.items():
        v = sec.get(key, None, float, check)
        if v is not None:
            controller[key] = v
    for key in ("max_newton_iters", "fast_iters"):
        v = sec.get(key, None, int, lambda v: v >= 1, "must be >= 1")
        if v is not None:
            controller[key] = v
    try:
        StepController(**controller)
    except ValueError as exc:
        raise ConfigError(str(exc), sec.path) from None
    num = NumericsConfig(
        n_nodes=sec.get("n_nodes", 401, int, lambda v: 5 <= v, "must be >= 5"),
        t_end=sec.get("t_end", 1.0, float, _positive, "must be > 0"),
        rupture_floor=sec.get("rupture_floor", None, float, _positive, "must be > 0"),
        steady_tol=sec.get("steady_tol", 1e-9, float, _positive, "must be > 0"),
        max_steps=sec.get("max_steps", 2_000_000, int, _positive, "must be > 0"),
        controller=controller,
        mesh=_parse_mesh(sec.section("mesh")),
    )
    sec.finish()
    return num


def _parse_params(sec, initial_spec):
    length = sec.get("domain_length", 2.0, float, _positive, "must be > 0")
    m = sec.get("m", None, float)
    if m is None:
        raise ConfigError("required", sec.key("m"))
    if m < 0:
        raise ConfigError(f"must be >= 0, got {m}", sec.key("m"))
    n = sec.get("n", m + 1.0, float, _nonneg, "must be >= 0")
    eps = sec.get("epsilon", 0.0, float, _nonneg, "must be >= 0")
    sbar_sec = sec.section("sbar")
    if not sbar_sec.data:
        raise ConfigError("required", sec.key("sbar"))
    sbar = _parse_sbar(sbar_sec, length)
    if isinstance(sbar, StepSbar) and not sbar.xi < 0.5 * length:
        raise ConfigError(f"must be < L/2 = {0.5 * length}, got {sbar.xi}", sec.key("sbar.xi"))
    salt_floor = sec.get("salt_floor", None, float, _positive, "must be > 0")
    height_floor = sec.get("height_floor", None, float, _positive, "must be > 0")
    sec.finish()
    if salt_floor is None or height_floor is None:
        lo_s, lo_h = _initial_minima(initial_spec)
        if salt_floor is None:
            probe = np.linspace(0.0, length, 4001)
            salt_floor = float(min(lo_s, np.min(sbar.values(probe, length)))) if lo_s else 1.0
            if not salt_floor > 0:
                salt_floor = lo_s if lo_s and lo_s > 0 else 1.0
        if height_floor is None:
            height_floor = lo_h if lo_h else 1.0
    try:
        return ModelParams(m, n, sbar, eps, length, salt_floor, height_floor)
    except DomainError as exc:
        raise ConfigError(str(exc), "params") from None


def _parse_lead_in(eq):
    if eq.data.get("lead_in") is None:
        eq.used.add("lead_in")
        return None
    sec = eq.section("lead_in")
    lead = LeadIn(
        parameter=sec.get("parameter", "xi", str, lambda v: v in ("xi", "m", "n", "sigma"),
                          "must be one of xi, m, n, sigma"),
        start=sec.get("start", 0.1, float),
    )
    sec.finish()
    return lead


def _initial_minima(initial):
    if initial.file is not None:
        return None, None

    def lo(spec):
        return spec if isinstance(spec, float) else float(min(spec[1]))

    return lo(initial.s), lo(initial.h)


def parse_config(text, base_dir="."):
    """Parse and validate a YAML experiment description."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"syntax error: {problem}", line=line) from None
    root = _Section(data if data is not None else {}, "")
    mode = root.get("mode", "simulate", str)
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}", "mode")

    ini = root.section("initial")
    initial = InitialData(
        h=_parse_initial_field(ini, "h"),
        s=_parse_initial_field(ini, "s"),
        file=ini.get("file", None, str),
    )
    ini.finish()

    needs_params = mode not in ("fit-thinning", "check-bound")
    psec = root.section("params")
    params = _parse_params(psec, initial) if (needs_params or psec.data) else None

    numerics = _parse_numerics(root.section("numerics"))

    out = root.section("output")
    output = OutputConfig(
        directory=out.get("directory", "out", str),
        snapshot_times=out.number_list("snapshot_times"),
        profiles=out.get("profiles", True, bool),
    )
    if any(t < 0 for t in output.snapshot_times):
        raise ConfigError("snapshot times must be >= 0", "output.snapshot_times")
    out.finish()

    eq = root.section("equilibrium")
    equilibrium = EquilibriumConfig(
        Q0=eq.get("Q0", None, float, _positive, "must be > 0"),
        parameter=eq.get("parameter", "xi", str, lambda v: v in ("xi", "m", "n", "sigma"),
                         "must be one of xi, m, n, sigma"),
        start=eq.get("start", None, float),
        stop=eq.get("stop", None, float),
        couple_n=eq.get("couple_n", True, bool),
        ds=eq.get("ds", 0.02, float, _positive, "must be > 0"),
        ds_max=eq.get("ds_max", 0.2, float, _positive, "must be > 0"),
        ds_min=eq.get("ds_min", 1e-6, float, _positive, "must be > 0"),
        h_fold_floor=eq.get("h_fold_floor", 1e-3, float, _positive, "must be > 0"),
        threshold=eq.get("threshold", 0.0, float, _nonneg, "must be >= 0"),
        lead_in=_parse_lead_in(eq),
    )
    eq.finish()
    if mode == "continue" and (equilibrium.start is None or equilibrium.stop is None):
        raise ConfigError("continue mode needs equilibrium.start and equilibrium.stop", "equilibrium")

    sw = root.section("sweep")
    hz = sw.section("horizon")
    horizon = HorizonRule(
        t_max=hz.get("t_max", numerics.t_end, float, _positive, "must be > 0"),
        h_target=hz.get("h_target", None, float, lambda v: 0 < v < 1, "must lie in (0, 1)"),
        eta=hz.get("eta", None, float, _positive, "must be > 0"),
    )
    hz.finish()
    sweep = SweepConfig(
        parameter=sw.get("parameter", "m", str, lambda v: v in ("m", "xi"), "must be m or xi"),
        values=sw.number_list("values"),
        couple_n=sw.get("couple_n", True, bool),
        horizon=horizon,
        classify=sw.get("classify", True, bool),
    )
    sw.finish()
    if mode == "sweep" and not sweep.values:
        raise ConfigError("sweep mode needs a non-empty list", "sweep.values")

    ft = root.section("fit")
    fit = FitConfig(series=ft.get("series", None, str), m=ft.get("m", None, float),
                    eta=ft.get("eta", None, float, _positive, "must be > 0"))
    ft.finish()
    if mode == "fit-thinning":
        if fit.series is None:
            raise ConfigError("required in fit-thinning mode", "fit.series")
        if fit.m is None and params is None:
            raise ConfigError("required in fit-thinning mode (or give params.m)", "fit.m")

    bd = root.section("bound")
    bound = BoundConfig(
        A=bd.get("A", 0.0, float, _nonneg, "must be >= 0"),
        C=bd.get("C", 0.0, float, _nonneg, "must be >= 0"),
        tau=bd.get("tau", 0.0, float, lambda v: 0 <= v < 2, "must lie in [0, 2)"),
    )
    bd.finish()
    root.finish()
    return ExperimentConfig(mode, params, initial, numerics, output, equilibrium, sweep, fit,
                            bound, str(base_dir), data or {})


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


# ---------------------------------------------------------------------------
# profile CSV
# ---------------------------------------------------------------------------

PROFILE_HEADER = ("x", "h", "s", "sbar")


def read_profile_csv(path):
    """Read ``x, h, s`` columns of a profile CSV written by :func:`write_profile_csv`."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:3]) != PROFILE_HEADER[:3]:
            raise ConfigError(f"{path}: expected header starting with x,h,s")
        rows = [[float(v) for v in row[:3]] for row in reader if row]
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1], arr[:, 2]
