"""Run configuration: a versioned JSON document parsed into frozen dataclasses.

Every field has an explicit default and ``RunConfig.to_dict`` echoes all of
them, so a manifest always records the full set of inputs.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .model import Coefficients, Constant, Domain, ScalarField, coeff_from_dict
from .stepper import StepControl

SCHEMA_VERSION = 1
EXPERIMENTS = ("simulate", "thresholds", "periodic", "steady", "entire", "sweep")
INITIAL_KINDS = ("constant", "lognormal", "expression", "file")
SWEEP_CAP = 10_000


def _section(raw: Mapping, key: str) -> dict:
    val = raw.get(key, {})
    if val is None:
        return {}
    if not isinstance(val, Mapping):
        raise ConfigurationError("must be an object", key)
    return dict(val)


def _reject_unknown(d: Mapping, allowed, path: str):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigurationError(f"unknown field(s) {extra}", path)


def _num(d: Mapping, key: str, default, path: str, positive=False, allow_none=False):
    val = d.get(key, default)
    if val is None and allow_none:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ConfigurationError(f"expected a finite number, got {val!r}", f"{path}.{key}")
    if positive and not val > 0:
        raise ConfigurationError(f"must be positive, got {val}", f"{path}.{key}")
    return float(val)


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "lognormal"
    value: float = 1.0
    mean: float = 1.0
    sigma: float = 0.5
    space: dict | None = None
    path: str | None = None

    def build(self, domain: Domain, seed: int, base_dir: Path | None = None) -> ScalarField:
        if self.kind == "constant":
            return ScalarField.constant(domain, self.value)
        if self.kind == "lognormal":
            rng = np.random.default_rng(seed)
            return ScalarField(domain, self.mean * np.exp(self.sigma * rng.standard_normal(domain.shape)))
        if self.kind == "expression":
            expr = coeff_from_dict({"kind": "separable", "space": self.space or {}}, "initial.space")
            return ScalarField(domain, expr.space.cell_averages(domain))
        p = Path(self.path)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        try:
            vals = np.loadtxt(p, delimiter=",", ndmin=1)
        except OSError as exc:
            raise ConfigurationError(f"cannot read {p}: {exc}", "initial.path") from None
        if vals.size != domain.size:
            raise ConfigurationError(f"file holds {vals.size} values, grid has {domain.size}", "initial.path")
        return ScalarField(domain, vals.reshape(domain.shape))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TimeSpec:
    t_start: float = 0.0
    t_end: float = 50.0


@dataclass(frozen=True)
class MonitorSpec:
    p: float = 1.0
    q: float = 3.0
    theta: float = 0.5
    tail_fraction: float = 0.2
    holder_cap: int = 16
    estimate_M2: bool = False


@dataclass(frozen=True)
class PeriodicSpec:
    damping: float = 1.0
    tol: float = 1e-8
    max_iter: int = 200


@dataclass(frozen=True)
class SteadySpec:
    tol: float = 1e-10
    t_cap: float = 200.0
    check_every: float = 1.0


@dataclass(frozen=True)
class EntireSpec:
    n_schedule: tuple[int, ...] = (2, 4, 8, 16, 32)
    tol: float = 1e-8
    window: float = 1.0
    window_samples: int = 8


@dataclass(frozen=True)
class SweepSpec:
    axes: dict = field(default_factory=dict)
    experiment: str = "simulate"
    cap: int = SWEEP_CAP


@dataclass(frozen=True)
class RunConfig:
    domain: Domain
    coefficients: Coefficients
    step: StepControl = StepControl()
    initial: InitialSpec = InitialSpec()
    time: TimeSpec = TimeSpec()
    monitor: MonitorSpec = MonitorSpec()
    periodic: PeriodicSpec = PeriodicSpec()
    steady: SteadySpec = SteadySpec()
    entire: EntireSpec = EntireSpec()
    sweep: SweepSpec = SweepSpec()
    experiment: str = "simulate"
    seed: int = 0
    C_star: float = 1.0
    M2_star: float | None = None
    output_dir: str = "out"
    schema_version: int = SCHEMA_VERSION
    base_dir: str | None = None

    def to_dict(self) -> dict:
        """Resolved configuration including every default (``base_dir`` is not echoed)."""
        return {
            "schema_version": self.schema_version,
            "experiment": self.experiment,
            "seed": self.seed,
            "C_star": self.C_star,
            "M2_star": self.M2_star,
            "output_dir": self.output_dir,
            "domain": self.domain.to_dict(),
            "coefficients": self.coefficients.to_dict(),
            "step": self.step.to_dict(),
            "initial": self.initial.to_dict(),
            "time": asdict(self.time),
            "monitor": asdict(self.monitor),
            "periodic": asdict(self.periodic),
            "steady": asdict(self.steady),
            "entire": {**asdict(self.entire), "n_schedule": list(self.entire.n_schedule)},
            "sweep": asdict(self.sweep),
        }

    def initial_field(self) -> ScalarField:
        return self.initial.build(self.domain, self.seed, Path(self.base_dir) if self.base_dir else None)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOP = ("schema_version", "experiment", "seed", "C_star", "M2_star", "output_dir", "domain", "coefficients",
        "step", "initial", "time", "monitor", "periodic", "steady", "entire", "sweep")


def _coeff_bounds(c: Mapping, name: str, expr) -> tuple[float, float]:
    key = f"{name}_bounds"
    if key in c and c[key] is not None:
        b = c[key]
        if not (isinstance(b, (list, tuple)) and len(b) == 2):
            raise ConfigurationError("expected [inf, sup]", f"coefficients.{key}")
        return (_num({"v": b[0]}, "v", None, f"coefficients.{key}"), _num({"v": b[1]}, "v", None, f"coefficients.{key}"))
    if isinstance(expr, Constant):
        return expr.value, expr.value
    raise ConfigurationError("required for non-constant coefficients", f"coefficients.{key}")


def parse_coefficients(c: Mapping) -> Coefficients:
    _reject_unknown(c, ("chi", "mu", "nu", "a", "b", "a_bounds", "b_bounds", "period",
                        "holder_exponent", "holder_constant"), "coefficients")
    a = coeff_from_dict(c.get("a", 1.0), "coefficients.a")
    b = coeff_from_dict(c.get("b", 1.0), "coefficients.b")
    a_inf, a_sup = _coeff_bounds(c, "a", a)
    b_inf, b_sup = _coeff_bounds(c, "b", b)
    period = c.get("period")
    if period is None:
        periods = {p for p in (a.period, b.period) if p is not None}
        if len(periods) > 1:
            raise ConfigurationError("a and b have different periods; set one explicitly", "coefficients.period")
        period = periods.pop() if periods else None
    return Coefficients(
        chi=_num(c, "chi", 1.0, "coefficients"),
        mu=_num(c, "mu", 1.0, "coefficients", positive=True),
        nu=_num(c, "nu", 1.0, "coefficients", positive=True),
        a_field=a, b_field=b, a_inf=a_inf, a_sup=a_sup, b_inf=b_inf, b_sup=b_sup,
        period=None if period is None else _num({"period": period}, "period", None, "coefficients", positive=True),
        holder_exponent=c.get("holder_exponent"),
        holder_constant=c.get("holder_constant"),
    )


def _simple(cls, raw: Mapping, path: str):
    _reject_unknown(raw, cls.__dataclass_fields__, path)
    kw = {}
    for name, f in cls.__dataclass_fields__.items():
        if name not in raw:
            continue
        val = raw[name]
        default = f.default
        if isinstance(default, bool):
            if not isinstance(val, bool):
                raise ConfigurationError("expected true or false", f"{path}.{name}")
        elif isinstance(default, int):
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigurationError(f"expected an integer, got {val!r}", f"{path}.{name}")
        elif isinstance(default, float):
            val = _num(raw, name, None, path)
        kw[name] = val
    try:
        return cls(**kw)
    except (PreconditionError, TypeError) as exc:
        raise ConfigurationError(str(exc), path) from None


def parse_config(raw: Mapping, base_dir: str | Path | None = None) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigurationError("top level must be an object", "config")
    _reject_unknown(raw, _TOP, "config")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported version {version!r}", "schema_version")
    experiment = raw.get("experiment", "simulate")
    if experiment not in EXPERIMENTS:
        raise ConfigurationError(f"must be one of {EXPERIMENTS}", "experiment")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigurationError("must be a nonnegative integer", "seed")

    d = _section(raw, "domain")
    _reject_unknown(d, ("dim", "lengths", "cells"), "domain")
    try:
        domain = Domain(tuple(d.get("lengths", (1.0,))), tuple(d.get("cells", (128,))))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc), "domain") from None
    if "dim" in d and d["dim"] != domain.dim:
        raise ConfigurationError(f"dim {d['dim']!r} disagrees with {domain.dim} axes", "domain.dim")

    coeffs = parse_coefficients(_section(raw, "coefficients"))
    step = _simple(StepControl, _section(raw, "step"), "step")

    ini = _section(raw, "initial")
    _reject_unknown(ini, InitialSpec.__dataclass_fields__, "initial")
    kind = ini.get("kind", "lognormal")
    if kind not in INITIAL_KINDS:
        raise ConfigurationError(f"must be one of {INITIAL_KINDS}", "initial.kind")
    if kind == "file" and not ini.get("path"):
        raise ConfigurationError("file initial data needs a path", "initial.path")
    initial = InitialSpec(
        kind=kind,
        value=_num(ini, "value", 1.0, "initial"),
        mean=_num(ini, "mean", 1.0, "initial", positive=True),
        sigma=_num(ini, "sigma", 0.5, "initial"),
        space=ini.get("space"),
        path=ini.get("path"),
    )
    if kind == "constant" and initial.value < 0:
        raise ConfigurationError("must be nonnegative", "initial.value")

    time = _simple(TimeSpec, _section(raw, "time"), "time")
    if not time.t_end > time.t_start:
        raise ConfigurationError("t_end must exceed t_start", "time.t_end")
    monitor = _simple(MonitorSpec, _section(raw, "monitor"), "monitor")
    if monitor.p != 1.0:
        raise ConfigurationError("only p = 1 is supported", "monitor.p")
    if not 0 < monitor.tail_fraction < 1:
        raise ConfigurationError("must lie in (0, 1)", "monitor.tail_fraction")
    if not 0 < monitor.theta < 1:
        raise ConfigurationError("must lie in (0, 1)", "monitor.theta")
    if not monitor.q > 1:
        raise ConfigurationError("must exceed 1", "monitor.q")
    periodic = _simple(PeriodicSpec, _section(raw, "periodic"), "periodic")
    if not 0 < periodic.damping <= 1:
        raise ConfigurationError("must lie in (0, 1]", "periodic.damping")
    steady = _simple(SteadySpec, _section(raw, "steady"), "steady")

    e = _section(raw, "entire")
    sched = e.pop("n_schedule", list(EntireSpec.n_schedule))
    if (not isinstance(sched, list) or not sched or any(isinstance(n, bool) or not isinstance(n, int) or n <= 0 for n in sched)
            or any(b <= a for a, b in zip(sched, sched[1:]))):
        raise ConfigurationError("must be an increasing list of positive integers", "entire.n_schedule")
    entire = _simple(EntireSpec, e, "entire")
    entire = EntireSpec(tuple(sched), entire.tol, entire.window, entire.window_samples)

    s = _section(raw, "sweep")
    sweep = _simple(SweepSpec, s, "sweep")
    if not isinstance(sweep.axes, Mapping):
        raise ConfigurationError("must map parameter paths to value lists", "sweep.axes")
    for k, vals in sweep.axes.items():
        if not isinstance(vals, list) or not vals:
            raise ConfigurationError("must be a nonempty list", f"sweep.axes.{k}")
    if sweep.experiment not in EXPERIMENTS or sweep.experiment == "sweep":
        raise ConfigurationError("must name a non-sweep experiment", "sweep.experiment")

    return RunConfig(
        domain=domain, coefficients=coeffs, step=step, initial=initial, time=time, monitor=monitor,
        periodic=periodic, steady=steady, entire=entire, sweep=sweep, experiment=experiment, seed=seed,
        C_star=_num(raw, "C_star", 1.0, "config", positive=True),
        M2_star=_num(raw, "M2_star", None, "config", positive=True, allow_none=True),
        output_dir=str(raw.get("output_dir", "out")),
        base_dir=None if base_dir is None else str(base_dir),
    )


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read: {exc}", "config") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON: {exc}", "config") from None
    return parse_config(raw, base_dir=p.parent)


def set_path(raw: dict, dotted: str, value: Any) -> dict:
    """Return a deep copy of ``raw`` with ``dotted`` (e.g. ``coefficients.chi``) set to ``value``."""
    out = copy.deepcopy(raw)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigurationError("cannot descend into a non-object", dotted)
        node = nxt
    node[keys[-1]] = value
    return out
