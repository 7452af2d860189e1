"""Grids, coefficient fields and quadrature.

Fields are cell averages on a uniform rectangular grid (an interval in 1D,
a rectangle with square cells in 2D).  Arrays are stored with shape
``domain.shape``; linear algebra uses the C-order flattening.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CoefficientBoundsError,
    ConfigurationError,
    PositivityError,
    PreconditionError,
)

# relative slack used when comparing sampled coefficients against declared bounds
BOUNDS_RTOL = 1e-12


@dataclass(frozen=True)
class Domain:
    lengths: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.lengths)
        cells = tuple(int(n) for n in self.cells)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "cells", cells)
        if len(lengths) not in (1, 2) or len(cells) != len(lengths):
            raise ConfigurationError("dim must be 1 or 2 with one cell count per axis", "domain")
        for n in cells:
            if n < 4:
                raise ConfigurationError(f"every cell count must be >= 4, got {n}", "domain.cells")
        for L in lengths:
            if not (L > 0 and math.isfinite(L)):
                raise ConfigurationError(f"every length must be > 0, got {L}", "domain.lengths")
        if len(cells) == 2:
            hx, hy = lengths[0] / cells[0], lengths[1] / cells[1]
            if not math.isclose(hx, hy, rel_tol=1e-12):
                raise ConfigurationError(
                    f"2D cells must be square (h_x={hx}, h_y={hy})", "domain.cells"
                )

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return math.prod(self.cells)

    @property
    def cell_size(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def h(self) -> float:
        return self.cell_size[0]

    @property
    def measure(self) -> float:
        return math.prod(self.lengths)

    @property
    def weight(self) -> float:
        """Quadrature weight (volume) of a single cell."""
        return math.prod(self.cell_size)

    def weights(self) -> np.ndarray:
        return np.full(self.shape, self.weight)

    def edges(self, axis: int) -> np.ndarray:
        n = self.cells[axis]
        return np.arange(n + 1) * self.cell_size[axis]

    def centers(self, axis: int) -> np.ndarray:
        n = self.cells[axis]
        return (np.arange(n) + 0.5) * self.cell_size[axis]

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[self.centers(d) for d in range(self.dim)], indexing="ij"))

    def refined(self, factor: int) -> "Domain":
        return Domain(self.lengths, tuple(n * factor for n in self.cells))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "lengths": list(self.lengths), "cells": list(self.cells)}


@dataclass(frozen=True)
class ScalarField:
    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.domain.shape:
            vals = vals.reshape(self.domain.shape)
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("field contains NaN or Inf")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.domain, values)

    @classmethod
    def constant(cls, domain: Domain, c: float) -> "ScalarField":
        return cls(domain, np.full(domain.shape, float(c)))


@dataclass(frozen=True)
class State:
    t: float
    u: ScalarField

    def __post_init__(self):
        if not self.u.min() > 0:
            raise PositivityError(f"state at t={self.t} has min u = {self.u.min()!r} <= 0")


# ---------------------------------------------------------------------------
# coefficient expressions
# ---------------------------------------------------------------------------

def _axis_cos_average(edges: np.ndarray, k: float, L: float) -> np.ndarray:
    if k == 0:
        return np.ones(len(edges) - 1)
    w = k * math.pi / L
    return np.diff(np.sin(w * edges)) / (w * np.diff(edges))


def _axis_poly_average(edges: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.ones(len(edges) - 1)
    return np.diff(edges ** (p + 1)) / ((p + 1) * np.diff(edges))


def _outer(factors: Sequence[np.ndarray]) -> np.ndarray:
    out = factors[0]
    for f in factors[1:]:
        out = np.multiply.outer(out, f)
    return out


@dataclass(frozen=True)
class FourierTime:
    """``mean + sum_k sin[k] sin(2 pi k t/period) + cos[k] cos(2 pi k t/period)``, k = 1, 2, ..."""

    mean: float = 1.0
    period: float = 1.0
    sin: tuple[float, ...] = ()
    cos: tuple[float, ...] = ()

    def __call__(self, t: float) -> float:
        val = self.mean
        for k, c in enumerate(self.sin, start=1):
            val += c * math.sin(2 * math.pi * k * t / self.period)
        for k, c in enumerate(self.cos, start=1):
            val += c * math.cos(2 * math.pi * k * t / self.period)
        return val

    @property
    def is_constant(self) -> bool:
        return not any(self.sin) and not any(self.cos)


@dataclass(frozen=True)
class SpacePart:
    """Sum of a constant, separable cosine modes and monomials, averaged exactly over cells.

    ``cos_modes`` holds ``(amp, (k_1, ..))`` for ``amp * prod_d cos(k_d pi x_d / L_d)``;
    ``poly`` holds ``(amp, (p_1, ..))`` for ``amp * prod_d x_d**p_d``.
    """

    constant: float = 1.0
    cos_modes: tuple[tuple[float, tuple[int, ...]], ...] = ()
    poly: tuple[tuple[float, tuple[int, ...]], ...] = ()

    def cell_averages(self, domain: Domain) -> np.ndarray:
        out = np.full(domain.shape, float(self.constant))
        for amp, ks in self.cos_modes:
            ks = _pad(ks, domain.dim)
            out = out + amp * _outer(
                [_axis_cos_average(domain.edges(d), ks[d], domain.lengths[d]) for d in range(domain.dim)]
            )
        for amp, ps in self.poly:
            ps = _pad(ps, domain.dim)
            out = out + amp * _outer([_axis_poly_average(domain.edges(d), ps[d]) for d in range(domain.dim)])
        return out


def _pad(ks, dim):
    ks = tuple(ks)
    if len(ks) > dim:
        raise ConfigurationError(f"mode {ks} has more entries than dim={dim}")
    return ks + (0,) * (dim - len(ks))


class CoeffExpr:
    """Base class of coefficient descriptors; subclasses implement ``evaluate``."""

    time_independent: bool = False
    period: float | None = None

    def evaluate(self, t: float, domain: Domain) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(CoeffExpr):
    value: float

    time_independent = True

    def evaluate(self, t, domain):
        return np.full(domain.shape, float(self.value))

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class Separable(CoeffExpr):
    time: FourierTime = field(default_factory=FourierTime)
    space: SpacePart = field(default_factory=SpacePart)

    @property
    def time_independent(self):
        return self.time.is_constant

    @property
    def period(self):
        return None if self.time.is_constant else self.time.period

    def evaluate(self, t, domain):
        return self.time(t) * self.space.cell_averages(domain)

    def to_dict(self):
        return {
            "kind": "separable",
            "time": {
                "mean": self.time.mean,
                "period": self.time.period,
                "sin": list(self.time.sin),
                "cos": list(self.time.cos),
            },
            "space": {
                "constant": self.space.constant,
                "cos": [{"amp": a, "k": list(k)} for a, k in self.space.cos_modes],
                "poly": [{"amp": a, "powers": list(p)} for a, p in self.space.poly],
            },
        }


@dataclass(frozen=True, eq=False)
class Tabulated(CoeffExpr):
    """Per-cell samples at increasing ``times``; ``interp`` is 'linear' or 'previous'.

    With ``period`` set, time is wrapped into ``[times[0], times[0] + period)`` and the
    first sample closes the cycle.  Outside the table (non-periodic) the end values hold.
    """

    times: np.ndarray
    values: np.ndarray
    interp: str = "linear"
    table_period: float | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or len(times) < 1 or np.any(np.diff(times) <= 0):
            raise ConfigurationError("times must be a strictly increasing 1D list", "tabulated.times")
        if values.shape[0] != len(times):
            raise ConfigurationError("need one sample field per time", "tabulated.values")
        if self.interp not in ("linear", "previous"):
            raise ConfigurationError(f"unknown interp {self.interp!r}", "tabulated.interp")
        if self.table_period is not None and times[-1] - times[0] >= self.table_period:
            raise ConfigurationError("samples must span less than one period", "tabulated.period")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def time_independent(self):
        return len(self.times) == 1 or bool(np.all(self.values == self.values[0]))

    @property
    def period(self):
        return self.table_period

    def evaluate(self, t, domain):
        if self.values.shape[1:] != domain.shape:
            raise ConfigurationError(
                f"table shape {self.values.shape[1:]} does not match domain {domain.shape}",
                "tabulated.values",
            )
        times, vals = self.times, self.values
        if self.table_period is not None:
            T = self.table_period
            t = times[0] + math.fmod(t - times[0], T)
            if t < times[0]:
                t += T
            times = np.append(times, times[0] + T)
            vals = np.concatenate([vals, vals[:1]])
        if t <= times[0]:
            return vals[0].copy()
        if t >= times[-1]:
            return vals[-1].copy()
        j = int(np.searchsorted(times, t, side="right")) - 1
        if self.interp == "previous":
            return vals[j].copy()
        lam = (t - times[j]) / (times[j + 1] - times[j])
        return (1 - lam) * vals[j] + lam * vals[j + 1]

    def to_dict(self):
        return {
            "kind": "tabulated",
            "times": self.times.tolist(),
            "values": self.values.tolist(),
            "interp": self.interp,
            "period": self.table_period,
        }


def coeff_from_dict(desc, path="coeff") -> CoeffExpr:
    """Build a CoeffExpr from its JSON descriptor; numbers are shorthand for Constant."""
    if isinstance(desc, (int, float)) and not isinstance(desc, bool):
        return Constant(float(desc))
    if not isinstance(desc, Mapping):
        raise ConfigurationError("descriptor must be a number or an object", path)
    kind = desc.get("kind")
    try:
        if kind == "constant":
            return Constant(float(desc["value"]))
        if kind == "separable":
            tp = desc.get("time", {})
            sp = desc.get("space", {})
            time = FourierTime(
                mean=float(tp.get("mean", 1.0)),
                period=float(tp.get("period", 1.0)),
                sin=tuple(float(c) for c in tp.get("sin", ())),
                cos=tuple(float(c) for c in tp.get("cos", ())),
            )
            if time.period <= 0:
                raise ConfigurationError("period must be positive", f"{path}.time.period")
            space = SpacePart(
                constant=float(sp.get("constant", 1.0)),
                cos_modes=tuple((float(m["amp"]), tuple(int(k) for k in m["k"])) for m in sp.get("cos", ())),
                poly=tuple((float(m["amp"]), tuple(int(p) for p in m["powers"])) for m in sp.get("poly", ())),
            )
            return Separable(time, space)
        if kind == "tabulated":
            return Tabulated(
                times=desc["times"],
                values=desc["values"],
                interp=desc.get("interp", "linear"),
                table_period=desc.get("period"),
            )
    except ConfigurationError as exc:
        if exc.path and not exc.path.startswith(path):
            raise ConfigurationError(str(exc).split(": ", 1)[-1], f"{path}.{exc.path}") from None
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed descriptor ({exc})", path) from None
    raise ConfigurationError(f"unknown kind {kind!r}", f"{path}.kind")


def eval_coeff(expr: CoeffExpr, t: float, domain: Domain) -> ScalarField:
    return ScalarField(domain, expr.evaluate(t, domain))


@dataclass(frozen=True)
class AuditReport:
    observed_min: float
    observed_max: float
    claimed_inf: float
    claimed_sup: float
    samples: int
    period_ok: bool | None

    @property
    def passed(self) -> bool:
        ok = self.claimed_inf <= self.observed_min and self.observed_max <= self.claimed_sup
        return ok and self.period_ok is not False

    def to_dict(self):
        return {
            "observed_min": self.observed_min,
            "observed_max": self.observed_max,
            "claimed_inf": self.claimed_inf,
            "claimed_sup": self.claimed_sup,
            "samples": self.samples,
            "period_ok": self.period_ok,
            "passed": self.passed,
        }


def coeff_audit(expr, claimed_inf, claimed_sup, t_window, samples, domain) -> AuditReport:
    """Sample ``expr`` densely on ``t_window x (refined grid)`` and compare with the claim."""
    if samples < 1000:
        raise PreconditionError("coeff_audit needs samples >= 1000")
    grid = domain
    if not isinstance(expr, Tabulated):
        while grid.size < 64:
            grid = grid.refined(2)
    nt = 1 if expr.time_independent else max(2, math.ceil(samples / grid.size))
    t0, t1 = t_window
    ts = np.linspace(t0, t1, nt)
    lo, hi = math.inf, -math.inf
    count = 0
    for t in ts:
        vals = expr.evaluate(float(t), grid)
        lo = min(lo, float(vals.min()))
        hi = max(hi, float(vals.max()))
        count += vals.size
    period_ok = None
    if expr.period is not None:
        T = expr.period
        period_ok = all(
            np.max(np.abs(expr.evaluate(float(t), grid) - expr.evaluate(float(t) + T, grid))) <= 1e-12
            for t in ts[:: max(1, nt // 16)]
        )
    return AuditReport(lo, hi, float(claimed_inf), float(claimed_sup), count, period_ok)


@dataclass(frozen=True, eq=False)
class Coefficients:
    chi: float
    mu: float
    nu: float
    a_field: CoeffExpr
    b_field: CoeffExpr
    a_inf: float
    a_sup: float
    b_inf: float
    b_sup: float
    period: float | None = None
    # Hölder-in-time data of the standing hypothesis; recorded, never used numerically
    holder_exponent: float | None = None
    holder_constant: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.chi >= 0:
            raise ConfigurationError(f"must be nonnegative, got {self.chi}", "coefficients.chi")
        for name in ("mu", "nu"):
            val = getattr(self, name)
            if not val > 0:
                raise ConfigurationError(f"must be positive, got {val}", f"coefficients.{name}")
        if not 0 < self.a_inf <= self.a_sup:
            raise ConfigurationError("need 0 < a_inf <= a_sup", "coefficients.a_bounds")
        if not 0 < self.b_inf <= self.b_sup:
            raise ConfigurationError("need 0 < b_inf <= b_sup", "coefficients.b_bounds")
        if self.period is not None and not self.period > 0:
            raise ConfigurationError("period must be positive", "coefficients.period")

    @property
    def time_independent(self) -> bool:
        return self.a_field.time_independent and self.b_field.time_independent

    def replace(self, **changes) -> "Coefficients":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "_cache"}
        kw.update(changes)
        return Coefficients(**kw)

    def _checked(self, which, t, domain):
        expr = self.a_field if which == "a" else self.b_field
        key = (which, domain)
        if expr.time_independent and key in self._cache:
            return self._cache[key]
        vals = expr.evaluate(t, domain)
        lo, hi = (self.a_inf, self.a_sup) if which == "a" else (self.b_inf, self.b_sup)
        vmin, vmax = float(vals.min()), float(vals.max())
        if vmin < lo * (1 - BOUNDS_RTOL) or vmax > hi * (1 + BOUNDS_RTOL):
            raise CoefficientBoundsError(
                f"{which}(t={t}) sampled in [{vmin}, {vmax}], declared [{lo}, {hi}]"
            )
        vals.setflags(write=False)
        if expr.time_independent:
            self._cache[key] = vals
        return vals

    def a(self, t: float, domain: Domain) -> np.ndarray:
        return self._checked("a", t, domain)

    def b(self, t: float, domain: Domain) -> np.ndarray:
        return self._checked("b", t, domain)

    def to_dict(self) -> dict:
        return {
            "chi": self.chi,
            "mu": self.mu,
            "nu": self.nu,
            "a": self.a_field.to_dict(),
            "b": self.b_field.to_dict(),
            "a_bounds": [self.a_inf, self.a_sup],
            "b_bounds": [self.b_inf, self.b_sup],
            "period": self.period,
            "holder_exponent": self.holder_exponent,
            "holder_constant": self.holder_constant,
        }


def constant_coefficients(chi=1.0, mu=1.0, nu=1.0, a=1.0, b=1.0, period=None) -> Coefficients:
    return Coefficients(chi, mu, nu, Constant(a), Constant(b), a, a, b, b, period=period)


def integrate(f: ScalarField) -> float:
    return f.domain.weight * float(np.sum(f.values))


def integrate_pow(f: ScalarField, r: float) -> float:
    vals = f.values
    if r < 0 and not np.all(vals > 0):
        raise PositivityError(f"integrate_pow with r={r} needs a strictly positive field")
    return f.domain.weight * float(np.sum(vals**r))
