"""Closed-form constants, threshold verdicts, and trajectory-wide envelope checks.

Everything here uses p = 1 for the negative moment: the optimized
chemotaxis/diffusion balance collapses to the single constant returned by
:func:`a_chi_mu`.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import PositivityError, PreconditionError
from .model import Coefficients, Domain, ScalarField, integrate, integrate_pow

P = 1.0
DIAGNOSTICS_COLUMNS = (
    "t",
    "mass",
    "neg_p_moment",
    "q_moment",
    "min_u",
    "max_u",
    "min_v",
    "holder_seminorm",
    "rectangle_member",
)
DIAGNOSTICS_CSV_VERSION = 1
HOLDER_CAP_2D = 16
ENVELOPE_SLACK = 0.05


def a_chi_mu(chi: float, mu: float) -> float:
    if not (chi >= 0 and mu > 0):
        raise PreconditionError("need chi >= 0 and mu > 0")
    return 2.0 * (chi + 2.0 - 2.0 * math.sqrt(chi + 1.0)) * mu


def a_chi_mu_upper(chi: float, mu: float) -> float:
    """The simple majorant ``mu chi^2/2`` (chi <= 2) or ``2 mu (chi - 1)`` (chi > 2)."""
    return mu * chi**2 / 2 if chi <= 2 else 2 * mu * (chi - 1)


@dataclass(frozen=True)
class Verdict:
    ok: bool
    margin: float
    threshold: float

    def __bool__(self):
        return self.ok


def main_assumption_threshold(chi: float, mu: float) -> float:
    return mu * chi**2 / 4 if chi <= 2 else mu * (chi - 1)


def check_main_assumption(coeffs: Coefficients) -> Verdict:
    """Strict test ``a_inf > mu chi^2/4`` (chi <= 2) or ``a_inf > mu (chi - 1)`` (chi > 2)."""
    thr = main_assumption_threshold(coeffs.chi, coeffs.mu)
    return Verdict(coeffs.a_inf > thr, coeffs.a_inf - thr, thr)


def p_n(dim: int) -> int:
    return max(2, dim)


def growth_condition_rhs(chi, mu, b_inf, b_sup, measure, dim, delta0, C_star) -> float:
    if not delta0 > 0:
        raise PreconditionError("delta0 must be positive")
    if not C_star > 0:
        raise PreconditionError("C_star must be positive")
    pn = p_n(dim)
    extra = b_sup * measure * (pn - 1) * C_star ** (1.0 / (pn + 1)) * max(chi, chi**2) / (4 * b_inf * delta0)
    return a_chi_mu(chi, mu) + extra


def check_growth_condition(coeffs: Coefficients, domain: Domain, delta0: float, C_star: float) -> Verdict:
    """Is a_inf large enough to dominate chemotaxis given the kernel floor delta0?"""
    rhs = growth_condition_rhs(
        coeffs.chi, coeffs.mu, coeffs.b_inf, coeffs.b_sup, domain.measure, domain.dim, delta0, C_star
    )
    return Verdict(coeffs.a_inf > rhs, coeffs.a_inf - rhs, rhs)


def decay_rate(coeffs: Coefficients) -> float:
    """gamma = a_inf - a_chi_mu, the decay rate of the negative moment."""
    return coeffs.a_inf - a_chi_mu(coeffs.chi, coeffs.mu)


def neg_moment_bound(coeffs: Coefficients, domain: Domain) -> float:
    """Ultimate bound ``b_sup |Omega| / gamma`` on the integral of 1/u."""
    gamma = decay_rate(coeffs)
    if not gamma > 0:
        raise PreconditionError(f"gamma = {gamma} <= 0; the negative-moment bound does not exist")
    return coeffs.b_sup * domain.measure / gamma


def neg_moment_threshold(coeffs: Coefficients, domain: Domain) -> float:
    """Level the integral of 1/u must reach for an initial datum to count as 'not small'."""
    gamma = decay_rate(coeffs)
    if not gamma > 0:
        raise PreconditionError("gamma must be positive")
    if coeffs.chi == 0:
        return math.inf
    return coeffs.b_sup * domain.measure * max(1.0, 1.0 / coeffs.chi) / gamma


def q_lhs(q, eps, coeffs, domain, delta0, C_star):
    gamma = decay_rate(coeffs)
    return (coeffs.b_sup * domain.measure * (q - 1) * (C_star ** (1.0 / (q + 1)) + eps)
            * max(coeffs.chi, coeffs.chi**2) / (4 * delta0 * gamma))


def q_search(coeffs, domain, delta0, C_star, eps_grid, q_grid):
    """Smallest admissible ``q > max(2, N)`` on the grid with the smallest working eps.

    Returns ``(q, eps)`` or None.
    """
    if not decay_rate(coeffs) > 0:
        raise PreconditionError("gamma must be positive")
    pn = p_n(domain.dim)
    for q in sorted(q_grid):
        if not q > pn:
            continue
        for eps in sorted(eps_grid):
            if q_lhs(q, eps, coeffs, domain, delta0, C_star) < coeffs.b_inf:
                return float(q), float(eps)
    return None


def mass_floor_constant(M1: float, measure: float, p: float = P) -> float:
    """Ultimate lower bound ``|Omega|^((p+1)/p) / (2 M1)^(1/p)`` on the mass."""
    return measure ** ((p + 1) / p) / (2 * M1) ** (1 / p)


# ---------------------------------------------------------------------------
# the absorbing rectangle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RectangleSpec:
    """``{u >= 0 : int u <= M0, int u^-p <= M1, int u^q <= M2}``."""

    M0: float
    M1: float
    M2: float
    q: float
    p: float = P

    def moments(self, u: ScalarField):
        if not np.all(u.values > 0):
            return integrate(u), math.inf, integrate_pow(u.with_values(np.abs(u.values)), self.q)
        return integrate(u), integrate_pow(u, -self.p), integrate_pow(u, self.q)

    def member(self, u: ScalarField, slack: float = 0.0, rtol: float = 1e-12) -> bool:
        """Inclusive membership; ``slack`` widens every bound relatively, ``rtol`` absorbs rounding."""
        if np.any(u.values < 0) or not np.all(u.values > 0):
            return False
        m0, m1, m2 = self.moments(u)
        f = (1 + slack) * (1 + rtol)
        return m0 <= self.M0 * f and m1 <= self.M1 * f and m2 <= self.M2 * f

    def to_dict(self):
        return asdict(self)


def estimate_M2(tail_q_moments: Iterable[float], factor: float = 1.5) -> float:
    """Empirical stand-in for the unquantified q-moment bound: factor x tail maximum."""
    vals = [float(x) for x in tail_q_moments]
    if not vals:
        raise PreconditionError("need at least one calibration value")
    return factor * max(vals)


# ---------------------------------------------------------------------------
# threshold report
# ---------------------------------------------------------------------------

@dataclass
class ThresholdReport:
    chi: float
    mu: float
    nu: float
    a_inf: float
    a_sup: float
    b_inf: float
    b_sup: float
    dim: int
    measure: float
    a_chi_mu: float
    main_assumption_ok: bool
    main_assumption_margin: float
    growth_condition_ok: bool
    growth_condition_margin: float
    growth_condition_rhs: float
    delta0: float
    delta0_certified: bool
    delta0_coarse: float | None
    C_star: float
    p: float
    p_N: int
    gamma: float
    M1: float | None
    q_selected: float | None
    eps_selected: float | None
    M0_star: float
    M1_star: float | None
    M2_star: float | None
    M2_source: str
    neg_moment_threshold: float | None
    mass_floor: float | None
    q_default: float = 3.0

    @property
    def q(self) -> float:
        return self.q_selected if self.q_selected is not None else self.q_default

    def rectangle(self) -> RectangleSpec:
        if self.M1_star is None or self.M2_star is None:
            raise PreconditionError("rectangle needs gamma > 0 and a configured or estimated M2*")
        return RectangleSpec(self.M0_star, self.M1_star, self.M2_star, self.q, self.p)

    def with_M2(self, M2: float, source: str = "estimated") -> "ThresholdReport":
        d = asdict(self)
        d.update(M2_star=float(M2), M2_source=source)
        return ThresholdReport(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)


def build_report(coeffs: Coefficients, domain: Domain, C_star: float = 1.0, delta0=None,
                 M2_star: float | None = None, q_grid: Sequence[float] = (2.5, 3, 4, 5, 6, 8),
                 eps_grid: Sequence[float] = (1e-3, 1e-2, 1e-1), q_default: float = 3.0,
                 coarse_check: bool = True) -> ThresholdReport:
    from .elliptic import delta0_h

    if delta0 is None:
        g = delta0_h(domain, coeffs.mu, coeffs.nu)
        delta0, certified = g.value, g.certified
    else:
        certified = getattr(delta0, "certified", True)
        delta0 = float(delta0)
    coarse = None
    if coarse_check and all(n % 2 == 0 and n // 2 >= 4 for n in domain.cells):
        coarse = delta0_h(Domain(domain.lengths, tuple(n // 2 for n in domain.cells)), coeffs.mu, coeffs.nu).value
    main = check_main_assumption(coeffs)
    growth = check_growth_condition(coeffs, domain, delta0, C_star)
    gamma = decay_rate(coeffs)
    M1 = neg_moment_bound(coeffs, domain) if gamma > 0 else None
    qe = q_search(coeffs, domain, delta0, C_star, eps_grid, q_grid) if gamma > 0 else None
    return ThresholdReport(
        chi=coeffs.chi, mu=coeffs.mu, nu=coeffs.nu,
        a_inf=coeffs.a_inf, a_sup=coeffs.a_sup, b_inf=coeffs.b_inf, b_sup=coeffs.b_sup,
        dim=domain.dim, measure=domain.measure,
        a_chi_mu=a_chi_mu(coeffs.chi, coeffs.mu),
        main_assumption_ok=main.ok, main_assumption_margin=main.margin,
        growth_condition_ok=growth.ok, growth_condition_margin=growth.margin,
        growth_condition_rhs=growth.threshold,
        delta0=delta0, delta0_certified=bool(certified), delta0_coarse=coarse,
        C_star=float(C_star), p=P, p_N=p_n(domain.dim), gamma=gamma, M1=M1,
        q_selected=qe[0] if qe else None, eps_selected=qe[1] if qe else None,
        M0_star=coeffs.a_sup / coeffs.b_inf * domain.measure,
        M1_star=M1,
        M2_star=None if M2_star is None else float(M2_star),
        M2_source="none" if M2_star is None else "configured",
        neg_moment_threshold=neg_moment_threshold(coeffs, domain) if gamma > 0 else None,
        mass_floor=mass_floor_constant(M1, domain.measure) if M1 else None,
        q_default=q_default,
    )


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

_HOLDER_1D: dict = {}


def holder_seminorm(u: ScalarField, theta: float, cap: int = HOLDER_CAP_2D) -> float:
    """max |u(x) - u(y)| / |x - y|^theta over cell-centre pairs.

    Exhaustive in 1D; in 2D restricted to offsets with max(|di|, |dj|) <= cap cells.
    """
    if not 0 < theta < 1:
        raise PreconditionError("theta must lie in (0, 1)")
    vals = u.values
    dom = u.domain
    if dom.dim == 1:
        key = (dom.cells[0], dom.h, theta)
        inv = _HOLDER_1D.get(key)
        if inv is None:
            x = dom.centers(0)
            dist = np.abs(x[:, None] - x[None, :])
            np.fill_diagonal(dist, 1.0)
            inv = dist**-theta
            np.fill_diagonal(inv, 0.0)
            if len(_HOLDER_1D) > 32:
                _HOLDER_1D.clear()
            _HOLDER_1D[key] = inv
        return float(np.max(np.abs(vals[:, None] - vals[None, :]) * inv))
    nx, ny = dom.cells
    best = 0.0
    for di in range(0, min(cap, nx - 1) + 1):
        for dj in range(-min(cap, ny - 1), min(cap, ny - 1) + 1):
            if di == 0 and dj <= 0:
                continue
            if dj >= 0:
                a, b = vals[: nx - di, : ny - dj], vals[di:, dj:]
            else:
                a, b = vals[: nx - di, -dj:], vals[di:, : ny + dj]
            d = math.hypot(di, dj) * dom.h
            best = max(best, float(np.max(np.abs(a - b))) / d**theta)
    return best


class DiagnosticsSeries:
    """Observer recording every monitored functional at each accepted step."""

    columns = DIAGNOSTICS_COLUMNS

    def __init__(self, domain: Domain, q: float = 3.0, theta: float | None = 0.5,
                 rectangle: RectangleSpec | None = None, holder_cap: int = HOLDER_CAP_2D):
        self.domain = domain
        self.q = float(q)
        self.theta = theta
        self.rectangle = rectangle
        self.holder_cap = holder_cap
        self.rows: list[tuple] = []

    def __call__(self, t: float, u: ScalarField, v: ScalarField) -> None:
        vals = u.values
        w = self.domain.weight
        if not np.all(vals > 0):
            raise PositivityError(f"diagnostics saw a nonpositive cell at t={t}")
        hold = holder_seminorm(u, self.theta, self.holder_cap) if self.theta else math.nan
        member = None if self.rectangle is None else self.rectangle.member(u)
        self.rows.append((
            float(t),
            w * float(np.sum(vals)),
            w * float(np.sum(1.0 / vals)),
            w * float(np.sum(vals**self.q)),
            float(vals.min()),
            float(vals.max()),
            float(v.values.min()),
            hold,
            member,
        ))

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        if name == "rectangle_member":
            return np.array([r[i] for r in self.rows], dtype=object)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv(self, fh=None) -> str | None:
        """Write header plus rows; floats as round-trip ``repr``.  Returns text if ``fh`` is None."""
        buf = io.StringIO() if fh is None else fh
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.columns)
        for row in self.rows:
            *nums, member = row
            wr.writerow([repr(x) for x in nums] + ["" if member is None else int(member)])
        return buf.getvalue() if fh is None else None

    @classmethod
    def from_csv(cls, text: str, domain: Domain, q: float = 3.0) -> "DiagnosticsSeries":
        ds = cls(domain, q=q)
        rd = csv.reader(io.StringIO(text))
        header = next(rd)
        if tuple(header) != DIAGNOSTICS_COLUMNS:
            raise PreconditionError(f"unexpected diagnostics header {header}")
        for rec in rd:
            *nums, member = rec
            ds.rows.append(tuple(float(x) for x in nums) + (None if member == "" else bool(int(member)),))
        return ds

    # row invariants -------------------------------------------------------

    def holder_violations(self, slack: float = 1e-10) -> list[tuple[float, float, float]]:
        """Rows breaking ``mass >= |Omega|^2 / int u^-1`` (p = 1) beyond a relative slack."""
        meas = self.domain.measure
        out = []
        for t, mass, negp, *_ in self.rows:
            bound = meas ** ((P + 1) / P) * negp ** (-1 / P)
            if mass < bound - slack * max(1.0, bound):
                out.append((t, mass, bound))
        return out

    def kernel_violations(self, delta0: float, slack: float = 1e-10) -> list[tuple[float, float, float]]:
        """Rows breaking ``min v >= delta0 * mass``."""
        i_v = self.columns.index("min_v")
        return [(r[0], r[i_v], delta0 * r[1]) for r in self.rows if r[i_v] < delta0 * r[1] - slack]


def mass_comparison_violations(diag: DiagnosticsSeries, coeffs: Coefficients, tau: float | None = None,
                               rtol: float = 1e-6):
    """Rows with ``mass(t) > max(mass(tau), a_sup/b_inf |Omega|) (1 + rtol)`` for t >= tau."""
    t = diag.column("t")
    mass = diag.column("mass")
    i0 = 0 if tau is None else int(np.searchsorted(t, tau))
    cap = max(mass[i0], coeffs.a_sup / coeffs.b_inf * diag.domain.measure) * (1 + rtol)
    return [(float(t[i]), float(mass[i]), cap) for i in range(i0, len(t)) if mass[i] > cap]


def find_entry_time(diag: DiagnosticsSeries, report: ThresholdReport, s: float | None = None):
    """First ``tau0 > 0`` (time since start) with ``int u^-1 <= neg_moment_threshold``; else None."""
    if not report.gamma > 0:
        raise PreconditionError("gamma must be positive")
    t = diag.column("t")
    negp = diag.column("neg_p_moment")
    s = t[0] if s is None else s
    for ti, ni in zip(t, negp):
        if ti > s and ni <= report.neg_moment_threshold:
            return float(ti - s)
    return None


@dataclass
class EnvelopeReport:
    tau: float
    gamma: float
    M1: float
    M1_tilde: float
    slack: float
    exp_violations: list = field(default_factory=list)
    max_violations: list = field(default_factory=list)
    tail_violations: list = field(default_factory=list)
    rows_checked: int = 0

    @property
    def ok(self) -> bool:
        return not (self.exp_violations or self.max_violations or self.tail_violations)


def m1_tilde(p: float, b_sup: float, m_star: float, M0: float) -> float:
    return p * b_sup * abs(1 - p) * (m_star - M0)


def envelope_neg_p(diag: DiagnosticsSeries, report: ThresholdReport, tau: float,
                   slack: float = ENVELOPE_SLACK, tail_fraction: float = 0.2) -> EnvelopeReport:
    """Check the exponential, max-form and limiting bounds on int u^-1 for every row t >= tau."""
    if not report.gamma > 0:
        raise PreconditionError("gamma must be positive")
    t = diag.column("t")
    negp = diag.column("neg_p_moment")
    mass = diag.column("mass")
    i0 = int(np.searchsorted(t, tau))
    if i0 >= len(t):
        raise PreconditionError("tau lies beyond the recorded trajectory")
    m_star = max(mass[i0], report.M0_star)
    Mt = m1_tilde(report.p, report.b_sup, m_star, report.M0_star)
    rep = EnvelopeReport(float(t[i0]), report.gamma, report.M1, Mt, slack)
    base = negp[i0]
    t_tail = t[-1] - tail_fraction * (t[-1] - t[0])
    for ti, lhs in zip(t[i0:], negp[i0:]):
        exp_rhs = math.exp(-report.gamma * (ti - t[i0])) * base + report.M1 + Mt
        max_rhs = max(base, report.M1 + Mt)
        if lhs > exp_rhs * (1 + slack):
            rep.exp_violations.append((float(ti), float(lhs), exp_rhs))
        if lhs > max_rhs * (1 + slack):
            rep.max_violations.append((float(ti), float(lhs), max_rhs))
        if ti >= t_tail and lhs > report.M1 * (1 + slack):
            rep.tail_violations.append((float(ti), float(lhs), report.M1))
        rep.rows_checked += 1
    return rep


@dataclass(frozen=True)
class PersistenceFloor:
    m_inf_u: float
    m_inf_v: float
    tail_mass_min: float
    tail_max_u: float
    truncated: bool


def persistence_floor(diag: DiagnosticsSeries, tail_fraction: float, truncated: bool = False) -> PersistenceFloor:
    """Minima of min_u, min_v (and mass) over the trailing ``tail_fraction`` of the time window."""
    if not 0 < tail_fraction < 1:
        raise PreconditionError("tail_fraction must lie in (0, 1)")
    t = diag.column("t")
    cut = t[-1] - tail_fraction * (t[-1] - t[0])
    sel = t >= cut
    return PersistenceFloor(
        float(diag.column("min_u")[sel].min()),
        float(diag.column("min_v")[sel].min()),
        float(diag.column("mass")[sel].min()),
        float(diag.column("max_u")[sel].max()),
        truncated,
    )
