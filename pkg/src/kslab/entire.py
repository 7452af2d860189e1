"""Periodic, stationary and pullback (entire) solutions built from the flow map.

Existence comes from a non-constructive fixed-point argument, so every
construction here may honestly fail to converge; failures are reported, not
raised.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .elliptic import EllipticOperator, assemble
from .errors import PositivityError, PreconditionError, SolverError
from .model import Coefficients, ScalarField, integrate
from .stepper import StepControl, Trajectory, evolve, stationary_residual

log = logging.getLogger(__name__)


def _raise_for_status(traj: Trajectory):
    if traj.status == "positivity_loss":
        raise PositivityError(traj.message)
    if traj.status != "completed":
        raise SolverError(traj.message)


def flow(u0: ScalarField, s: float, t: float, coeffs: Coefficients, ctrl: StepControl,
         op: EllipticOperator | None = None) -> ScalarField:
    """u(t; s, u0), raising if the integration did not complete."""
    traj = evolve(u0, s, t, coeffs, ctrl, op=op)
    _raise_for_status(traj)
    return traj.final.u


def poincare_map(u0: ScalarField, coeffs: Coefficients, ctrl: StepControl, period: float | None = None,
                 s: float = 0.0, op: EllipticOperator | None = None) -> ScalarField:
    T = coeffs.period if period is None else period
    if T is None:
        raise PreconditionError("poincare_map needs a period (coefficients.period or period=)")
    return flow(u0, s, s + T, coeffs, ctrl, op)


@dataclass
class FixedPointResult:
    u_star: ScalarField
    residual: float
    iterations: int
    converged: bool
    rectangle_member: bool | None = None
    period: float | None = None
    periodicity_error: float | None = None
    orbit_mean: float | None = None
    history: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "rectangle_member": self.rectangle_member,
            "period": self.period,
            "periodicity_error": self.periodicity_error,
            "orbit_mean": self.orbit_mean,
            "min_u": self.u_star.min(),
            "max_u": self.u_star.max(),
            "history": list(self.history),
            "message": self.message,
        }


def verify_periodic_orbit(u_star, coeffs, ctrl, period, s=0.0, samples=8, op=None):
    """Evolve over two periods; return (max_k ||u(t_k + T) - u(t_k)||_inf, time-mean of u over one period)."""
    times = [s + period * k / samples for k in range(2 * samples + 1)]
    traj = evolve(u_star, s, s + 2 * period, coeffs, ctrl, op=op, checkpoint_times=times)
    _raise_for_status(traj)
    by_t = {st.t: st.u.values for st in traj.states}
    snaps = [by_t[t] for t in times]
    err = max(float(np.max(np.abs(snaps[k + samples] - snaps[k]))) for k in range(samples + 1))
    meas = u_star.domain.measure
    means = np.array([integrate(u_star.with_values(x)) / meas for x in snaps[: samples + 1]])
    orbit_mean = float((means.sum() - 0.5 * (means[0] + means[-1])) / samples)
    return err, orbit_mean


def fixed_point_periodic(coeffs: Coefficients, init: ScalarField, damping: float = 1.0, tol: float = 1e-8,
                         max_iter: int = 200, ctrl: StepControl | None = None, period: float | None = None,
                         rectangle=None, report=None, verify: bool = True, s: float = 0.0) -> FixedPointResult:
    """Damped Picard iteration ``u <- (1 - w) u + w P(u)`` on the period map P."""
    if not 0 < damping <= 1:
        raise PreconditionError("damping must lie in (0, 1]")
    T = coeffs.period if period is None else period
    if T is None:
        raise PreconditionError("periodic construction needs a period")
    if report is not None and not report.growth_condition_ok:
        log.warning("growth condition fails; a periodic solution is not guaranteed")
    ctrl = ctrl or StepControl()
    op = assemble(init.domain, coeffs.mu)
    u = init
    best = (np.inf, init)
    history = []
    converged = False
    it = 0
    msg = ""
    try:
        for it in range(1, max_iter + 1):
            Pu = poincare_map(u, coeffs, ctrl, T, s, op)
            res = float(np.max(np.abs(Pu.values - u.values)))
            history.append(res)
            if res < best[0]:
                best = (res, u)
            if res <= tol:
                converged = True
                break
            u = u.with_values((1 - damping) * u.values + damping * Pu.values)
    except (PositivityError, SolverError) as exc:
        msg = f"flow failed: {exc}"
    res, u_star = best
    result = FixedPointResult(u_star, res, it, converged, period=T, history=history, message=msg)
    if converged and verify:
        result.periodicity_error, result.orbit_mean = verify_periodic_orbit(u_star, coeffs, ctrl, T, s, op=op)
    if rectangle is not None:
        result.rectangle_member = rectangle.member(u_star)
    return result


def steady_state(coeffs: Coefficients, init: ScalarField, tol: float = 1e-10, t_cap: float = 200.0,
                 ctrl: StepControl | None = None, check_every: float = 1.0, rectangle=None) -> FixedPointResult:
    """Relax in time until the discrete stationary residual drops below ``tol``."""
    if not coeffs.time_independent:
        raise PreconditionError("steady_state needs time-independent a and b")
    ctrl = ctrl or StepControl()
    op = assemble(init.domain, coeffs.mu)
    u = init
    t = 0.0
    history = []
    res = stationary_residual(u, coeffs, op) if init.min() > 0 else np.inf
    history.append(res)
    chunks = 0
    msg = ""
    while res > tol and t < t_cap:
        t_next = min(t + check_every, t_cap)
        traj = evolve(u, t, t_next, coeffs, ctrl, op=op)
        if traj.status != "completed":
            msg = f"{traj.status}: {traj.message}"
            u = traj.final.u
            break
        u, t = traj.final.u, t_next
        chunks += 1
        res = stationary_residual(u, coeffs, op)
        history.append(res)
    result = FixedPointResult(u, float(res), chunks, bool(res <= tol), history=history, message=msg)
    if rectangle is not None:
        result.rectangle_member = rectangle.member(u)
    return result


def steady_periodic_crosscheck(coeffs: Coefficients, init: ScalarField, periods: Sequence[float] = (1.0, 0.5, 0.25),
                               tol: float = 1e-8, ctrl: StepControl | None = None, max_iter: int = 200):
    """Fixed points of the period-T maps for several T, compared pairwise (time-independent coefficients)."""
    if not coeffs.time_independent:
        raise PreconditionError("cross-check needs time-independent coefficients")
    results = {T: fixed_point_periodic(coeffs, init, tol=tol, ctrl=ctrl, period=T, max_iter=max_iter, verify=False)
               for T in periods}
    diffs = {
        (T1, T2): float(np.max(np.abs(results[T1].u_star.values - results[T2].u_star.values)))
        for T1, T2 in itertools.combinations(periods, 2)
    }
    return results, diffs


@dataclass
class PullbackResult:
    profile: ScalarField
    samples: dict
    differences: list
    converged: bool
    n_used: int
    backward: list = field(default_factory=list)
    rectangle_member: bool | None = None
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "n_used": self.n_used,
            "differences": [[int(a), int(b), d] for a, b, d in self.differences],
            "backward_times": [t for t, _ in self.backward],
            "rectangle_member": self.rectangle_member,
            "min_u": self.profile.min(),
            "max_u": self.profile.max(),
            "message": self.message,
        }


def pullback_entire(coeffs: Coefficients, u0: ScalarField, n_schedule: Sequence[int], tol: float = 1e-8,
                    ctrl: StepControl | None = None, window: float = 0.0, window_samples: int = 8,
                    rectangle=None, report=None) -> PullbackResult:
    """u(0; -n, u0) along an increasing schedule, stopping at the first Cauchy hit.

    The last run's states on ``[-window, 0]`` stand in for the backward extension.
    """
    ns = [int(n) for n in n_schedule]
    if not ns or any(b <= a for a, b in zip(ns, ns[1:])) or ns[0] <= 0:
        raise PreconditionError("n_schedule must be increasing positive integers")
    if report is not None and not report.growth_condition_ok:
        log.warning("growth condition fails; an entire solution in the rectangle is not guaranteed")
    ctrl = ctrl or StepControl()
    op = assemble(u0.domain, coeffs.mu)
    samples, diffs, backward = {}, [], []
    prev = None
    converged = False
    msg = ""
    for n in ns:
        marks = []
        if window > 0:
            w = min(window, n)
            marks = [-w + w * k / window_samples for k in range(window_samples)]
        traj = evolve(u0, -float(n), 0.0, coeffs, ctrl, op=op, checkpoint_times=marks)
        if traj.status != "completed":
            msg = f"n={n}: {traj.status}: {traj.message}"
            break
        samples[n] = traj.final.u
        backward = [(st.t, st.u) for st in traj.states if st.t in set(marks) or st.t == 0.0]
        if prev is not None:
            d = float(np.max(np.abs(samples[n].values - samples[prev].values)))
            diffs.append((prev, n, d))
            if d <= tol:
                converged = True
                prev = n
                break
        prev = n
    if prev is None:
        raise PreconditionError(f"no pullback sample could be computed ({msg})")
    result = PullbackResult(samples[prev], samples, diffs, converged, prev, backward, message=msg)
    if rectangle is not None:
        result.rectangle_member = rectangle.member(samples[prev])
    return result
