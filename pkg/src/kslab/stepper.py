"""IMEX time stepping for the density equation.

One step: solve for v, explicit first-order upwind chemotactic transport plus
explicit logistic reaction at the step start, then an implicit Neumann
diffusion solve ``(I - dt Δ_h) u_new = u*``.  Positivity is checked, never
enforced by clipping.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elliptic import EllipticOperator, assemble, neg_laplacian, neumann_laplacian_matrix, solve_v
from .errors import (
    PositivityError,
    PreconditionError,
    SingularityError,
    SolverError,
    StiffnessError,
)
from .model import Coefficients, Domain, ScalarField, State, integrate

log = logging.getLogger(__name__)

Observer = Callable[[float, ScalarField, ScalarField], None]


@dataclass(frozen=True)
class StepControl:
    dt_init: float = 1e-2
    dt_min: float = 1e-8
    dt_max: float = 1e-2
    cfl_safety: float = 0.2
    positivity_floor: float = 0.0
    checkpoint_base: float = 0.1
    checkpoint_factor: float = 1.2

    def __post_init__(self):
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise PreconditionError("need 0 < dt_min <= dt_init <= dt_max")
        if not 0 < self.cfl_safety <= 1:
            raise PreconditionError("cfl_safety must lie in (0, 1]")
        if self.positivity_floor < 0:
            raise PreconditionError("positivity_floor must be nonnegative")
        if self.checkpoint_factor <= 1 or self.checkpoint_base <= 0:
            raise PreconditionError("checkpoint cadence needs base > 0 and factor > 1")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class Trajectory:
    states: list[State]
    status: str = "completed"
    message: str = ""
    positivized: bool = False
    steps: int = 0
    rejected_steps: int = 0
    diagnostics: object = None
    final_v: ScalarField | None = None

    @property
    def final(self) -> State:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def completed(self) -> bool:
        return self.status == "completed"


# ---------------------------------------------------------------------------
# spatial pieces
# ---------------------------------------------------------------------------

def _interior(axis, ndim, lo):
    idx = [slice(None)] * ndim
    idx[axis] = slice(None, -1) if lo else slice(1, None)
    return tuple(idx)


def chemo_velocity(u: ScalarField, v: ScalarField, chi: float) -> list[np.ndarray]:
    """Per-axis face velocities ``chi * (dv)_face / v_face``.

    Arrays have ``n + 1`` entries along their axis; the two boundary faces are zero.
    """
    vals = v.values
    if not vals.min() > 0:
        raise SingularityError(f"min v = {vals.min()!r} <= 0; sensitivity chi/v is singular")
    h = v.domain.h
    out = []
    for axis in range(vals.ndim):
        left = vals[_interior(axis, vals.ndim, True)]
        right = vals[_interior(axis, vals.ndim, False)]
        inner = chi * ((right - left) / h) / (0.5 * (left + right))
        pad = [(0, 0)] * vals.ndim
        pad[axis] = (1, 1)
        out.append(np.pad(inner, pad))
    return out


def advective_divergence(u: np.ndarray, velocity: Sequence[np.ndarray], h: float) -> np.ndarray:
    """Upwind ``div(vel * u)``; boundary fluxes are zero so cell sums telescope."""
    div = np.zeros_like(u)
    for axis, vel in enumerate(velocity):
        inner = vel[tuple(slice(1, -1) if d == axis else slice(None) for d in range(u.ndim))]
        left = u[_interior(axis, u.ndim, True)]
        right = u[_interior(axis, u.ndim, False)]
        flux = np.maximum(inner, 0.0) * left + np.minimum(inner, 0.0) * right
        div[_interior(axis, u.ndim, True)] += flux / h
        div[_interior(axis, u.ndim, False)] -= flux / h
    return div


class DiffusionSolver:
    """Solves ``(I + dt(-Δ_h)) x = rhs``; banded in 1D, sparse LU (cached by dt) in 2D."""

    def __init__(self, domain: Domain, cache_size: int = 4):
        self.domain = domain
        self._cache: dict[float, object] = {}
        self._cache_size = cache_size
        if domain.dim == 1:
            n = domain.cells[0]
            c = 1.0 / domain.h**2
            self._diag = np.full(n, 2.0 * c)
            self._diag[0] = self._diag[-1] = c
            self._off = np.full(n - 1, -c)
        else:
            self._L = neumann_laplacian_matrix(domain)

    def solve(self, rhs: np.ndarray, dt: float) -> np.ndarray:
        if self.domain.dim == 1:
            ab = np.zeros((2, len(self._diag)))
            ab[0, 1:] = dt * self._off
            ab[1] = 1.0 + dt * self._diag
            return sla.solveh_banded(ab, rhs, check_finite=False)
        lu = self._cache.get(dt)
        if lu is None:
            M = (sp.identity(self.domain.size, format="csc") + dt * self._L).tocsc()
            lu = spla.splu(M)
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[dt] = lu
        return lu.solve(rhs.ravel()).reshape(self.domain.shape)


_DIFFUSION: dict[Domain, DiffusionSolver] = {}


def diffusion_solver(domain: Domain) -> DiffusionSolver:
    if domain not in _DIFFUSION:
        _DIFFUSION[domain] = DiffusionSolver(domain)
    return _DIFFUSION[domain]


def explicit_update(u, v, coeffs: Coefficients, t, dt):
    """``u + dt(-div(vel u) + u(a - b u))`` and the flux divergence used."""
    domain = u.domain
    vel = chemo_velocity(u, v, coeffs.chi)
    div = advective_divergence(u.values, vel, domain.h)
    a = coeffs.a(t, domain)
    b = coeffs.b(t, domain)
    uu = u.values
    return uu + dt * (-div + uu * (a - b * uu)), div


def stationary_residual(u: ScalarField, coeffs: Coefficients, op: EllipticOperator, t: float = 0.0) -> float:
    """``||Δ_h u - div_h(vel u) + u(a - b u)||_inf`` with the stepper's discrete operators."""
    v = solve_v(op, u, coeffs.nu)
    vel = chemo_velocity(u, v, coeffs.chi)
    uu = u.values
    r = -neg_laplacian(uu, u.domain.h) - advective_divergence(uu, vel, u.domain.h)
    r = r + uu * (coeffs.a(t, u.domain) - coeffs.b(t, u.domain) * uu)
    return float(np.max(np.abs(r)))


def step(state: State, coeffs: Coefficients, op: EllipticOperator, dt: float,
         v: ScalarField | None = None, positivity_floor: float = 0.0) -> State:
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    u = state.u
    if v is None:
        v = solve_v(op, u, coeffs.nu)
    ustar, _ = explicit_update(u, v, coeffs, state.t, dt)
    unew = diffusion_solver(u.domain).solve(ustar, dt)
    lowest = float(unew.min())
    if not lowest > positivity_floor:
        raise PositivityError(f"min u = {lowest!r} after step t={state.t} dt={dt}")
    return State(state.t + dt, ScalarField(u.domain, unew))


def adaptive_dt(state: State, coeffs: Coefficients, v: ScalarField, ctrl: StepControl) -> float:
    """``min(cfl * min(h/max|vel|, 1/(a_sup + 2 b_sup max u)), dt_max)``, floored at dt_min."""
    vel = chemo_velocity(state.u, v, coeffs.chi)
    vmax = max(float(np.max(np.abs(w))) for w in vel)
    h = state.u.domain.h
    dt_adv = h / vmax if vmax > 0 else math.inf
    dt_reac = 1.0 / (coeffs.a_sup + 2.0 * coeffs.b_sup * state.u.max())
    dt = min(ctrl.cfl_safety * min(dt_adv, dt_reac), ctrl.dt_max)
    if dt < ctrl.dt_min:
        raise StiffnessError(
            f"stable dt {dt:.3e} < dt_min {ctrl.dt_min:.3e}; lower dt_min or refine the grid",
            dt_required=dt,
        )
    return dt


def evolve(u0: ScalarField, s: float, t_end: float, coeffs: Coefficients, ctrl: StepControl,
           observers: Sequence[Observer] = (), diagnostics=None,
           op: EllipticOperator | None = None, checkpoint_times: Sequence[float] = ()) -> Trajectory:
    """Integrate from ``(s, u0)`` to ``t_end``.

    ``diagnostics`` is an observer stored on the trajectory.  Errors after the first
    state truncate the trajectory and set ``status``; they are not raised.
    """
    domain = u0.domain
    vals = u0.values
    if vals.min() < 0:
        raise PreconditionError("initial data must be nonnegative")
    if not integrate(u0) > 0:
        raise PreconditionError("initial data must have positive mass")
    if t_end < s:
        raise PreconditionError("t_end must not precede s")
    if op is None:
        op = assemble(domain, coeffs.mu)
    observers = list(observers)
    if diagnostics is not None:
        observers.append(diagnostics)

    t = float(s)
    positivized = False
    if vals.min() == 0:
        # classical solutions are instantly positive; one pure-diffusion step reproduces that
        vals = diffusion_solver(domain).solve(vals, ctrl.dt_min)
        t += ctrl.dt_min
        positivized = True
        log.info("zero cells in u0: positivized by a diffusion prestep of %g", ctrl.dt_min)
    state = State(t, ScalarField(domain, vals))
    traj = Trajectory([state], positivized=positivized, diagnostics=diagnostics)

    try:
        v = solve_v(op, state.u, coeffs.nu)
    except SolverError as exc:
        traj.status, traj.message = "solver_failure", str(exc)
        return traj
    for obs in observers:
        obs(state.t, state.u, v)

    forced = sorted(float(c) for c in checkpoint_times if s < c < t_end)
    fi = 0
    next_geo = s + ctrl.checkpoint_base
    first = True
    t_err = 0.0
    while t < t_end:
        while fi < len(forced) and forced[fi] <= t:
            fi += 1
        target = forced[fi] if fi < len(forced) else float(t_end)
        try:
            dt = adaptive_dt(state, coeffs, v, ctrl)
        except StiffnessError as exc:
            traj.status, traj.message = "solver_failure", f"stiffness: {exc}"
            break
        except SingularityError as exc:
            traj.status, traj.message = "solver_failure", f"singularity: {exc}"
            break
        if first:
            dt = min(dt, ctrl.dt_init)
            first = False
        remaining = target - t
        land = remaining <= dt * (1 + 1e-6)
        if land:
            dt = remaining
        new = None
        while new is None:
            try:
                new = step(state, coeffs, op, dt, v=v, positivity_floor=ctrl.positivity_floor)
            except PositivityError as exc:
                traj.rejected_steps += 1
                if dt / 2 < ctrl.dt_min:
                    traj.status, traj.message = "positivity_loss", str(exc)
                    break
                dt /= 2
                land = False
            except (SolverError, SingularityError) as exc:
                traj.status, traj.message = "solver_failure", str(exc)
                break
        if new is None:
            break
        if land:
            t, t_err = target, 0.0
        else:
            # Kahan summation keeps long fixed-dt runs on the nominal time grid
            y = dt - t_err
            t_next = t + y
            t_err = (t_next - t) - y
            t = t_next
        state = State(t, new.u)
        traj.steps += 1
        try:
            v = solve_v(op, state.u, coeffs.nu)
        except SolverError as exc:
            traj.states.append(state)
            traj.status, traj.message = "solver_failure", str(exc)
            break
        for obs in observers:
            obs(state.t, state.u, v)
        forced_hit = land and fi < len(forced) and target == forced[fi]
        if forced_hit or t >= t_end or t >= next_geo:
            traj.states.append(state)
            if t >= next_geo:
                next_geo = s + max((t - s) * ctrl.checkpoint_factor, t - s + ctrl.checkpoint_base * 1e-3)
    traj.final_v = v
    return traj
