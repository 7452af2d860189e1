import numpy as np
import pytest

from kslab.entire import (
    fixed_point_periodic,
    poincare_map,
    pullback_entire,
    steady_periodic_crosscheck,
    steady_state,
)
from kslab.errors import PreconditionError
from kslab.model import (
    Coefficients,
    Constant,
    Domain,
    FourierTime,
    ScalarField,
    Separable,
    SpacePart,
    constant_coefficients,
)
from kslab.stepper import StepControl

from conftest import lognormal

D32 = Domain((1.0,), (32,))
CTRL = StepControl(dt_init=1e-2, dt_max=1e-2)


def test_poincare_map_fixes_equilibrium():
    c = constant_coefficients(period=0.7)
    out = poincare_map(ScalarField.constant(D32, 1.0), c, CTRL)
    assert np.max(np.abs(out.values - 1.0)) <= 1e-10


def test_poincare_map_composes():
    c = constant_coefficients(chi=1.0, a=2.0, period=0.5)
    ctrl = StepControl(dt_init=1e-3, dt_max=1e-3)
    u0 = lognormal(D32, 3, sigma=0.3)
    twice = poincare_map(poincare_map(u0, c, ctrl), c, ctrl, s=0.5)
    direct = poincare_map(u0, c, ctrl, period=1.0)
    assert np.max(np.abs(twice.values - direct.values)) <= 1e-9


def test_poincare_map_contracts_toward_equilibrium():
    c = constant_coefficients(chi=1.0, a=2.0, b=2.0, period=1.0)
    u = lognormal(D32, 5, sigma=1.0, mean=3.0)
    dists = []
    for _ in range(3):
        u = poincare_map(u, c, CTRL)
        dists.append(np.max(np.abs(u.values - 1.0)))
    assert dists[0] > dists[1] > dists[2]


def test_periodic_fixed_point_constant_case():
    c = constant_coefficients(chi=1.0, a=2.0, b=1.0, period=1.0)
    r = fixed_point_periodic(c, ScalarField.constant(D32, 2.2), ctrl=CTRL, tol=1e-8, max_iter=50)
    assert r.converged and r.residual <= 1e-8
    assert np.max(np.abs(r.u_star.values - 2.0)) <= 1e-8
    assert r.periodicity_error <= 1e-7


def test_unreachable_tolerance_returns_best_iterate():
    c = constant_coefficients(chi=1.0, a=2.0, period=0.5)
    r = fixed_point_periodic(c, lognormal(D32, 1), tol=0.0, max_iter=3, ctrl=CTRL)
    assert not r.converged and r.iterations == 3 and len(r.history) == 3
    assert r.residual == min(r.history)


def test_fixed_point_preconditions():
    with pytest.raises(PreconditionError):
        fixed_point_periodic(constant_coefficients(), ScalarField.constant(D32, 1.0))
    with pytest.raises(PreconditionError):
        fixed_point_periodic(constant_coefficients(period=1.0), ScalarField.constant(D32, 1.0), damping=0.0)


def test_steady_state_constant():
    r = steady_state(constant_coefficients(), lognormal(D32, 2), tol=1e-10, ctrl=CTRL)
    assert r.converged and r.residual <= 1e-10
    assert np.max(np.abs(r.u_star.values - 1.0)) <= 1e-9


def test_steady_state_matches_boundary_value_solver():
    """Stationary logistic-diffusion profile against a collocation solve of the continuum problem."""
    from scipy.integrate import solve_bvp

    a = Separable(FourierTime(1.0, 1.0), SpacePart(1.0, cos_modes=((0.2, (1,)),)))
    c = Coefficients(0.0, 1.0, 1.0, a, Constant(1.0), 0.8, 1.2, 1.0, 1.0)
    d = Domain((1.0,), (128,))
    r = steady_state(c, ScalarField.constant(d, 1.0), tol=1e-10, ctrl=CTRL)
    assert r.converged

    def rhs(x, y):
        return np.vstack([y[1], -y[0] * (1 + 0.2 * np.cos(np.pi * x) - y[0])])

    xs = np.linspace(0, 1, 201)
    sol = solve_bvp(rhs, lambda ya, yb: np.array([ya[1], yb[1]]), xs,
                    np.vstack([np.ones_like(xs), np.zeros_like(xs)]), tol=1e-10, max_nodes=100_000)
    assert sol.status == 0
    assert np.max(np.abs(sol.sol(d.centers(0))[0] - r.u_star.values)) <= 1e-5


def test_steady_state_rejects_time_dependence():
    a = Separable(FourierTime(1.0, 1.0, sin=(0.1,)), SpacePart(1.0))
    c = Coefficients(1.0, 1.0, 1.0, a, Constant(1.0), 0.9, 1.1, 1.0, 1.0)
    with pytest.raises(PreconditionError):
        steady_state(c, ScalarField.constant(D32, 1.0))


def test_period_map_crosscheck_agrees():
    c = constant_coefficients(chi=0.5, a=2.0)
    results, diffs = steady_periodic_crosscheck(c, ScalarField.constant(D32, 2.2), tol=1e-9, ctrl=CTRL)
    assert all(r.converged for r in results.values())
    assert max(diffs.values()) <= 1e-8


def test_pullback_constant_case():
    c = constant_coefficients(chi=1.0)
    r = pullback_entire(c, ScalarField.constant(D32, 2.0), [1, 2, 4, 8, 16, 24, 32], tol=1e-8, ctrl=CTRL,
                        window=1.0)
    assert r.converged
    assert np.max(np.abs(r.profile.values - 1.0)) <= 1e-8
    d = [x for _, _, x in r.differences]
    assert all(d[i + 1] < d[i] for i in range(len(d) - 1))
    assert r.backward and r.backward[-1][0] == 0.0


def test_pullback_single_sample():
    r = pullback_entire(constant_coefficients(), ScalarField.constant(D32, 2.0), [1], ctrl=CTRL)
    assert not r.converged and r.n_used == 1 and r.differences == []
    with pytest.raises(PreconditionError):
        pullback_entire(constant_coefficients(), ScalarField.constant(D32, 2.0), [3, 2])
