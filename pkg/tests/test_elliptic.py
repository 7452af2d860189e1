import numpy as np
import pytest

from kslab.elliptic import (
    assemble,
    delta0_h,
    kernel_bound_holds,
    neg_laplacian,
    neumann_laplacian_matrix,
    solve_v,
)
from kslab.errors import PreconditionError
from kslab.model import Domain, ScalarField, integrate


def _cos_average(domain):
    e = domain.edges(0)
    return (np.sin(np.pi * e[1:]) - np.sin(np.pi * e[:-1])) / (np.pi * domain.h)


@pytest.mark.parametrize("dom", [Domain((1.0,), (16,)), Domain((1.0, 1.0), (8, 8))])
def test_flux_form_matches_matrix(dom, rng):
    x = rng.standard_normal(dom.shape)
    A = neumann_laplacian_matrix(dom)
    np.testing.assert_allclose(neg_laplacian(x, dom.h).ravel(), A @ x.ravel(), atol=1e-9)
    assert np.all(neg_laplacian(np.full(dom.shape, 3.7), dom.h) == 0.0)


@pytest.mark.parametrize("dom", [Domain((1.0,), (50,)), Domain((2.0, 1.0), (32, 16)), Domain((1.0, 1.0), (72, 72))])
def test_constant_source_identity(dom):
    op = assemble(dom, 2.0)
    v = solve_v(op, ScalarField.constant(dom, 3.0), 0.5)
    np.testing.assert_allclose(v.values, 0.75, rtol=0, atol=1e-12)


def test_cg_path_meets_residual_contract(rng):
    dom = Domain((1.0, 1.0), (72, 72))
    op = assemble(dom, 1.0)
    assert op.method == "cg"
    u = ScalarField(dom, np.exp(rng.standard_normal(dom.shape)))
    v = solve_v(op, u, 1.0, tol=1e-10)
    res = np.max(np.abs(op.apply(v.values) - u.values))
    assert res <= 1e-10 * max(1.0, u.max())


def test_cos_resolvent_second_order():
    errs = []
    for n in (16, 32, 64, 128):
        d = Domain((1.0,), (n,))
        avg = _cos_average(d)
        v = solve_v(assemble(d, 1.0), ScalarField(d, avg), 1.0)
        errs.append(np.max(np.abs(v.values - avg / (np.pi**2 + 1))))
    ratios = [errs[i] / errs[i + 1] for i in range(3)]
    assert all(3.6 <= r <= 4.4 for r in ratios), ratios


def test_delta0_matches_dense_green_matrix():
    d = Domain((1.0,), (64,))
    g = delta0_h(d, 1.0, 1.0)
    A = neumann_laplacian_matrix(d).toarray() + np.eye(64)
    brute = np.linalg.inv(A).min() / d.h
    assert g.certified and g.columns == 64
    assert g.value == pytest.approx(brute, rel=1e-12)
    finer = delta0_h(Domain((1.0,), (128,)), 1.0, 1.0).value
    assert abs(finer - g.value) / g.value < 0.05


def test_delta0_near_continuum_value():
    # Green function of -v'' + v on (0,1) with Neumann ends has minimum 1/sinh(1)
    g = delta0_h(Domain((1.0,), (128,)), 1.0, 1.0)
    assert g.value == pytest.approx(1 / np.sinh(1.0), rel=1e-4)


def test_delta0_decreases_with_mu():
    vals = [delta0_h(Domain((1.0,), (64,)), mu, 1.0).value for mu in (1.0, 4.0, 16.0)]
    # a larger decay rate localizes the Green function, lowering its minimum
    assert vals[-1] > 0 and all(np.diff(vals) < 0)
    # nu scales linearly
    assert delta0_h(Domain((1.0,), (64,)), 1.0, 3.0).value == pytest.approx(3 * vals[0])


def test_delta0_sampled_on_large_grids():
    g = delta0_h(Domain((1.0, 1.0), (16, 16)), 1.0, 1.0, max_columns=100, sampled_columns=32)
    full = delta0_h(Domain((1.0, 1.0), (16, 16)), 1.0, 1.0)
    assert not g.certified and full.certified
    assert g.value >= full.value


def test_kernel_floor_on_random_sources(rng):
    d = Domain((1.0,), (64,))
    op = assemble(d, 1.0)
    delta0 = delta0_h(d, 1.0, 1.0).value
    for _ in range(200):
        u = ScalarField(d, rng.exponential(size=64) * (rng.random(64) < 0.3))
        if integrate(u) == 0:
            continue
        assert kernel_bound_holds(solve_v(op, u, 1.0), u, delta0)


def test_bad_arguments():
    d = Domain((1.0,), (8,))
    with pytest.raises(PreconditionError):
        assemble(d, 0.0)
    with pytest.raises(PreconditionError):
        solve_v(assemble(d, 1.0), ScalarField.constant(d, 1.0), 1.0, tol=0.0)
