import json
import logging

import numpy as np
import pytest
from scipy import integrate

from conftest import tilt_closed_form, tilt_constraints
from polylr import (
    ConstraintSpec,
    Empirical,
    Explicit,
    Gamma,
    HalfLine,
    Interval,
    Polynomial,
    RealLine,
    StdGaussian,
    build_basis,
    gaussian_moments,
    moment_matrix_for,
)
from polylr.moments import AssumptionError, MomentVector
from polylr.plr import (
    InfeasibleError,
    UnsupportedWeightError,
    decompose,
    fit,
    fit_escalating,
    fms_constrained,
    fms_project,
    grid_points,
    h_inner,
    h_norm,
    kernel_eval,
    kernel_matrix_inverse,
    tilt_density,
)


def gauss_H(n):
    return moment_matrix_for(StdGaussian(), build_basis(1, n))


# -- kernel ------------------------------------------------------------------


def test_kernel_matrix_inverse_gaussian():
    np.testing.assert_allclose(
        kernel_matrix_inverse(gauss_H(2)),
        [[1.5, 0, -0.5], [0, 1, 0], [-0.5, 0, 0.5]], atol=1e-12)


def test_kernel_eval_values():
    H = gauss_H(2)
    assert kernel_eval(H, 0.0, 0.0) == pytest.approx(1.5, abs=1e-12)
    for s, t in [(0.3, -1.2), (2.0, 0.5)]:
        assert kernel_eval(H, s, t) == pytest.approx(kernel_eval(H, t, s), abs=1e-12)
        assert kernel_eval(H, s, s) > 0


def test_kernel_singular_H():
    H = moment_matrix_for(Explicit(MomentVector(build_basis(1, 2), [1, 0, 0])), build_basis(1, 1))
    with pytest.raises(ValueError):
        kernel_eval(H, 0.0, 0.0)


def test_reproducing_property(rng):
    H = gauss_H(4)
    Hinv = kernel_matrix_inverse(H)
    for _ in range(10):
        x = rng.standard_normal(H.basis.size)
        t = rng.uniform(-3, 3)
        k_t = Hinv @ H.basis.design_matrix(t)[0]
        assert h_inner(H, x, k_t) == pytest.approx(Polynomial(H.basis, x)(t), abs=1e-10)


# -- projections ---------------------------------------------------------------


def test_fms_of_weight_is_one():
    H = gauss_H(3)
    xi = fms_project(gaussian_moments(3), H)
    np.testing.assert_allclose(xi.coeffs, [1, 0, 0, 0], atol=1e-12)


def test_fms_gaussian_linear():
    H = gauss_H(1)
    xi = fms_project(MomentVector(build_basis(1, 1), [1, 0.4]), H)
    np.testing.assert_allclose(xi.coeffs, [1, 0.4], atol=1e-12)


def test_fms_gamma():
    H = moment_matrix_for(Gamma(1.0), build_basis(1, 1))
    np.testing.assert_allclose(H.entries, [[1, 2], [2, 6]])
    xi = fms_project(MomentVector(build_basis(1, 1), [1, 3]), H)
    np.testing.assert_allclose(xi.coeffs, [0, 0.5], atol=1e-12)


def test_mean_embedding_identity(rng):
    H = gauss_H(3)
    mu = MomentVector(build_basis(1, 3), [1, 0.2, 1.3, 0.5])
    f = fms_project(mu, H)
    for _ in range(5):
        x = rng.standard_normal(4)
        assert h_inner(H, f, x) == pytest.approx(mu.values @ x, abs=1e-10)


def test_decompose_tilt():
    H = gauss_H(2)
    xs, xc = decompose(tilt_closed_form(0.6), tilt_constraints(0.6), H)
    np.testing.assert_allclose(xs.coeffs, [1, 0.6, 0], atol=1e-12)
    np.testing.assert_allclose(xc.coeffs, [-0.1, 0, 0.1], atol=1e-12)


def test_decompose_in_K_and_orthogonal(rng):
    H = gauss_H(4)
    cons = tilt_constraints(0.2)
    xs, xc = decompose([0.7, -0.3, 0, 0, 0], cons, H)
    np.testing.assert_allclose(xc.coeffs, 0, atol=1e-12)
    for _ in range(10):
        x = rng.standard_normal(5)
        xs, xc = decompose(x, cons, H)
        np.testing.assert_allclose(xs.coeffs + xc.coeffs, x, atol=1e-12)
        assert abs(h_inner(H, xs, xc)) <= 1e-10


def test_decompose_rank_deficient():
    b = build_basis(1, 1)
    cons = ConstraintSpec(((Polynomial.constant(b), 1.0), (Polynomial.constant(b, 2.0), 2.0)))
    with pytest.raises(ValueError):
        decompose([1, 0, 0], cons, gauss_H(2))


# -- fit -----------------------------------------------------------------------


@pytest.mark.parametrize("mu", [0.0, 0.6, -0.9])
def test_fit_gaussian_tilt(mu):
    m = fit(StdGaussian(), tilt_constraints(mu), 2, RealLine())
    np.testing.assert_allclose(m.xi.coeffs, tilt_closed_form(mu), atol=1e-8)
    np.testing.assert_allclose(m.xi_star.coeffs + m.xi_circ.coeffs, m.xi.coeffs, atol=1e-9)
    assert abs(h_inner(m.H, m.xi_star, m.xi_circ)) <= 1e-8
    assert m.grid_min() >= -1e-7
    if mu == 0:
        assert m.correction_norm <= 1e-9


def _second_moment_cap(bound):
    b = build_basis(1, 2)
    ineq = ((Polynomial.from_terms(b, {2: 1.0}), bound),)
    return ConstraintSpec(tilt_constraints(0.6).equalities, ineq)


def test_fit_with_inequality():
    # at degree 2 unit mass forces (xi, t^2) = 1 + 2 x2 >= 1.2, so a cap of 0.9 is infeasible
    with pytest.raises(InfeasibleError):
        fit(StdGaussian(), _second_moment_cap(0.9), 2, RealLine())
    m = fit(StdGaussian(), _second_moment_cap(1.1), 4, RealLine())
    second = h_inner(m.H, m.xi, [0, 0, 1, 0, 0])
    assert second <= 1.1 + 1e-8
    assert second == pytest.approx(1.1, abs=1e-7)
    assert m.solution.eps[0] > 0
    assert m.grid_min() >= -1e-7


def test_fit_inactive_inequality_flag():
    b = build_basis(1, 2)
    ineq = ((Polynomial.from_terms(b, {2: 1.0}), 5.0),)
    cons = ConstraintSpec(tilt_constraints(0.6).equalities, ineq)
    all_ = fit(StdGaussian(), cons, 2, RealLine())
    act = fit(StdGaussian(), cons, 2, RealLine(), include_all=False)
    np.testing.assert_allclose(all_.xi.coeffs, tilt_closed_form(0.6), atol=1e-8)
    np.testing.assert_allclose(act.xi_star.coeffs, [1, 0.6, 0], atol=1e-8)
    assert h_norm(all_.H, all_.xi_circ) <= h_norm(act.H, act.xi_circ) + 1e-12


def test_fit_infeasible():
    with pytest.raises(InfeasibleError):
        fit(StdGaussian(), tilt_constraints(1.5), 2, RealLine())


def test_fit_too_few_samples():
    w = Empirical(np.array([0.0, 1.0, 1.0, 0.0]))
    with pytest.raises(AssumptionError):
        fit(w, tilt_constraints(0.5), 2, RealLine())


def test_fit_halfline_gamma():
    cons = ConstraintSpec.moments([1.0, 2.0])
    m = fit(Gamma(1.0), cons, 2, HalfLine())
    np.testing.assert_allclose(m.xi.coeffs, [1, 0, 0], atol=1e-8)


def test_fit_interval_uniform_grid():
    pts = grid_points(StdGaussian(), Interval(-1, 2), 11)
    np.testing.assert_allclose(pts, np.linspace(-1, 2, 11))
    m = fit(StdGaussian(), tilt_constraints(0.6), 2, Interval(-1, 2))
    assert m.grid_min() >= -1e-7
    assert m.norm <= h_norm(m.H, tilt_closed_form(0.6)) + 1e-9


def test_fit_escalating_logs(caplog):
    with caplog.at_level(logging.INFO, logger="polylr.plr"):
        m = fit_escalating(StdGaussian(), tilt_constraints(0.6), 2, RealLine())
    assert m.basis.n == 2
    assert any("feasible" in r.message for r in caplog.records)
    # a mean outside [-1, 1] needs degree 4
    m = fit_escalating(StdGaussian(), tilt_constraints(1.5), 2, RealLine())
    assert m.basis.n == 4
    b = build_basis(1, 0)
    negative_mass = ConstraintSpec(((Polynomial.constant(b), -1.0),))
    with pytest.raises(InfeasibleError):
        fit_escalating(StdGaussian(), negative_mass, 2, RealLine(), max_extra=2)


def test_price_of_nonnegativity():
    H = gauss_H(2)
    cons = tilt_constraints(0.6)
    m = fit(StdGaussian(), cons, 2, RealLine())
    f = fms_constrained(H, cons)
    np.testing.assert_allclose(f.coeffs, [1, 0.6, 0], atol=1e-12)
    assert m.norm**2 == pytest.approx(h_norm(H, m.xi_star) ** 2 + m.correction_norm**2, abs=1e-10)
    assert m.norm > h_norm(H, f)


def test_full_moment_match_gives_no_correction():
    # all moments of a Gaussian with mean 0.3 up to degree 2; its FMS is non-negative
    mu = MomentVector(build_basis(1, 2), [1, 0.3, 1.09])
    cons = ConstraintSpec.moments(mu.values)
    m = fit(StdGaussian(), cons, 2, RealLine())
    f = fms_project(mu, m.H)
    assert np.min(f(np.linspace(-50, 50, 10001))) >= 0
    assert m.correction_norm <= 1e-7
    np.testing.assert_allclose(m.xi.coeffs, f.coeffs, atol=1e-7)


# -- tilted density --------------------------------------------------------------


def test_tilt_density_properties():
    m0 = fit(StdGaussian(), tilt_constraints(0.0), 2, RealLine())
    t = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(tilt_density(m0, t), np.exp(-t**2 / 2) / np.sqrt(2 * np.pi),
                               atol=1e-9)
    m = fit(StdGaussian(), tilt_constraints(0.6), 2, RealLine())
    mass, _ = integrate.quad(lambda s: tilt_density(m, s), -np.inf, np.inf)
    mean, _ = integrate.quad(lambda s: s * tilt_density(m, s), -np.inf, np.inf)
    assert mass == pytest.approx(1, abs=1e-6)
    assert mean == pytest.approx(0.6, abs=1e-6)
    assert isinstance(tilt_density(m, 0.5), float)


def test_tilt_density_unsupported_weight():
    w = Empirical(np.linspace(-2, 2, 9))
    m = fit(w, tilt_constraints(0.1), 2, RealLine())
    with pytest.raises(UnsupportedWeightError):
        tilt_density(m, 0.0)


def test_model_json():
    m = fit(StdGaussian(), tilt_constraints(0.6), 2, RealLine())
    obj = json.loads(json.dumps(m.to_json()))
    assert set(obj) == {"xi", "xi_star", "xi_circ", "solution", "weight", "domain"}
    np.testing.assert_allclose(Polynomial.from_json(obj["xi"]).coeffs, m.xi.coeffs)


def test_constraint_json_roundtrip():
    c = tilt_constraints(0.25)
    back = ConstraintSpec.from_json(json.loads(json.dumps(c.to_json())))
    for (f, v), (g, w) in zip(c.equalities, back.equalities):
        np.testing.assert_array_equal(f.coeffs, g.coeffs)
        assert v == w
    with pytest.raises(ValueError):
        ConstraintSpec.from_json({"equalities": [{"c": 1}]})
