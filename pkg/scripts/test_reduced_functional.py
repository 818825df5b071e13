import math

import numpy as np
import pytest

from bubbles import C0, C_STAR, INTEGRAL_V, SECOND_MOMENT
from errors import DegenerateFit, QuadratureNotConverged
from geometry import kelvin_params
from morse import PerturbationSpec, build_h
from presets import get_preset
from quadrature import QuadratureSpec
from reduced_functional import (
    gamma, gamma_jet, gamma_jet_batch, gamma_kelvin_check, grad_gamma, hess_gamma, kernel_integrals,
    lambda_expansion, second_moment_matrix,
)

TOL = QuadratureSpec().tol


@pytest.fixture(scope="module")
def one():
    return build_h(PerturbationSpec(h="1"))


def gaussian_bump():
    return build_h(PerturbationSpec(h=get_preset("gaussian")["h"]))


@pytest.fixture(scope="module")
def linear_k():
    # k = x1 gives h = 2 y1 / (1 + |y|^2)
    return build_h(PerturbationSpec(k="x1"))


def test_reference_constants():
    assert INTEGRAL_V == pytest.approx(22.20661, rel=1e-6)
    assert C0 == pytest.approx(11.10331, rel=1e-6)
    assert SECOND_MOMENT == pytest.approx(66.61984, rel=1e-6)
    assert C_STAR == pytest.approx(9 * math.pi ** 2 / 8)


def test_kernel_integrals():
    integral, second, matrix = kernel_integrals()
    assert integral == pytest.approx(INTEGRAL_V, rel=1e-6)
    assert second == pytest.approx(SECOND_MOMENT, rel=1e-6)
    assert np.allclose(matrix, INTEGRAL_V * np.eye(3), rtol=0, atol=1e-6 * INTEGRAL_V)
    assert np.allclose(second_moment_matrix(), matrix)


@pytest.mark.parametrize("lam, xi", [(1.0, (0, 0, 0)), (0.3, (1, -2, 0.5)), (4.0, (0, 0, 3))])
def test_constant_perturbation(one, lam, xi):
    jet = gamma_jet(one, lam, xi)
    assert jet.value == pytest.approx(C0, abs=2 * TOL * C0)
    assert np.allclose(jet.grad, 0, atol=1e-12)
    assert np.allclose(jet.hess, 0, atol=1e-12)


def test_odd_perturbation_vanishes():
    h = build_h(PerturbationSpec(h="y1"))
    assert abs(gamma(h, 1.0, (0, 0, 0)).value) <= TOL * C0


def test_small_scale_limit(linear_k):
    result = gamma(linear_k, 0.01, (1, 0, 0))
    assert abs(result.value - C0) <= 5e-3 * C0

    xi = np.array([0.3, 0.0, 0.0])
    grad = grad_gamma(linear_k, 0.01, xi)
    expected = C0 * linear_k.gradient(xi)[0]
    assert np.linalg.norm(grad[1:] - expected) <= 1e-2 * np.linalg.norm(expected)

    xi = np.array([0.3, 0.2, 0.0])
    hess = hess_gamma(linear_k, 0.01, xi)
    expected = C0 * linear_k.hessian(xi)[0]
    assert np.max(np.abs(hess[1:, 1:] - expected)) <= 2e-2 * np.max(np.abs(expected))


def test_zero_scale_extension(linear_k):
    xi = np.array([0.4, -0.1, 0.2])
    jet = gamma_jet(linear_k, 0.0, xi)
    point = linear_k.jet_at(xi)
    assert jet.value == pytest.approx(C0 * point.value)
    assert jet.grad[0] == 0.0
    assert np.allclose(jet.grad[1:], C0 * point.grad)
    assert jet.hess[0, 0] == pytest.approx(C_STAR * point.laplacian)
    with pytest.raises(ValueError):
        gamma_jet(linear_k, -0.1, xi)


def test_gradient_matches_differences(linear_k):
    lam, xi = 0.5, np.array([0.2, -0.1, 0.4])
    grad = grad_gamma(linear_k, lam, xi)
    step = 1e-3
    z = np.concatenate([[lam], xi])
    for j in range(4):
        e = np.zeros(4)
        e[j] = step
        plus = gamma(linear_k, z[0] + e[0], z[1:] + e[1:]).value
        minus = gamma(linear_k, z[0] - e[0], z[1:] - e[1:]).value
        assert abs(grad[j] - (plus - minus) / (2 * step)) <= 1e-5


def test_hessian_is_symmetric(linear_k):
    hess = hess_gamma(linear_k, 0.7, (0.3, -0.2, 0.1))
    assert np.max(np.abs(hess - hess.T)) <= 1e-10


def test_batch_matches_single_evaluations(linear_k):
    q = QuadratureSpec(angular_nodes=4)
    params = np.array([[0.5, 0.2, -0.1, 0.4], [1.5, 0.0, 0.3, 0.0], [0.2, -1.0, 0.0, 0.5]])
    values, grads, hesses = gamma_jet_batch(linear_k, params, q)
    for z, value, grad, hess in zip(params, values, grads, hesses):
        single = gamma_jet(linear_k, z[0], z[1:], q, estimate=False)
        assert value == pytest.approx(single.value, rel=1e-12, abs=1e-12)
        assert np.allclose(grad, single.grad, rtol=1e-10, atol=1e-12)
        assert np.allclose(hess, single.hess, rtol=1e-10, atol=1e-12)


def test_finite_radius_reports_tail(one):
    q = QuadratureSpec(radius=20.0)
    with pytest.raises(QuadratureNotConverged):
        gamma(one, 1.0, (0, 0, 0), q)
    jet = gamma_jet(one, 1.0, (0, 0, 0), q, order=0, strict=False)
    assert not jet.converged
    assert abs(jet.value - C0) <= jet.error


def test_lambda_expansion_recovers_c_star():
    fit = lambda_expansion(gaussian_bump(), (0, 0, 0))
    assert fit.c_star == pytest.approx(C_STAR, rel=1e-2)
    assert fit.laplacian == pytest.approx(-6 / 16)
    assert fit.defect_ratio <= 10
    assert fit.candidates["second_moment_over_6"] == pytest.approx(C_STAR)
    # the one-column fit keeps an O(lam^2) bias
    assert fit.c_star_leading == pytest.approx(C_STAR, rel=5e-2)
    assert fit.to_dict()["c_star_leading"] == fit.c_star_leading


def test_lambda_expansion_needs_nonzero_laplacian(linear_k):
    with pytest.raises(DegenerateFit):
        lambda_expansion(linear_k, (0, 0, 0))
    with pytest.raises(ValueError):
        lambda_expansion(linear_k, (0.5, 0, 0), lambdas=[0.1, 0.2])


def test_kelvin_invariance(one, linear_k):
    assert gamma_kelvin_check(one, 1.3, (0.2, 0, 0)) <= 2 * TOL * C0
    assert gamma_kelvin_check(linear_k, 1.0, (1, 0, 0)) <= 5 * TOL * C0
    assert gamma_kelvin_check(linear_k, 0.5, (0, 2, 0)) <= 5 * TOL * C0


@pytest.mark.parametrize("r", [2.0, 3.0, 5.0])
@pytest.mark.parametrize("lam", [0.5, 1.0, 4.0])
def test_off_centre_bubbles_converge(linear_k, lam, r):
    xi = np.array([r, 0.0, 0.0])
    jet = gamma_jet(linear_k, lam, xi)
    assert jet.converged
    lam_t, xi_t = kelvin_params(lam, xi)
    reflected = gamma(linear_k.kelvin(), lam_t, xi_t)
    assert abs(jet.value - reflected.value) <= 10 * TOL * C0
    assert np.allclose(jet.hess, jet.hess.T, atol=1e-10)


@pytest.mark.parametrize("xi", [(0, 0, 0), (1, 0, 0), (0.3, -0.5, 0.2), (-2, 1, 0), (1, 0, 4)])
def test_small_scale_value_tends_to_c0_h(linear_k, xi):
    xi = np.array(xi, dtype=float)
    result = gamma(linear_k, 0.01, xi)
    assert abs(result.value - C0 * linear_k.jet_at(xi).value) <= 1e-3 * C0


@pytest.mark.parametrize("perturbation, xi", [
    ("gaussian", (0, 0, 0)),
    ("gaussian", (2, -1, 0)),
    ("gaussian", (0, 0, 3)),
    ("linear", (1, 0, 0)),
    ("linear", (-1, 0, 0)),
    ("linear", (2, 0, 0)),
])
def test_c_star_is_the_same_everywhere(linear_k, perturbation, xi):
    h = gaussian_bump() if perturbation == "gaussian" else linear_k
    fit = lambda_expansion(h, xi)
    assert fit.laplacian != 0
    assert fit.c_star == pytest.approx(C_STAR, rel=1e-2)


def test_kelvin_invariance_at_random_parameters(linear_k):
    rng = np.random.default_rng(2024)
    for _ in range(10):
        lam = rng.uniform(0.2, 3.0)
        xi = 1.5 * rng.normal(size=3)
        assert gamma_kelvin_check(linear_k, lam, xi) <= 10 * TOL * C0
