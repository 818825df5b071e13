import logging
import math

import numpy as np
import pytest

from degree import (
    DomainBall, VectorFieldProbe, boundary_mesh, bs_domain, degree_quadrature, gamma_degree,
    gradient_refinement_error, kronecker_degree, kronecker_integral, linear_probe, winding_number,
    zero_count_degree,
)
from errors import BoundaryZero, SingularZero
from morse import PerturbationSpec, build_h, degree_sum, find_critical_points
from presets import get_preset
from quadrature import QuadratureSpec


def _rotation(n, angle, i=0, j=1):
    R = np.eye(n)
    R[i, i] = R[j, j] = math.cos(angle)
    R[i, j], R[j, i] = -math.sin(angle), math.sin(angle)
    return R


def _square_map():
    return VectorFieldProbe(
        field=lambda p: np.stack([p[..., 0] ** 2 - p[..., 1] ** 2, 2 * p[..., 0] * p[..., 1]], axis=-1),
        jacobian=lambda p: np.stack([
            np.stack([2 * p[..., 0], -2 * p[..., 1]], axis=-1),
            np.stack([2 * p[..., 1], 2 * p[..., 0]], axis=-1),
        ], axis=-2),
    )


def test_bs_domain():
    d = bs_domain(2.0)
    assert np.allclose(d.center, [2, 0, 0, 0])
    assert d.radius == pytest.approx(1.5)
    assert bs_domain(1.1).radius == pytest.approx(0.190909, abs=1e-6)
    with pytest.raises(ValueError):
        bs_domain(1.0)
    # lam stays above 1/s on the ball
    mesh = boundary_mesh(bs_domain(3.0), 6)
    assert np.min(mesh.points[:, 0]) >= 1 / 3 - 1e-12


def test_domain_validation():
    with pytest.raises(ValueError):
        DomainBall(np.zeros(5), 1.0)
    with pytest.raises(ValueError):
        DomainBall(np.zeros(3), 0.0)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_mesh_weights_cover_the_sphere(n):
    # pulled-back area density integrates to the sphere's volume
    mesh = boundary_mesh(DomainBall(np.zeros(n), 1.0), 10)
    frame = np.concatenate([(mesh.points)[:, None, :], mesh.tangents], axis=1)
    area = np.sum(mesh.weights * np.abs(np.linalg.det(frame)))
    expected = {2: 2 * math.pi, 3: 4 * math.pi, 4: 2 * math.pi ** 2}[n]
    assert area == pytest.approx(expected, rel=1e-8)


@pytest.mark.parametrize("n, sign, expected", [(3, 1, 1), (3, -1, -1), (4, 1, 1), (4, -1, 1), (2, -1, 1)])
def test_identity_and_antipodal(n, sign, expected):
    probe = linear_probe(sign * np.eye(n))
    ball = DomainBall(np.zeros(n), 1.0)
    assert kronecker_degree(probe, ball) == expected
    assert zero_count_degree(probe, ball) == expected


def test_reflection_and_excluded_zero():
    probe = linear_probe(np.diag([-1.0, 1.0, 1.0]))
    assert kronecker_degree(probe, DomainBall(np.zeros(3), 1.0)) == -1
    away = DomainBall(np.array([3.0, 0.0, 0.0]), 1.0)
    assert kronecker_degree(probe, away) == 0
    assert zero_count_degree(probe, away) == 0


def test_rotations_keep_degree_one():
    R = _rotation(4, 0.7) @ _rotation(4, 1.9, 2, 3) @ _rotation(4, -0.4, 1, 3)
    ball = DomainBall(np.array([0.1, -0.2, 0.0, 0.3]), 1.5)
    assert kronecker_degree(linear_probe(R), ball) == 1
    assert zero_count_degree(linear_probe(R), ball) == 1


def test_integral_is_stable_under_refinement_and_scaling():
    ball = DomainBall(np.zeros(3), 1.0)
    probe = VectorFieldProbe(field=lambda x: np.stack([x[:, 0] ** 2 - 0.25, x[:, 1], x[:, 2] + 0.2 * x[:, 0]], axis=-1))
    coarse = kronecker_integral(probe, ball, 12)
    fine = kronecker_integral(probe, ball, 24)
    assert abs(coarse) <= 0.2 and abs(fine) <= 0.2
    assert abs(coarse - fine) <= 0.05
    scaled = VectorFieldProbe(field=lambda x: 3.0 * probe.field(x))
    assert kronecker_integral(scaled, ball, 12) == pytest.approx(coarse, abs=1e-7)


def test_two_zeros_of_opposite_sign():
    probe = VectorFieldProbe(field=lambda x: np.stack([x[:, 0] ** 2 - 0.25, x[:, 1], x[:, 2]], axis=-1))
    ball = DomainBall(np.zeros(3), 1.0)
    assert kronecker_degree(probe, ball) == 0
    assert zero_count_degree(probe, ball) == 0
    # only the zero at x1 = 0.5 lies in this ball
    right = DomainBall(np.array([0.6, 0.0, 0.0]), 0.5)
    assert kronecker_degree(probe, right) == 1
    assert zero_count_degree(probe, right) == 1


def test_square_map():
    disk = DomainBall(np.array([0.1, 0.0]), 1.0)
    assert kronecker_degree(_square_map(), disk) == 2
    assert winding_number(_square_map().field, disk.center, disk.radius) == 2
    with pytest.raises(SingularZero):
        zero_count_degree(_square_map(), disk)


def test_field_vanishing_on_the_boundary():
    probe = VectorFieldProbe(field=lambda x: (np.sum(x * x, axis=-1, keepdims=True) - 1.0) * x)
    with pytest.raises(BoundaryZero):
        kronecker_degree(probe, DomainBall(np.zeros(3), 1.0))
    with pytest.raises(BoundaryZero):
        zero_count_degree(probe, DomainBall(np.zeros(3), 1.0))
    with pytest.raises(BoundaryZero):
        winding_number(lambda p: (np.sum(p * p, axis=-1, keepdims=True) - 4.0) * p, [0.0, 0.0], 2.0)


def test_constant_perturbation_has_no_degree():
    with pytest.raises(BoundaryZero):
        gamma_degree(build_h(PerturbationSpec(h="1")), mesh=4)


def test_gradient_degree_matches_morse_for_linear_k():
    h = build_h(PerturbationSpec(k="x1"))
    assert gamma_degree(h) == degree_sum(find_critical_points(h)) == 0


def test_gradient_degree_matches_morse_for_guarantee_fixture():
    preset = get_preset("two_max")
    h = build_h(PerturbationSpec(k=preset["k"]))
    assert gamma_degree(h) == degree_sum(find_critical_points(h)) == preset["expected"]["degree_sum"]


def test_gradient_degree_is_the_same_on_a_larger_ball():
    h = build_h(PerturbationSpec(k=get_preset("two_max")["k"]))
    assert gamma_degree(h, s=6.0) == gamma_degree(h, s=12.0) == -1


def test_gradient_degree_is_the_same_on_a_finer_mesh():
    h = build_h(PerturbationSpec(k="x1"))
    assert gamma_degree(h, mesh=8) == gamma_degree(h, mesh=16) == 0


def test_gradient_rule_error_shrinks_with_refinement():
    h = build_h(PerturbationSpec(k="x1"))
    domain = bs_domain(6.0)
    coarse = gradient_refinement_error(h, domain, QuadratureSpec(angular_nodes=2))
    default = gradient_refinement_error(h, domain)
    assert 0 < default < coarse
    assert degree_quadrature().angular_nodes == 4


def test_gradient_rule_is_refined_when_it_moves(monkeypatch, caplog):
    import config

    monkeypatch.setattr(config, "DEGREE_GRADIENT_RTOL", 0.0)
    h = build_h(PerturbationSpec(k="x1"))
    with caplog.at_level(logging.WARNING, logger="degree"):
        assert gamma_degree(h, mesh=8) == 0
    assert "refining the rule" in caplog.text
