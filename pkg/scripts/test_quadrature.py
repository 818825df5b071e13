import math

import numpy as np
import pytest

from errors import QuadratureNotConverged
from quadrature import QuadratureSpec, apply_rule, integrate, spherical_rule


def test_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(radius=5.0)
    with pytest.raises(ValueError):
        QuadratureSpec(radial_nodes=32)
    with pytest.raises(ValueError):
        QuadratureSpec(angular_nodes=1)
    with pytest.raises(ValueError):
        QuadratureSpec(tol=0.0)
    refined = QuadratureSpec().refined()
    assert (refined.radial_nodes, refined.angular_nodes) == (128, 24)


def test_rule_is_read_only_and_cached():
    points, weights = spherical_rule(math.inf, 64, 4)
    assert points.shape == (64 * 4 * 8, 3)
    assert spherical_rule(math.inf, 64, 4)[0] is points
    with pytest.raises(ValueError):
        weights[0] = 1.0


def test_gaussian_integral():
    result = integrate(lambda x: np.exp(-np.sum(x * x, axis=-1)))
    assert result.value == pytest.approx(math.pi ** 1.5, rel=1e-10)
    assert result.error <= 1e-8


def test_vector_valued_integrand():
    def fn(x):
        g = np.exp(-np.sum(x * x, axis=-1))
        return np.stack([g, x[:, 0] * g, x[:, 0] ** 2 * g], axis=-1)

    value = integrate(fn).value
    assert value == pytest.approx([math.pi ** 1.5, 0.0, 0.5 * math.pi ** 1.5], abs=1e-10)


def test_ball_volume_with_finite_radius():
    spec = QuadratureSpec(radius=10.0, tol=1e-8)
    result = integrate(lambda x: np.ones(len(x)), spec)
    assert result.value == pytest.approx(4 * math.pi * 1000 / 3, rel=1e-10)


def test_tail_bound_enters_the_error():
    spec = QuadratureSpec(radius=10.0, tol=1e-6)
    with pytest.raises(QuadratureNotConverged):
        integrate(lambda x: np.exp(-np.sum(x * x, axis=-1)), spec, tail=1.0)
    loose = integrate(lambda x: np.exp(-np.sum(x * x, axis=-1)), spec, tail=1.0, strict=False)
    assert loose.error >= 1.0
    assert not loose.converged(spec)


def test_chunked_sum_matches_single_pass(monkeypatch):
    import config

    points, weights = spherical_rule(math.inf, 128, 24)
    fn = lambda x: 1.0 / (1.0 + np.sum(x * x, axis=-1)) ** 2
    whole = float(np.dot(weights, fn(points)))
    monkeypatch.setattr(config, "QUAD_CHUNK", 1000)
    assert apply_rule(fn, points, weights) == pytest.approx(whole, rel=1e-13)
    assert apply_rule(fn, points, weights) == apply_rule(fn, points, weights)


def test_oriented_rule_integrates_an_off_centre_gaussian():
    center = np.array([0.0, 3.0, -4.0])
    fn = lambda x: np.exp(-np.sum((x - center) ** 2, axis=-1))
    result = integrate(fn, axis=tuple(center / 5.0), cap=0.8, shell=(3.0, 7.0))
    assert result.value == pytest.approx(math.pi ** 1.5, rel=1e-7)
    assert result.refinements == 1


def test_oriented_rule_is_a_rotation():
    plain_points, plain_weights = spherical_rule(math.inf, 64, 4)
    points, weights = spherical_rule(math.inf, 64, 4, axis=(1.0, 1.0, 0.0))
    assert np.array_equal(weights, plain_weights)
    assert np.allclose(np.linalg.norm(points, axis=-1), np.linalg.norm(plain_points, axis=-1))
    # the polar coordinate is measured from the axis
    assert np.allclose(points @ np.array([1.0, 1.0, 0.0]) / math.sqrt(2), plain_points[:, 2])
    with pytest.raises(ValueError):
        spherical_rule(math.inf, 64, 4, cap=4.0)


def test_panels_keep_the_node_layout():
    points, weights = spherical_rule(math.inf, 64, 4, cap=0.5, shell=(1.0, 2.0))
    assert points.shape == (3 * 64 * 8 * 8, 3)
    with pytest.raises(ValueError):
        weights[0] = 1.0
    # a shell edge beyond the truncation radius adds no panel
    points, _ = spherical_rule(10.0, 64, 4, shell=(1.0, 50.0))
    assert points.shape == (2 * 64 * 4 * 8, 3)
    assert np.max(np.linalg.norm(points, axis=-1)) < 10.0


def test_refinement_continues_until_rules_agree(monkeypatch):
    import config

    monkeypatch.setattr(config, "QUAD_MAX_REFINEMENTS", 4)
    spec = QuadratureSpec(angular_nodes=2, tol=1e-3)
    fn = lambda x: np.exp(-np.sum((x - np.array([0.0, 0.0, 1.0])) ** 2, axis=-1))
    result = integrate(fn, spec)
    assert result.refinements >= 2
    assert result.nodes > 64 * 2 * 4 + 128 * 4 * 8
    assert result.value == pytest.approx(math.pi ** 1.5, rel=1e-3)


def test_refinement_stops_at_the_cap(monkeypatch):
    import config

    monkeypatch.setattr(config, "QUAD_MAX_REFINEMENTS", 1)
    spec = QuadratureSpec(angular_nodes=2, tol=1e-8)
    fn = lambda x: np.exp(-np.sum((x - np.array([0.0, 0.0, 1.0])) ** 2, axis=-1))
    with pytest.raises(QuadratureNotConverged):
        integrate(fn, spec)
    result = integrate(fn, spec, strict=False)
    assert result.refinements == 1
    assert not result.converged(spec)


@pytest.mark.parametrize("deterministic", [True, False])
def test_threaded_reduction_orders(monkeypatch, deterministic):
    import config

    points, weights = spherical_rule(math.inf, 128, 24)
    fn = lambda x: 1.0 / (1.0 + np.sum(x * x, axis=-1)) ** 2
    whole = float(np.dot(weights, fn(points)))
    monkeypatch.setattr(config, "QUAD_CHUNK", 1000)
    monkeypatch.setattr(config, "REDUCTION_THREADS", 4)
    monkeypatch.setattr(config, "DETERMINISTIC_REDUCTION", deterministic)
    assert apply_rule(fn, points, weights) == pytest.approx(whole, rel=1e-12)
    if deterministic:
        assert apply_rule(fn, points, weights) == apply_rule(fn, points, weights)
