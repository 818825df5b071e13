import math

import numpy as np
import pytest
from pydantic import ValidationError

from errors import ConditionIViolated, CriticalPointsOutsideBox, DegenerateCriticalPoint
from expr import compile_expression, eval_jet2
from morse import (
    CriticalPoint, CriticalPointFinder, PerturbationSpec, Tolerances, build_h, compose, degree_sum,
    find_critical_points, fibonacci_sphere, from_flat_expression, linear_combination, sign_change_cells,
    south_pole_from_h, tau_jets, theorem_check,
)
from presets import PERTURBATION_PRESETS, get_preset

SQRT2 = math.sqrt(2.0)


def _by_location(crits):
    return sorted(crits, key=lambda c: tuple(np.round(c.location, 6)))


def test_spec_requires_exactly_one_function():
    with pytest.raises(ValidationError):
        PerturbationSpec()
    with pytest.raises(ValidationError):
        PerturbationSpec(k="x1", h="y1")
    assert PerturbationSpec(k="x1", epsilon=0.01).epsilon == 0.01


def test_sphere_function_pulls_back_through_the_chart():
    h = build_h(PerturbationSpec(k="x1"))
    y = np.array([[0.3, -0.2, 0.5], [2.0, 1.0, -1.0]])
    s = np.sum(y * y, axis=-1)
    assert np.allclose(h(y), 2 * y[:, 0] / (1 + s))
    direct = from_flat_expression(compile_expression("2*y1/(1+y1^2+y2^2+y3^2)"))
    assert np.allclose(h.hessian(y), direct.hessian(y))


def test_kelvin_composition_matches_reflection():
    k = build_h(PerturbationSpec(k="3*x1^2 + 0.1*x2^2 + 0.1*(x3+x4)^2"))
    flat = from_flat_expression(compile_expression("y1*y2 + exp(-y3^2)"))
    y = np.random.default_rng(20).normal(size=(20, 3))
    # generic chain rule through tau against the reflected sphere function
    composed = compose(k._jet_fn, tau_jets(y))
    reflected = k.kelvin().jet(y)
    assert np.allclose(composed.value, reflected.value)
    assert np.allclose(composed.grad, reflected.grad)
    assert np.allclose(composed.hess, reflected.hess)
    # tau is an involution
    assert np.allclose(flat.kelvin().kelvin()(y), flat(y))


def test_k_values_extend_to_the_south_pole():
    k_text = "3*x1^2 + 0.1*x2^2 + 0.1*(x3+x4)^2"
    h = build_h(PerturbationSpec(k=k_text))
    at_pole = float(eval_jet2(compile_expression(k_text).ast, [0, 0, 0, -1.0]).value)
    rays = fibonacci_sphere(5)
    for t in (1e-2, 1e-3, 1e-4):
        values = h.kelvin()(t * rays)
        assert np.max(np.abs(values - at_pole)) <= 10 * t


def test_sign_change_cells():
    axis = np.linspace(-1, 1, 4)
    grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1)
    cells = sign_change_cells(grid, [axis, axis])
    assert np.allclose(cells, [[0.0, 0.0]])


def test_linear_k_worked_example():
    h = build_h(PerturbationSpec(k="x1"))
    crits = _by_location(find_critical_points(h))
    assert len(crits) == 2
    low, high = crits
    assert np.max(np.abs(low.location - [-1, 0, 0])) <= 1e-8
    assert np.max(np.abs(high.location - [1, 0, 0])) <= 1e-8
    assert (high.index, low.index) == (3, 0)
    assert high.laplacian == pytest.approx(-3.0, rel=1e-8)
    assert low.laplacian == pytest.approx(3.0, rel=1e-8)
    assert all(c.grad_norm <= 1e-10 for c in crits)
    assert degree_sum(crits) == 0


def test_linear_k_verdict():
    verdict = theorem_check(PerturbationSpec(k="x1"))
    assert verdict.south_pole_ok
    assert verdict.south_pole.charts_agree
    assert verdict.condition_i
    assert not verdict.condition_ii
    assert verdict.degree_sum == 0
    assert verdict.negative_laplacian_sum == -1
    assert not verdict.guarantee


def test_height_function_is_critical_at_the_south_pole():
    verdict = theorem_check(PerturbationSpec(k="x4"))
    assert verdict.south_pole.status == "critical"
    assert verdict.south_pole.charts_agree
    assert not verdict.south_pole_ok
    assert not verdict.guarantee


def test_guarantee_fixture():
    preset = get_preset("two_max")
    verdict = theorem_check(PerturbationSpec(k=preset["k"]))
    crits = _by_location(verdict.critical_points)
    expected = sorted([
        ((-1.0, 0.0, 0.0), 3, -17.4), ((1.0, 0.0, 0.0), 3, -17.4),
        ((0.0, -1.0, 0.0), 1, 5.8), ((0.0, 1.0, 0.0), 1, 5.8),
        ((0.0, 0.0, SQRT2 - 1), 2, 14.5711), ((0.0, 0.0, -(SQRT2 + 1)), 2, 0.428932),
        ((0.0, 0.0, SQRT2 + 1), 0, 0.566190), ((0.0, 0.0, -(SQRT2 - 1)), 0, 19.2338),
    ], key=lambda e: tuple(np.round(e[0], 6)))
    assert len(crits) == len(expected) == preset["expected"]["critical_points"]
    for c, (location, index, laplacian) in zip(crits, expected):
        assert np.max(np.abs(c.location - location)) <= 1e-8
        assert c.index == index
        assert c.laplacian == pytest.approx(laplacian, rel=1e-5)
    assert verdict.south_pole_ok
    assert verdict.condition_i and verdict.condition_ii
    assert verdict.degree_sum == preset["expected"]["degree_sum"] == -1
    assert verdict.guarantee


def test_bowl_in_direct_mode():
    verdict = theorem_check(PerturbationSpec(h="y1^2+y2^2+y3^2"))
    assert verdict.south_pole.status == "not_applicable"
    assert verdict.south_pole_ok
    assert len(verdict.critical_points) == 1
    c = verdict.critical_points[0]
    assert c.index == 0 and c.laplacian == 6.0
    assert verdict.degree_sum == 1
    assert verdict.guarantee


def test_direct_h_with_regular_reflection():
    h = from_flat_expression(compile_expression("2*y1/(1+y1^2+y2^2+y3^2)"))
    check = south_pole_from_h(h)
    assert check.status == "ok"
    assert np.allclose(check.gradient, [2.0, 0.0, 0.0], atol=1e-3)


def test_two_bumps():
    h = from_flat_expression(compile_expression("exp(-((y1-1.5)^2+y2^2+y3^2)) + exp(-((y1+1.5)^2+y2^2+y3^2))"))
    crits = _by_location(find_critical_points(h, box_radius=3.0, check_shell=False))
    assert [c.index for c in crits] == [3, 2, 3]
    saddle = crits[1]
    assert np.max(np.abs(saddle.location)) <= 1e-8
    assert saddle.laplacian == pytest.approx(6 * math.exp(-2.25), rel=1e-8)
    assert crits[0].laplacian == pytest.approx(crits[2].laplacian)
    assert crits[0].laplacian < 0
    assert degree_sum(crits) == -1


def test_far_bump_does_not_change_the_sum():
    base = build_h(PerturbationSpec(k="x1"))
    bump = from_flat_expression(compile_expression("exp(-((y1-30)^2+y2^2+y3^2)/4)"))
    perturbed = linear_combination(1.0, base, 1e-14, bump)
    assert degree_sum(find_critical_points(perturbed)) == degree_sum(find_critical_points(base))


def test_constant_is_degenerate():
    with pytest.raises(DegenerateCriticalPoint):
        find_critical_points(build_h(PerturbationSpec(k="1")))
    verdict = theorem_check(PerturbationSpec(k="1"))
    assert not verdict.condition_i and not verdict.guarantee
    assert verdict.degree_sum is None
    assert verdict.diagnostics


def test_vanishing_laplacian_violates_condition_i():
    hess = np.diag([1.0, 1.0, -2.0])
    c = CriticalPoint(np.zeros(3), 0.0, hess, np.linalg.eigvalsh(hess), 1, 0.0)
    with pytest.raises(ConditionIViolated):
        degree_sum([c])


def test_results_are_stable_under_refinement():
    h = build_h(PerturbationSpec(k="x1"))
    coarse = _by_location(find_critical_points(h))
    fine = _by_location(find_critical_points(h, seed_nodes=48, tolerances=Tolerances(newton_tol=1e-12)))
    assert [c.index for c in coarse] == [c.index for c in fine]
    for a, b in zip(coarse, fine):
        assert np.linalg.norm(a.location - b.location) <= 1e-9


def test_shell_check_gives_up_on_fast_decay(caplog):
    # |grad h| ~ 8 / |y|^9 drops below the shell tolerance on every box up to the largest
    h = from_flat_expression(compile_expression("1/(1+y1^2+y2^2+y3^2)^4"))
    with pytest.raises(CriticalPointsOutsideBox):
        find_critical_points(h)
    assert "enlarging box" in caplog.text
    finder = CriticalPointFinder(h, check_shell=False)
    crits = finder.solve()
    assert finder.box_radius == 8.0
    assert len(crits) == 1 and crits[0].index == 3
    assert crits[0].laplacian == pytest.approx(-24.0)


def test_presets_are_well_formed():
    for name, preset in PERTURBATION_PRESETS.items():
        assert ("k" in preset) != ("h" in preset), name
        build_h(PerturbationSpec(k=preset.get("k"), h=preset.get("h")))
