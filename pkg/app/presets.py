"""
Named perturbation presets for the toolkit.
Each entry is a k on S^3 (ambient x1..x4) or an h on R^3 (y1..y3) with what is known about it.
"""
import config
from errors import UsageError

PERTURBATION_PRESETS = {
    "linear": {
        "name": "Linear height k = x1",
        "k": "x1",
        "expected": {"degree_sum": 0, "guarantee": False, "critical_points": 2},
    },
    "height": {
        "name": "Height function k = x4 (critical at both poles)",
        "k": "x4",
        "expected": {"south_pole_ok": False, "guarantee": False},
    },
    "two_max": {
        "name": "Quadratic form with a double maximum",
        "k": "3*x1^2 + 0.1*x2^2 + 0.1*(x3+x4)^2",
        "expected": {"degree_sum": -1, "guarantee": True, "critical_points": 8},
    },
    "bowl": {
        "name": "Flat bowl h = |y|^2",
        "h": "y1^2 + y2^2 + y3^2",
        "expected": {"degree_sum": 1, "guarantee": True, "critical_points": 1},
    },
    "gaussian": {
        "name": "Wide Gaussian bump",
        "h": f"exp(-(y1^2 + y2^2 + y3^2)/{config.GAUSSIAN_BUMP_WIDTH ** 2:g})",
        "expected": {},
    },
}


def get_preset(name):
    preset = PERTURBATION_PRESETS.get(name.lower())
    if preset is None:
        available = ", ".join(sorted(PERTURBATION_PRESETS))
        raise UsageError(f"unknown preset '{name}' (available: {available})")
    return preset


def preset_spec_fields(name):
    """The k/h fields of a preset, ready for PerturbationSpec."""
    preset = get_preset(name)
    return {key: preset[key] for key in ("k", "h") if key in preset}
