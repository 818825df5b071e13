"""
Scalar and spinor bubbles, the interaction kernel V, grid residuals and energies.

    U(y)   = sqrt(3) lam^{1/2} (lam^2 + |y-xi|^2)^{-1/2}
    Phi(y) = (sqrt(3)/2) * 2 lam (lam^2 + |y-xi|^2)^{-3/2} (lam a - (y-xi).a)
    V      = U^2 |Phi|^2 = U^6 / 3

(U, Phi) solves -Delta u = |phi|^2 u, D phi = u^2 phi.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

import config
from clifford import clifford_mul, dirac_apply, laplacian_apply, norm2, inner
from errors import GridTooSmall
from geometry import as_point_r3, conformal_factor
from quadrature import QuadratureSpec, integrate

logger = logging.getLogger(__name__)

LAMBDA_1 = config.LAMBDA_1
MU_1 = config.MU_1

# Reference values from the radial integrals int r^2 (1+r^2)^-3 = pi/16, int r^4 (1+r^2)^-3 = 3 pi/16
INTEGRAL_V = 9 * math.pi ** 2 / 4
C0 = 9 * math.pi ** 2 / 8
SECOND_MOMENT = 27 * math.pi ** 2 / 4
C_STAR = SECOND_MOMENT / 6
J0_BUBBLE = 9 * math.pi ** 2 / 8
J0_RESCALED = math.pi ** 2

_FOURTH_ROOT_3 = 3 ** 0.25


@dataclass(frozen=True)
class BubbleParams:
    lam: float = 1.0
    xi: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0], dtype=complex))

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "xi", as_point_r3(self.xi).copy())
        a = np.asarray(self.a, dtype=complex)
        if a.shape != (2,) or abs(math.sqrt(norm2(a)) - 1.0) > 1e-12:
            raise ValueError("spinor parameter a must be a unit 2-component spinor")
        object.__setattr__(self, "a", a)


@dataclass(frozen=True)
class GridSpec:
    half_width: float = config.GRID_L_DEFAULT
    nodes: int = config.GRID_N_DEFAULT
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.half_width > 0:
            raise GridTooSmall(f"grid half-width must be positive, got {self.half_width}")
        if self.nodes < config.MIN_GRID_NODES:
            raise GridTooSmall(f"grid needs at least {config.MIN_GRID_NODES} nodes per axis, got {self.nodes}")
        object.__setattr__(self, "center", as_point_r3(self.center).copy())

    @property
    def spacing(self):
        return 2.0 * self.half_width / (self.nodes - 1)

    def points(self):
        axes = [c + np.linspace(-self.half_width, self.half_width, self.nodes) for c in self.center]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def refined(self):
        return GridSpec(self.half_width, 2 * self.nodes, self.center)


def _offset(p, y):
    z = np.asarray(y, dtype=float) - p.xi
    return z, p.lam * p.lam + np.sum(z * z, axis=-1)


def ubar(p, y):
    _, d = _offset(p, y)
    return _FOURTH_ROOT_3 * math.sqrt(p.lam) / np.sqrt(d)


def u_bubble(p, y):
    return _FOURTH_ROOT_3 * ubar(p, y)


def u_gradient(p, y):
    z, d = _offset(p, y)
    return -math.sqrt(3.0 * p.lam) * d[..., None] ** -1.5 * z


def phibar(p, y):
    z, d = _offset(p, y)
    profile = 2.0 * p.lam * d ** -1.5
    return profile[..., None] * (p.lam * p.a - clifford_mul(z, np.broadcast_to(p.a, z.shape[:-1] + (2,))))


def phi_bubble(p, y):
    return 0.5 * math.sqrt(3.0) * phibar(p, y)


def phi_dirac(p, y):
    """Closed-form D Phi, from D(g a) = (g'/r) z.a and D(g z.a) = -(r g' + 3g) a."""
    z, d = _offset(p, y)
    profile = 3.0 * math.sqrt(3.0) * p.lam ** 2 * d ** -2.5
    return profile[..., None] * (p.lam * p.a - clifford_mul(z, np.broadcast_to(p.a, z.shape[:-1] + (2,))))


def v_kernel(lam, xi, y, a=None):
    p = BubbleParams(lam, xi, np.array([1.0, 0.0]) if a is None else a)
    return u_bubble(p, y) ** 2 * norm2(phi_bubble(p, y))


def v_unit(x):
    """Closed form of V_{1,0}: 9 (1 + |x|^2)^-3."""
    x = np.asarray(x, dtype=float)
    return 9.0 / (1.0 + np.sum(x * x, axis=-1)) ** 3


# --- grid residuals ---

def system_residual(u, phi, spacing, scalar_coupling=1.0, spinor_coupling=1.0):
    """
    Sup-norms over interior nodes of -Delta u - c_s |phi|^2 u and D phi - c_p u^2 phi
    for fields sampled on a uniform grid.
    """
    interior = (slice(1, -1),) * 3
    u_in = u[interior]
    phi_in = phi[interior]
    scalar = -laplacian_apply(u, spacing) - scalar_coupling * norm2(phi_in) * u_in
    spinor = dirac_apply(phi, spacing) - spinor_coupling * (u_in * u_in)[..., None] * phi_in
    return float(np.max(np.abs(scalar))), float(np.max(np.sqrt(norm2(spinor))))


def _check_resolves(p, g):
    if g.nodes < config.MIN_RESIDUAL_NODES:
        raise GridTooSmall(f"residual checks need at least {config.MIN_RESIDUAL_NODES} nodes per axis, got {g.nodes}")
    if g.half_width < 4.0 * max(1.0, p.lam) * (1 - 1e-12):
        raise GridTooSmall(f"half-width {g.half_width} does not resolve a bubble of scale {p.lam}")


def residual_system(p, g):
    _check_resolves(p, g)
    y = g.points()
    logger.info(f"Residuals of the bubble system on {g.nodes}^3 nodes, spacing {g.spacing:.4g}")
    return system_residual(u_bubble(p, y), phi_bubble(p, y), g.spacing)


def residual_rescaled(p, g):
    _check_resolves(p, g)
    y = g.points()
    u = u_bubble(p, y) / math.sqrt(MU_1)
    phi = phi_bubble(p, y) / math.sqrt(LAMBDA_1)
    return system_residual(u, phi, g.spacing, LAMBDA_1, MU_1)


def convergence_order(coarse, fine, h_coarse, h_fine):
    return math.log(coarse / fine) / math.log(h_coarse / h_fine)


def sphere_profile(p, y):
    """Rescaled pair pulled back through the conformal factor: (v, |psi|), both 1 for (1, 0)."""
    f = conformal_factor(y)
    v = u_bubble(p, y) / (math.sqrt(MU_1) * np.sqrt(f))
    psi = np.sqrt(norm2(phi_bubble(p, y))) / (math.sqrt(LAMBDA_1) * f)
    return v, psi


def conformal_transfer_defect(g, radius=2.0):
    """
    sup over |y| <= radius of |f^{-5/2}(-Delta U) - (3/4) f^{-1/2} U| for the standard bubble:
    the transferred operator must act on the constant profile as the conformal Laplacian of S^3.
    """
    p = BubbleParams()
    y = g.points()
    u = u_bubble(p, y)
    interior = (slice(1, -1),) * 3
    y_in = y[interior]
    f = conformal_factor(y_in)
    transferred = f ** -2.5 * -laplacian_apply(u, g.spacing)
    expected = 0.75 * u[interior] / np.sqrt(f)
    mask = np.linalg.norm(y_in, axis=-1) <= radius
    return float(np.max(np.abs(transferred - expected)[mask]))


# --- energies ---

@dataclass(frozen=True)
class BubbleScalarField:
    params: BubbleParams
    factor: float = 1.0

    def value(self, y):
        return self.factor * u_bubble(self.params, y)

    def gradient(self, y):
        return self.factor * u_gradient(self.params, y)


@dataclass(frozen=True)
class BubbleSpinorField:
    params: BubbleParams
    factor: float = 1.0

    def value(self, y):
        return self.factor * phi_bubble(self.params, y)

    def dirac(self, y):
        return self.factor * phi_dirac(self.params, y)


def bubble_fields(p, rescaled=False):
    if rescaled:
        return BubbleScalarField(p, 1 / math.sqrt(MU_1)), BubbleSpinorField(p, 1 / math.sqrt(LAMBDA_1))
    return BubbleScalarField(p), BubbleSpinorField(p)


def _integrate_over(integrand, q, center, scale):
    center = as_point_r3(center)

    def fn(x):
        return integrand(center + scale * x) * scale ** 3

    return float(integrate(fn, q or QuadratureSpec()).value)


def energy_j0(u, phi, q=None, center=(0.0, 0.0, 0.0), scale=1.0, gradient_weight=1.0, dirac_weight=1.0):
    """J0 = 1/2 int |grad u|^2 + Re<D phi, phi> - u^2 |phi|^2, with -u Delta u in its gradient form."""
    def integrand(y):
        uu = u.value(y)
        ph = phi.value(y)
        grad = u.gradient(y)
        kinetic = gradient_weight * np.sum(grad * grad, axis=-1)
        dirac = dirac_weight * inner(phi.dirac(y), ph).real
        return 0.5 * (kinetic + dirac - uu * uu * norm2(ph))

    return _integrate_over(integrand, q, center, scale)


def energy_j0_rescaled(u, phi, q=None, center=(0.0, 0.0, 0.0), scale=1.0):
    return energy_j0(u, phi, q, center, scale, 1 / LAMBDA_1, 1 / MU_1)


def energy_g(h, u, phi, q=None, center=(0.0, 0.0, 0.0), scale=1.0):
    def integrand(y):
        uu = u.value(y)
        return 0.5 * h(y) * uu * uu * norm2(phi.value(y))

    return _integrate_over(integrand, q, center, scale)


def energy_jeps(u, phi, h, eps, q=None, center=(0.0, 0.0, 0.0), scale=1.0):
    j0 = energy_j0(u, phi, q, center, scale)
    if eps == 0:
        return j0
    return j0 - eps * energy_g(h, u, phi, q, center, scale)
