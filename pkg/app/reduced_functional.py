"""
The reduced functional Gamma(lam, xi) = 1/2 int h(lam x + xi) V_{1,0}(x) dx and its derivatives.

h is any object exposing ``jet(points) -> Jet2`` (value, gradient, Hessian over a stack of
points in R^3), ``sup_bound`` and ``kelvin()``; see morse.PerturbationFunction.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

import config
from bubbles import C0, C_STAR, SECOND_MOMENT, INTEGRAL_V, v_unit
from errors import DegenerateFit, QuadratureNotConverged
from geometry import as_point_r3, kelvin_params
from quadrature import QuadratureSpec, integrate, spherical_rule

logger = logging.getLogger(__name__)

# Layout of the stacked integrand: value | d_lam | d_xi(3) | d_lam_lam | d_lam_xi(3) | d_xi_xi(9)
_SIZES = {0: 1, 1: 5, 2: 18}


@dataclass(frozen=True)
class GammaResult:
    value: float
    error: float
    nodes: int


@dataclass(frozen=True)
class GammaJet:
    value: float
    grad: np.ndarray
    hess: np.ndarray
    error: float
    nodes: int
    converged: bool = True

    def result(self):
        return GammaResult(self.value, self.error, self.nodes)


def tail_bound(h, q):
    """1/2 sup|h| int_{|x|>R} V_{1,0} <= 1/2 sup|h| 9 4pi/(3R^3)."""
    if math.isinf(q.radius):
        return 0.0
    sup = h.sup_bound if getattr(h, "sup_bound", None) is not None else 1.0
    return 0.5 * sup * 9.0 * 4.0 * math.pi / (3.0 * q.radius ** 3)


def _integrand(h, lam, xi, order):
    def fn(x):
        jet = h.jet(lam * x + xi)
        w = 0.5 * v_unit(x)
        cols = [jet.value * w]
        if order >= 1:
            gx = np.einsum("mi,mi->m", jet.grad, x)
            cols.append(gx * w)
            cols.extend((jet.grad * w[:, None]).T)
        if order >= 2:
            hx = np.einsum("mij,mj->mi", jet.hess, x)
            cols.append(np.einsum("mi,mi->m", hx, x) * w)
            cols.extend((hx * w[:, None]).T)
            cols.extend((jet.hess.reshape(-1, 9) * w[:, None]).T)
        return np.stack(cols, axis=-1)

    return fn


def _assemble(stack, order):
    value = float(stack[0])
    grad = np.zeros(4)
    hess = np.zeros((4, 4))
    if order >= 1:
        grad[0] = stack[1]
        grad[1:] = stack[2:5]
    if order >= 2:
        hess[0, 0] = stack[5]
        hess[0, 1:] = stack[6:9]
        hess[1:, 0] = stack[6:9]
        xi_block = stack[9:18].reshape(3, 3)
        hess[1:, 1:] = 0.5 * (xi_block + xi_block.T)
    return value, grad, hess


def _at_zero_scale(h, xi):
    jet = h.jet(xi[None, :])
    g = jet.grad[0]
    H = jet.hess[0]
    grad = np.concatenate([[0.0], C0 * g])
    hess = np.zeros((4, 4))
    hess[0, 0] = C_STAR * float(np.trace(H))
    hess[1:, 1:] = C0 * H
    return GammaJet(C0 * float(jet.value[0]), grad, hess, 0.0, 1)


def feature_panels(lam, xi):
    """
    Rule placement for an off-centre bubble: the ball |y| <= 1 where h varies sits at
    x = -xi/lam with radius 1/lam, so the pole is turned towards it, the cap covers it
    and a radial shell brackets it. Empty for |xi| <= config.QUAD_FEATURE_OFFSET.
    """
    d = float(np.linalg.norm(xi))
    if d <= config.QUAD_FEATURE_OFFSET:
        return {}
    margin = config.QUAD_FEATURE_MARGIN
    return {
        "axis": tuple(-np.asarray(xi, dtype=float) / d),
        "cap": min(math.pi / 2, 2.0 * math.asin(1.0 / d)),
        "shell": (max(0.0, (d - margin) / lam), (d + margin) / lam),
    }


def gamma_jet(h, lam, xi, q=None, order=2, estimate=True, strict=True):
    """
    Gamma with its gradient and Hessian in (lam, xi), differentiated under the integral.
    lam = 0 uses the continuous extension (value c0 h(xi), gradient (0, c0 grad h)).
    """
    q = q or QuadratureSpec()
    xi = as_point_r3(xi)
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    if lam == 0:
        return _at_zero_scale(h, xi)

    tail = tail_bound(h, q)
    result = integrate(
        _integrand(h, float(lam), xi, order), q, estimate=estimate, tail=tail, strict=False,
        **feature_panels(float(lam), xi),
    )
    value, grad, hess = _assemble(np.asarray(result.value), order)
    converged = (not estimate) or result.converged(q)
    if strict and not converged:
        raise QuadratureNotConverged(result.error, q.tol)
    return GammaJet(value, grad, hess, result.error, result.nodes, converged)


def gamma(h, lam, xi, q=None):
    return gamma_jet(h, lam, xi, q, order=0).result()


def grad_gamma(h, lam, xi, q=None):
    return gamma_jet(h, lam, xi, q, order=1).grad


def hess_gamma(h, lam, xi, q=None):
    return gamma_jet(h, lam, xi, q, order=2).hess


def gamma_jet_batch(h, params, q=None):
    """
    Value, gradient and Hessian of Gamma at a stack of parameters (lam, xi) of shape (B, 4),
    from one application of the standard rule (no feature panels, no refinement, no
    error estimate). Callers keep |xi| <= config.QUAD_FEATURE_OFFSET, where gamma_jet uses
    the same rule.
    """
    q = q or QuadratureSpec()
    params = np.asarray(params, dtype=float)
    x, weights = spherical_rule(q.radius, q.radial_nodes, q.angular_nodes)
    w = 0.5 * v_unit(x) * weights
    b, m = len(params), len(x)
    y = params[:, 0, None, None] * x[None, :, :] + params[:, None, 1:]
    jet = h.jet(y.reshape(-1, 3))
    g = jet.grad.reshape(b, m, 3)
    H = jet.hess.reshape(b, m, 3, 3)
    hx = np.einsum("bmij,mj->bmi", H, x)

    value = jet.value.reshape(b, m) @ w
    grad = np.empty((b, 4))
    grad[:, 0] = np.einsum("bmi,mi,m->b", g, x, w)
    grad[:, 1:] = np.einsum("bmi,m->bi", g, w)
    hess = np.empty((b, 4, 4))
    hess[:, 0, 0] = np.einsum("bmi,mi,m->b", hx, x, w)
    mixed = np.einsum("bmi,m->bi", hx, w)
    hess[:, 0, 1:] = mixed
    hess[:, 1:, 0] = mixed
    xi_block = np.einsum("bmij,m->bij", H, w)
    hess[:, 1:, 1:] = 0.5 * (xi_block + np.swapaxes(xi_block, -1, -2))
    return value, grad, hess


# --- constants ---

def kernel_integrals(q=None):
    """Returns (int V, int |y|^2 V, int y y^T V) by quadrature over R^3."""
    q = q or QuadratureSpec()

    def fn(x):
        v = v_unit(x)
        outer = (x[:, :, None] * x[:, None, :]).reshape(-1, 9)
        return np.concatenate([v[:, None], (np.sum(x * x, axis=-1) * v)[:, None], outer * v[:, None]], axis=-1)

    stack = np.asarray(integrate(fn, q).value)
    return float(stack[0]), float(stack[1]), stack[2:].reshape(3, 3)


def second_moment_matrix(q=None):
    return kernel_integrals(q)[2]


# --- lambda expansion ---

@dataclass
class ExpansionFit:
    c_star: float
    laplacian: float
    lambdas: list
    d_lambda: list
    defects: list  # |d_lam Gamma - c* lam Lap h| / lam^2 per sample
    defect_ratio: float
    c_star_leading: float = math.nan  # one-column fit d_lam Gamma ~ c* lam Lap h
    candidates: dict = field(default_factory=dict)

    @property
    def max_defect(self):
        return max(self.defects)

    def to_dict(self):
        return {
            "c_star": self.c_star,
            "c_star_leading": self.c_star_leading,
            "laplacian": self.laplacian,
            "lambdas": list(self.lambdas),
            "d_lambda": list(self.d_lambda),
            "defects": list(self.defects),
            "max_defect": self.max_defect,
            "defect_ratio": self.defect_ratio,
            "candidates": dict(self.candidates),
        }


def lambda_expansion(h, xi, lambdas=None, q=None):
    """
    Fits d_lam Gamma(lam, xi) ~ c* lam Lap h(xi) + d2 lam^2 + d3 lam^3 by least squares.

    The lam^2 and lam^3 columns absorb the non-analytic remainder of the expansion, so c*
    is the coefficient of the leading term. The plain one-column fit is reported as c_star_leading;
    it carries the O(lam^2) bias the extra columns remove.
    """
    lambdas = list(config.EXPANSION_LAMBDAS if lambdas is None else lambdas)
    if len(lambdas) < 5 or any(not (0 < l <= 0.2) for l in lambdas):
        raise ValueError("lambda sample must hold at least 5 values in (0, 0.2]")
    xi = as_point_r3(xi)
    jet = h.jet(xi[None, :])
    lap = float(jet.laplacian[0])
    scale = max(1.0, float(np.max(np.abs(jet.hess[0]))))
    if abs(lap) <= 1e-8 * scale:
        raise DegenerateFit(f"Laplacian of h vanishes at xi = {xi.tolist()}")

    lam = np.array(sorted(lambdas), dtype=float)
    d_lambda = np.array([grad_gamma(h, l, xi, q)[0] for l in lam])
    design = np.stack([lam * lap, lam ** 2, lam ** 3], axis=-1)
    coef, *_ = np.linalg.lstsq(design, d_lambda, rcond=None)
    c_star = float(coef[0])
    leading = lam * lap
    c_star_leading = float(np.dot(leading, d_lambda) / np.dot(leading, leading))
    defects = np.abs(d_lambda - c_star * lam * lap) / lam ** 2
    ratio = float(np.max(defects) / np.min(defects)) if np.min(defects) > 0 else math.inf
    logger.info(f"Fitted c* = {c_star:.6f} (single-term {c_star_leading:.6f}) from {len(lam)} samples, defect ratio {ratio:.3f}")
    return ExpansionFit(
        c_star=c_star,
        laplacian=lap,
        lambdas=lam.tolist(),
        d_lambda=d_lambda.tolist(),
        defects=defects.tolist(),
        defect_ratio=ratio,
        c_star_leading=c_star_leading,
        candidates={"second_moment": SECOND_MOMENT, "second_moment_over_6": C_STAR},
    )


def gamma_kelvin_check(h, lam, xi, q=None):
    """|Gamma_h(lam, xi) - Gamma_{h o tau}(lam~, xi~)| from two independent quadratures."""
    lam_t, xi_t = kelvin_params(lam, xi)
    direct = gamma(h, lam, xi, q)
    reflected = gamma(h.kelvin(), lam_t, xi_t, q)
    return abs(direct.value - reflected.value)


__all__ = [
    "GammaResult", "GammaJet", "gamma_jet", "gamma_jet_batch", "gamma", "grad_gamma", "hess_gamma",
    "kernel_integrals", "second_moment_matrix", "lambda_expansion", "gamma_kelvin_check",
    "feature_panels", "ExpansionFit", "C0", "C_STAR", "INTEGRAL_V", "SECOND_MOMENT",
]
