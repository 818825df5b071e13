"""
Stereographic chart of S^3, conformal factor and the Kelvin reflection.

All functions accept a single point or a stack of points along the last axis and
return arrays of matching leading shape.
"""
import logging
import numpy as np
import config
from errors import SouthPoleSingularity, OriginSingularity, InvalidPoint

logger = logging.getLogger(__name__)

SOUTH_POLE = np.array([0.0, 0.0, 0.0, -1.0])
NORTH_POLE = np.array([0.0, 0.0, 0.0, 1.0])


def as_point_r3(y):
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != 3:
        raise InvalidPoint(f"expected 3 coordinates, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InvalidPoint("point in R^3 has non-finite coordinates")
    return y


def as_point_s3(x):
    """Validates a point of S^3, renormalizing when within 1e-9 of unit norm."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 4:
        raise InvalidPoint(f"expected 4 coordinates, got shape {x.shape}")
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(np.abs(norm - 1.0) > config.SPHERE_NORMALIZE_TOL):
        raise InvalidPoint(f"point is not on S^3 (|x| = {np.max(norm):.12g})")
    return x / norm


def stereo(p):
    x = as_point_s3(p)
    denom = 1.0 + x[..., 3]
    if np.any(denom <= config.SOUTH_POLE_TOL):
        raise SouthPoleSingularity("stereographic projection is undefined at the south pole")
    return x[..., :3] / denom[..., None]


def stereo_inv(y):
    y = as_point_r3(y)
    s = np.sum(y * y, axis=-1)
    head = 2.0 * y / (1.0 + s)[..., None]
    tail = ((1.0 - s) / (1.0 + s))[..., None]
    return np.concatenate([head, tail], axis=-1)


def conformal_factor(y):
    y = as_point_r3(y)
    return 2.0 / (1.0 + np.sum(y * y, axis=-1))


def sphere_tangent_gradient(x, ambient_grad):
    """Intrinsic S^3 gradient: tangential part of an ambient gradient at x."""
    x = as_point_s3(x)
    g = np.asarray(ambient_grad, dtype=float)
    return g - np.sum(g * x, axis=-1, keepdims=True) * x


def kelvin_point(x):
    x = as_point_r3(x)
    r2 = np.sum(x * x, axis=-1)
    if np.any(np.sqrt(r2) <= config.ORIGIN_TOL):
        raise OriginSingularity("Kelvin reflection is undefined at the origin")
    return x / r2[..., None]


def kelvin_params(lam, xi):
    lam = float(lam)
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    xi = as_point_r3(xi)
    d = lam * lam + float(np.dot(xi, xi))
    return lam / d, xi / d


def kelvin_function(F, weight=2.0):
    """
    Returns the evaluator x -> |x|^{-weight} F(x/|x|^2).

    weight=2 is the literal reflection; scalar bubbles transform with weight 1 and the
    interaction kernel with weight 6.
    """
    def reflected(x):
        x = as_point_r3(x)
        tx = kelvin_point(x)
        r = np.linalg.norm(x, axis=-1)
        return r ** (-weight) * F(tx)

    return reflected


def kelvin_params_jacobian(z):
    """Jacobian of the inversion z -> z/|z|^2 of R^4, for z of shape (..., 4)."""
    z = np.asarray(z, dtype=float)
    s = np.sum(z * z, axis=-1)
    if np.any(np.sqrt(s) <= config.ORIGIN_TOL):
        raise OriginSingularity("parameter inversion is undefined at (0, 0)")
    zhat = z / np.sqrt(s)[..., None]
    eye = np.eye(z.shape[-1])
    return (eye - 2.0 * zhat[..., :, None] * zhat[..., None, :]) / s[..., None, None]


def pull_back_kelvin_derivatives(z, grad_w, hess_w):
    """
    Transports the gradient and Hessian of G(w), taken at w = z/|z|^2, to derivatives
    of z -> G(z/|z|^2).
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(grad_w, dtype=float)
    H = np.asarray(hess_w, dtype=float)
    J = kelvin_params_jacobian(z)
    s = np.sum(z * z, axis=-1)[..., None, None]
    grad_z = np.einsum("...ij,...j->...i", J, g)

    gz = np.sum(g * z, axis=-1)[..., None, None]
    outer_gz = g[..., :, None] * z[..., None, :]
    second = (-2.0 * (outer_gz + np.swapaxes(outer_gz, -1, -2))
              - 2.0 * gz * np.eye(z.shape[-1])) / s ** 2
    second = second + 8.0 * z[..., :, None] * z[..., None, :] * gz / s ** 3

    hess_z = np.einsum("...ki,...kl,...lj->...ij", J, H, J) + second
    hess_z = 0.5 * (hess_z + np.swapaxes(hess_z, -1, -2))
    return grad_z, hess_z
