"""
Product quadrature over R^3 (or a ball of radius R) in spherical coordinates.

The radius is mapped through r = tan(theta), theta in [0, atan R], and integrated with
Gauss-Legendre; the polar angle uses Gauss-Legendre in cos(theta) and the azimuth a
uniform periodic rule. An optional shell splits the radial interval into panels and an
optional cap splits the polar interval, with the pole turned towards a given axis, so that
a feature away from the origin gets a panel of its own.

integrate() refines the rule (all node counts doubled) until two successive rules agree,
up to config.QUAD_MAX_REFINEMENTS times or config.QUAD_MAX_NODES nodes.
"""
from __future__ import annotations

import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np

import config
from errors import QuadratureNotConverged

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadratureSpec:
    radius: float = config.QUAD_RADIUS
    radial_nodes: int = config.QUAD_RADIAL_NODES
    angular_nodes: int = config.QUAD_ANGULAR_NODES
    tol: float = config.QUAD_TOL

    def __post_init__(self):
        if not self.radius >= 10:
            raise ValueError(f"truncation radius must be >= 10, got {self.radius}")
        if self.radial_nodes < 64:
            raise ValueError(f"need at least 64 radial nodes, got {self.radial_nodes}")
        if self.angular_nodes < 2:
            raise ValueError(f"need at least 2 angular nodes, got {self.angular_nodes}")
        if not self.tol > 0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")

    def refined(self):
        return QuadratureSpec(self.radius, 2 * self.radial_nodes, 2 * self.angular_nodes, self.tol)

    def accepts(self, error, value):
        return error <= self.tol * max(1.0, float(np.max(np.abs(value))))


@dataclass(frozen=True)
class QuadratureResult:
    value: object  # float or ndarray
    error: float
    nodes: int
    refinements: int = 0

    def converged(self, spec):
        return spec.accepts(self.error, self.value)


def _gauss_panels(edges, n):
    """Gauss-Legendre nodes and weights on each [edges[i], edges[i+1]], n per panel."""
    u, wu = np.polynomial.legendre.leggauss(n)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(a + 0.5 * (u + 1.0) * (b - a))
        weights.append(0.5 * (b - a) * wu)
    return np.concatenate(nodes), np.concatenate(weights)


def _radial_edges(theta_max, shell):
    edges = [0.0]
    if shell is not None:
        for r in shell:
            t = math.atan(r)
            if edges[-1] < t < theta_max:
                edges.append(t)
    edges.append(theta_max)
    return edges


def _rotation_to(axis):
    """Orthogonal matrix taking e3 to the unit vector along axis."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = helper - np.dot(helper, a) * a
    u /= np.linalg.norm(u)
    return np.column_stack([u, np.cross(a, u), a])


def _build_rule(radius, radial_nodes, angular_nodes, cap=None, shell=None):
    theta_max = math.pi / 2 if math.isinf(radius) else math.atan(radius)
    theta, w_theta = _gauss_panels(_radial_edges(theta_max, shell), radial_nodes)
    r = np.tan(theta)
    w_r = w_theta * r * r * (1.0 + r * r)

    mu_edges = [-1.0, 1.0] if cap is None else [-1.0, math.cos(cap), 1.0]
    mu, w_mu = _gauss_panels(mu_edges, angular_nodes)
    n_phi = 2 * angular_nodes
    phi = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
    w_phi = np.full(n_phi, 2.0 * math.pi / n_phi)

    s = np.sqrt(1.0 - mu * mu)
    directions = np.stack([
        np.outer(s, np.cos(phi)),
        np.outer(s, np.sin(phi)),
        np.outer(mu, np.ones(n_phi)),
    ], axis=-1).reshape(-1, 3)
    w_dir = np.outer(w_mu, w_phi).reshape(-1)

    points = (r[:, None, None] * directions[None, :, :]).reshape(-1, 3)
    weights = (w_r[:, None] * w_dir[None, :]).reshape(-1)
    return points, weights


def _read_only(points, weights):
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


@functools.lru_cache(maxsize=16)
def _standard_rule(radius, radial_nodes, angular_nodes):
    return _read_only(*_build_rule(radius, radial_nodes, angular_nodes))


def spherical_rule(radius, radial_nodes, angular_nodes, axis=None, cap=None, shell=None):
    """
    Nodes (M, 3) and weights (M,) for integrals over |x| <= radius.

    cap (an angle in (0, pi)) adds a polar panel of that half-angle around the pole, and
    axis turns the pole to point along the given vector. shell = (r_lo, r_hi) adds radial
    panel edges. Rules without any of them are cached.
    """
    if axis is None and cap is None and shell is None:
        return _standard_rule(radius, radial_nodes, angular_nodes)
    if cap is not None and not 0 < cap < math.pi:
        raise ValueError(f"cap angle must lie in (0, pi), got {cap}")
    points, weights = _build_rule(radius, radial_nodes, angular_nodes, cap, shell)
    if axis is not None:
        points = points @ _rotation_to(axis).T
    return _read_only(points, weights)


def _chunks(n, size):
    return [(start, min(start + size, n)) for start in range(0, n, size)]


def apply_rule(fn, points, weights):
    """
    Weighted sum of fn over the rule; fn maps (m, 3) points to arrays with leading axis m.

    Chunks are evaluated in a thread pool. With config.DETERMINISTIC_REDUCTION the partial
    sums are added in chunk order, otherwise in completion order.
    """
    spans = _chunks(len(weights), config.QUAD_CHUNK)

    def partial(span):
        a, b = span
        values = np.asarray(fn(points[a:b]))
        return np.tensordot(weights[a:b], values, axes=(0, 0))

    if len(spans) == 1 or config.REDUCTION_THREADS == 1:
        parts = [partial(s) for s in spans]
    elif config.DETERMINISTIC_REDUCTION:
        with ThreadPoolExecutor(max_workers=config.REDUCTION_THREADS) as executor:
            parts = list(executor.map(partial, spans))
    else:
        with ThreadPoolExecutor(max_workers=config.REDUCTION_THREADS) as executor:
            futures = [executor.submit(partial, s) for s in spans]
            parts = [f.result() for f in as_completed(futures)]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def integrate(fn, spec=None, estimate=True, tail=0.0, strict=True, axis=None, cap=None, shell=None):
    """
    Integrates fn over the ball of spec.radius (all of R^3 for an infinite radius).

    With estimate=True the rule is refined until two successive rules agree within
    spec.tol * max(1, |value|), at most config.QUAD_MAX_REFINEMENTS times; the last
    difference plus the supplied tail bound is the error estimate. The tail bound does not
    drive refinement. QuadratureNotConverged is raised when strict and the estimate is
    still above tolerance.
    """
    spec = spec or QuadratureSpec()

    def rule(s):
        return spherical_rule(s.radius, s.radial_nodes, s.angular_nodes, axis, cap, shell)

    points, weights = rule(spec)
    value = apply_rule(fn, points, weights)
    nodes = len(weights)
    if not estimate:
        return QuadratureResult(value=value, error=float(tail), nodes=nodes)

    current, level = spec, 0
    while True:
        current = current.refined()
        level += 1
        points, weights = rule(current)
        fine = apply_rule(fn, points, weights)
        nodes += len(weights)
        delta = float(np.max(np.abs(np.asarray(fine) - np.asarray(value))))
        value = fine
        if spec.accepts(delta, value) or level >= config.QUAD_MAX_REFINEMENTS:
            break
        if 8 * len(weights) > config.QUAD_MAX_NODES:
            logger.warning(f"Quadrature stopped at {len(weights)} nodes, next rule exceeds {config.QUAD_MAX_NODES}")
            break
        logger.debug(f"Refining quadrature: difference {delta:.3e} with {len(weights)} nodes")

    error = delta + float(tail)
    result = QuadratureResult(value=value, error=error, nodes=nodes, refinements=level)
    logger.info(f"Quadrature with {nodes} nodes over {level} refinements, error estimate {error:.3e}")
    if strict and not result.converged(spec):
        raise QuadratureNotConverged(error, spec.tol)
    return result
