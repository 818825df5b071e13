"""
Brouwer degree of vector fields on balls in R^n (n = 2, 3, 4).

Two independent computations: the boundary (Kronecker) integral of the pullback of the
normalized volume form of S^{n-1} by F/|F|, and the signed count of regular zeros found
by seeded Newton. gamma_degree applies the first to grad Gamma over B_s.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

import config
from errors import BoundaryZero, NotConverged, SingularZero, NonConvergence
from geometry import pull_back_kelvin_derivatives
from morse import sign_change_cells
from quadrature import QuadratureSpec
from reduced_functional import gamma_jet_batch

logger = logging.getLogger(__name__)

SPHERE_VOLUME = {2: 2 * math.pi, 3: 4 * math.pi, 4: 2 * math.pi ** 2}
_CAP_ANGLE = math.pi / 5


@dataclass(frozen=True)
class DomainBall:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        if center.ndim != 1 or center.shape[0] not in SPHERE_VOLUME:
            raise ValueError(f"domain dimension must be 2, 3 or 4, got center {center.tolist()}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dimension(self):
        return self.center.shape[0]

    def contains(self, points, slack=0.0):
        return np.linalg.norm(np.asarray(points) - self.center, axis=-1) < self.radius * (1 - slack)


def bs_domain(s):
    """B_s = {|(lam, xi) - (s, 0)| <= s - 1/s}; lam >= 1/s on the ball."""
    if not s > 1:
        raise ValueError(f"s must exceed 1, got {s}")
    return DomainBall(np.array([s, 0.0, 0.0, 0.0]), s - 1.0 / s)


@dataclass
class VectorFieldProbe:
    """
    F: R^n -> R^n on stacks of points. ``joint`` returns (F, DF) in one pass; otherwise
    ``jacobian`` is used, and central differences when neither is given.
    """
    field: Optional[Callable] = None
    jacobian: Optional[Callable] = None
    joint: Optional[Callable] = None
    batch: Optional[int] = None
    fd_step: float = 1e-6

    def evaluate(self, points):
        points = np.asarray(points, dtype=float)
        if self.joint is not None:
            return self.joint(points)
        F = self.field(points)
        if self.jacobian is not None:
            return F, self.jacobian(points)
        n = points.shape[-1]
        DF = np.empty(points.shape + (n,))
        for j in range(n):
            e = np.zeros(n)
            e[j] = self.fd_step
            DF[..., :, j] = (self.field(points + e) - self.field(points - e)) / (2 * self.fd_step)
        return F, DF

    def values(self, points):
        if self.field is not None:
            return self.field(np.asarray(points, dtype=float))
        return self.evaluate(points)[0]

    def evaluate_many(self, points):
        """evaluate() over batches of ``batch`` points in a thread pool, in order."""
        if not self.batch or len(points) <= self.batch:
            return self.evaluate(points)
        spans = [points[i:i + self.batch] for i in range(0, len(points), self.batch)]
        with ThreadPoolExecutor(max_workers=config.REDUCTION_THREADS) as executor:
            parts = list(executor.map(self.evaluate, spans))
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def linear_probe(matrix):
    A = np.asarray(matrix, dtype=float)
    return VectorFieldProbe(
        field=lambda x: x @ A.T,
        jacobian=lambda x: np.broadcast_to(A, x.shape + (A.shape[0],)).copy(),
    )


# --- boundary mesh ---

@dataclass
class BoundaryMesh:
    points: np.ndarray     # (M, n)
    tangents: np.ndarray   # (M, n-1, n) coordinate tangent vectors
    weights: np.ndarray    # (M,) parameter-space weights
    orientation: np.ndarray = field(default=None)  # sign of det[normal, tangents]

    def __len__(self):
        return len(self.weights)


def _gauss(a, b, m):
    u, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (b - a) * u + 0.5 * (b + a), 0.5 * (b - a) * w


def _periodic(m):
    return (np.arange(m) + 0.5) * (2 * math.pi / m), np.full(m, 2 * math.pi / m)


def _unit_sphere_mesh(n, density):
    if n == 2:
        phi, w = _periodic(4 * density)
        omega = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        tangents = np.stack([-np.sin(phi), np.cos(phi)], axis=-1)[:, None, :]
        return omega, tangents, w

    if n == 3:
        theta, wt = _gauss(0.0, math.pi, density)
        phi, wp = _periodic(2 * density)
        T, P = (a.reshape(-1) for a in np.meshgrid(theta, phi, indexing="ij"))
        w = np.outer(wt, wp).reshape(-1)
        st, ct, sp, cp = np.sin(T), np.cos(T), np.sin(P), np.cos(P)
        omega = np.stack([st * cp, st * sp, ct], axis=-1)
        d_theta = np.stack([ct * cp, ct * sp, -st], axis=-1)
        d_phi = np.stack([-st * sp, st * cp, np.zeros_like(T)], axis=-1)
        return omega, np.stack([d_theta, d_phi], axis=1), w

    # n == 4: hyperspherical angles with the pole at -e1 and a separately resolved cap around it
    cap, w_cap = _gauss(0.0, _CAP_ANGLE, density)
    rest, w_rest = _gauss(_CAP_ANGLE, math.pi, density)
    theta, wt = np.concatenate([cap, rest]), np.concatenate([w_cap, w_rest])
    psi, wq = _gauss(0.0, math.pi, density)
    phi, wp = _periodic(2 * density)
    T, Q, P = (a.reshape(-1) for a in np.meshgrid(theta, psi, phi, indexing="ij"))
    w = (wt[:, None, None] * wq[None, :, None] * wp[None, None, :]).reshape(-1)
    st, ct, sq, cq, sp, cp = np.sin(T), np.cos(T), np.sin(Q), np.cos(Q), np.sin(P), np.cos(P)
    zero = np.zeros_like(T)
    omega = np.stack([-ct, st * cq, st * sq * cp, st * sq * sp], axis=-1)
    d_theta = np.stack([st, ct * cq, ct * sq * cp, ct * sq * sp], axis=-1)
    d_psi = np.stack([zero, -st * sq, st * cq * cp, st * cq * sp], axis=-1)
    d_phi = np.stack([zero, zero, -st * sq * sp, st * sq * cp], axis=-1)
    return omega, np.stack([d_theta, d_psi, d_phi], axis=1), w


def boundary_mesh(domain, density=config.DEGREE_MESH):
    """Product mesh of the sphere bounding the domain, with coordinate tangents and weights."""
    omega, tangents, weights = _unit_sphere_mesh(domain.dimension, int(density))
    r = domain.radius
    frame = np.concatenate([omega[:, None, :], tangents], axis=1)
    orientation = np.sign(np.linalg.det(frame))
    return BoundaryMesh(domain.center + r * omega, r * tangents, weights, orientation)


def _boundary_floor(norms):
    return max(1e-12, 1e-6 * float(np.max(norms)))


def _check_boundary(norms, mesh):
    floor = _boundary_floor(norms)
    k = int(np.argmin(norms))
    if norms[k] <= floor:
        raise BoundaryZero(
            f"|F| = {norms[k]:.3e} at boundary point {mesh.points[k].tolist()}; "
            f"the field must not vanish on the boundary")


# --- degree by boundary integral ---

def kronecker_integral(probe, domain, density=config.DEGREE_MESH):
    """Pre-rounding value of the boundary integral for one mesh density."""
    mesh = boundary_mesh(domain, density)
    F, DF = probe.evaluate_many(mesh.points)
    norms = np.linalg.norm(F, axis=-1)
    _check_boundary(norms, mesh)
    pushed = np.einsum("mij,mkj->mki", DF, mesh.tangents)
    matrices = np.concatenate([F[:, None, :], pushed], axis=1)
    density_form = np.linalg.det(matrices) / norms ** domain.dimension
    value = float(np.sum(mesh.weights * mesh.orientation * density_form)) / SPHERE_VOLUME[domain.dimension]
    logger.info(f"Boundary integral over {len(mesh)} mesh points: {value:.6f}")
    return value


def kronecker_degree(probe, domain, density=config.DEGREE_MESH, guard=config.ROUNDING_GUARD):
    value = kronecker_integral(probe, domain, density)
    degree = round(value)
    if abs(value - degree) <= guard:
        return int(degree)
    logger.warning(f"Boundary integral {value:.4f} is not near an integer, refining mesh to {2 * density}")
    value = kronecker_integral(probe, domain, 2 * density)
    degree = round(value)
    if abs(value - degree) > guard:
        raise NotConverged(f"boundary integral {value:.4f} is not within {guard} of an integer")
    return int(degree)


def winding_number(F, center, radius, samples=1024):
    """Planar degree by accumulating the angle of F around a circle."""
    phi = np.linspace(0.0, 2 * math.pi, samples + 1)
    circle = np.asarray(center, dtype=float) + radius * np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    values = np.asarray(F(circle), dtype=float)
    if np.min(np.linalg.norm(values, axis=-1)) <= 1e-12:
        raise BoundaryZero("planar field vanishes on the circle")
    angle = np.unwrap(np.arctan2(values[:, 1], values[:, 0]))
    return int(round((angle[-1] - angle[0]) / (2 * math.pi)))


# --- degree by counting zeros ---

def _newton_zeros(probe, seeds, tol, max_iter, max_step, polish=2):
    P = np.array(seeds, dtype=float)
    steps_after = np.zeros(len(P), dtype=int)
    alive = np.ones(len(P), dtype=bool)
    for _ in range(max_iter + polish):
        idx = np.flatnonzero(alive & (steps_after <= polish))
        if not len(idx):
            break
        F, DF = probe.evaluate(P[idx])
        fn = np.linalg.norm(F, axis=-1)
        bad = ~np.isfinite(fn)
        alive[idx[bad]] = False
        met = ~bad & (fn <= tol)
        steps_after[idx[met]] += 1
        move = ~bad
        try:
            step = np.linalg.solve(DF[move], F[move][..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.einsum("nij,nj->ni", np.linalg.pinv(DF[move]), F[move])
        norms = np.linalg.norm(step, axis=-1)
        scale = np.where(norms > max_step, max_step / np.maximum(norms, 1e-300), 1.0)
        P[idx[move]] = P[idx[move]] - step * scale[:, None]
    return P, alive & (steps_after > 0)


def zero_count_degree(probe, domain, density=config.ZERO_GRID_NODES, newton_tol=config.NEWTON_TOL,
                      det_tol=config.SINGULAR_DET_TOL):
    """Sum of sign det DF over the zeros of F in the ball."""
    n = domain.dimension
    mesh = boundary_mesh(domain, max(8, density // 2))
    _check_boundary(np.linalg.norm(probe.values(mesh.points), axis=-1), mesh)

    axes = [np.linspace(c - domain.radius, c + domain.radius, density) for c in domain.center]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    values = probe.values(grid.reshape(-1, n)).reshape(grid.shape)
    seeds = sign_change_cells(values, axes)
    seeds = seeds[domain.contains(seeds, slack=-0.1)] if len(seeds) else seeds
    logger.info(f"Zero search: {len(seeds)} seeds on a {density}^{n} grid")
    if not len(seeds):
        return 0

    points, ok = _newton_zeros(probe, seeds, newton_tol, config.NEWTON_MAX_ITER, domain.radius / 4)
    if not np.any(ok):
        raise NonConvergence(f"Newton failed from all {len(seeds)} seeds")
    points = points[ok]
    points = points[domain.contains(points)]

    zeros = []
    for p in points:
        if all(np.linalg.norm(p - z) > 10 * newton_tol for z in zeros):
            zeros.append(p)
    if not zeros:
        return 0
    _, DF = probe.evaluate(np.array(zeros))
    dets = np.linalg.det(DF)
    scale = np.maximum(1.0, np.linalg.norm(DF, axis=(-2, -1)) ** n)
    singular = np.abs(dets) <= det_tol * scale
    if np.any(singular):
        k = int(np.flatnonzero(singular)[0])
        raise SingularZero(f"zero at {zeros[k].tolist()} has det DF = {dets[k]:.3e}")
    return int(np.sum(np.sign(dets)))


# --- degree of grad Gamma ---

def degree_quadrature():
    return QuadratureSpec(radial_nodes=config.DEGREE_RADIAL_NODES, angular_nodes=config.DEGREE_ANGULAR_NODES)


def gamma_gradient_probe(h, q=None, kelvin_chart=True):
    """
    grad Gamma and Hess Gamma as a probe on (lam, xi). Points with |(lam, xi)| > 1 are
    evaluated through Gamma_h(z) = Gamma_{h o tau}(z / |z|^2) when kelvin_chart is set.
    """
    q = q or degree_quadrature()
    reflected = h.kelvin() if kelvin_chart else None
    rule_size = q.radial_nodes * 2 * q.angular_nodes ** 2

    def joint(points):
        points = np.asarray(points, dtype=float)
        grad = np.empty_like(points)
        hess = np.empty(points.shape + (4,))
        outer = np.linalg.norm(points, axis=-1) > 1.0 if kelvin_chart else np.zeros(len(points), bool)
        if np.any(~outer):
            _, grad[~outer], hess[~outer] = gamma_jet_batch(h, points[~outer], q)
        if np.any(outer):
            z = points[outer]
            s = np.sum(z * z, axis=-1, keepdims=True)
            w = z / s
            _, g_w, h_w = gamma_jet_batch(reflected, w, q)
            grad[outer], hess[outer] = pull_back_kelvin_derivatives(z, g_w, h_w)
        return grad, hess

    return VectorFieldProbe(joint=joint, batch=max(1, config.DEGREE_BATCH_NODES // rule_size))


def gradient_refinement_error(h, domain, q=None, kelvin_chart=True, density=config.DEGREE_CHECK_MESH):
    """
    Largest relative change of grad Gamma over a coarse boundary mesh of the domain when
    the rule q is replaced by q.refined().
    """
    q = q or degree_quadrature()
    points = boundary_mesh(domain, density).points
    coarse, _ = gamma_gradient_probe(h, q, kelvin_chart).evaluate_many(points)
    fine, _ = gamma_gradient_probe(h, q.refined(), kelvin_chart).evaluate_many(points)
    norms = np.linalg.norm(fine, axis=-1)
    change = np.linalg.norm(fine - coarse, axis=-1) / np.maximum(norms, _boundary_floor(norms))
    return float(np.max(change))


def gamma_degree(h, s=config.DEGREE_S, q=None, mesh=config.DEGREE_MESH, kelvin_chart=True):
    """
    deg(grad Gamma, B_s, 0) by the boundary integral.

    The gradient rule is refined (up to config.DEGREE_MAX_REFINEMENTS times) while grad Gamma
    on a coarse boundary sample moves by more than config.DEGREE_GRADIENT_RTOL.
    """
    domain = bs_domain(s)
    q = q or degree_quadrature()
    logger.info(f"Degree of grad Gamma over B_{s}: center {domain.center.tolist()}, radius {domain.radius:.4f}")
    try:
        for _ in range(config.DEGREE_MAX_REFINEMENTS):
            error = gradient_refinement_error(h, domain, q, kelvin_chart)
            if error <= config.DEGREE_GRADIENT_RTOL:
                break
            q = q.refined()
            logger.warning(
                f"grad Gamma changes by {error:.2%} under refinement; refining the rule to "
                f"{q.radial_nodes} radial and {q.angular_nodes} angular nodes")
        return kronecker_degree(gamma_gradient_probe(h, q, kelvin_chart), domain, mesh)
    except BoundaryZero as exc:
        raise BoundaryZero(f"{exc}; try a larger s than {s}") from None


__all__ = [
    "DomainBall", "VectorFieldProbe", "BoundaryMesh", "bs_domain", "boundary_mesh", "kronecker_integral",
    "kronecker_degree", "winding_number", "zero_count_degree", "gamma_gradient_probe", "gamma_degree",
    "gradient_refinement_error", "degree_quadrature", "linear_probe",
]
