"""
Perturbation functions h = k o pi^{-1}, critical point search, Morse classification and
the existence verdict (south pole not critical, Lap h != 0 at critical points, and
sum over {Lap h < 0} of (-1)^index != -1).
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, model_validator

import config
from errors import (
    DegenerateCriticalPoint, NonConvergence, ConditionIViolated, CriticalPointsOutsideBox,
    OriginSingularity, DomainError,
)
from expr import (
    Jet2, compile_expression, evaluate, eval_jet2, reciprocal, variable_jets,
    FLAT_VARIABLES,
)
from geometry import SOUTH_POLE, sphere_tangent_gradient

logger = logging.getLogger(__name__)


class PerturbationSpec(BaseModel):
    """k on S^3 (ambient x1..x4) or h on R^3 (y1..y3); epsilon is echoed only."""
    k: str | None = None
    h: str | None = None
    epsilon: float = 0.0

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.k is None) == (self.h is None):
            raise ValueError("exactly one of k and h must be given")
        return self

    @property
    def label(self):
        return f"k = {self.k}" if self.k is not None else f"h = {self.h}"


# --- jets of the chart maps ---

def _flat_jets(points):
    return variable_jets(points, FLAT_VARIABLES)


def _check_origin(points):
    if np.any(np.linalg.norm(points, axis=-1) <= config.ORIGIN_TOL):
        raise OriginSingularity("Kelvin-composed function evaluated at the origin")


def stereo_inv_jets(points, reflect=False):
    """Jets of x = pi^{-1}(y), with x4 negated when reflect (that is pi^{-1} o tau)."""
    y = _flat_jets(points)
    s = y["y1"] * y["y1"] + y["y2"] * y["y2"] + y["y3"] * y["y3"]
    d = reciprocal(s + 1.0)
    x4 = (1.0 - s) * d
    return {
        "x1": 2.0 * y["y1"] * d,
        "x2": 2.0 * y["y2"] * d,
        "x3": 2.0 * y["y3"] * d,
        "x4": -x4 if reflect else x4,
    }


def tau_jets(points):
    """Jets of u = y / |y|^2 as functions of y."""
    _check_origin(points)
    y = _flat_jets(points)
    inv = reciprocal(y["y1"] * y["y1"] + y["y2"] * y["y2"] + y["y3"] * y["y3"])
    return [y[name] * inv for name in FLAT_VARIABLES]


def compose(outer_jet_fn, inner):
    """Chain rule for F(u(y)) given F's jets in u and the three jets u_k(y)."""
    u = np.stack([j.value for j in inner], axis=-1)
    J = np.stack([j.grad for j in inner], axis=-2)  # J[..., k, i] = d u_k / d y_i
    outer = outer_jet_fn(u)
    grad = np.einsum("...k,...ki->...i", outer.grad, J)
    hess = np.einsum("...ki,...kl,...lj->...ij", J, outer.hess, J)
    hess = hess + np.einsum("...k,...kij->...ij", outer.grad, np.stack([j.hess for j in inner], axis=-3))
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    return Jet2(outer.value, grad, hess)


# --- perturbation functions ---

class PerturbationFunction:
    """
    A C^2 function on R^3 evaluated on jets. ``jet(points)`` takes an (N, 3) array and
    returns value (N,), gradient (N, 3) and Hessian (N, 3, 3).
    """

    def __init__(self, name, jet_fn, kelvin_fn=None, sup_bound=None):
        self.name = name
        self._jet_fn = jet_fn
        self._kelvin_fn = kelvin_fn
        self._sup_bound = sup_bound

    def __repr__(self):
        return f"PerturbationFunction({self.name!r})"

    def jet(self, points):
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[None, :]
        return self._jet_fn(points)

    def jet_at(self, point):
        jet = self.jet(np.asarray(point, dtype=float)[None, :])
        return Jet2(float(jet.value[0]), jet.grad[0], jet.hess[0])

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        values = self.jet(points.reshape(-1, 3)).value
        return values.reshape(points.shape[:-1])

    def gradient(self, points):
        return self.jet(points).grad

    def hessian(self, points):
        return self.jet(points).hess

    def laplacian(self, points):
        return self.jet(points).laplacian

    def kelvin(self):
        """h o tau, tau(y) = y/|y|^2."""
        if self._kelvin_fn is not None:
            return self._kelvin_fn()
        return PerturbationFunction(
            f"({self.name}) o tau",
            lambda pts: compose(self._jet_fn, tau_jets(pts)),
            kelvin_fn=lambda: self,
            sup_bound=self._sup_bound,
        )

    def shifted(self, t):
        """y -> h(y + t)."""
        t = np.asarray(t, dtype=float)
        return PerturbationFunction(f"{self.name}(. + t)", lambda pts: self._jet_fn(pts + t),
                                    sup_bound=self._sup_bound)

    @property
    def sup_bound(self):
        if self._sup_bound is None:
            self._sup_bound = estimate_sup(self)
        return self._sup_bound


def estimate_sup(h, samples=512, seed=0):
    """Sampled estimate of sup|h| over radii from 0 to 1e6."""
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(samples, 3))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    radii = np.concatenate([[0.0], np.geomspace(1e-3, 1e6, 40)])
    points = (radii[:, None, None] * directions[None, :, :]).reshape(-1, 3)
    values = h.jet(points).value
    return float(np.max(np.abs(values[np.isfinite(values)])))


def from_flat_expression(expression):
    ast = expression.ast
    return PerturbationFunction(
        f"h = {expression.text}",
        lambda pts: evaluate(ast, _flat_jets(pts)),
    )


def from_sphere_expression(expression, reflect=False):
    ast = expression.ast
    name = f"k o pi^-1, k = {expression.text}" + (" (reflected)" if reflect else "")
    return PerturbationFunction(
        name,
        lambda pts: evaluate(ast, stereo_inv_jets(pts, reflect)),
        kelvin_fn=lambda: from_sphere_expression(expression, not reflect),
    )


def linear_combination(alpha, h1, beta, h2):
    def jet_fn(pts):
        a, b = h1.jet(pts), h2.jet(pts)
        return Jet2(alpha * a.value + beta * b.value, alpha * a.grad + beta * b.grad,
                    alpha * a.hess + beta * b.hess)

    return PerturbationFunction(f"{alpha}*({h1.name}) + {beta}*({h2.name})", jet_fn,
                                kelvin_fn=lambda: linear_combination(alpha, h1.kelvin(), beta, h2.kelvin()))


def build_h(spec):
    """h = k o pi^{-1} for a sphere expression, or the flat expression itself."""
    if spec.k is not None:
        return from_sphere_expression(compile_expression(spec.k, "sphere"))
    return from_flat_expression(compile_expression(spec.h, "flat"))


# --- critical points ---

@dataclass
class CriticalPoint:
    location: np.ndarray
    grad_norm: float
    hessian: np.ndarray
    eigenvalues: np.ndarray
    index: int
    laplacian: float

    def to_dict(self):
        return {
            "xi": [float(c) for c in self.location],
            "index": int(self.index),
            "laplacian": float(self.laplacian),
            "grad_norm": float(self.grad_norm),
        }


@dataclass(frozen=True)
class Tolerances:
    newton_tol: float = config.NEWTON_TOL
    degeneracy_tol: float = config.DEGENERACY_TOL
    laplacian_tol: float = config.LAPLACIAN_TOL
    shell_tol: float = config.SHELL_GRADIENT_TOL
    max_iter: int = config.NEWTON_MAX_ITER


def sign_change_cells(values, axes):
    """
    Centers of grid cells on which every component of a vector field takes both signs
    (min <= 0 <= max over the cell corners). values has shape (n,)*d + (d,).
    """
    d = len(axes)
    slices = []
    for corner in range(2 ** d):
        idx = tuple(slice(1, None) if (corner >> k) & 1 else slice(None, -1) for k in range(d))
        slices.append(values[idx])
    corners = np.stack(slices, axis=0)
    flagged = np.all((corners.min(axis=0) <= 0) & (corners.max(axis=0) >= 0), axis=-1)
    cells = np.argwhere(flagged)
    mids = [0.5 * (a[1:] + a[:-1]) for a in axes]
    return np.stack([mids[k][cells[:, k]] for k in range(d)], axis=-1) if len(cells) else np.zeros((0, d))


def newton_batch(jet_fn, seeds, tol, max_iter, max_step, polish=2):
    """
    Vectorized Newton iteration on the gradient of a function given by jet_fn.
    Returns (points, converged mask).
    """
    P = np.array(seeds, dtype=float)
    done = np.zeros(len(P), dtype=bool)
    failed = np.zeros(len(P), dtype=bool)
    extra = np.zeros(len(P), dtype=int)
    for _ in range(max_iter + polish):
        active = ~done & ~failed
        if not np.any(active):
            break
        try:
            jet = jet_fn(P[active])
        except (DomainError, OriginSingularity):
            failed |= active
            break
        g = jet.grad
        gn = np.linalg.norm(g, axis=-1)
        ok = np.isfinite(gn)
        idx = np.flatnonzero(active)
        failed[idx[~ok]] = True
        met = ok & (gn <= tol)
        extra[idx[met]] += 1
        done[idx[met & (extra[idx] > polish)]] = True
        move = ok & ~(met & (extra[idx] > polish))
        if not np.any(move):
            continue
        H = jet.hess[move]
        try:
            step = np.linalg.solve(H, g[move][..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.einsum("nij,nj->ni", np.linalg.pinv(H), g[move])
        norms = np.linalg.norm(step, axis=-1)
        scale = np.where(norms > max_step, max_step / np.maximum(norms, 1e-300), 1.0)
        new = P[idx[move]] - step * scale[:, None]
        bad = ~np.all(np.isfinite(new), axis=-1)
        failed[idx[move][bad]] = True
        P[idx[move][~bad]] = new[~bad]
    converged = done | (extra > 0) & ~failed
    return P, converged


class CriticalPointFinder:
    """Seeds, Newton, deduplication, Morse classification and the shell post-check."""

    def __init__(self, h, box_radius=config.BOX_RADIUS, seed_nodes=config.SEED_GRID_NODES,
                 tolerances=None, check_shell=True):
        self.h = h
        self.box_radius = float(box_radius)
        self.seed_nodes = int(seed_nodes)
        self.tol = tolerances or Tolerances()
        self.check_shell = check_shell
        self.critical_points = None
        self.seed_count = 0
        self.failed_seeds = 0

    def solve(self):
        r = self.box_radius
        while True:
            crits = self._search(r)
            if not self.check_shell or self._shell_ok(r):
                break
            if 2 * r > config.MAX_BOX_RADIUS:
                raise CriticalPointsOutsideBox(
                    f"|grad h| is not bounded below on the shell {r} <= |y| <= {2 * r}; "
                    f"critical points may lie beyond the largest box")
            logger.warning(f"Gradient small on shell around r = {r}, enlarging box to {2 * r}")
            r *= 2
        self.box_radius = r
        self.critical_points = crits
        return crits

    def _search(self, r):
        axis = np.linspace(-r, r, self.seed_nodes)
        grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
        grads = self.h.jet(grid.reshape(-1, 3)).grad.reshape(grid.shape)
        seeds = sign_change_cells(grads, [axis, axis, axis])
        self.seed_count = len(seeds)
        logger.info(f"Box radius {r}: {len(seeds)} Newton seeds from {self.seed_nodes}^3 grid")
        if not len(seeds):
            return []

        chunks = np.array_split(seeds, max(1, min(config.REDUCTION_THREADS, len(seeds))))

        def run(chunk):
            return newton_batch(self.h.jet, chunk, self.tol.newton_tol, self.tol.max_iter, r / 4)

        with ThreadPoolExecutor(max_workers=config.REDUCTION_THREADS) as executor:
            results = list(executor.map(run, chunks))
        points = np.concatenate([p for p, _ in results])
        converged = np.concatenate([c for _, c in results])
        self.failed_seeds = int(np.sum(~converged))
        if self.failed_seeds:
            logger.warning(f"{self.failed_seeds} of {len(seeds)} Newton seeds did not converge")
        if not np.any(converged):
            raise NonConvergence(f"all {len(seeds)} Newton seeds failed")

        points = points[converged]
        points = points[np.max(np.abs(points), axis=-1) <= r * (1 + 1e-9)]
        if not len(points):
            return []
        jet = self.h.jet(points)
        eig = np.linalg.eigvalsh(jet.hess)
        scale = np.maximum(1.0, np.max(np.abs(eig), axis=-1))
        degenerate = np.min(np.abs(eig), axis=-1) <= self.tol.degeneracy_tol * scale
        if np.any(degenerate):
            k = int(np.flatnonzero(degenerate)[0])
            raise DegenerateCriticalPoint(points[k].tolist(), float(np.min(np.abs(eig[k]))))

        gn = np.linalg.norm(jet.grad, axis=-1)
        kept = []
        for k in np.argsort(gn, kind="stable"):
            if all(np.linalg.norm(points[k] - points[j]) > 10 * self.tol.newton_tol for j in kept):
                kept.append(k)
        crits = [
            CriticalPoint(
                location=points[k].copy(),
                grad_norm=float(gn[k]),
                hessian=jet.hess[k].copy(),
                eigenvalues=eig[k].copy(),
                index=int(np.sum(eig[k] < 0)),
                laplacian=float(np.trace(jet.hess[k])),
            )
            for k in kept
        ]
        crits.sort(key=lambda c: tuple(np.round(c.location, 9)))
        return crits

    def _shell_ok(self, r, directions=200, radii=5):
        dirs = fibonacci_sphere(directions)
        rad = np.linspace(r, 2 * r, radii)
        points = (rad[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
        grad_norm = np.linalg.norm(self.h.jet(points).grad, axis=-1)
        return bool(np.min(grad_norm) > self.tol.shell_tol)

    def summary(self):
        """Logs the critical points and returns them as dicts."""
        if self.critical_points is None:
            logger.warning("No search has been run!")
            return None
        rows = [c.to_dict() for c in self.critical_points]
        for c in rows:
            loc = ", ".join(f"{v:+.6f}" for v in c["xi"])
            logger.info(f"Critical point ({loc}) index {c['index']} Lap h {c['laplacian']:+.6g}")
        logger.info(f"{len(rows)} critical points in box of radius {self.box_radius}")
        return rows


def fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    rho = np.sqrt(1 - z * z)
    phi = math.pi * (3 - math.sqrt(5)) * k
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


def find_critical_points(h, box_radius=config.BOX_RADIUS, seed_nodes=config.SEED_GRID_NODES,
                         newton_tol=config.NEWTON_TOL, tolerances=None, check_shell=True):
    tol = tolerances or Tolerances(newton_tol=newton_tol)
    return CriticalPointFinder(h, box_radius, seed_nodes, tol, check_shell).solve()


def _laplacian_vanishes(c, tol):
    return abs(c.laplacian) <= tol * max(1.0, float(np.max(np.abs(c.hessian))))


def negative_laplacian_sum(crits):
    return sum((-1) ** c.index for c in crits if c.laplacian < 0)


def degree_sum(crits, laplacian_tol=config.LAPLACIAN_TOL):
    """1 + sum over critical points with Lap h < 0 of (-1)^index."""
    for c in crits:
        if _laplacian_vanishes(c, laplacian_tol):
            raise ConditionIViolated(f"Lap h = {c.laplacian:.3e} at critical point {c.location.tolist()}")
    return negative_laplacian_sum(crits) + 1


# --- south pole ---

@dataclass
class SouthPoleCheck:
    status: str  # "ok", "critical" or "not_applicable"
    gradient: list | None = None
    intrinsic_gradient: list | None = None
    charts_agree: bool | None = None

    @property
    def ok(self):
        return self.status != "critical"


def south_pole_from_k(expression, h, tol=1e-8):
    """Gradient of h o tau at 0 against the intrinsic S^3 gradient of k at the south pole."""
    reflected = h.kelvin().jet_at(np.zeros(3)).grad
    ambient = eval_jet2(expression.ast, SOUTH_POLE, "sphere").grad
    intrinsic = sphere_tangent_gradient(SOUTH_POLE, ambient)
    # near 0, pi^{-1} o tau(y) = (2y, -1) + O(|y|^2)
    expected = 2.0 * intrinsic[:3]
    agree = bool(np.linalg.norm(reflected - expected) <= 1e-8 * max(1.0, float(np.linalg.norm(expected))))
    if not agree:
        logger.error(f"South pole charts disagree: {reflected.tolist()} vs {expected.tolist()}")
    status = "critical" if np.linalg.norm(reflected) <= tol else "ok"
    return SouthPoleCheck(status, reflected.tolist(), intrinsic.tolist(), agree)


def south_pole_from_h(h, rays=5, tol=1e-6):
    """
    Decay check for a direct h: if h o tau is C^1 at 0 (values and gradients settle along
    rays), report whether its gradient there vanishes; otherwise "not_applicable".
    """
    ht = h.kelvin()
    dirs = fibonacci_sphere(rays)
    steps = np.array([1e-3, 1e-4])
    points = (steps[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    try:
        jet = ht.jet(points)
    except (DomainError, OriginSingularity):
        return SouthPoleCheck("not_applicable")
    values = jet.value.reshape(2, rays)
    grads = jet.grad.reshape(2, rays, 3)
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(grads))):
        return SouthPoleCheck("not_applicable")
    vscale = max(1.0, float(np.max(np.abs(values[1]))))
    gscale = max(1.0, float(np.max(np.linalg.norm(grads[1], axis=-1))))
    settled = (np.max(np.abs(values[0] - values[1])) <= 1e-2 * vscale
               and np.max(np.abs(values[1] - values[1].mean())) <= 1e-2 * vscale
               and np.max(np.linalg.norm(grads[0] - grads[1], axis=-1)) <= 1e-2 * gscale
               and np.max(np.linalg.norm(grads[1] - grads[1].mean(axis=0), axis=-1)) <= 1e-2 * gscale)
    if not settled:
        return SouthPoleCheck("not_applicable")
    g0 = grads[1].mean(axis=0)
    return SouthPoleCheck("critical" if np.linalg.norm(g0) <= tol else "ok", g0.tolist())


def check_south_pole(spec, h):
    if spec.k is not None:
        return south_pole_from_k(compile_expression(spec.k, "sphere"), h)
    return south_pole_from_h(h)


# --- verdict ---

@dataclass
class TheoremVerdict:
    south_pole_ok: bool
    condition_i: bool
    condition_ii: bool
    degree_sum: int | None
    critical_points: list
    guarantee: bool
    south_pole: SouthPoleCheck = field(default_factory=lambda: SouthPoleCheck("not_applicable"))
    negative_laplacian_sum: int | None = None
    box_radius: float = config.BOX_RADIUS
    diagnostics: list = field(default_factory=list)

    def to_dict(self):
        return {
            "south_pole_ok": self.south_pole_ok,
            "south_pole_status": self.south_pole.status,
            "south_pole_gradient": self.south_pole.gradient,
            "south_pole_charts_agree": self.south_pole.charts_agree,
            "condition_i": self.condition_i,
            "condition_ii": self.condition_ii,
            "degree_sum": self.degree_sum,
            "negative_laplacian_sum": self.negative_laplacian_sum,
            "guarantee": self.guarantee,
            "box_radius": self.box_radius,
            "critical_points": [c.to_dict() for c in self.critical_points],
            "diagnostics": list(self.diagnostics),
        }


def theorem_check(spec, box_radius=config.BOX_RADIUS, tolerances=None, seed_nodes=config.SEED_GRID_NODES):
    tol = tolerances or Tolerances()
    h = build_h(spec)
    logger.info(f"Checking hypotheses for {spec.label}")
    pole = check_south_pole(spec, h)
    finder = CriticalPointFinder(h, box_radius, seed_nodes, tol)
    try:
        crits = finder.solve()
    except DegenerateCriticalPoint as exc:
        logger.error(f"Morse data degenerate: {exc}")
        return TheoremVerdict(pole.ok, False, False, None, [], False, pole, None,
                              finder.box_radius, [str(exc)])
    finder.summary()

    diagnostics = []
    condition_i = not any(_laplacian_vanishes(c, tol.laplacian_tol) for c in crits)
    if condition_i:
        neg = negative_laplacian_sum(crits)
        total = neg + 1
        condition_ii = neg != -1
    else:
        neg, total, condition_ii = None, None, False
        diagnostics.append("Lap h vanishes at a critical point")
    if finder.failed_seeds:
        diagnostics.append(f"{finder.failed_seeds} Newton seeds dropped")
    guarantee = pole.ok and condition_i and condition_ii
    return TheoremVerdict(pole.ok, condition_i, condition_ii, total, crits, guarantee, pole, neg,
                          finder.box_radius, diagnostics)
