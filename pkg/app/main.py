import argparse
import itertools
import logging
import math
import sys
import time

import numpy as np
from pydantic import ValidationError

import config
import presets
from bubbles import (
    BubbleParams, GridSpec, bubble_fields, conformal_transfer_defect, convergence_order, energy_j0,
    energy_j0_rescaled, residual_rescaled, residual_system, sphere_profile,
    C0, C_STAR, INTEGRAL_V, J0_BUBBLE, J0_RESCALED, SECOND_MOMENT,
)
from degree import gamma_degree
from errors import ReductionError, UsageError
from morse import PerturbationSpec, build_h, degree_sum, find_critical_points, theorem_check
from quadrature import QuadratureSpec
from reduced_functional import gamma_jet, kernel_integrals, lambda_expansion
from report import (
    AnalyzeResults, ConstantEntry, ConstantsResults, CriticalPointModel, DegreeResults, ErrorInfo,
    GammaScanResults, ReportEnvelope, ResidualRow, RunConfig, VerifyResults,
    load_run_config, scan_frame, write_report, write_scan_csv,
)

logger = logging.getLogger(__name__)

DEFAULTS = {
    "log_level": config.LOG_LEVEL,
    "epsilon": 0.0,
    "lam": 1.0,
    "xi": "0,0,0",
    "grid_n": config.GRID_N_DEFAULT,
    "grid_l": config.GRID_L_DEFAULT,
    "tol": 1e-5,
    "lambda_range": "0.5:2:4",
    "xi_grid": "0:0:1",
    "box": config.BOX_RADIUS,
    "s": config.DEGREE_S,
    "mesh": config.DEGREE_MESH,
}

C_STAR_FIT_TOL = 1e-2


class ReportArgumentParser(argparse.ArgumentParser):
    """Turns argparse failures into UsageError so they are reported like any other error."""

    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = ReportArgumentParser(prog="reduction", description="Finite-dimensional reduction toolkit")
    parser.add_argument("--config", type=str, help="JSON run config (flags take precedence)")
    parser.add_argument("--log-level", dest="log_level", type=str, help="Logging level (default WARNING)")
    parser.add_argument("--preset", type=str, help=f"Perturbation preset: {', '.join(presets.PERTURBATION_PRESETS)}")

    perturbation = argparse.ArgumentParser(add_help=False)
    perturbation.add_argument("--k", type=str, help="k on S^3 in x1..x4")
    perturbation.add_argument("--h", type=str, help="h on R^3 in y1..y3")
    perturbation.add_argument("--epsilon", type=float, help="Perturbation size (echoed only)")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", dest="json_path", type=str, help="Also write the report to this file")

    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser("verify", parents=[common], help="Residuals of the bubble system")
    verify.add_argument("--lambda", dest="lam", type=float)
    verify.add_argument("--xi", type=str, help="Comma-separated center, e.g. 1,0,0")
    verify.add_argument("--grid-n", dest="grid_n", type=int)
    verify.add_argument("--grid-l", dest="grid_l", type=float)

    constants = sub.add_parser("constants", parents=[common], help="Quadrature constants against closed forms")
    constants.add_argument("--tol", type=float)

    scan = sub.add_parser("gamma-scan", parents=[common, perturbation], help="Gamma and its gradient on a grid")
    scan.add_argument("--lambda-range", dest="lambda_range", type=str, help="a:b:n")
    scan.add_argument("--xi-grid", dest="xi_grid", type=str, help="a:b:n per axis")
    scan.add_argument("--out", type=str, help="CSV output path")

    analyze = sub.add_parser("analyze", parents=[common, perturbation], help="Verdict on the existence hypotheses")
    analyze.add_argument("--box", type=float)

    degree = sub.add_parser("degree", parents=[common, perturbation], help="deg(grad Gamma, B_s, 0) against the Morse sum")
    degree.add_argument("--s", type=float)
    degree.add_argument("--mesh", type=int)
    degree.add_argument("--box", type=float)
    return parser


def resolve_settings(args, run_config):
    """flags > config file > defaults"""
    settings = dict(DEFAULTS)
    settings.update(run_config.model_dump(exclude_none=True))
    settings.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    return settings


def configure_logging(level_name):
    level = getattr(logging, str(level_name).upper(), None)
    if not isinstance(level, int):
        raise UsageError(f"unknown log level '{level_name}'")
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')
    logging.getLogger().setLevel(level)


def parse_vector(text, size=3):
    try:
        values = [float(v) for v in str(text).split(",")]
    except ValueError:
        raise UsageError(f"expected {size} comma-separated numbers, got '{text}'") from None
    if len(values) != size:
        raise UsageError(f"expected {size} comma-separated numbers, got '{text}'")
    return np.array(values)


def parse_range(text, name):
    parts = str(text).split(":")
    try:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except (IndexError, ValueError):
        raise UsageError(f"--{name} must look like a:b:n, got '{text}'") from None
    if len(parts) != 3 or n < 1 or (n == 1 and a != b):
        raise UsageError(f"--{name} must look like a:b:n with n >= 1, got '{text}'")
    return np.linspace(a, b, n)


def perturbation_spec(settings):
    fields = {key: settings[key] for key in ("k", "h") if settings.get(key) is not None}
    if not fields and settings.get("preset"):
        fields = presets.preset_spec_fields(settings["preset"])
    try:
        return PerturbationSpec(epsilon=settings.get("epsilon", 0.0), **fields)
    except ValidationError:
        raise UsageError("exactly one of --k and --h (or --preset) is required") from None


def _critical_point_models(crits):
    return [CriticalPointModel(**c.to_dict()) for c in crits]


# --- commands ---

def cmd_verify(settings, warnings):
    lam = float(settings["lam"])
    xi = parse_vector(settings["xi"])
    try:
        params = BubbleParams(lam, xi)
    except ValueError as e:
        raise UsageError(str(e)) from None
    half_width = float(settings["grid_l"]) * max(1.0, lam)
    coarse = GridSpec(half_width, int(settings["grid_n"]), xi)
    fine = coarse.refined()

    rows = []
    for grid in (coarse, fine):
        scalar, spinor = residual_system(params, grid)
        rows.append(ResidualRow(nodes=grid.nodes, spacing=grid.spacing, scalar=scalar, spinor=spinor))
    scalar_order = convergence_order(rows[0].scalar, rows[1].scalar, rows[0].spacing, rows[1].spacing)
    spinor_order = convergence_order(rows[0].spinor, rows[1].spinor, rows[0].spacing, rows[1].spacing)
    passed = min(scalar_order, spinor_order) >= config.MIN_CONVERGENCE_ORDER
    if not passed:
        warnings.append(f"observed convergence orders {scalar_order:.3f}, {spinor_order:.3f} below {config.MIN_CONVERGENCE_ORDER}")

    rescaled_scalar, rescaled_spinor = residual_rescaled(params, coarse)
    standard = GridSpec(config.GRID_L_DEFAULT, int(settings["grid_n"]))
    v, psi = sphere_profile(BubbleParams(), standard.points())
    results = VerifyResults(
        lam=lam,
        xi=xi.tolist(),
        half_width=half_width,
        grids=rows,
        scalar_order=scalar_order,
        spinor_order=spinor_order,
        passed=passed,
        rescaled_scalar=rescaled_scalar,
        rescaled_spinor=rescaled_spinor,
        sphere_transfer_defect=conformal_transfer_defect(standard),
        sphere_profile_deviation=float(max(np.max(np.abs(v - 1)), np.max(np.abs(psi - 1)))),
    )
    return results, 0 if passed else 1


def _constant(name, value, reference, tol):
    rel = abs(value - reference) / abs(reference)
    return ConstantEntry(name=name, value=value, reference=reference, relative_error=rel, tolerance=tol, ok=rel <= tol)


def cmd_constants(settings, warnings):
    tol = float(settings["tol"])
    if not tol > 0:
        raise UsageError(f"--tol must be positive, got {tol}")
    q = QuadratureSpec()
    integral_v, second_moment, matrix = kernel_integrals(q)
    standard = BubbleParams()
    j0 = energy_j0(*bubble_fields(standard), q=q)
    j0_rescaled = energy_j0_rescaled(*bubble_fields(standard, rescaled=True), q=q)

    bump = presets.get_preset("gaussian")["h"]
    fit = lambda_expansion(build_h(PerturbationSpec(h=bump)), np.zeros(3))

    entries = [
        _constant("integral_V", integral_v, INTEGRAL_V, tol),
        _constant("c0", 0.5 * integral_v, C0, tol),
        _constant("second_moment", second_moment, SECOND_MOMENT, tol),
        _constant("c_star_quadrature", second_moment / 6.0, C_STAR, tol),
        _constant("J0_bubble", j0, J0_BUBBLE, tol),
        _constant("J0_rescaled", j0_rescaled, J0_RESCALED, tol),
        _constant("c_star_fit", fit.c_star, C_STAR, C_STAR_FIT_TOL),
    ]
    for e in entries:
        if not e.ok:
            logger.error(f"{e.name} = {e.value:.10g} deviates from {e.reference:.10g} by {e.relative_error:.2e}")
            warnings.append(f"{e.name} outside tolerance")
    passed = all(e.ok for e in entries)
    results = ConstantsResults(
        constants=entries,
        second_moment_matrix=matrix.tolist(),
        c_star_fit=fit.to_dict(),
        passed=passed,
    )
    return results, 0 if passed else 1


def cmd_gamma_scan(settings, warnings):
    spec = perturbation_spec(settings)
    lambdas = parse_range(settings["lambda_range"], "lambda-range")
    axis = parse_range(settings["xi_grid"], "xi-grid")
    if np.any(lambdas < 0):
        raise UsageError("lambda values must be non-negative")
    h = build_h(spec)
    logger.info(f"Scanning Gamma for {spec.label} on {len(lambdas)} x {len(axis)}^3 points")

    rows = []
    for lam, x1, x2, x3 in itertools.product(lambdas, axis, axis, axis):
        jet = gamma_jet(h, float(lam), (x1, x2, x3), order=1, strict=False)
        if not jet.converged:
            warnings.append(f"quadrature not converged at lambda={lam:.6g}, xi=({x1:.6g}, {x2:.6g}, {x3:.6g})")
            logger.warning(warnings[-1])
        rows.append({
            "lambda": float(lam), "xi1": float(x1), "xi2": float(x2), "xi3": float(x3),
            "gamma": jet.value, "dgamma_dlambda": float(jet.grad[0]),
            "grad_xi1": float(jet.grad[1]), "grad_xi2": float(jet.grad[2]), "grad_xi3": float(jet.grad[3]),
            "est_error": jet.error,
        })
    out = settings.get("out")
    df = write_scan_csv(rows, out) if out else scan_frame(rows)
    results = GammaScanResults(
        perturbation=spec.label,
        rows=df.to_dict("records"),
        nonconverged=sum(1 for w in warnings if w.startswith("quadrature not converged")),
        csv_path=out,
    )
    return results, 0


def cmd_analyze(settings, warnings):
    spec = perturbation_spec(settings)
    verdict = theorem_check(spec, box_radius=float(settings["box"]))
    warnings.extend(verdict.diagnostics)
    data = verdict.to_dict()
    data["critical_points"] = _critical_point_models(verdict.critical_points)
    results = AnalyzeResults(perturbation=spec.label, epsilon=spec.epsilon, **data)
    return results, 0 if verdict.guarantee else 3


def cmd_degree(settings, warnings):
    spec = perturbation_spec(settings)
    s = float(settings["s"])
    if not s > 1:
        raise UsageError(f"--s must exceed 1, got {s}")
    h = build_h(spec)
    kronecker = gamma_degree(h, s, mesh=int(settings["mesh"]), kelvin_chart=spec.k is not None)
    crits = find_critical_points(h, float(settings["box"]))
    morse_sum = degree_sum(crits)
    agree = kronecker == morse_sum
    if not agree:
        warnings.append(f"boundary degree {kronecker} differs from Morse sum {morse_sum}; try a larger --s")
    results = DegreeResults(
        perturbation=spec.label,
        s=s,
        mesh=int(settings["mesh"]),
        kronecker_degree=kronecker,
        degree_sum=morse_sum,
        agree=agree,
        critical_points=_critical_point_models(crits),
    )
    return results, 0 if agree else 1


COMMANDS = {
    "verify": cmd_verify,
    "constants": cmd_constants,
    "gamma-scan": cmd_gamma_scan,
    "analyze": cmd_analyze,
    "degree": cmd_degree,
}


def main(argv=None):
    start_time = time.time()
    command, settings, results, error = None, {}, None, None
    warnings = []
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        run_config = load_run_config(args.config) if args.config else RunConfig()
        settings = resolve_settings(args, run_config)
        configure_logging(settings["log_level"])
        logger.info(f"Running {command} (toolkit {config.TOOLKIT_VERSION})")
        results, exit_code = COMMANDS[command](settings, warnings)
    except ReductionError as e:
        logger.error(f"{type(e).__name__}: {e}")
        error = ErrorInfo(**e.to_dict())
        exit_code = e.exit_code
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        error = ErrorInfo(type=type(e).__name__, message=str(e))
        exit_code = UsageError.exit_code

    wall_time = time.time() - start_time
    envelope = ReportEnvelope(
        command=command,
        input={k: v for k, v in settings.items() if v is None or isinstance(v, (str, int, float, bool))},
        wall_time=wall_time if math.isfinite(wall_time) else 0.0,
        results=results,
        warnings=warnings,
        error=error,
        exit_code=exit_code,
    )
    print(envelope.model_dump_json(indent=2))
    if settings.get("json_path"):
        write_report(envelope, settings["json_path"])
    logger.info(f"{command} finished in {wall_time:.2f}s with exit code {exit_code}")
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
