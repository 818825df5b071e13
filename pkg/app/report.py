"""
Report schema, run-config loading and CSV output for the command-line front end.
"""
import json
import logging
from typing import Any, Optional, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError

import config
from errors import UsageError

logger = logging.getLogger(__name__)

SCAN_COLUMNS = [
    "lambda", "xi1", "xi2", "xi3", "gamma", "dgamma_dlambda",
    "grad_xi1", "grad_xi2", "grad_xi3", "est_error",
]


class ErrorInfo(BaseModel):
    type: str
    message: str
    position: Optional[int] = None


class ResidualRow(BaseModel):
    nodes: int
    spacing: float
    scalar: float
    spinor: float


class VerifyResults(BaseModel):
    lam: float
    xi: list[float]
    half_width: float
    grids: list[ResidualRow]
    scalar_order: float
    spinor_order: float
    passed: bool
    rescaled_scalar: float
    rescaled_spinor: float
    sphere_transfer_defect: float
    sphere_profile_deviation: float


class ConstantEntry(BaseModel):
    name: str
    value: float
    reference: float
    relative_error: float
    tolerance: float
    ok: bool


class ConstantsResults(BaseModel):
    constants: list[ConstantEntry]
    second_moment_matrix: list[list[float]]
    c_star_fit: dict[str, Any]
    passed: bool


class GammaScanResults(BaseModel):
    perturbation: str
    columns: list[str] = SCAN_COLUMNS
    rows: list[dict[str, float]]
    nonconverged: int
    csv_path: Optional[str] = None


class CriticalPointModel(BaseModel):
    xi: list[float]
    index: int
    laplacian: float
    grad_norm: float


class AnalyzeResults(BaseModel):
    perturbation: str
    epsilon: float
    south_pole_ok: bool
    south_pole_status: str
    south_pole_gradient: Optional[list[float]] = None
    south_pole_charts_agree: Optional[bool] = None
    condition_i: bool
    condition_ii: bool
    degree_sum: Optional[int]
    negative_laplacian_sum: Optional[int] = None
    guarantee: bool
    box_radius: float
    critical_points: list[CriticalPointModel]
    diagnostics: list[str] = []


class DegreeResults(BaseModel):
    perturbation: str
    s: float
    mesh: int
    kronecker_degree: int
    degree_sum: int
    agree: bool
    critical_points: list[CriticalPointModel]


class ReportEnvelope(BaseModel):
    command: Optional[str]
    input: dict[str, Any]
    version: str = config.TOOLKIT_VERSION
    wall_time: float
    results: Optional[Union[VerifyResults, ConstantsResults, GammaScanResults, AnalyzeResults, DegreeResults]] = None
    warnings: list[str] = []
    error: Optional[ErrorInfo] = None
    exit_code: int = 0


class RunConfig(BaseModel):
    """Settings file accepted by --config; flags given on the command line win."""
    model_config = ConfigDict(extra="forbid")

    log_level: Optional[str] = None
    preset: Optional[str] = None
    k: Optional[str] = None
    h: Optional[str] = None
    epsilon: Optional[float] = None
    lam: Optional[float] = None
    xi: Optional[str] = None
    grid_n: Optional[int] = None
    grid_l: Optional[float] = None
    tol: Optional[float] = None
    lambda_range: Optional[str] = None
    xi_grid: Optional[str] = None
    out: Optional[str] = None
    box: Optional[float] = None
    s: Optional[float] = None
    mesh: Optional[int] = None
    json_path: Optional[str] = None


def load_run_config(filepath):
    """
    Loads and validates a JSON run config.
    Unknown keys and malformed files are usage errors.
    """
    try:
        with open(filepath) as f:
            raw = json.load(f)
        return RunConfig.model_validate(raw)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Error loading config file: {e}")
        raise UsageError(f"cannot read config file {filepath}: {e}") from None
    except ValidationError as e:
        logger.error(f"Invalid config file: {e}")
        raise UsageError(f"invalid config file {filepath}: {e.errors()[0]['msg']}") from None


def scan_frame(rows):
    df = pd.DataFrame(rows, columns=SCAN_COLUMNS)
    return df.sort_values(["lambda", "xi1", "xi2", "xi3"], kind="mergesort").reset_index(drop=True)


def write_scan_csv(rows, filepath):
    df = scan_frame(rows)
    df.to_csv(filepath, index=False, float_format="%.17g")
    logger.info(f"Scan of {len(df)} rows saved to {filepath}")
    return df


def write_report(envelope, filepath):
    with open(filepath, "w") as f:
        f.write(envelope.model_dump_json(indent=2))
    logger.info(f"Report saved to {filepath}")
