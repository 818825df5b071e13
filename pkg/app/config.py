import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

TOOLKIT_VERSION = "0.4.0"

# Runtime
REDUCTION_THREADS = max(1, int(os.getenv("REDUCTION_THREADS", os.cpu_count() or 1)))
DETERMINISTIC_REDUCTION = os.getenv("REDUCTION_DETERMINISTIC", "1") != "0"
LOG_LEVEL = os.getenv("REDUCTION_LOG_LEVEL", "WARNING")

# Singularity thresholds (double-precision noise floor)
SOUTH_POLE_TOL = 1e-12
ORIGIN_TOL = 1e-12
SPHERE_NORMALIZE_TOL = 1e-9

# Bubble grids
GRID_N_DEFAULT = 64
GRID_L_DEFAULT = 4.0
MIN_GRID_NODES = 16
MIN_RESIDUAL_NODES = 32
MIN_CONVERGENCE_ORDER = 1.8

# Quadrature of Gamma and of the energies
# Radius inf integrates the whole of R^3 through r = tan(theta)
QUAD_RADIUS = float(os.getenv("REDUCTION_QUAD_RADIUS", "inf"))
QUAD_RADIAL_NODES = 64
QUAD_ANGULAR_NODES = 12
QUAD_TOL = float(os.getenv("REDUCTION_QUAD_TOL", "1e-6"))
QUAD_CHUNK = 32768
QUAD_MAX_REFINEMENTS = int(os.getenv("REDUCTION_QUAD_MAX_REFINEMENTS", "3"))
QUAD_MAX_NODES = 4_000_000
# Gamma rules get a cap and a shell around the image of |y| <= 1 once |xi| exceeds the offset
QUAD_FEATURE_OFFSET = 1.5
QUAD_FEATURE_MARGIN = 2.0

# Lambda expansion
EXPANSION_LAMBDAS = [0.02, 0.04, 0.06, 0.08, 0.1]
GAUSSIAN_BUMP_WIDTH = 4.0

# Critical point search
BOX_RADIUS = 8.0
MAX_BOX_RADIUS = 64.0
SEED_GRID_NODES = 24
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 60
DEGENERACY_TOL = 1e-8
LAPLACIAN_TOL = 1e-8
SHELL_GRADIENT_TOL = 1e-7

# Degree
DEGREE_S = 6.0
DEGREE_MESH = 12
DEGREE_RADIAL_NODES = 64
DEGREE_ANGULAR_NODES = 4
ROUNDING_GUARD = 0.2
SINGULAR_DET_TOL = 1e-8
ZERO_GRID_NODES = 16
DEGREE_BATCH_NODES = 131072  # quadrature nodes times parameter points per batch
# grad Gamma on the boundary is re-evaluated with a refined rule while it moves by more than this
DEGREE_GRADIENT_RTOL = 0.05
DEGREE_MAX_REFINEMENTS = 1
DEGREE_CHECK_MESH = 4

# Rescaling constants of the coupled system
LAMBDA_1 = 0.75
MU_1 = 1.5
