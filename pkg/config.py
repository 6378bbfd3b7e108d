"""
Configuration settings for the QCQP partitioning optimizer
"""

import os
from pathlib import Path

# Application settings
APP_NAME = "QCQP Partition Optimizer"
APP_VERSION = "1.0.0"

# Storage settings
DATA_DIR = Path(os.environ.get("QCQP_PARTITION_HOME", Path.home() / ".qcqp_partition"))
RESULTS_DB_PATH = DATA_DIR / "results.db"

# Feasibility of QCQP points (absolute)
FEAS_TOL = 1e-6

# LP engine
LP_PRIMAL_TOL = 1e-9
LP_DUAL_TOL = 1e-9
LP_PIVOT_TOL = 1e-11
LP_REFACTOR_EVERY = 100       # pivots between basis refactorizations
LP_DEGENERACY_LIMIT = 50      # degenerate pivots before switching to Bland's rule
LP_RESIDUAL_LIMIT = 1e-6      # duality residual that flags numerical trouble
LP_MAX_ITER_FACTOR = 50       # iteration limit = factor * (rows + columns)

# MILP engine
INTEGER_TOL = 1e-6
MIP_REL_GAP = 1e-6
MIP_ABS_GAP = 1e-9
MIP_NODE_LIMIT = 200000
ENUMERATION_LIMIT = 100000

# Relaxations
OA_GRID_POINTS = 8            # extra uniform outer-approximation points per quadratic variable
TANGENT_TOL = 1e-8
TANGENT_ROUNDS = 50
COLLAPSE_TOL = 1e-12          # partition points closer than this share model columns

# Partitioning algorithm defaults
REL_GAP = 1e-4
ABS_GAP = 1e-9
TIME_LIMIT = 7200.0           # seconds
ALPINE_DELTA = 10.0
DEFAULT_POINTS = 2
LOCAL_STARTS = 4
MAX_ITERATIONS = 100

# Strong partitioning
ASCENT_MAX_ITER = 500
ASCENT_MAX_EVALS = 500
ASCENT_EPS = 1e-9
BUNDLE_SIZE = 20
ASCENT_SHRINK = 0.5
ASCENT_EXPAND = 2.0
ASCENT_MIN_STEP = 1e-14
PRESOLVE_MATCH_TOL = 1e-4
POSTPROCESS_REL_TOL = 1e-6
UNIQUENESS_REL_TOL = 1e-7

# Imitation learning
ML_FOLDS = 10
ML_WEAK_LEARNERS = 1000
ML_MAX_DEPTH = 25

# Effective gap floor and shift used by the reporting metrics
GAP_FLOOR = 1e-4
GAP_EPS = 1e-6
GM_SHIFT = 10.0

# Instance families and policies
FAMILIES = ("bilinear", "qcqp", "pooling")
POLICIES = ("default", "sp", "ml", "uniform")
RESULT_STATUSES = (
    "optimal",
    "time_limit",
    "iteration_limit",
    "infeasible",
)

# Pooling generator defaults (desk-scale composite)
POOLING_BLOCKS = 3
POOLING_EXTRA_EDGES = 10
POOLING_PERTURBATION = 0.2
POOLING_EDGE_RETRIES = 10  # redraws of the extra edge set before giving up

# Command-line exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_TIME_LIMIT = 4
