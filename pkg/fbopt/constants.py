# operational constants
EXIT_SUCCESS = 0
EXIT_VALIDATION_FAILURE = 2
EXIT_RUNTIME_ABORT = 3

VERSION = "0.1"

# integrator
DEFAULT_SUBSTEPS = 50

# below this distance the unicycle heading error is treated as 0
UNICYCLE_XI_EPSILON = 1e-9

# plant checks
EQUILIBRIUM_RESIDUAL_TOL = 1e-8
# a probe must fall below this fraction of its initial error within the horizon
LYAPUNOV_DECAY_FRACTION = 0.1
# errors below this fraction of the initial error are excluded from the log-slope fit
LYAPUNOV_FIT_FLOOR = 1e-12
LYAPUNOV_FIT_STEPS_PER_UNIT = 20

# costs
DEFAULT_LAMBDA0 = 1.0
DEFAULT_LAMBDA_DECAY = 0.1
# m_min: barrier constants are declared on {x : margin_i(x) >= m_min}
DEFAULT_MARGIN_FLOOR = 0.05
DEFAULT_CAPTURE_RADIUS = 0.1
# the infeasible-estimate fallback clamps margins at m_min / MARGIN_CLAMP_DIVISOR
MARGIN_CLAMP_DIVISOR = 10.0

# oracle
ORACLE_RESIDUAL_TOL = 1e-9
ORACLE_MAX_ITERATIONS = 100_000

# certificates
POWER_HORIZON = 200
# c_M1 = rho + (1 - rho) * SCHUR_MARGIN_FRACTION
SCHUR_MARGIN_FRACTION = 0.01
BISECTION_TOL = 1e-6
RECURSION_TOL = 1e-9

# perception
RASTER_WIDTH = 16
RASTER_HEIGHT = 16
RASTER_DOMAIN = ((-2.0, -2.0), (2.0, 2.0))
BLOB_SIGMA = 0.3
DEFAULT_ARCH = (256, 64, 32, 2)
DEFAULT_EPOCHS = 2000
DEFAULT_BATCH_SIZE = 32
DEFAULT_OPTIMIZER = "adam"
OPTIMIZERS = ("adam", "momentum")
DEFAULT_LEARNING_RATE = 0.001
# momentum coefficient, or the first moment decay under adam
DEFAULT_MOMENTUM = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
DEFAULT_JITTER = 0.25
DEFAULT_VALIDATION_GRID = 25
MODEL_FORMAT_VERSION = "fbopt-perception v1"

# persistence
TRACE_FORMAT_VERSION = "fbopt-trace v1"
REAL_SIGNIFICANT_DIGITS = 17
TRACE_JSON_FILE = "trace.json"
TRACE_CSV_FILE = "trace.csv"
CERTIFICATE_FILE = "certificate.json"


USAGE = """
Usage:
    python run_fbopt.py run <scenario-file> --out <dir>
        // run the closed loop; writes trace.json, trace.csv, trace.fine.csv (and certificate.json)
    python run_fbopt.py certify <scenario-file> [--out <file>]
        // build the tracking certificate and print it as JSON
    python run_fbopt.py train-perception <scenario-file> --out <model-file>
        // train the perception network described in the scenario
    python run_fbopt.py sweep <scenario-file> --param <dotted.key> --values v1,v2,... [--workers n]
        // run the scenario once per value and report tail tracking errors
    python run_fbopt.py check-bound <trace-dir>
        // evaluate the tracking envelope and the recursion oracle on a stored trace

Exit codes: 0 success, 2 validation failure, 3 runtime abort.
"""
