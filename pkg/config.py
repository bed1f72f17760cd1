import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # Parallelism
    THREADS = int(os.getenv('QUMERA_THREADS', 1))  # caps workers for correlator series

    # Reproducibility
    SEED = int(os.getenv('QUMERA_SEED', 1234))

    # Logging / output
    LOG_LEVEL = os.getenv('QUMERA_LOG_LEVEL', 'INFO')
    OUTPUT_DIR = os.getenv('QUMERA_OUTPUT_DIR', 'results')

    # Eigensolvers
    DENSE_EIG_LIMIT = int(os.getenv('QUMERA_DENSE_EIG_LIMIT', 4096))  # largest matrix sent to the dense path

    # Tolerances
    STRUCT_TOL = float(os.getenv('QUMERA_STRUCT_TOL', 1e-12))  # isometry / trace preservation
    EIG_TOL = float(os.getenv('QUMERA_EIG_TOL', 1e-9))  # dense eigen-residuals
    ITER_TOL = float(os.getenv('QUMERA_ITER_TOL', 1e-8))  # iterative eigen-residuals
    OVERLAP_TOL = float(os.getenv('QUMERA_OVERLAP_TOL', 1e-8))  # relative, for filtered kappa
    MIXING_TOL = float(os.getenv('QUMERA_MIXING_TOL', 1e-10))
    CONDITION_LIMIT = float(os.getenv('QUMERA_CONDITION_LIMIT', 1e8))  # eigenvector basis -> Schur fallback

    # Oracle guard: maximum number of amplitudes D**N
    STATE_LIMIT = int(os.getenv('QUMERA_STATE_LIMIT', 2 ** 20))

    # Correlator series
    KMAX = int(os.getenv('QUMERA_KMAX', 10))
    DEPTH_TOL = float(os.getenv('QUMERA_DEPTH_TOL', 1e-10))  # top-boundary effect on the connected correlator
    MAX_DEPTH = int(os.getenv('QUMERA_MAX_DEPTH', 1024))  # deepest tiling tried for the series
    FIT_FLOOR = float(os.getenv('QUMERA_FIT_FLOOR', 1e-13))  # |delta| below this is excluded from fits

    # Optimizer
    ENV_TERMS = int(os.getenv('QUMERA_ENV_TERMS', 2000))  # cap on ascended terms in the environment
    ENV_TOL = float(os.getenv('QUMERA_ENV_TOL', 1e-13))  # relative size of the last ascended term kept
    STEP_SIZE = float(os.getenv('QUMERA_STEP_SIZE', 0.2))  # initial gradient step
    BACKTRACKS = int(os.getenv('QUMERA_BACKTRACKS', 6))  # step quarterings before an update is rejected
    STALL_SWEEPS = int(os.getenv('QUMERA_STALL_SWEEPS', 3))  # consecutive rejected sweeps that end a run
    MAX_RETRIES = int(os.getenv('QUMERA_MAX_RETRIES', 3))
