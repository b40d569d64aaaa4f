import math
import os
from dotenv import load_dotenv

load_dotenv()

# Storage
OUTPUT_DIR = os.getenv("PSPIN_OUTPUT_DIR", "./runs")
TENSOR_STORE_PATH = os.getenv("PSPIN_TENSOR_STORE", "./tensor_store")
LOG_LEVEL = os.getenv("PSPIN_LOG_LEVEL", "INFO")

# Dense disorder tensors above this size are refused
MEMORY_BUDGET_BYTES = int(os.getenv("PSPIN_MEMORY_BUDGET_BYTES", str(2 * 1024 ** 3)))

# Calibrated constant C of the bounded set K_N, per p.
# Measured as 1.25 x the largest derivative-norm ratio over 200 random
# Hamiltonians at N=60; refresh with `python main.py calibrate`.
K_N_CONSTANTS = {2: 4.0, 3: 15.0, 4: 60.0}
K_N_CALIBRATION_N = 60
K_N_CALIBRATION_SAMPLES = 200
K_N_CALIBRATION_FACTOR = 1.25

# Tensor operator norm estimation
OPNORM_ITERS = 50
OPNORM_RESTARTS = 4
OPNORM_TOL = 1e-10

# Wells
WELL_OUTLIER_COUNT = 4  # k(gamma) for p=3
BAND_TOLERANCE = 1e-10
LENIENCY_RANGE = (1.0, 1.6)

# Optimizers
GD_STEP_SIZE = 0.01
GD_MAX_ITERS = 20000
HESSIAN_ASCENT_START_RADIUS = 0.1  # times sqrt(N)
HESSIAN_ASCENT_STEP = 0.01  # times sqrt(N)
HESSIAN_ASCENT_POWER_TOL = 1e-8

# State following
NEWTON_MAX_ITER = 30
NEWTON_TOL = 1e-6
NEWTON_TRUST_CONSTANT = 10.0
NEWTON_MAX_HALVINGS = 20
GRAM_SCHMIDT_PIVOT_FLOOR = 1e-3
TRANSPORT_BAND_FACTOR = 1.1
DAVIS_KAHAN_GAP_FACTOR = 2.9
RANDOM_PROBES = 20

# Stability meter
STABILITY_EPSILONS = [1e-3, 1e-2, 1e-1]
OVERLAP_GRID = [0.0, 0.5, 1.0]

# Experiment presets. "paper-regime" respects gamma >> iota >> delta >> epsilon >> 1/K.
PRESETS = {
    "paper-regime": {
        "N": 80, "p": 3, "K": 1200, "epsilon": 0.002, "gamma": 0.5,
        "iota": 0.05, "delta": 0.01, "d": 0, "eta": 0.01, "replicas": 10,
    },
    "planted": {
        "N": 80, "p": 3, "K": 40, "epsilon": 0.005, "gamma": 0.5,
        "iota": 0.05, "delta": 0.05, "d": 0, "mu": 2.0, "replicas": 20,
    },
    "fast-ci": {
        "N": 24, "p": 3, "K": 5, "epsilon": 0.01, "gamma": 0.5,
        "iota": 0.05, "delta": 0.05, "d": 0, "mu": 2.0, "replicas": 4,
        "max_iters": 2000,
    },
}

# Supported experiment commands
EXPERIMENTS = ['spectrum', 'optimize', 'follow', 'stability', 'events', 'chain-verify', 'calibrate', 'lipschitz']


def alg_threshold(p: int) -> float:
    """Algorithmic threshold ALG(p) = 2 sqrt((p-1)/p)"""
    return 2.0 * ((p - 1) / p) ** 0.5


def bulk_edge(p: int) -> float:
    """Semicircle edge 2 sqrt(p(p-1)) of the tangential Hessian"""
    return 2.0 * (p * (p - 1)) ** 0.5


def k_n_constant(p: int) -> float:
    """Calibrated K_N constant for order p"""
    if p in K_N_CONSTANTS:
        return K_N_CONSTANTS[p]
    # the top derivative ratio grows like p!
    return K_N_CONSTANTS[4] * float(math.factorial(p)) / 24.0

