"""Constants for flowrecon."""

from logging import Logger, getLogger
from typing import Final

LOGGER: Logger = getLogger(__package__)

NAME: Final = "flowrecon"
VERSION: Final = "1.0.0"
CONTAINER_FORMAT: Final = "flowrecon-container/1"
WEIGHTS_FORMAT: Final = "flowvn-weights/1"
WEIGHTS_MAGIC: Final = b"FLOWVN\x00\x01"
METRICS_FORMAT: Final = "flowrecon-metrics/1"

# Four-point referenced velocity encoding: reference row plus identity.
FOUR_POINT_PHI: Final = (
    (0, 0, 0),
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
)
N_ENCODINGS: Final = 4
DEFAULT_VENC_CM_S: Final = 150.0
VELOCITY_AXES: Final = ("x", "y", "z")

GOLDEN_ANGLE_DEG: Final = 111.246
TINY_GOLDEN_ANGLE_DEG: Final = 23.628
ACCELERATION_TOLERANCE: Final = 0.05

LLR_PATCH_SIZE: Final = 8
LLR_LAMBDA: Final = 2.06
LLR_MAX_ITERS: Final = 80
POWER_ITERATIONS: Final = 10
DIVERGENCE_FACTOR: Final = 10.0

VN_LAYERS: Final = 10
VN_FILTERS: Final = 8
VN_KERNEL_SIZE: Final = 5
VN_KNOTS: Final = 91
VN_KNOT_SPACING: Final = 0.17
VN_MODULATION_KNOTS: Final = 21
VN_MODULATION_RANGE: Final = (0.0, 0.5)
VN_FILTER_INIT_SCALE: Final = 0.05
FILTER_BANKS: Final = {
    # axes of the (t, z, y, x) image stack each bank convolves over
    "xyz": (1, 2, 3),
    "xyt": (0, 2, 3),
    "xzt": (0, 1, 3),
    "yzt": (0, 1, 2),
}
ACTIVATION_KINDS: Final = ("piecewise_linear", "rbf")

ADAM_LR: Final = 1e-3
ADAM_BETA1: Final = 0.85
ADAM_BETA2: Final = 0.98
ADAM_EPS: Final = 1e-8
TAU_RATE: Final = 1e-3

ANGERR_MIN_SPEED_CM_S: Final = 1.0
SSIM_SIGMA: Final = 1.5
SSIM_TRUNCATE: Final = 3.5
SSIM_K1: Final = 0.01
SSIM_K2: Final = 0.03

METHODS: Final = ("zerofill", "csllr", "flowvn", "hamvn")
ARRAY_ROLES: Final = (
    "kspace",
    "mask",
    "coils",
    "truth_magnitude",
    "truth_velocity",
    "segmentation",
    "recon",
)
METRICS_COLUMNS: Final = (
    "method",
    "R",
    "nRMSE",
    "RelErr",
    "AngErr",
    "SSIM",
    "peak_flow",
    "peak_velocity",
    "seconds",
    "R_requested",
)
# absent from files written before the requested acceleration was recorded
OPTIONAL_METRICS_COLUMNS: Final = ("R_requested",)
TRAIN_METRICS_COLUMNS: Final = ("iter", "loss", "image_l1", "velocity_relerr", "tau")

PHANTOM_PROFILES: Final = {
    "desk": {"nx": 32, "ny": 32, "nz": 16, "nt": 8, "n_coils": 5},
    "paper-geometry": {"nx": 113, "ny": 113, "nz": 25, "nt": 25, "n_coils": 5},
}
TRAIN_PROFILES: Final = {
    "desk": {"iters": 2000, "crop_x": 16, "crop_t": 7, "checkpoint_every": 100},
    "paper": {"iters": 50000, "crop_x": 16, "crop_t": 7, "checkpoint_every": 1000},
}
