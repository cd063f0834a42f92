import math


# Defaults used by every module.
# SINGLE_PROCESSING_LIMIT and FLOAT_DECIMALS are read at call time, so
# >>> from momentlite import config
# >>> config.SINGLE_PROCESSING_LIMIT = 0
# takes effect for every later call. The DEFAULT_* values are bound into the
# config dataclasses at import; pass overrides to those instead.

DEFAULT_SIGMA = 2.0  # SoftNMS gaussian sigma of the winning setting.
BASELINE_SIGMA = 0.9  # sigma used by the prior baseline.
DEFAULT_IOU_THRESHOLD = 0.5  # hard / linear NMS.
DEFAULT_SCORE_FLOOR = 0.001
DEFAULT_MAX_KEPT = 2000  # per video.

DEFAULT_TIOU_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)
DEFAULT_RECALL_KS = (1, 5)

DEFAULT_NUM_LEVELS = 5
DEFAULT_BASE_STRIDE = 1.0  # seconds

# SimOTA constants.
DEFAULT_CENTER_RADIUS = 1.5
DEFAULT_LAMBDA_IOU = 3.0
DEFAULT_TOP_Q = 10
DEFAULT_INELIGIBLE_COST = 1e5
COST_EPS = 1e-8

# diagnosis
REPLICATE_THRESHOLD = 0.9
TIOU_STRONG = 0.5
TIOU_WEAK = 0.1
DEPTH_MULTIPLIER = 10

SINGLE_PROCESSING_LIMIT = 200_000
# when the number of scored segments in a job exceeds this value,
# work is handed to a mplite.TaskManager.

FLOAT_DECIMALS = 6  # every float written to disk is rounded to this.
SCHEMA_VERSION = "1.0"

INF = math.inf


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration values (exit code 2)."""
