from .config import ConfigError
from .core import Segment, ScoredSegment, PyramidPoint, RegressionOutput, tiou, generate_pyramid, decode, encode
from .nms import NmsConfig, suppress, suppress_predictions
from .assign import AssignConfig, AssignmentInstance, CandidatePrediction, center_sampling, simota_assign
from .evaluation import Dataset, PredictionSet, EvalReport, match_predictions, average_precision, evaluate
from .diagnose import near_replicates, classify_false_positives, fn_breakdown, sensitivity
from .synth import SynthConfig, generate_dataset, generate_predictions, generate_candidates, sigma_sweep
from .file_utils import IngestionError, ingest_ground_truth, ingest_predictions, ingest_candidates
from .version import __version__
