"""
Command line interface.

    momentlite synth --gt-out gt.json --preds-out preds.json --seed 0
    momentlite nms --gt gt.json --preds preds.json --out kept.json --sigma 2.0
    momentlite eval --gt gt.json --preds kept.json --out report.json
    momentlite sweep --gt gt.json --preds preds.json --sigmas 0.9 1.5 2.0 4.0
    momentlite diagnose --gt gt.json --preds kept.json --out diagnosis.json
    momentlite assign-sim --candidates candidates.json --out assignment.json

Settings come from (lowest to highest precedence) the defaults of RunConfig,
a flat json file given by --config and the command line flags.

Exit codes: 0 success, 1 input error, 2 config error.
"""
import sys
import json
import logging
import argparse
import pathlib
from dataclasses import dataclass, field, fields

from tqdm import tqdm as _tqdm

from momentlite.config import (
    DEFAULT_TIOU_THRESHOLDS, DEFAULT_RECALL_KS, REPLICATE_THRESHOLD, TIOU_STRONG, TIOU_WEAK, DEPTH_MULTIPLIER,
    DEFAULT_NUM_LEVELS, DEFAULT_BASE_STRIDE, DEFAULT_CENTER_RADIUS, DEFAULT_LAMBDA_IOU, DEFAULT_TOP_Q,
    SCHEMA_VERSION, ConfigError,
)
from momentlite.version import __version__
from momentlite.assign import AssignConfig
from momentlite.diagnose import (
    Binning, near_replicates, classify_false_positives, fn_breakdown, sensitivity, default_binnings
)
from momentlite.evaluation import evaluate, check_thresholds
from momentlite.file_utils import (
    IngestionError, ingest_ground_truth, ingest_predictions, ingest_candidates,
    write_json, dataset_to_dict, predictions_to_dict, candidates_to_dict,
)
from momentlite.nms import NmsConfig, suppress_predictions
from momentlite.synth import (
    SynthConfig, DEFAULT_SIGMAS, generate_dataset, generate_predictions, generate_candidates, sigma_sweep
)
from momentlite.utils import rounded, silent, worker_count

log = logging.getLogger(__name__)

COMMANDS = ("nms", "eval", "assign-sim", "diagnose", "synth", "sweep")
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


def _opt(default, kind, help=""):
    return field(default=default, metadata={"kind": kind, "help": help})


def _to_str(value, name):
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string, got {value!r}")
    return value


def _to_float(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def _to_int(value, name):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return value


def _to_bool(value, name):
    if not isinstance(value, bool):
        raise ConfigError(f"{name} must be true or false, got {value!r}")
    return value


def _to_floats(value, name):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{name} must be a list of numbers, got {value!r}")
    return tuple(_to_float(v, name) for v in value)


def _to_ints(value, name):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{name} must be a list of integers, got {value!r}")
    return tuple(_to_int(v, name) for v in value)


KINDS = {
    "str": (_to_str, str, {}),
    "float": (_to_float, float, {}),
    "int": (_to_int, int, {}),
    "bool": (_to_bool, None, {"action": "store_true"}),
    "floats": (_to_floats, float, {"nargs": "+"}),
    "ints": (_to_ints, int, {"nargs": "+"}),
}


@dataclass
class RunConfig:
    command: str = "eval"
    # files
    gt: str = _opt(None, "str", "ground truth file")
    preds: str = _opt(None, "str", "prediction file")
    candidates: str = _opt(None, "str", "assignment candidate file")
    out: str = _opt(None, "str", "output file (stdout when absent, except for nms)")
    gt_out: str = _opt(None, "str", "synth: ground truth output")
    preds_out: str = _opt(None, "str", "synth: prediction output")
    candidates_out: str = _opt(None, "str", "synth: assignment candidate output")
    meta_out: str = _opt(None, "str", "synth: planted replicate metadata output")
    strict: bool = _opt(False, "bool", "reject out-of-range segments instead of clamping them")
    # nms; unset fields come from the preset.
    preset: str = _opt("default", "str", "nms preset: default, baseline or hard")
    method: str = _opt(None, "str", "hard, soft_linear or soft_gaussian")
    sigma: float = _opt(None, "float", "gaussian penalty sigma")
    iou_threshold: float = _opt(None, "float", "hard / linear nms threshold")
    score_floor: float = _opt(None, "float", "drop candidates scored below this")
    max_kept: int = _opt(None, "int", "keep at most this many predictions per video")
    class_agnostic: bool = _opt(False, "bool", "suppress across labels")
    # evaluation
    tiou_thresholds: tuple = _opt(DEFAULT_TIOU_THRESHOLDS, "floats", "tIoU thresholds, strictly increasing")
    recall_k: tuple = _opt(DEFAULT_RECALL_KS, "ints", "k of Recall@kx")
    recall_mode: str = _opt("micro", "str", "micro or macro recall")
    # diagnosis
    replicate_threshold: float = _opt(REPLICATE_THRESHOLD, "float", "near-replicate tIoU")
    per_category: bool = _opt(False, "bool", "near-replicates within one label only")
    tiou_strong: float = _opt(TIOU_STRONG, "float", "false positive analysis: strong tIoU")
    tiou_weak: float = _opt(TIOU_WEAK, "float", "false positive analysis: weak tIoU")
    depth_multiplier: int = _opt(DEPTH_MULTIPLIER, "int", "analyze the top depth x G predictions")
    diagnose_threshold: float = _opt(TIOU_STRONG, "float", "tIoU of the false negative and sensitivity analyses")
    length_edges: tuple = _opt(None, "floats", "fixed length bin edges in seconds (quintiles when absent)")
    normalization: float = _opt(None, "float", "normalized mAP constant (mean GT per category when absent)")
    # assignment
    assigner: str = _opt("both", "str", "simota, center or both")
    center_radius: float = _opt(DEFAULT_CENTER_RADIUS, "float", "in strides")
    lambda_iou: float = _opt(DEFAULT_LAMBDA_IOU, "float", "weight of the tIoU cost")
    top_q: int = _opt(DEFAULT_TOP_Q, "int", "candidates summed for the dynamic k")
    center_prior: str = _opt("mask", "str", "mask or soft")
    use_regression_range: bool = _opt(False, "bool", "restrict simota eligibility to the regression range")
    num_levels: int = _opt(DEFAULT_NUM_LEVELS, "int", "pyramid levels of synthetic candidates")
    base_stride: float = _opt(DEFAULT_BASE_STRIDE, "float", "seconds per step at level 0")
    max_videos: int = _opt(5, "int", "videos turned into synthetic assignment instances")
    # synthesis
    num_videos: int = _opt(100, "int")
    num_categories: int = _opt(10, "int")
    replicate_rate: float = _opt(0.15, "float", "expected fraction of moments in planted pairs")
    duplicate_rate: float = _opt(0.5, "float")
    background_rate: float = _opt(1.0, "float")
    label_flip_rate: float = _opt(0.05, "float")
    boundary_jitter: float = _opt(0.1, "float", "seconds")
    miss_length_scale: float = _opt(0.0, "float", "seconds; > 0 makes short moments harder to detect")
    noiseless: bool = _opt(False, "bool", "perfect synthetic predictor")
    sigmas: tuple = _opt(DEFAULT_SIGMAS, "floats", "sweep: gaussian sigmas")
    seed: int = _opt(0, "int")
    # runtime
    threads: int = _opt(None, "int", "worker processes (all cores when absent)")
    verbose: bool = _opt(False, "bool", "debug logging")
    quiet: bool = _opt(False, "bool", "warnings only, no progress bars")

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}, expected one of {COMMANDS}")
        for f in fields(self):
            if "kind" not in f.metadata:
                continue
            value = getattr(self, f.name)
            if value is None:
                continue
            convert, _, _ = KINDS[f.metadata["kind"]]
            setattr(self, f.name, convert(value, f.name))
        # fail early on every invalid setting.
        self.nms_config()
        self.assign_config()
        self.synth_config()
        try:
            self.tiou_thresholds = check_thresholds(self.tiou_thresholds)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if any(k < 1 for k in self.recall_k):
            raise ConfigError(f"recall_k must be >= 1, got {self.recall_k}")
        if self.recall_mode not in ("micro", "macro"):
            raise ConfigError(f"recall_mode must be micro or macro, got {self.recall_mode}")
        if self.assigner not in ("simota", "center", "both"):
            raise ConfigError(f"assigner must be simota, center or both, got {self.assigner}")
        if not 0 < self.replicate_threshold <= 1:
            raise ConfigError(f"replicate_threshold must be in (0, 1], got {self.replicate_threshold}")
        if not 0 < self.tiou_weak < self.tiou_strong <= 1:
            raise ConfigError(f"expected 0 < tiou_weak < tiou_strong <= 1, got {self.tiou_weak}, {self.tiou_strong}")
        if not 0 < self.diagnose_threshold <= 1:
            raise ConfigError(f"diagnose_threshold must be in (0, 1], got {self.diagnose_threshold}")
        if self.depth_multiplier < 1 or self.max_videos < 1 or self.num_levels < 1:
            raise ConfigError("depth_multiplier, max_videos and num_levels must be >= 1")
        if not self.base_stride > 0:
            raise ConfigError(f"base_stride must be > 0, got {self.base_stride}")
        if self.normalization is not None and not self.normalization > 0:
            raise ConfigError(f"normalization must be > 0, got {self.normalization}")
        if self.length_edges is not None:
            self.binnings()
        if not self.sigmas or any(not s > 0 for s in self.sigmas):
            raise ConfigError(f"sigmas must be positive, got {self.sigmas}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")

    def nms_config(self):
        overrides = {
            k: getattr(self, k)
            for k in ("method", "sigma", "iou_threshold", "score_floor", "max_kept")
            if getattr(self, k) is not None
        }
        return NmsConfig.preset(self.preset, class_agnostic=self.class_agnostic, **overrides)

    def assign_config(self):
        return AssignConfig(
            center_radius=self.center_radius, lambda_iou=self.lambda_iou, top_q=self.top_q,
            center_prior=self.center_prior, use_regression_range=self.use_regression_range,
        )

    def synth_config(self):
        config = SynthConfig(
            num_videos=self.num_videos, num_categories=self.num_categories, replicate_rate=self.replicate_rate,
            duplicate_rate=self.duplicate_rate, background_rate=self.background_rate,
            label_flip_rate=self.label_flip_rate, boundary_jitter=self.boundary_jitter,
            miss_length_scale=self.miss_length_scale, seed=self.seed,
        )
        return config.noiseless() if self.noiseless else config

    def binnings(self, dataset=None):
        """ None means the quantile defaults of diagnose. """
        if self.length_edges is None:
            return None if dataset is None else default_binnings(dataset)
        try:
            length = Binning.fixed("length", self.length_edges)
        except ValueError as e:
            raise ConfigError(f"length_edges: {e}") from e
        if dataset is None:
            return [length]
        return [length] + [b for b in default_binnings(dataset) if b.characteristic != "length"]

    def cpu_count(self):
        return worker_count(self.threads)

    def progress(self):
        return silent if self.quiet else _tqdm

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            flags = ", ".join("--" + n.replace("_", "-") for n in missing)
            raise ConfigError(f"{self.command} needs {flags}")


def option_fields():
    return [f for f in fields(RunConfig) if "kind" in f.metadata]


def load_config_file(path):
    """
    reads a flat json object of settings. Keys are flag names with "-" or
    "_"; unknown keys raise ConfigError.
    """
    path = pathlib.Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"{path}: not valid json: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a flat json object")
    kinds = {f.name: f.metadata["kind"] for f in option_fields()}
    values = {}
    for key, value in doc.items():
        name = key.replace("-", "_")
        if name not in kinds:
            raise ConfigError(f"{path}: unknown key {key!r}")
        if isinstance(value, list) and kinds[name] not in ("floats", "ints"):
            raise ConfigError(f"{path}: {key} must be a single value, got {value!r}")
        values[name] = value
    return values


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat json file of settings")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS, help="warnings only")
    for f in option_fields():
        if f.name in ("verbose", "quiet"):
            continue
        _, type_, extra = KINDS[f.metadata["kind"]]
        kwargs = dict(extra, dest=f.name, default=argparse.SUPPRESS, help=f.metadata["help"] or None)
        if type_ is not None:
            kwargs["type"] = type_
        common.add_argument("--" + f.name.replace("_", "-"), **kwargs)

    parser = argparse.ArgumentParser(prog="momentlite", description="temporal moment localization post-processing")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("nms", parents=[common], help="suppress a prediction file")
    sub.add_parser("eval", parents=[common], help="average mAP and Recall@kx")
    sub.add_parser("assign-sim", parents=[common], help="simulate label assignment")
    sub.add_parser("diagnose", parents=[common], help="near-replicates, false positives and negatives")
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset and predictions")
    sub.add_parser("sweep", parents=[common], help="average mAP across SoftNMS sigmas")
    return parser


def build_config(argv=None):
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    values = {}
    config_path = args.pop("config", None)
    if config_path is not None:
        values.update(load_config_file(config_path))
    values.update(args)
    return RunConfig(command=command, **values)


# ------------------------------------------------------------------ commands

def _emit(path, payload, written):
    if path is None:
        print(json.dumps(rounded(payload), indent=2, ensure_ascii=False))
        return
    write_json(path, payload)
    written.append(pathlib.Path(path))


def _load(config, need_preds=True):
    config.require("gt", *(("preds",) if need_preds else ()))
    dataset = ingest_ground_truth(config.gt, strict=config.strict)
    preds = ingest_predictions(config.preds, dataset, strict=config.strict) if config.preds else None
    return dataset, preds


def run_nms(config, written):
    config.require("out")
    dataset, preds = _load(config)
    kept = suppress_predictions(preds, config.nms_config(), cpu_count=config.cpu_count(), tqdm=config.progress())
    _emit(config.out, predictions_to_dict(kept), written)


def run_eval(config, written):
    dataset, preds = _load(config)
    report = evaluate(
        dataset, preds, thresholds=config.tiou_thresholds, recall_ks=config.recall_k,
        recall_mode=config.recall_mode, cpu_count=config.cpu_count(), tqdm=config.progress(),
    )
    payload = {
        "version": SCHEMA_VERSION,
        "num_videos": len(dataset),
        "num_ground_truths": dataset.num_ground_truths(),
        "num_predictions": preds.num_predictions(),
        **report.to_dict(),
    }
    _emit(config.out, payload, written)


def run_assign_sim(config, written):
    if config.candidates is not None:
        instances = ingest_candidates(config.candidates, strict=config.strict)
    else:
        dataset, _ = generate_dataset(config.synth_config())
        instances = generate_candidates(dataset, config.synth_config(), config.num_levels, config.base_stride, config.max_videos)
    assign_config = config.assign_config()
    rows = []
    for instance in config.progress()(instances, desc="assign", disable=len(instances) < 10):
        row = {"instance_id": instance.instance_id, "num_candidates": len(instance.candidates)}
        if config.assigner in ("simota", "both"):
            row["simota"] = instance.assign(assign_config).summary()
        if config.assigner in ("center", "both"):
            row["center_sampling"] = instance.center_sampling(assign_config.center_radius).summary()
        rows.append(row)
    payload = {
        "version": SCHEMA_VERSION,
        "assigner": config.assigner,
        "config": {
            "center_radius": assign_config.center_radius, "lambda_iou": assign_config.lambda_iou,
            "top_q": assign_config.top_q, "center_prior": assign_config.center_prior,
            "use_regression_range": assign_config.use_regression_range,
        },
        "instances": rows,
    }
    _emit(config.out, payload, written)


def run_diagnose(config, written):
    dataset, preds = _load(config, need_preds=False)
    payload = {
        "version": SCHEMA_VERSION,
        "replicates": near_replicates(dataset, config.replicate_threshold, config.per_category).to_dict(),
    }
    if preds is not None and dataset.num_ground_truths():
        binnings = config.binnings(dataset)
        payload["false_positives"] = classify_false_positives(
            dataset, preds, config.tiou_strong, config.tiou_weak, config.depth_multiplier, config.tiou_thresholds
        ).to_dict()
        payload["false_negatives"] = fn_breakdown(dataset, preds, binnings, config.diagnose_threshold).to_dict()
        payload["sensitivity"] = sensitivity(
            dataset, preds, binnings, config.diagnose_threshold, config.normalization
        ).to_dict()
    _emit(config.out, payload, written)


def run_synth(config, written):
    if all(getattr(config, n) is None for n in ("gt_out", "preds_out", "candidates_out", "meta_out")):
        raise ConfigError("synth needs at least one of --gt-out, --preds-out, --candidates-out, --meta-out")
    synth_config = config.synth_config()
    dataset, metadata = generate_dataset(synth_config)
    if config.gt_out is not None:
        _emit(config.gt_out, dataset_to_dict(dataset), written)
    if config.preds_out is not None:
        _emit(config.preds_out, predictions_to_dict(generate_predictions(dataset, synth_config)), written)
    if config.candidates_out is not None:
        instances = generate_candidates(dataset, synth_config, config.num_levels, config.base_stride, config.max_videos)
        _emit(config.candidates_out, candidates_to_dict(instances), written)
    if config.meta_out is not None:
        _emit(config.meta_out, {"version": SCHEMA_VERSION, **metadata.to_dict()}, written)


def sweep_table(rows):
    thresholds = sorted(rows[0].map_at) if rows else []
    header = ["sigma", "average mAP"] + [f"mAP@{t:g}" for t in thresholds]
    lines = [" | ".join(header)]
    for row in rows:
        cells = [f"{row.sigma:g}", f"{100 * row.average_map:.2f}"] + [f"{100 * row.map_at[t]:.2f}" for t in thresholds]
        lines.append(" | ".join(cells))
    return "\n".join(lines)


def run_sweep(config, written):
    if config.gt is not None:
        dataset, preds = _load(config)
        source = str(config.gt)
    else:
        synth_config = config.synth_config()
        dataset, _ = generate_dataset(synth_config)
        preds = generate_predictions(dataset, synth_config)
        source = f"synth(seed={config.seed})"
    rows = sigma_sweep(
        dataset, preds, config.sigmas, nms_config=config.nms_config(),
        evaluate_kwargs=dict(thresholds=config.tiou_thresholds, recall_ks=config.recall_k, recall_mode=config.recall_mode),
        cpu_count=config.cpu_count(), tqdm=config.progress(),
    )
    payload = {"version": SCHEMA_VERSION, "source": source, "rows": [row.to_dict() for row in rows]}
    if config.out is not None:
        _emit(config.out, payload, written)
        if not config.quiet:
            print(sweep_table(rows))
    else:
        _emit(None, payload, written)


HANDLERS = {
    "nms": run_nms,
    "eval": run_eval,
    "assign-sim": run_assign_sim,
    "diagnose": run_diagnose,
    "synth": run_synth,
    "sweep": run_sweep,
}


def _remove_written(written):
    for path in written:
        if path.exists():
            path.unlink()
            log.info(f"removed partial output {path}")


def run(config):
    """
    executes config.command. Returns the exit status; files written before
    a failure are removed. Unexpected exceptions are re-raised after the
    cleanup.
    """
    written = []
    try:
        HANDLERS[config.command](config, written)
        return 0
    except IngestionError as e:
        log.error(str(e))
        status = 1
    except ConfigError as e:
        log.error(str(e))
        status = 2
    except Exception:
        _remove_written(written)
        raise
    _remove_written(written)
    return status


def configure_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(format=LOG_FORMAT, level=level)
    logging.getLogger("momentlite").setLevel(level)


def main(argv=None):
    try:
        config = build_config(argv)
    except ConfigError as e:
        configure_logging()
        log.error(str(e))
        return 2
    configure_logging(config.verbose, config.quiet)
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
