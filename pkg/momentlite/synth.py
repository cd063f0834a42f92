"""
Seeded synthetic datasets and predictions.

Every generator draws from numpy's PCG64 bit generator seeded with
(seed, stream), so a config reproduces its output bit for bit on any
platform. Times are rounded to milliseconds and scores to 6 decimals, which
makes the generated data survive a round trip through the file formats.
"""
import math
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from tqdm import tqdm as _tqdm

from momentlite.config import REPLICATE_THRESHOLD, DEFAULT_NUM_LEVELS, DEFAULT_BASE_STRIDE, ConfigError
from momentlite.assign import CandidatePrediction, AssignmentInstance
from momentlite.core import Segment, ScoredSegment, RegressionOutput, tiou, generate_pyramid, decode
from momentlite.evaluation import Dataset, PredictionSet, evaluate
from momentlite.nms import NmsConfig, SOFT_GAUSSIAN, suppress_predictions
from momentlite.utils import rounded, silent

log = logging.getLogger(__name__)

DATASET_STREAM = 0
PREDICTION_STREAM = 1
CANDIDATE_STREAM = 2

TIME_DECIMALS = 3
SCORE_DECIMALS = 6
REPLICATE_MARGIN = 0.02  # moments that are not planted twins stay this far below the replicate threshold.
MAX_ATTEMPTS = 1000
DEFAULT_SIGMAS = (0.9, 1.5, 2.0, 4.0)


def _rng(seed, stream):
    return np.random.Generator(np.random.PCG64([int(seed), stream]))


def _pair(value, name, cast=float):
    try:
        lo, hi = value
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a (min, max) pair, got {value!r}")
    lo, hi = cast(lo), cast(hi)
    if lo > hi:
        raise ConfigError(f"{name}: min > max in {value!r}")
    return lo, hi


@dataclass(frozen=True)
class SynthConfig:
    num_videos: int = 100
    num_categories: int = 10
    moments_per_video: tuple = (4, 12)  # distinct moments; planted twins come on top.
    duration_range: tuple = (120.0, 480.0)
    moment_length_range: tuple = (4.0, 40.0)
    replicate_rate: float = 0.15  # expected fraction of moments that belong to a planted pair.
    replicate_tiou_range: tuple = (0.91, 0.98)
    replicate_same_label: bool = True
    boundary_jitter: float = 0.1  # std of boundary noise in seconds.
    duplicate_rate: float = 0.5
    background_rate: float = 1.0  # background false positives per ground truth.
    background_score_range: tuple = (0.0, 0.4)
    label_flip_rate: float = 0.05
    miss_rate: float = 0.0
    miss_length_scale: float = 0.0  # > 0: misses with probability exp(-length / scale).
    score_base: float = 0.8
    score_slope: float = 0.5
    score_noise: float = 0.15
    seed: int = 0

    def __post_init__(self):
        for name in ("num_videos", "num_categories", "seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{name} must be an integer, got {v!r}")
        if self.num_videos < 1 or self.num_categories < 1:
            raise ConfigError("num_videos and num_categories must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

        moments = _pair(self.moments_per_video, "moments_per_video", int)
        if moments[0] < 0:
            raise ConfigError(f"moments_per_video must be >= 0, got {moments}")
        durations = _pair(self.duration_range, "duration_range")
        lengths = _pair(self.moment_length_range, "moment_length_range")
        if not durations[0] > 0:
            raise ConfigError(f"durations must be > 0, got {durations}")
        if not lengths[0] > 0:
            raise ConfigError(f"moment lengths must be > 0, got {lengths}")
        if lengths[0] > durations[0]:
            raise ConfigError(f"moments of {lengths[0]} s cannot fit videos of {durations[0]} s")
        twins = _pair(self.replicate_tiou_range, "replicate_tiou_range")
        if not (REPLICATE_THRESHOLD <= twins[0] and twins[1] < 1):
            raise ConfigError(f"replicate_tiou_range must lie in [{REPLICATE_THRESHOLD}, 1), got {twins}")
        background = _pair(self.background_score_range, "background_score_range")
        if not (0 <= background[0] and background[1] <= 1):
            raise ConfigError(f"background_score_range must lie in [0, 1], got {background}")
        object.__setattr__(self, "moments_per_video", moments)
        object.__setattr__(self, "duration_range", durations)
        object.__setattr__(self, "moment_length_range", lengths)
        object.__setattr__(self, "replicate_tiou_range", twins)
        object.__setattr__(self, "background_score_range", background)

        for name in ("replicate_rate", "duplicate_rate", "background_rate", "label_flip_rate", "miss_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        for name in ("boundary_jitter", "miss_length_scale", "score_slope", "score_noise"):
            v = getattr(self, name)
            if not v >= 0:
                raise ConfigError(f"{name} must be >= 0, got {v}")
        if not 0 <= self.score_base <= 1:
            raise ConfigError(f"score_base must be in [0, 1], got {self.score_base}")

    def noiseless(self):
        """ the same dataset with a perfect predictor. """
        return replace(
            self, boundary_jitter=0.0, duplicate_rate=0.0, background_rate=0.0,
            label_flip_rate=0.0, miss_rate=0.0, miss_length_scale=0.0, score_noise=0.0,
        )


@dataclass(frozen=True)
class SynthMetadata:
    planted_pairs: tuple  # of (video_id, i, j) ground truth indices
    num_moments: int
    seed: int

    @property
    def planted_fraction(self):
        return 2 * len(self.planted_pairs) / self.num_moments if self.num_moments else 0.0

    def to_dict(self):
        return {
            "seed": self.seed,
            "num_moments": self.num_moments,
            "num_pairs": len(self.planted_pairs),
            "planted_fraction": rounded(self.planted_fraction),
            "planted_pairs": [list(p) for p in self.planted_pairs],
        }


def _sample_moment(rng, duration, others, config):
    lo, hi = config.moment_length_range
    hi = min(hi, duration)
    limit = REPLICATE_THRESHOLD - REPLICATE_MARGIN
    for _ in range(MAX_ATTEMPTS):
        length = float(rng.uniform(lo, hi))
        start = round(float(rng.uniform(0.0, duration - length)), TIME_DECIMALS)
        end = min(round(start + length, TIME_DECIMALS), duration)
        seg = Segment(start, end)
        if all(tiou(seg, o) < limit for o in others):
            return seg
    raise ConfigError(
        f"could not place {len(others) + 1} moments in a video of {duration} s after {MAX_ATTEMPTS} attempts"
    )


def _sample_twin(rng, seg, others, config):
    """ a segment inside seg with tIoU in replicate_tiou_range, or None. """
    limit = REPLICATE_THRESHOLD - REPLICATE_MARGIN
    for _ in range(100):
        target = float(rng.uniform(*config.replicate_tiou_range))
        gap = seg.duration() * (1.0 - target)
        w = float(rng.uniform())
        start = round(seg.start + w * gap, TIME_DECIMALS)
        end = round(seg.end - (1.0 - w) * gap, TIME_DECIMALS)
        if end < start:
            continue
        twin = Segment(start, end)
        if tiou(twin, seg) < REPLICATE_THRESHOLD:
            continue
        if all(tiou(twin, o) < limit for o in others):
            return twin
    return None


def video_ids(n):
    width = max(5, len(str(n - 1)))
    return [f"video_{i:0{width}d}" for i in range(n)]


def generate_dataset(config=None):
    """
    Returns (Dataset, SynthMetadata).

    Each video draws a duration and a number of distinct moments, which are
    resampled until no two overlap at the replicate threshold. Each moment
    then gains a planted twin (tIoU in replicate_tiou_range) with
    probability rho / (2 - rho), so that on average a fraction rho of all
    moments belongs to a pair.
    """
    if config is None:
        config = SynthConfig()
    rng = _rng(config.seed, DATASET_STREAM)
    rho = config.replicate_rate
    p_pair = rho / (2.0 - rho)

    dataset = Dataset()
    pairs = []
    for video_id in video_ids(config.num_videos):
        duration = round(float(rng.uniform(*config.duration_range)), TIME_DECIMALS)
        duration = max(duration, config.moment_length_range[0])
        n = int(rng.integers(config.moments_per_video[0], config.moments_per_video[1] + 1))
        segments, labels = [], []
        for _ in range(n):
            seg = _sample_moment(rng, duration, segments, config)
            label = int(rng.integers(config.num_categories))
            segments.append(seg)
            labels.append(label)
            if p_pair > 0 and rng.random() < p_pair:
                twin = _sample_twin(rng, seg, segments[:-1], config)
                if twin is None:
                    log.debug(f"{video_id}: no room for a twin of {seg.as_tuple()}")
                    continue
                twin_label = label if config.replicate_same_label else int(rng.integers(config.num_categories))
                segments.append(twin)
                labels.append(twin_label)
                pairs.append((video_id, len(segments) - 2, len(segments) - 1))
        dataset.add_video(video_id, duration, list(zip(segments, labels)))

    metadata = SynthMetadata(tuple(pairs), dataset.num_ground_truths(), config.seed)
    log.info(
        f"synthesized {len(dataset)} videos with {metadata.num_moments} moments, "
        f"{len(pairs)} planted replicate pairs ({metadata.planted_fraction:.2%})"
    )
    return dataset, metadata


def miss_probability(length, config):
    p = config.miss_rate
    if config.miss_length_scale > 0:
        p = p + (1.0 - p) * math.exp(-length / config.miss_length_scale)
    return p


def _jittered(rng, seg, duration, config):
    """ returns (segment, score) of a noisy copy of seg. """
    ds, de = rng.normal(0.0, config.boundary_jitter, size=2) if config.boundary_jitter > 0 else (0.0, 0.0)
    start = min(max(seg.start + float(ds), 0.0), duration)
    end = min(max(seg.end + float(de), 0.0), duration)
    start, end = round(min(start, end), TIME_DECIMALS), round(max(start, end), TIME_DECIMALS)
    length = seg.duration()
    penalty = config.score_slope * (abs(ds) + abs(de)) / length if length > 0 else 0.0
    noise = float(rng.normal(0.0, config.score_noise)) if config.score_noise > 0 else 0.0
    score = min(max(config.score_base - penalty + noise, 0.0), 1.0)
    return Segment(start, end), round(score, SCORE_DECIMALS)


def generate_predictions(dataset, config=None):
    """
    A noisy oracle predictor. For each ground truth, in dataset order:

    - skip it with the miss probability,
    - emit a copy with gaussian boundary jitter and
      score = clamp(score_base - score_slope * jitter / length + N(0, score_noise)),
      whose label flips to another category with label_flip_rate,
    - emit a second copy with duplicate_rate,
    - emit a uniformly placed background segment with a random label and a
      score from background_score_range with background_rate.
    """
    if config is None:
        config = SynthConfig()
    rng = _rng(config.seed, PREDICTION_STREAM)
    vocabulary = dataset.labels() or list(range(config.num_categories))

    preds = PredictionSet()
    for video_id in dataset.video_ids():
        video = dataset[video_id]
        out = []
        for seg, label in video.ground_truths:
            if rng.random() < miss_probability(seg.duration(), config):
                continue
            main, score = _jittered(rng, seg, video.duration, config)
            main_label = label
            if len(vocabulary) > 1 and rng.random() < config.label_flip_rate:
                others = [v for v in vocabulary if v != label]
                main_label = others[int(rng.integers(len(others)))]
            out.append(ScoredSegment(main, main_label, score))
            if rng.random() < config.duplicate_rate:
                dup, dup_score = _jittered(rng, seg, video.duration, config)
                out.append(ScoredSegment(dup, label, dup_score))
            if rng.random() < config.background_rate:
                lo, hi = config.moment_length_range
                length = float(rng.uniform(lo, min(hi, video.duration)))
                start = round(float(rng.uniform(0.0, video.duration - length)), TIME_DECIMALS)
                end = min(round(start + length, TIME_DECIMALS), video.duration)
                bg_label = vocabulary[int(rng.integers(len(vocabulary)))]
                bg_score = round(float(rng.uniform(*config.background_score_range)), SCORE_DECIMALS)
                out.append(ScoredSegment(Segment(start, end), bg_label, bg_score))
        preds.add(video_id, out)
    log.info(f"synthesized {preds.num_predictions()} predictions for {len(dataset)} videos")
    return preds


def generate_candidates(dataset, config=None, num_levels=DEFAULT_NUM_LEVELS, base_stride=DEFAULT_BASE_STRIDE,
                        max_videos=5):
    """
    Builds assignment instances (see momentlite.assign.AssignmentInstance)
    from the first max_videos videos: every point of the video's pyramid
    becomes a candidate. Points inside a ground truth get a probability
    peak on its label that fades away from its center, and a noisy
    regression towards its boundaries; all other points get low
    probabilities and random regressions within their range.
    """
    if config is None:
        config = SynthConfig()
    if not isinstance(max_videos, int) or max_videos < 1:
        raise ValueError(f"expected max_videos as a positive integer, got {max_videos}")
    rng = _rng(config.seed, CANDIDATE_STREAM)
    vocabulary = dataset.labels() or list(range(config.num_categories))
    width = len(vocabulary)

    instances = []
    for video_id in dataset.video_ids()[:max_videos]:
        video = dataset[video_id]
        steps = max(1, int(math.ceil(video.duration / base_stride)))
        levels = min(num_levels, int(math.floor(math.log2(steps))) + 1)
        candidates = []
        for point in generate_pyramid(steps, levels, base_stride):
            probs = rng.uniform(0.0, 0.15, size=width)
            inside = [(seg.duration(), j) for j, (seg, _) in enumerate(video.ground_truths) if seg.contains(point.time)]
            if inside:
                _, j = min(inside)
                seg, label = video.ground_truths[j]
                half = max(seg.duration() / 2, 1e-9)
                peak = 0.9 - 0.5 * abs(point.time - seg.center()) / half + float(rng.normal(0.0, 0.05))
                probs[vocabulary.index(label)] = min(max(peak, 0.0), 1.0)
                spread = np.exp(rng.normal(0.0, 0.15, size=2))
                reg = RegressionOutput(
                    (point.time - seg.start) / point.stride * float(spread[0]),
                    (seg.end - point.time) / point.stride * float(spread[1]),
                )
            else:
                hi = point.range_max if math.isfinite(point.range_max) else point.range_min + 8.0
                d = rng.uniform(max(point.range_min, 0.5), max(hi, 1.0), size=2)
                reg = RegressionOutput(float(d[0]), float(d[1]))
            decoded = decode(point, reg, video.duration)
            decoded = Segment(round(decoded.start, SCORE_DECIMALS), round(decoded.end, SCORE_DECIMALS))
            candidates.append(CandidatePrediction(point, tuple(round(float(p), SCORE_DECIMALS) for p in probs), decoded))
        instances.append(AssignmentInstance(video_id, tuple(vocabulary), video.ground_truths, tuple(candidates)))
    return instances


@dataclass(frozen=True)
class SweepRow:
    sigma: float
    average_map: float
    map_at: dict = field(default_factory=dict)
    recall_at: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "sigma": rounded(self.sigma),
            "average_map": rounded(self.average_map),
            "map_at": {f"{t:g}": rounded(v) for t, v in sorted(self.map_at.items())},
            "recall_at": {f"R@{k:g}x,tIoU={t:g}": rounded(v) for (k, t), v in sorted(self.recall_at.items())},
        }


def sigma_sweep(dataset, preds, sigmas=DEFAULT_SIGMAS, nms_config=None, evaluate_kwargs=None, cpu_count=1, tqdm=_tqdm):
    """
    runs gaussian SoftNMS + evaluate for every sigma.

    Args:
        nms_config: NmsConfig whose other fields (score_floor, max_kept, ...)
            every row shares; its method is forced to soft_gaussian.
        evaluate_kwargs: thresholds, recall_ks, recall_mode for evaluate.

    Returns:
        list of SweepRow in the order of sigmas.
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise ValueError("sigmas must not be empty")
    base = nms_config or NmsConfig()
    evaluate_kwargs = dict(evaluate_kwargs or {})
    rows = []
    for sigma in tqdm(sigmas, desc="sigma sweep", disable=len(sigmas) < 2):
        config = replace(base, method=SOFT_GAUSSIAN, sigma=sigma)
        kept = suppress_predictions(preds, config, cpu_count=cpu_count, tqdm=silent)
        report = evaluate(dataset, kept, cpu_count=cpu_count, tqdm=silent, **evaluate_kwargs)
        rows.append(SweepRow(sigma, report.average_map, dict(report.map_at), dict(report.recall_at)))
        log.info(f"sigma={sigma:g}: average mAP {report.average_map:.4f}")
    return rows
