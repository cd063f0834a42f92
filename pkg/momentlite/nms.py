"""
Hard NMS and SoftNMS (linear and gaussian) over scored segments.

The gaussian penalty exp(-iou**2 / sigma) flattens as sigma grows, which
spares near-replicate moments that a peaky penalty would bury.
"""
import math
import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm as _tqdm

from momentlite.config import (
    DEFAULT_SIGMA, BASELINE_SIGMA, DEFAULT_IOU_THRESHOLD, DEFAULT_SCORE_FLOOR, DEFAULT_MAX_KEPT, ConfigError
)
from momentlite.core import tiou_vector
from momentlite.evaluation import PredictionSet
from momentlite.utils import label_key, parallel_map

log = logging.getLogger(__name__)

HARD = "hard"
SOFT_LINEAR = "soft_linear"
SOFT_GAUSSIAN = "soft_gaussian"
METHODS = (HARD, SOFT_LINEAR, SOFT_GAUSSIAN)


@dataclass(frozen=True)
class NmsConfig:
    method: str = SOFT_GAUSSIAN
    sigma: float = DEFAULT_SIGMA
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    score_floor: float = DEFAULT_SCORE_FLOOR
    max_kept: int = DEFAULT_MAX_KEPT  # None means unlimited.
    class_agnostic: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if not 0 <= self.iou_threshold <= 1:
            raise ConfigError(f"iou_threshold must be in [0, 1], got {self.iou_threshold}")
        if not 0 <= self.score_floor <= 1:
            raise ConfigError(f"score_floor must be in [0, 1], got {self.score_floor}")
        if self.max_kept is not None and (not isinstance(self.max_kept, int) or self.max_kept < 1):
            raise ConfigError(f"max_kept must be a positive integer or None, got {self.max_kept}")

    @classmethod
    def preset(cls, name, **overrides):
        """
        "default": gaussian SoftNMS, sigma 2.0
        "baseline": gaussian SoftNMS, sigma 0.9
        "hard": hard NMS at tIoU 0.5
        """
        presets = {
            "default": dict(method=SOFT_GAUSSIAN, sigma=DEFAULT_SIGMA),
            "baseline": dict(method=SOFT_GAUSSIAN, sigma=BASELINE_SIGMA),
            "hard": dict(method=HARD, iou_threshold=DEFAULT_IOU_THRESHOLD),
        }
        if name not in presets:
            raise ConfigError(f"unknown preset {name}, expected one of {sorted(presets)}")
        kwargs = presets[name]
        kwargs.update(overrides)
        return cls(**kwargs)


def gaussian_penalty(iou, sigma):
    """ exp(-iou**2 / sigma) """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if not 0 <= iou <= 1:
        raise ValueError(f"iou must be in [0, 1], got {iou}")
    return math.exp(-iou * iou / sigma)


def _suppress_group(starts, ends, scores, config):
    """
    greedy (soft) suppression of one group. The arrays must already be in
    tie-break order (start, duration, input index) so np.argmax, which
    returns the first maximum, resolves equal scores deterministically.

    Returns (positions, final scores) in pop order.
    """
    alive = np.arange(len(scores))
    s, e, sc = starts.copy(), ends.copy(), scores.copy()
    limit = math.inf if config.max_kept is None else config.max_kept
    kept, kept_scores = [], []
    while alive.size and len(kept) < limit:
        j = int(np.argmax(sc))
        kept.append(int(alive[j]))
        kept_scores.append(float(sc[j]))
        iou = tiou_vector((s[j], e[j]), s, e)
        if config.method == HARD:
            survive = iou <= config.iou_threshold
        else:
            if config.method == SOFT_LINEAR:
                weight = np.where(iou > config.iou_threshold, 1.0 - iou, 1.0)
            else:
                weight = np.exp(-(iou * iou) / config.sigma)
            sc = sc * weight
            survive = sc >= config.score_floor
        survive[j] = False
        alive, s, e, sc = alive[survive], s[survive], e[survive], sc[survive]
    return kept, kept_scores


def suppress(candidates, config=None):
    """
    Iterative greedy (Soft)NMS.

    Repeatedly moves the highest-scored remaining candidate to the output
    and rescores every remaining candidate of its group by the penalty of
    their tIoU: hard zeroes it above iou_threshold, soft_linear multiplies by
    (1 - iou) above iou_threshold, soft_gaussian by exp(-iou**2 / sigma).
    Rescoring is cumulative. Candidates below score_floor are dropped.

    Groups are labels unless config.class_agnostic. Score ties pop the
    earlier start, then the shorter duration, then the lower input index.
    With class_agnostic, two identical segments of equal score therefore
    keep the earlier input, and with it that input's label.

    Returns:
        list of ScoredSegment sorted by final score (same tie order),
        truncated to config.max_kept.
    """
    if config is None:
        config = NmsConfig()
    if not isinstance(config, NmsConfig):
        raise TypeError(f"expected NmsConfig, got {type(config)}")
    candidates = list(candidates)
    if not candidates:
        return []

    groups = defaultdict(list)
    for ix, c in enumerate(candidates):
        if c.score < config.score_floor:
            continue
        groups[None if config.class_agnostic else c.label].append(ix)

    survivors = []  # (score, start, duration, input index)
    for key in sorted(groups, key=lambda k: (0, 0, "") if k is None else label_key(k)):
        members = groups[key]
        members.sort(key=lambda ix: (candidates[ix].start, candidates[ix].segment.duration(), ix))
        starts = np.array([candidates[ix].start for ix in members], dtype=np.float64)
        ends = np.array([candidates[ix].end for ix in members], dtype=np.float64)
        scores = np.array([candidates[ix].score for ix in members], dtype=np.float64)
        positions, final = _suppress_group(starts, ends, scores, config)
        for pos, score in zip(positions, final):
            ix = members[pos]
            c = candidates[ix]
            survivors.append((score, c.start, c.segment.duration(), ix))

    survivors.sort(key=lambda t: (-t[0], t[1], t[2], t[3]))
    if config.max_kept is not None:
        survivors = survivors[:config.max_kept]
    return [candidates[ix].with_score(min(score, candidates[ix].score)) for score, _, _, ix in survivors]


def _suppress_video(video_id, candidates, config):
    """ PARALLEL TASK FUNCTION """
    return video_id, suppress(candidates, config)


def suppress_predictions(preds, config=None, cpu_count=1, tqdm=_tqdm):
    """
    runs suppress on every video of a PredictionSet.
    Videos are independent; results are collected in video-id order.
    """
    if config is None:
        config = NmsConfig()
    jobs = [(vid, (preds.get(vid), config)) for vid in preds.video_ids()]
    if cpu_count > 1:
        results = parallel_map(_suppress_video, jobs, cpu_count=cpu_count, work_size=preds.num_predictions())
    else:
        results = dict(_suppress_video(vid, *args) for vid, args in tqdm(jobs, desc="nms", disable=len(jobs) < 100))
    out = PredictionSet()
    for vid in preds.video_ids():
        out.add(vid, results[vid])
    log.info(f"nms ({config.method}, sigma={config.sigma}) kept {out.num_predictions()} of {preds.num_predictions()} predictions")
    return out
