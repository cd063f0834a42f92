"""
Detection metrics: per-category AP at each tIoU threshold, average mAP and
Recall@kx, following the ActivityNet-style protocol the challenge uses.
"""
import math
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm as _tqdm

from momentlite.config import DEFAULT_TIOU_THRESHOLDS, DEFAULT_RECALL_KS
from momentlite.core import Segment, ScoredSegment, as_array, tiou_matrix
from momentlite.utils import label_key, sorted_labels, rounded, parallel_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VideoAnnotation:
    duration: float
    ground_truths: tuple  # of (Segment, label)

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")
        gts = tuple((seg, label) for seg, label in self.ground_truths)
        for ix, (seg, label) in enumerate(gts):
            if not isinstance(seg, Segment):
                raise TypeError(f"ground truth {ix}: expected Segment, got {type(seg)}")
            label_key(label)
            if seg.end > self.duration:
                raise ValueError(f"ground truth {ix}: {seg.as_tuple()} exceeds duration {self.duration}")
        object.__setattr__(self, "duration", float(self.duration))
        object.__setattr__(self, "ground_truths", gts)


class Dataset(object):
    """
    video_id -> VideoAnnotation(duration, ground truths).

    Example:
    >>> ds = Dataset()
    >>> ds.add_video("v1", 30.0, [(Segment(1.0, 4.0), "cut")])
    """
    def __init__(self, videos=None):
        self.videos = {}
        if videos is None:
            return
        if not isinstance(videos, dict):
            raise TypeError(f"expected dict of video_id: (duration, ground_truths), got {type(videos)}")
        for video_id, value in videos.items():
            if isinstance(value, VideoAnnotation):
                self.add_video(video_id, value.duration, value.ground_truths)
            else:
                duration, gts = value
                self.add_video(video_id, duration, gts)

    def add_video(self, video_id, duration, ground_truths):
        if not isinstance(video_id, str):
            raise TypeError(f"expected video_id as str, got {type(video_id)}")
        if video_id in self.videos:
            raise ValueError(f"duplicate video_id: {video_id}")
        self.videos[video_id] = VideoAnnotation(duration, tuple(ground_truths))

    def video_ids(self):
        return sorted(self.videos)

    def labels(self):
        return sorted_labels(label for v in self.videos.values() for _, label in v.ground_truths)

    def num_ground_truths(self):
        return sum(len(v.ground_truths) for v in self.videos.values())

    def __len__(self):
        return len(self.videos)

    def __getitem__(self, video_id):
        return self.videos[video_id]

    def __contains__(self, video_id):
        return video_id in self.videos

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return False
        return self.videos == other.videos

    def __repr__(self):
        return f"{self.__class__.__name__}({len(self)} videos, {self.num_ground_truths()} ground truths)"


class PredictionSet(object):
    """ video_id -> tuple of ScoredSegment """
    def __init__(self, results=None, dataset=None):
        self.results = {}
        for video_id, preds in (results or {}).items():
            self.add(video_id, preds)
        if dataset is not None:
            self.check(dataset)

    def add(self, video_id, predictions):
        if not isinstance(video_id, str):
            raise TypeError(f"expected video_id as str, got {type(video_id)}")
        predictions = tuple(predictions)
        for p in predictions:
            if not isinstance(p, ScoredSegment):
                raise TypeError(f"expected ScoredSegment, got {type(p)}")
        self.results[video_id] = self.results.get(video_id, ()) + predictions

    def check(self, dataset):
        extra = sorted(set(self.results) - set(dataset.videos))
        if extra:
            raise ValueError(f"predictions for unknown video_id(s): {extra[:10]}")

    def video_ids(self):
        return sorted(self.results)

    def get(self, video_id):
        return self.results.get(video_id, ())

    def num_predictions(self):
        return sum(len(v) for v in self.results.values())

    def __len__(self):
        return len(self.results)

    def __eq__(self, other):
        if not isinstance(other, PredictionSet):
            return False
        return self.results == other.results

    def __repr__(self):
        return f"{self.__class__.__name__}({len(self)} videos, {self.num_predictions()} predictions)"


@dataclass
class EvalReport:
    ap: dict = field(default_factory=dict)  # (category, threshold) -> AP
    map_at: dict = field(default_factory=dict)  # threshold -> mAP
    average_map: float = 0.0
    recall_at: dict = field(default_factory=dict)  # (k, threshold) -> recall
    recall_mode: str = "micro"

    def to_dict(self):
        thresholds = sorted(self.map_at)
        categories = sorted_labels(c for c, _ in self.ap)
        return {
            "average_map": rounded(self.average_map),
            "map_at": {f"{t:g}": rounded(self.map_at[t]) for t in thresholds},
            "recall_mode": self.recall_mode,
            "recall_at": {
                f"R@{k:g}x,tIoU={t:g}": rounded(self.recall_at[(k, t)])
                for k, t in sorted(self.recall_at)
            },
            "ap": {
                str(c): {f"{t:g}": rounded(self.ap[(c, t)]) for t in thresholds}
                for c in categories
            },
        }


def score_order(scores):
    """ indices by descending score; ties keep input order. """
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def greedy_match(pred_arr, gt_arr, threshold, iou=None):
    """
    greedy one-to-one matching of score-sorted predictions against one
    category's ground truths. Returns the matched gt index per prediction
    (-1 for false positives).

    Each prediction takes the highest-tIoU unmatched GT with tIoU >= threshold;
    ties go to the earlier GT start, then the lower GT index.
    """
    n, m = len(pred_arr), len(gt_arr)
    matched = np.full(n, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return matched
    if iou is None:
        iou = tiou_matrix(pred_arr, gt_arr)
    gt_order = np.lexsort((np.arange(m), gt_arr[:, 0]))  # by start, then index.
    iou = iou[:, gt_order]
    free = np.ones(m, dtype=bool)
    for i in range(n):
        row = np.where(free & (iou[i] >= threshold), iou[i], -1.0)
        j = int(np.argmax(row))
        if row[j] < 0:
            continue
        free[j] = False
        matched[i] = gt_order[j]
    return matched


def match_indices(preds, gts, threshold):
    """
    Args:
        preds: list of ScoredSegment
        gts: list of (Segment, label)
        threshold: tIoU threshold in (0, 1]

    Returns:
        (order, matched): order is the score order of preds (descending,
        ties keep input order); matched[i] is the index into gts of the GT
        matched by preds[order[i]] or -1.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    order = score_order([p.score for p in preds])
    matched = np.full(len(preds), -1, dtype=np.int64)
    by_label = defaultdict(list)
    for ix, (_, label) in enumerate(gts):
        by_label[label].append(ix)
    pred_groups = defaultdict(list)
    for rank, ix in enumerate(order):
        pred_groups[preds[ix].label].append(rank)
    for label, ranks in pred_groups.items():
        gt_ix = by_label.get(label)
        if not gt_ix:
            continue
        pred_arr = as_array([preds[order[r]] for r in ranks])
        gt_arr = as_array([gts[g][0] for g in gt_ix])
        local = greedy_match(pred_arr, gt_arr, threshold)
        for r, g in zip(ranks, local):
            if g >= 0:
                matched[r] = gt_ix[g]
    return order, matched


def match_predictions(preds, gts, threshold):
    """
    TP/FP flags of preds in score order (see match_indices).
    """
    _, matched = match_indices(preds, gts, threshold)
    return [bool(m >= 0) for m in matched]


def average_precision(flags, num_gt):
    """
    all-point interpolated AP: the area under the running-max precision
    envelope over recall.

    >>> average_precision([True, False, True], 2)
    0.8333333333333333
    """
    if not isinstance(num_gt, (int, np.integer)) or num_gt < 0:
        raise ValueError(f"expected num_gt as a non-negative integer, got {num_gt}")
    flags = np.asarray(flags, dtype=bool)
    if num_gt == 0:
        return 1.0 if flags.size == 0 else 0.0
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags, dtype=np.float64)
    fp = np.cumsum(~flags, dtype=np.float64)
    return interpolated_ap(tp / (tp + fp), tp / num_gt)


def interpolated_ap(prec, rec):
    """ area under the running-max precision envelope; rec ascending. """
    mprec = np.hstack([[0.0], prec, [0.0]])
    mrec = np.hstack([[0.0], rec, [1.0]])
    mprec = np.maximum.accumulate(mprec[::-1])[::-1]
    idx = np.where(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mprec[idx]))


def group_by_video_and_label(dataset, preds):
    """
    returns {(video_id, label): (gt segments, predictions)} for every pair
    that has ground truth or predictions; ground truths keep dataset order,
    predictions keep input order.
    """
    groups = defaultdict(lambda: ([], []))
    for video_id in dataset.video_ids():
        for seg, label in dataset[video_id].ground_truths:
            groups[(video_id, label)][0].append(seg)
    for video_id in preds.video_ids():
        for p in preds.get(video_id):
            groups[(video_id, p.label)][1].append(p)
    return dict(groups)


def _evaluate_category(category, items, thresholds, recall_ks):
    """
    PARALLEL TASK FUNCTION
    items: list of (video_id, gt (M,2) array, pred (N,2) array, pred scores)
    in video-id order.

    returns (category, (ap per threshold, matched counts per (k, threshold), num_gt))
    """
    num_gt = sum(len(gt) for _, gt, _, _ in items)
    scores, flags = [], {t: [] for t in thresholds}
    hits = {(k, t): 0 for k in recall_ks for t in thresholds}
    for _, gt_arr, pred_arr, pred_scores in items:
        order = score_order(pred_scores)
        pred_arr = pred_arr[order]
        scores.append(pred_scores[order])
        iou = tiou_matrix(pred_arr, gt_arr) if len(gt_arr) and len(pred_arr) else None
        for t in thresholds:
            matched = greedy_match(pred_arr, gt_arr, t, iou=iou)
            flags[t].append(matched >= 0)
            for k in recall_ks:
                top = int(math.ceil(k * len(gt_arr)))
                hits[(k, t)] += int(np.count_nonzero(matched[:top] >= 0))

    all_scores = np.concatenate(scores) if scores else np.zeros(0)
    order = score_order(all_scores)
    ap = {}
    for t in thresholds:
        f = np.concatenate(flags[t]) if flags[t] else np.zeros(0, dtype=bool)
        ap[t] = average_precision(f[order], num_gt)
    return category, (ap, hits, num_gt)


def check_thresholds(thresholds):
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("thresholds must not be empty")
    if any(not 0 < t <= 1 for t in thresholds):
        raise ValueError(f"thresholds must be in (0, 1], got {thresholds}")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError(f"thresholds must be strictly increasing, got {thresholds}")
    return thresholds


def evaluate(dataset, preds, thresholds=DEFAULT_TIOU_THRESHOLDS, recall_ks=DEFAULT_RECALL_KS,
             recall_mode="micro", cpu_count=1, tqdm=_tqdm):
    """
    Computes the EvalReport of preds against dataset.

    AP is computed per category, pooling predictions across videos; mAP is
    the unweighted mean over the categories present in the ground truth
    and average mAP the mean over thresholds. Predictions with labels
    absent from the ground truth never match anything.

    Recall@kx keeps the top ceil(k*M) predictions per (video, category) with
    M ground truths there. recall_mode "micro" divides all matched GT by all
    GT; "macro" averages per-category recall.
    """
    thresholds = check_thresholds(thresholds)
    recall_ks = tuple(recall_ks)
    if any(isinstance(k, bool) or not k > 0 for k in recall_ks):
        raise ValueError(f"recall ks must be positive, got {recall_ks}")
    if recall_mode not in ("micro", "macro"):
        raise ValueError(f"recall_mode must be micro or macro, got {recall_mode}")
    preds.check(dataset)

    categories = dataset.labels()
    known = set(categories)
    per_category = defaultdict(list)
    for (video_id, label), (gts, ps) in sorted(group_by_video_and_label(dataset, preds).items(),
                                              key=lambda kv: (kv[0][0], label_key(kv[0][1]))):
        if label not in known:
            continue  # unknown labels never match; they belong to no category's AP.
        pred_scores = np.array([p.score for p in ps], dtype=np.float64)
        per_category[label].append((video_id, as_array(gts), as_array(ps), pred_scores))

    jobs = [(c, (per_category[c], thresholds, recall_ks)) for c in categories]
    work = preds.num_predictions() * len(thresholds)
    if cpu_count > 1:
        results = parallel_map(_evaluate_category, jobs, cpu_count=cpu_count, work_size=work)
    else:
        results = dict(_evaluate_category(c, *args) for c, args in tqdm(jobs, desc="evaluate", disable=len(jobs) < 100))

    report = EvalReport(recall_mode=recall_mode)
    total_gt = dataset.num_ground_truths()
    for t in thresholds:
        for c in categories:
            report.ap[(c, t)] = results[c][0][t]
        report.map_at[t] = float(np.mean([report.ap[(c, t)] for c in categories])) if categories else 0.0
        for k in recall_ks:
            if recall_mode == "micro":
                hit = sum(results[c][1][(k, t)] for c in categories)
                report.recall_at[(k, t)] = hit / total_gt if total_gt else 0.0
            else:
                r = [results[c][1][(k, t)] / results[c][2] for c in categories]
                report.recall_at[(k, t)] = float(np.mean(r)) if r else 0.0
    report.average_map = float(np.mean([report.map_at[t] for t in thresholds]))
    return report
