"""
Training-time label assignment over pyramid candidates.

center_sampling is the static rule: a point is positive for a ground truth
when it lies close to the ground truth's center.
simota_assign is the dynamic rule: a cost matrix of classification and
localization quality picks a per-ground-truth number (dynamic k) of
lowest-cost candidates, and candidates claimed twice keep the cheaper
ground truth.

This is a reference implementation for simulation; no gradients.
"""
import math
import logging
from dataclasses import dataclass

import numpy as np

from momentlite.config import (
    DEFAULT_CENTER_RADIUS, DEFAULT_LAMBDA_IOU, DEFAULT_TOP_Q, DEFAULT_INELIGIBLE_COST, COST_EPS, ConfigError
)
from momentlite.core import PyramidPoint, Segment, as_array, tiou_matrix
from momentlite.utils import rounded

log = logging.getLogger(__name__)

BACKGROUND = -1


@dataclass(frozen=True)
class CandidatePrediction:
    point: PyramidPoint
    class_probs: tuple
    decoded: Segment

    def __post_init__(self):
        probs = tuple(float(p) for p in self.class_probs)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"class probabilities must be in [0, 1], got {probs}")
        object.__setattr__(self, "class_probs", probs)


@dataclass(frozen=True)
class AssignmentInstance:
    """ one simulation input: the candidates of a video and its ground truths. """
    instance_id: str
    labels: tuple  # vocabulary; class_probs[k] belongs to labels[k]
    ground_truths: tuple  # of (Segment, label)
    candidates: tuple  # of CandidatePrediction

    def assign(self, config=None):
        return simota_assign(self.candidates, self.ground_truths, config, vocabulary=self.labels)

    def center_sampling(self, radius=DEFAULT_CENTER_RADIUS):
        return center_sampling([c.point for c in self.candidates], self.ground_truths, radius)


@dataclass(frozen=True)
class AssignConfig:
    center_radius: float = DEFAULT_CENTER_RADIUS
    lambda_iou: float = DEFAULT_LAMBDA_IOU
    top_q: int = DEFAULT_TOP_Q
    ineligible_cost: float = DEFAULT_INELIGIBLE_COST
    eps: float = COST_EPS
    center_prior: str = "mask"  # or "soft"
    center_weight: float = 1.0  # only used by the soft prior.
    use_regression_range: bool = False

    def __post_init__(self):
        if not self.center_radius > 0:
            raise ConfigError(f"center_radius must be > 0, got {self.center_radius}")
        if not self.lambda_iou >= 0:
            raise ConfigError(f"lambda_iou must be >= 0, got {self.lambda_iou}")
        if not isinstance(self.top_q, int) or self.top_q < 1:
            raise ConfigError(f"top_q must be an integer >= 1, got {self.top_q}")
        if not self.ineligible_cost > 0:
            raise ConfigError(f"ineligible_cost must be > 0, got {self.ineligible_cost}")
        if not 0 < self.eps < 1:
            raise ConfigError(f"eps must be in (0, 1), got {self.eps}")
        if self.center_prior not in ("mask", "soft"):
            raise ConfigError(f"center_prior must be mask or soft, got {self.center_prior}")
        if not self.center_weight >= 0:
            raise ConfigError(f"center_weight must be >= 0, got {self.center_weight}")


@dataclass(frozen=True)
class AssignmentResult:
    gt_index: tuple  # per candidate: gt index or BACKGROUND
    cost: tuple  # per candidate: assignment cost, None for background or static rules
    assigned: tuple  # per gt: tuple of candidate indices
    dynamic_k: tuple  # per gt

    @property
    def num_positives(self):
        return sum(1 for g in self.gt_index if g != BACKGROUND)

    def summary(self):
        return {
            "num_candidates": len(self.gt_index),
            "num_ground_truths": len(self.assigned),
            "num_positives": self.num_positives,
            "dynamic_k": list(self.dynamic_k),
            "assigned": [list(a) for a in self.assigned],
            "uncovered": [j for j, a in enumerate(self.assigned) if not a],
            "mean_cost": rounded(
                float(np.mean([c for c in self.cost if c is not None]))
                if any(c is not None for c in self.cost) else None
            ),
        }


def _result(gt_index, cost, num_gts, dynamic_k):
    assigned = [[] for _ in range(num_gts)]
    for i, j in enumerate(gt_index):
        if j != BACKGROUND:
            assigned[j].append(i)
    return AssignmentResult(
        gt_index=tuple(int(j) for j in gt_index),
        cost=tuple(cost),
        assigned=tuple(tuple(a) for a in assigned),
        dynamic_k=tuple(int(k) for k in dynamic_k),
    )


def center_sampling(points, gts, radius=DEFAULT_CENTER_RADIUS):
    """
    point p is positive for ground truth g iff
    - |p.time - center(g)| <= radius * p.stride,
    - p.time lies inside g, and
    - max(distance to onset, distance to offset) falls in p's regression range.
    A point eligible for several ground truths takes the shortest one
    (lowest index on equal durations).
    """
    if not radius > 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    gts = list(gts)
    gt_index = []
    for p in points:
        best, best_len = BACKGROUND, math.inf
        for j, (seg, _) in enumerate(gts):
            if abs(p.time - seg.center()) > radius * p.stride:
                continue
            if not seg.contains(p.time):
                continue
            if not p.in_range(max(p.time - seg.start, seg.end - p.time)):
                continue
            if seg.duration() < best_len:
                best, best_len = j, seg.duration()
        gt_index.append(best)
    return _result(gt_index, [None] * len(gt_index), len(gts), [sum(1 for i in gt_index if i == j) for j in range(len(gts))])


def _label_indices(candidates, gts, vocabulary):
    width = len(candidates[0].class_probs)
    if vocabulary is not None:
        vocabulary = list(vocabulary)
        if width != len(vocabulary):
            raise ValueError(f"class_probs has {width} entries but the vocabulary has {len(vocabulary)}")
    for ix, c in enumerate(candidates):
        if len(c.class_probs) != width:
            raise ValueError(f"candidate {ix} has {len(c.class_probs)} class probabilities, expected {width}")
    labels = []
    for j, (_, label) in enumerate(gts):
        if vocabulary is not None:
            if label not in vocabulary:
                raise ValueError(f"ground truth {j}: label {label!r} not in vocabulary")
            labels.append(vocabulary.index(label))
        else:
            if isinstance(label, bool) or not isinstance(label, (int, np.integer)) or not 0 <= label < width:
                raise ValueError(f"ground truth {j}: label {label!r} is not an index into {width} class probabilities")
            labels.append(int(label))
    return labels


def eligibility(candidates, gts, config):
    """
    (N, M) bool array: candidate i is eligible for ground truth j iff its time
    lies inside j or within center_radius * stride of j's center (and inside
    the regression range when config.use_regression_range).
    With the soft center prior every pair is eligible.
    """
    n, m = len(candidates), len(gts)
    if config.center_prior == "soft":
        return np.ones((n, m), dtype=bool)
    times = np.array([c.point.time for c in candidates], dtype=np.float64)[:, None]
    strides = np.array([c.point.stride for c in candidates], dtype=np.float64)[:, None]
    gt_arr = as_array([seg for seg, _ in gts])
    starts, ends = gt_arr[:, 0][None, :], gt_arr[:, 1][None, :]
    centers = (starts + ends) / 2
    inside = (times >= starts) & (times <= ends)
    near = np.abs(times - centers) <= config.center_radius * strides
    eligible = inside | near
    if config.use_regression_range:
        lo = np.array([c.point.range_min for c in candidates], dtype=np.float64)[:, None]
        hi = np.array([c.point.range_max for c in candidates], dtype=np.float64)[:, None]
        reach = np.maximum(times - starts, ends - times) / strides
        eligible &= (reach >= lo) & (reach < hi)
    return eligible


def cost_matrix(candidates, gts, config, labels, ious=None, eligible=None):
    """
    c_ij = -ln(p_i[label_j]) + lambda_iou * -ln(tiou_ij) + ineligible_cost * [not eligible]
    with probabilities and tIoU clamped to [eps, 1].
    """
    probs = np.array([c.class_probs for c in candidates], dtype=np.float64)
    if ious is None:
        ious = tiou_matrix(as_array([c.decoded for c in candidates]), as_array([seg for seg, _ in gts]))
    if eligible is None:
        eligible = eligibility(candidates, gts, config)
    cls_cost = -np.log(np.clip(probs[:, labels], config.eps, 1.0))
    iou_cost = -np.log(np.clip(ious, config.eps, 1.0))
    cost = cls_cost + config.lambda_iou * iou_cost
    if config.center_prior == "soft":
        times = np.array([c.point.time for c in candidates], dtype=np.float64)[:, None]
        strides = np.array([c.point.stride for c in candidates], dtype=np.float64)[:, None]
        centers = np.array([seg.center() for seg, _ in gts], dtype=np.float64)[None, :]
        cost = cost + config.center_weight * np.abs(times - centers) / (config.center_radius * strides)
    else:
        cost = cost + config.ineligible_cost * (~eligible)
    return cost


def dynamic_k(ious, eligible, top_q):
    """
    k_j = clamp(floor(sum of the top_q largest eligible tIoUs), 1, #eligible_j);
    0 when no candidate is eligible.
    """
    n, m = ious.shape
    ks = np.zeros(m, dtype=np.int64)
    for j in range(m):
        col = ious[eligible[:, j], j]
        if col.size == 0:
            continue
        top = np.sort(col)[::-1][:top_q]
        ks[j] = min(max(int(math.floor(float(np.sum(top)))), 1), col.size)
    return ks


def select_candidates(cost, ks):
    """
    each ground truth j takes its ks[j] lowest-cost candidates (ties by
    candidate index); a candidate claimed by several ground truths keeps
    the one with minimal cost (ties by ground-truth index). There is no
    refill pass, so a ground truth may end with fewer than ks[j], or with
    none when every candidate it claimed went to a cheaper ground truth.
    Such ground truths are listed under "uncovered" in
    AssignmentResult.summary().

    Returns the per-candidate ground truth index (BACKGROUND if none).
    """
    n, m = cost.shape
    claimed = np.zeros((n, m), dtype=bool)
    for j in range(m):
        if ks[j] <= 0:
            continue
        order = np.argsort(cost[:, j], kind="stable")
        claimed[order[:ks[j]], j] = True
    gt_index = np.full(n, BACKGROUND, dtype=np.int64)
    for i in range(n):
        js = np.flatnonzero(claimed[i])
        if js.size == 0:
            continue
        gt_index[i] = js[int(np.argmin(cost[i, js]))]
    return gt_index


def simota_assign(candidates, gts, config=None, vocabulary=None):
    """
    SimOTA assignment of ground truths to candidate predictions.

    Args:
        candidates: list of CandidatePrediction (>= 1)
        gts: list of (Segment, label); labels index into class_probs unless a
            vocabulary (list of labels, one per class probability) is given.
        config: AssignConfig

    Returns:
        AssignmentResult
    """
    if config is None:
        config = AssignConfig()
    candidates = list(candidates)
    gts = list(gts)
    if not candidates:
        raise ValueError("simota_assign needs at least one candidate")
    labels = _label_indices(candidates, gts, vocabulary)
    n, m = len(candidates), len(gts)
    if m == 0:
        return _result([BACKGROUND] * n, [None] * n, 0, [])

    ious = tiou_matrix(as_array([c.decoded for c in candidates]), as_array([seg for seg, _ in gts]))
    eligible = eligibility(candidates, gts, config)
    cost = cost_matrix(candidates, gts, config, labels, ious=ious, eligible=eligible)
    ks = dynamic_k(ious, eligible, config.top_q)
    gt_index = select_candidates(cost, ks)
    costs = [None if j == BACKGROUND else float(cost[i, j]) for i, j in enumerate(gt_index)]
    result = _result(gt_index, costs, m, ks)
    log.debug(f"simota: {result.num_positives} positives for {m} ground truths over {n} candidates")
    return result
