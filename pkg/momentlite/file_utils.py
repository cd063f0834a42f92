"""
Reading and writing of the json file formats.

ground truth:  {"version", "videos": [{"video_id", "duration_sec",
                "annotations": [{"label", "segment": [start, end]}]}]}
predictions:   {"version", "results": {video_id: [{"label", "segment", "score"}]}}
candidates:    {"version", "labels": [...], "instances": [{"instance_id",
                "ground_truths": [{"label", "segment"}],
                "candidates": [{"time", "level", "stride", "range": [min, max|null],
                                "class_probs": [...], "segment": [s, e]}]}]}
"""
import os
import json
import math
import logging
import pathlib

from momentlite.config import SCHEMA_VERSION, INF
from momentlite.assign import AssignmentInstance, CandidatePrediction
from momentlite.core import Segment, ScoredSegment, PyramidPoint
from momentlite.evaluation import Dataset, PredictionSet
from momentlite.utils import label_key, rounded

log = logging.getLogger(__name__)


class IngestionError(ValueError):
    """ malformed or invalid input file. """
    pass


def _as_path(path):
    if isinstance(path, str):
        path = pathlib.Path(path)
    if not isinstance(path, pathlib.Path):
        raise TypeError(f"expected pathlib.Path or str, got {type(path)}")
    return path


def load_json(path):
    path = _as_path(path)
    if not path.exists():
        raise IngestionError(f"file not found: {path}")
    try:
        with path.open("r", encoding="utf-8") as fi:
            return json.load(fi)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise IngestionError(f"{path}: not valid json: {e}") from e


def write_json(path, payload):
    """
    writes payload as utf-8 json (indent 2, keys in insertion order, floats
    rounded to 6 decimals) to a temporary sibling and renames it into place.
    """
    path = _as_path(path)
    text = json.dumps(rounded(payload), indent=2, ensure_ascii=False, allow_nan=False) + "\n"
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        with tmp.open("w", encoding="utf-8", newline="\n") as fo:
            fo.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    log.debug(f"wrote {path}")
    return path


def _check_version(path, doc):
    if not isinstance(doc, dict):
        raise IngestionError(f"{path}: expected a json object at the top level, got {type(doc).__name__}")
    version = doc.get("version")
    if version is None:
        raise IngestionError(f"{path}: missing 'version'")
    if str(version).split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise IngestionError(f"{path}: unsupported version {version!r}, expected {SCHEMA_VERSION}")


def _number(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{what} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ValueError(f"{what} must be finite, got {value!r}")
    return float(value)


def _label(value):
    label_key(value)  # int or str only.
    return value


def _segment(value, duration, strict, where):
    """
    [start, end] within [0, duration]. Out-of-range or reversed segments are
    an error when strict; otherwise they are repaired with a warning.
    """
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValueError(f"segment must be [start, end], got {value!r}")
    start, end = _number(value[0], "segment start"), _number(value[1], "segment end")
    if start > end:
        if strict:
            raise ValueError(f"segment start > end: {value!r}")
        log.warning(f"{where}: swapped reversed segment {value!r}")
        start, end = end, start
    hi = INF if duration is None else duration
    if start < 0 or end > hi:
        if strict:
            raise ValueError(f"segment {value!r} outside [0, {hi}]")
        log.warning(f"{where}: clamped segment {value!r} to [0, {hi}]")
        start, end = min(max(start, 0.0), hi), min(max(end, 0.0), hi)
    return Segment(start, end)


def _field(record, key, where):
    if not isinstance(record, dict):
        raise IngestionError(f"{where}: expected an object, got {type(record).__name__}")
    if key not in record:
        raise IngestionError(f"{where}: missing '{key}'")
    return record[key]


def ingest_ground_truth(path, strict=True):
    """
    Reads a ground truth file into a Dataset.

    Raises IngestionError naming the file, video_id and record index of the
    first invalid record.
    """
    path = _as_path(path)
    doc = load_json(path)
    _check_version(path, doc)
    videos = _field(doc, "videos", str(path))
    if not isinstance(videos, list):
        raise IngestionError(f"{path}: 'videos' must be a list")

    dataset = Dataset()
    for vix, video in enumerate(videos):
        where = f"{path}: videos[{vix}]"
        video_id = _field(video, "video_id", where)
        if not isinstance(video_id, str) or not video_id:
            raise IngestionError(f"{where}: video_id must be a non-empty string, got {video_id!r}")
        where = f"{path}: video_id={video_id!r}"
        if video_id in dataset:
            raise IngestionError(f"{where}: duplicate video_id")
        duration = _field(video, "duration_sec", where)
        try:
            duration = _number(duration, "duration_sec")
        except ValueError as e:
            raise IngestionError(f"{where}: {e}") from e
        if not duration > 0:
            raise IngestionError(f"{where}: duration_sec must be > 0, got {duration}")
        annotations = _field(video, "annotations", where)
        if not isinstance(annotations, list):
            raise IngestionError(f"{where}: 'annotations' must be a list")
        gts = []
        for ix, record in enumerate(annotations):
            at = f"{where} annotation {ix}"
            try:
                label = _label(_field(record, "label", at))
                seg = _segment(_field(record, "segment", at), duration, strict, at)
            except (ValueError, TypeError) as e:
                if isinstance(e, IngestionError):
                    raise
                raise IngestionError(f"{at}: {e}") from e
            gts.append((seg, label))
        dataset.add_video(video_id, duration, gts)
    log.info(f"read {len(dataset)} videos with {dataset.num_ground_truths()} ground truths from {path}")
    return dataset


def ingest_predictions(path, dataset, strict=True):
    """
    Reads a prediction file. Every video_id must exist in dataset; scores
    must lie in [0, 1]. Videos without predictions may be absent or empty.
    """
    path = _as_path(path)
    doc = load_json(path)
    _check_version(path, doc)
    results = _field(doc, "results", str(path))
    if not isinstance(results, dict):
        raise IngestionError(f"{path}: 'results' must be an object of video_id: predictions")

    preds = PredictionSet()
    for video_id, records in results.items():
        where = f"{path}: video_id={video_id!r}"
        if video_id not in dataset:
            raise IngestionError(f"{where}: unknown video_id")
        if not isinstance(records, list):
            raise IngestionError(f"{where}: predictions must be a list")
        duration = dataset[video_id].duration
        out = []
        for ix, record in enumerate(records):
            at = f"{where} prediction {ix}"
            try:
                label = _label(_field(record, "label", at))
                seg = _segment(_field(record, "segment", at), duration, strict, at)
                score = _number(_field(record, "score", at), "score")
                if not 0 <= score <= 1:
                    raise ValueError(f"score must be in [0, 1], got {score}")
            except (ValueError, TypeError) as e:
                if isinstance(e, IngestionError):
                    raise
                raise IngestionError(f"{at}: {e}") from e
            out.append(ScoredSegment(seg, label, score))
        preds.add(video_id, out)
    log.info(f"read {preds.num_predictions()} predictions for {len(preds)} videos from {path}")
    return preds


def ingest_candidates(path, strict=True):
    """ Reads an assignment simulation file into a list of AssignmentInstance. """
    path = _as_path(path)
    doc = load_json(path)
    _check_version(path, doc)
    labels = _field(doc, "labels", str(path))
    if not isinstance(labels, list) or not labels:
        raise IngestionError(f"{path}: 'labels' must be a non-empty list")
    try:
        labels = tuple(_label(v) for v in labels)
    except TypeError as e:
        raise IngestionError(f"{path}: labels: {e}") from e
    if len(set(labels)) != len(labels):
        raise IngestionError(f"{path}: duplicate labels")
    instances = _field(doc, "instances", str(path))
    if not isinstance(instances, list):
        raise IngestionError(f"{path}: 'instances' must be a list")

    out = []
    for iix, instance in enumerate(instances):
        instance_id = _field(instance, "instance_id", f"{path}: instances[{iix}]")
        where = f"{path}: instance_id={instance_id!r}"
        records = _field(instance, "ground_truths", where)
        if not isinstance(records, list):
            raise IngestionError(f"{where}: 'ground_truths' must be a list")
        gts = []
        for ix, record in enumerate(records):
            at = f"{where} ground truth {ix}"
            try:
                label = _label(_field(record, "label", at))
                if label not in labels:
                    raise ValueError(f"label {label!r} not in labels")
                gts.append((_segment(_field(record, "segment", at), None, strict, at), label))
            except (ValueError, TypeError) as e:
                if isinstance(e, IngestionError):
                    raise
                raise IngestionError(f"{at}: {e}") from e
        records = _field(instance, "candidates", where)
        if not isinstance(records, list):
            raise IngestionError(f"{where}: 'candidates' must be a list")
        candidates = []
        for ix, record in enumerate(records):
            at = f"{where} candidate {ix}"
            try:
                lo, hi = _field(record, "range", at)
                level = _field(record, "level", at)
                if isinstance(level, bool) or not isinstance(level, int):
                    raise ValueError(f"level must be an integer, got {level!r}")
                point = PyramidPoint(
                    _number(_field(record, "time", at), "time"), level,
                    _number(_field(record, "stride", at), "stride"),
                    _number(lo, "range min"), INF if hi is None else _number(hi, "range max"),
                )
                probs = _field(record, "class_probs", at)
                if not isinstance(probs, list) or len(probs) != len(labels):
                    raise ValueError(f"class_probs must hold {len(labels)} numbers")
                probs = tuple(_number(p, "class probability") for p in probs)
                decoded = _segment(_field(record, "segment", at), None, strict, at)
                candidates.append(CandidatePrediction(point, probs, decoded))
            except (ValueError, TypeError) as e:
                if isinstance(e, IngestionError):
                    raise
                raise IngestionError(f"{at}: {e}") from e
        if not candidates:
            raise IngestionError(f"{where}: no candidates")
        out.append(AssignmentInstance(str(instance_id), labels, tuple(gts), tuple(candidates)))
    log.info(f"read {len(out)} assignment instances from {path}")
    return out


def _segment_list(seg):
    return [seg.start, seg.end]


def dataset_to_dict(dataset):
    return {
        "version": SCHEMA_VERSION,
        "videos": [
            {
                "video_id": video_id,
                "duration_sec": dataset[video_id].duration,
                "annotations": [
                    {"label": label, "segment": _segment_list(seg)}
                    for seg, label in dataset[video_id].ground_truths
                ],
            }
            for video_id in dataset.video_ids()
        ],
    }


def predictions_to_dict(preds):
    return {
        "version": SCHEMA_VERSION,
        "results": {
            video_id: [
                {"label": p.label, "segment": _segment_list(p.segment), "score": p.score}
                for p in preds.get(video_id)
            ]
            for video_id in preds.video_ids()
        },
    }


def candidates_to_dict(instances):
    labels = instances[0].labels if instances else []
    if any(inst.labels != labels for inst in instances):
        raise ValueError("all instances must share one label vocabulary")
    return {
        "version": SCHEMA_VERSION,
        "labels": list(labels),
        "instances": [
            {
                "instance_id": inst.instance_id,
                "ground_truths": [{"label": label, "segment": _segment_list(seg)} for seg, label in inst.ground_truths],
                "candidates": [
                    {
                        "time": c.point.time,
                        "level": c.point.level,
                        "stride": c.point.stride,
                        "range": [c.point.range_min, None if math.isinf(c.point.range_max) else c.point.range_max],
                        "class_probs": list(c.class_probs),
                        "segment": _segment_list(c.decoded),
                    }
                    for c in inst.candidates
                ],
            }
            for inst in instances
        ],
    }


def write_ground_truth(path, dataset):
    return write_json(path, dataset_to_dict(dataset))


def write_predictions(path, preds):
    return write_json(path, predictions_to_dict(preds))


def write_candidates(path, instances):
    return write_json(path, candidates_to_dict(instances))
