import json
import math
import shutil
import logging
import pathlib
import tempfile

import pytest

from momentlite.core import Segment, ScoredSegment
from momentlite.evaluation import Dataset, PredictionSet
from momentlite.file_utils import (
    IngestionError, load_json, write_json, ingest_ground_truth, ingest_predictions, ingest_candidates,
    write_ground_truth, write_predictions, write_candidates, dataset_to_dict,
)
from momentlite.synth import SynthConfig, generate_dataset, generate_predictions, generate_candidates


@pytest.fixture
def workdir():
    path = pathlib.Path(tempfile.mkdtemp(prefix="momentlite_"))
    yield path
    shutil.rmtree(path)


def write(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def gt_doc(segment=(1.0, 4.0), duration=30.0, label="cut", version="1.0"):
    return {
        "version": version,
        "videos": [
            {"video_id": "v1", "duration_sec": duration, "annotations": [{"label": label, "segment": list(segment)}]},
        ],
    }


def test_minimal_ground_truth(workdir):
    ds = ingest_ground_truth(write(workdir / "gt.json", gt_doc()))
    assert len(ds) == 1
    assert ds["v1"].duration == 30.0
    assert ds["v1"].ground_truths == ((Segment(1, 4), "cut"),)


def test_ingest_accepts_str_paths(workdir):
    path = write(workdir / "gt.json", gt_doc())
    assert ingest_ground_truth(str(path)) == ingest_ground_truth(path)


def test_reversed_segment(workdir, caplog):
    path = write(workdir / "gt.json", gt_doc(segment=(4.0, 1.0)))
    with pytest.raises(IngestionError) as e:
        ingest_ground_truth(path)
    msg = str(e.value)
    assert "gt.json" in msg and "video_id='v1'" in msg and "annotation 0" in msg

    with caplog.at_level(logging.WARNING):
        ds = ingest_ground_truth(path, strict=False)
    assert ds["v1"].ground_truths[0][0] == Segment(1, 4)
    assert "swapped" in caplog.text


def test_out_of_range_segment(workdir, caplog):
    path = write(workdir / "gt.json", gt_doc(segment=(-1.0, 35.0)))
    with pytest.raises(IngestionError):
        ingest_ground_truth(path)
    with caplog.at_level(logging.WARNING):
        ds = ingest_ground_truth(path, strict=False)
    assert ds["v1"].ground_truths[0][0] == Segment(0, 30)
    assert "clamped" in caplog.text


@pytest.mark.parametrize("duration", [0, -5, "30", None, float("inf")])
def test_bad_duration(workdir, duration):
    with pytest.raises(IngestionError):
        ingest_ground_truth(write(workdir / "gt.json", gt_doc(duration=duration)))


def test_missing_fields(workdir):
    doc = gt_doc()
    del doc["videos"][0]["duration_sec"]
    with pytest.raises(IngestionError) as e:
        ingest_ground_truth(write(workdir / "gt.json", doc))
    assert "missing 'duration_sec'" in str(e.value)

    doc = gt_doc()
    del doc["videos"][0]["annotations"][0]["label"]
    with pytest.raises(IngestionError) as e:
        ingest_ground_truth(write(workdir / "gt.json", doc))
    assert "annotation 0" in str(e.value)


@pytest.mark.parametrize("label", [1.5, None, True, ["a"]])
def test_bad_label(workdir, label):
    with pytest.raises(IngestionError):
        ingest_ground_truth(write(workdir / "gt.json", gt_doc(label=label)))


def test_versions(workdir):
    assert len(ingest_ground_truth(write(workdir / "gt.json", gt_doc(version="1.2")))) == 1
    with pytest.raises(IngestionError):
        ingest_ground_truth(write(workdir / "gt.json", gt_doc(version="2.0")))
    doc = gt_doc()
    del doc["version"]
    with pytest.raises(IngestionError):
        ingest_ground_truth(write(workdir / "gt.json", doc))


def test_malformed_files(workdir):
    with pytest.raises(IngestionError):
        ingest_ground_truth(workdir / "absent.json")
    bad = workdir / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(IngestionError):
        ingest_ground_truth(bad)
    with pytest.raises(IngestionError):
        ingest_ground_truth(write(workdir / "list.json", [gt_doc()]))
    with pytest.raises(TypeError):
        load_json(42)


def test_duplicate_video(workdir):
    doc = gt_doc()
    doc["videos"].append(doc["videos"][0])
    with pytest.raises(IngestionError) as e:
        ingest_ground_truth(write(workdir / "gt.json", doc))
    assert "duplicate" in str(e.value)


@pytest.fixture
def dataset():
    return Dataset({"v1": (30.0, [(Segment(1, 4), "cut")]), "v2": (10.0, [])})


def pred_doc(results):
    return {"version": "1.0", "results": results}


def test_predictions(workdir, dataset):
    doc = pred_doc({"v1": [{"label": "cut", "segment": [1.0, 4.5], "score": 0.75}], "v2": []})
    preds = ingest_predictions(write(workdir / "p.json", doc), dataset)
    assert preds.get("v1") == (ScoredSegment(Segment(1, 4.5), "cut", 0.75),)
    assert preds.get("v2") == ()
    assert preds.video_ids() == ["v1", "v2"]


def test_prediction_errors(workdir, dataset):
    score = pred_doc({"v1": [{"label": "cut", "segment": [1.0, 4.5], "score": 1.5}]})
    with pytest.raises(IngestionError) as e:
        ingest_predictions(write(workdir / "p.json", score), dataset)
    assert "prediction 0" in str(e.value) and "score" in str(e.value)

    unknown = pred_doc({"v9": []})
    with pytest.raises(IngestionError) as e:
        ingest_predictions(write(workdir / "p.json", unknown), dataset)
    assert "unknown video_id" in str(e.value)

    with pytest.raises(IngestionError):
        ingest_predictions(write(workdir / "p.json", pred_doc([])), dataset)
    with pytest.raises(IngestionError):
        ingest_predictions(write(workdir / "p.json", pred_doc({"v1": {"label": "cut"}})), dataset)


def test_prediction_clamped_to_video(workdir, dataset):
    doc = pred_doc({"v2": [{"label": "cut", "segment": [8.0, 12.0], "score": 0.5}]})
    path = write(workdir / "p.json", doc)
    with pytest.raises(IngestionError):
        ingest_predictions(path, dataset)
    assert ingest_predictions(path, dataset, strict=False).get("v2")[0].segment == Segment(8, 10)


def test_round_trip(workdir):
    config = SynthConfig(num_videos=6, seed=12)
    ds, _ = generate_dataset(config)
    preds = generate_predictions(ds, config)
    write_ground_truth(workdir / "gt.json", ds)
    write_predictions(workdir / "p.json", preds)
    back = ingest_ground_truth(workdir / "gt.json")
    assert back == ds
    assert ingest_predictions(workdir / "p.json", back) == preds

    instances = generate_candidates(ds, config, max_videos=2)
    write_candidates(workdir / "c.json", instances)
    assert ingest_candidates(workdir / "c.json") == instances


def test_candidate_errors(workdir):
    config = SynthConfig(num_videos=2, num_categories=3, seed=1)
    ds, _ = generate_dataset(config)
    write_candidates(workdir / "c.json", generate_candidates(ds, config, max_videos=1))
    doc = json.loads((workdir / "c.json").read_text(encoding="utf-8"))

    short = json.loads(json.dumps(doc))
    short["instances"][0]["candidates"][0]["class_probs"] = [0.5]
    with pytest.raises(IngestionError) as e:
        ingest_candidates(write(workdir / "short.json", short))
    assert "candidate 0" in str(e.value)

    foreign = json.loads(json.dumps(doc))
    foreign["instances"][0]["ground_truths"][0]["label"] = "unknown"
    with pytest.raises(IngestionError):
        ingest_candidates(write(workdir / "foreign.json", foreign))

    empty = json.loads(json.dumps(doc))
    empty["instances"][0]["candidates"] = []
    with pytest.raises(IngestionError):
        ingest_candidates(write(workdir / "empty.json", empty))

    no_labels = json.loads(json.dumps(doc))
    no_labels["labels"] = []
    with pytest.raises(IngestionError):
        ingest_candidates(write(workdir / "nolabels.json", no_labels))

    scalar_gts = json.loads(json.dumps(doc))
    scalar_gts["instances"][0]["ground_truths"] = 5
    with pytest.raises(IngestionError) as e:
        ingest_candidates(write(workdir / "scalar_gts.json", scalar_gts))
    assert "'ground_truths' must be a list" in str(e.value)

    mapped = json.loads(json.dumps(doc))
    mapped["instances"][0]["candidates"] = {"0": mapped["instances"][0]["candidates"][0]}
    with pytest.raises(IngestionError) as e:
        ingest_candidates(write(workdir / "mapped.json", mapped))
    assert "'candidates' must be a list" in str(e.value)


def test_write_json(workdir):
    path = write_json(workdir / "out.json", {"b": 1.23456789, "a": [math.inf, 2], "c": {"x": 0.1 + 0.2}})
    text = path.read_text(encoding="utf-8")
    assert text.endswith("}\n")
    assert json.loads(text) == {"b": 1.234568, "a": [None, 2], "c": {"x": 0.3}}
    assert list(json.loads(text)) == ["b", "a", "c"]
    assert sorted(p.name for p in workdir.iterdir()) == ["out.json"]
    with pytest.raises(ValueError):
        write_json(workdir / "nan.json", {"x": [float("nan")]})
    assert not (workdir / "nan.json").exists()
    assert sorted(p.name for p in workdir.iterdir()) == ["out.json"]


def test_dataset_to_dict_layout():
    ds = Dataset({"b": (10.0, [(Segment(0, 1), 3)]), "a": (5.0, [])})
    d = dataset_to_dict(ds)
    assert list(d) == ["version", "videos"]
    assert [v["video_id"] for v in d["videos"]] == ["a", "b"]
    assert d["videos"][1] == {"video_id": "b", "duration_sec": 10.0, "annotations": [{"label": 3, "segment": [0.0, 1.0]}]}


def test_empty_prediction_set_round_trip(workdir, dataset):
    write_predictions(workdir / "p.json", PredictionSet())
    assert ingest_predictions(workdir / "p.json", dataset).num_predictions() == 0
