import json
import shutil
import pathlib
import tempfile

import pytest

from momentlite import cli, config
from momentlite.config import ConfigError
from momentlite.file_utils import IngestionError


@pytest.fixture
def workdir():
    path = pathlib.Path(tempfile.mkdtemp(prefix="momentlite_cli_"))
    yield path
    shutil.rmtree(path)


def read(path):
    return json.loads(pathlib.Path(path).read_text(encoding="utf-8"))


def synth(workdir, *extra, num_videos=8):
    gt, preds = workdir / "gt.json", workdir / "preds.json"
    argv = ["synth", "--gt-out", str(gt), "--preds-out", str(preds), "--num-videos", str(num_videos), "-q", *extra]
    assert cli.main(argv) == 0
    return gt, preds


def test_noiseless_synth_evaluates_perfectly(workdir):
    gt, preds = synth(workdir, "--noiseless")
    report = workdir / "report.json"
    assert cli.main(["eval", "--gt", str(gt), "--preds", str(preds), "--out", str(report), "-q", "--threads", "1"]) == 0
    doc = read(report)
    assert doc["average_map"] == 1.0
    assert doc["num_videos"] == 8
    assert list(doc["map_at"]) == ["0.1", "0.2", "0.3", "0.4", "0.5"]
    assert set(doc["recall_at"].values()) == {1.0}


def test_eval_prints_to_stdout(workdir, capsys):
    gt, preds = synth(workdir)
    capsys.readouterr()
    args = ["eval", "--gt", str(gt), "--preds", str(preds), "-q", "--threads", "1", "--tiou-thresholds", "0.3", "0.5"]
    assert cli.main(args) == 0
    doc = json.loads(capsys.readouterr().out)
    assert list(doc["map_at"]) == ["0.3", "0.5"]
    assert 0.0 <= doc["average_map"] <= 1.0


def test_missing_input_file(workdir):
    assert cli.main(["eval", "--gt", str(workdir / "absent.json"), "--preds", str(workdir / "p.json"), "-q"]) == 1


def test_strict_rejects_out_of_range_segments(workdir):
    gt = workdir / "gt.json"
    gt.write_text(json.dumps({
        "version": "1.0",
        "videos": [{"video_id": "v1", "duration_sec": 10.0, "annotations": [{"label": 0, "segment": [2.0, 12.0]}]}],
    }), encoding="utf-8")
    preds = workdir / "preds.json"
    preds.write_text(json.dumps({"version": "1.0", "results": {"v1": []}}), encoding="utf-8")
    args = ["eval", "--gt", str(gt), "--preds", str(preds), "--out", str(workdir / "r.json"), "-q", "--threads", "1"]
    assert cli.main(args) == 0
    assert cli.main(args + ["--strict"]) == 1


def test_config_errors(workdir):
    gt, preds = synth(workdir)
    unknown = workdir / "unknown.json"
    unknown.write_text(json.dumps({"sigmaa": 2.0}), encoding="utf-8")
    assert cli.main(["eval", "--gt", str(gt), "--preds", str(preds), "--config", str(unknown), "-q"]) == 2

    invalid = workdir / "invalid.json"
    invalid.write_text(json.dumps({"sigma": -1.0}), encoding="utf-8")
    assert cli.main(["eval", "--gt", str(gt), "--preds", str(preds), "--config", str(invalid), "-q"]) == 2

    assert cli.main(["eval", "--gt", str(gt), "--preds", str(preds), "--recall-mode", "both", "-q"]) == 2
    assert cli.main(["eval", "--gt", str(gt), "--preds", str(preds), "--tiou-thresholds", "0.5", "0.3", "-q"]) == 2
    assert cli.main(["nms", "--gt", str(gt), "--preds", str(preds), "-q"]) == 2  # --out is required
    assert cli.main(["synth", "--seed", "1", "-q"]) == 2  # no outputs
    assert cli.main(["eval", "--preds", str(preds), "-q"]) == 2


def test_argparse_type_errors():
    with pytest.raises(SystemExit) as e:
        cli.main(["nms", "--sigma", "abc"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["unknown-command"])
    assert e.value.code == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["--version"])
    assert e.value.code == 0
    assert capsys.readouterr().out.startswith("momentlite ")


def test_precedence(workdir):
    assert cli.build_config(["nms"]).nms_config().sigma == 2.0

    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"sigma": 1.5, "tiou-thresholds": [0.3, 0.5], "recall_k": [1]}), encoding="utf-8")
    config = cli.build_config(["nms", "--config", str(cfg)])
    assert config.sigma == 1.5
    assert config.tiou_thresholds == (0.3, 0.5)
    assert config.recall_k == (1,)

    config = cli.build_config(["nms", "--config", str(cfg), "--sigma", "4"])
    assert config.sigma == 4.0
    assert config.nms_config().sigma == 4.0
    assert config.tiou_thresholds == (0.3, 0.5)

    assert cli.build_config(["nms", "--preset", "baseline"]).nms_config().sigma == 0.9


def test_config_file_errors(workdir):
    with pytest.raises(ConfigError):
        cli.load_config_file(workdir / "absent.json")
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"sigma": [1.0, 2.0]}), encoding="utf-8")
    with pytest.raises(ConfigError):
        cli.load_config_file(cfg)
    cfg.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        cli.load_config_file(cfg)
    with pytest.raises(ConfigError):
        cli.RunConfig(command="eval", num_videos="ten")
    with pytest.raises(ConfigError):
        cli.RunConfig(command="train")


def test_hard_nms_is_idempotent(workdir):
    gt, preds = synth(workdir)
    first, second = workdir / "kept1.json", workdir / "kept2.json"
    base = ["nms", "--gt", str(gt), "--preset", "hard", "-q", "--threads", "1"]
    assert cli.main(base + ["--preds", str(preds), "--out", str(first)]) == 0
    assert cli.main(base + ["--preds", str(first), "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    n_in = sum(len(v) for v in read(preds)["results"].values())
    n_out = sum(len(v) for v in read(first)["results"].values())
    assert 0 < n_out < n_in


def test_outputs_do_not_depend_on_threads(workdir, monkeypatch):
    monkeypatch.setattr(config, "SINGLE_PROCESSING_LIMIT", 0)
    gt, preds = synth(workdir, num_videos=12)
    outputs = {}
    for threads in ("1", "2"):
        kept = workdir / f"kept_{threads}.json"
        report = workdir / f"report_{threads}.json"
        assert cli.main(["nms", "--gt", str(gt), "--preds", str(preds), "--out", str(kept), "-q", "--threads", threads]) == 0
        assert cli.main(["eval", "--gt", str(gt), "--preds", str(kept), "--out", str(report), "-q", "--threads", threads]) == 0
        outputs[threads] = kept.read_bytes(), report.read_bytes()
    assert outputs["1"] == outputs["2"]


def test_same_seed_same_files(workdir):
    gt, preds = synth(workdir, "--seed", "3")
    first = gt.read_bytes(), preds.read_bytes()
    synth(workdir, "--seed", "3")
    assert (gt.read_bytes(), preds.read_bytes()) == first
    synth(workdir, "--seed", "4")
    assert gt.read_bytes() != first[0]


def test_sweep(workdir, capsys):
    out = workdir / "sweep.json"
    assert cli.main(["sweep", "--num-videos", "10", "--out", str(out), "--threads", "1"]) == 0
    doc = read(out)
    assert doc["source"] == "synth(seed=0)"
    assert [row["sigma"] for row in doc["rows"]] == [0.9, 1.5, 2.0, 4.0]
    table = capsys.readouterr().out.splitlines()
    assert table[0].startswith("sigma | average mAP | mAP@0.1")
    assert len(table) == 5


def test_sweep_on_files(workdir, capsys):
    gt, preds = synth(workdir)
    capsys.readouterr()
    assert cli.main(["sweep", "--gt", str(gt), "--preds", str(preds), "--sigmas", "1", "3", "-q", "--threads", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["source"] == str(gt)
    assert [row["sigma"] for row in doc["rows"]] == [1.0, 3.0]


def test_assign_sim_on_synthetic_candidates(workdir):
    out = workdir / "assign.json"
    assert cli.main(["assign-sim", "--num-videos", "4", "--max-videos", "2", "--out", str(out), "-q"]) == 0
    doc = read(out)
    assert doc["assigner"] == "both"
    assert doc["config"]["lambda_iou"] == 3.0
    assert len(doc["instances"]) == 2
    for row in doc["instances"]:
        assert set(row) == {"instance_id", "num_candidates", "simota", "center_sampling"}
        assert row["simota"]["num_candidates"] == row["num_candidates"]
        assert len(row["simota"]["dynamic_k"]) == row["simota"]["num_ground_truths"]


def test_assign_sim_on_candidate_file(workdir, capsys):
    candidates = workdir / "candidates.json"
    assert cli.main(["synth", "--candidates-out", str(candidates), "--num-videos", "3", "--max-videos", "1", "-q"]) == 0
    args = ["assign-sim", "--candidates", str(candidates), "--assigner", "simota", "--center-prior", "soft", "-q"]
    assert cli.main(args) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["config"]["center_prior"] == "soft"
    assert [set(row) for row in doc["instances"]] == [{"instance_id", "num_candidates", "simota"}]


def test_diagnose(workdir):
    gt, preds = synth(workdir, num_videos=20)
    out = workdir / "diagnosis.json"
    assert cli.main(["diagnose", "--gt", str(gt), "--preds", str(preds), "--out", str(out), "-q"]) == 0
    doc = read(out)
    assert list(doc) == ["version", "replicates", "false_positives", "false_negatives", "sensitivity"]
    assert 0.0 <= doc["replicates"]["fraction"] <= 1.0

    assert cli.main(["diagnose", "--gt", str(gt), "--out", str(out), "-q", "--length-edges", "0", "5", "20", "inf"]) == 0
    assert list(read(out)) == ["version", "replicates"]


def test_meta_out(workdir):
    meta = workdir / "meta.json"
    assert cli.main(["synth", "--meta-out", str(meta), "--num-videos", "5", "--seed", "2", "-q"]) == 0
    doc = read(meta)
    assert doc["seed"] == 2
    assert doc["num_pairs"] == len(doc["planted_pairs"])


def test_failed_run_removes_partial_outputs(workdir, monkeypatch):
    target = workdir / "partial.json"

    def failing(config, written):
        cli._emit(str(target), {"version": "1.0"}, written)
        assert target.exists()
        raise IngestionError("broken input")

    monkeypatch.setitem(cli.HANDLERS, "eval", failing)
    assert cli.run(cli.RunConfig(command="eval", quiet=True)) == 1
    assert not target.exists()

    def misconfigured(config, written):
        cli._emit(str(target), {"version": "1.0"}, written)
        raise ConfigError("bad setting")

    monkeypatch.setitem(cli.HANDLERS, "eval", misconfigured)
    assert cli.run(cli.RunConfig(command="eval", quiet=True)) == 2
    assert not target.exists()


def test_unexpected_error_still_removes_partial_outputs(workdir, monkeypatch):
    target = workdir / "partial.json"

    def crashing(config, written):
        cli._emit(str(target), {"version": "1.0"}, written)
        raise RuntimeError("worker died")

    monkeypatch.setitem(cli.HANDLERS, "eval", crashing)
    with pytest.raises(RuntimeError):
        cli.run(cli.RunConfig(command="eval", quiet=True))
    assert not target.exists()


def test_assign_sim_rejects_malformed_ground_truths(workdir):
    candidates = workdir / "candidates.json"
    assert cli.main(["synth", "--candidates-out", str(candidates), "--num-videos", "3", "--max-videos", "1", "-q"]) == 0
    doc = json.loads(candidates.read_text(encoding="utf-8"))
    doc["instances"][0]["ground_truths"] = 5
    candidates.write_text(json.dumps(doc), encoding="utf-8")
    out = workdir / "assign.json"
    assert cli.main(["assign-sim", "--candidates", str(candidates), "--out", str(out), "-q"]) == 1
    assert not out.exists()
