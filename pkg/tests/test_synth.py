import json
import math
from dataclasses import replace

import pytest

from momentlite.config import ConfigError
from momentlite.assign import BACKGROUND
from momentlite.diagnose import near_replicates
from momentlite.evaluation import evaluate
from momentlite.file_utils import dataset_to_dict, predictions_to_dict
from momentlite.synth import (
    SynthConfig, SynthMetadata, video_ids, generate_dataset, generate_predictions, generate_candidates,
    miss_probability, sigma_sweep,
)


def test_video_ids():
    assert video_ids(3) == ["video_00000", "video_00001", "video_00002"]
    assert video_ids(123456)[-1] == "video_123455"


def test_same_seed_same_data():
    config = SynthConfig(num_videos=20, seed=7)
    ds1, meta1 = generate_dataset(config)
    ds2, meta2 = generate_dataset(config)
    assert ds1 == ds2
    assert meta1 == meta2
    assert json.dumps(dataset_to_dict(ds1)) == json.dumps(dataset_to_dict(ds2))
    p1, p2 = generate_predictions(ds1, config), generate_predictions(ds2, config)
    assert json.dumps(predictions_to_dict(p1)) == json.dumps(predictions_to_dict(p2))

    other, _ = generate_dataset(replace(config, seed=8))
    assert other != ds1


def test_dataset_shape():
    config = SynthConfig(num_videos=30, num_categories=4, replicate_rate=0.0, seed=2)
    ds, meta = generate_dataset(config)
    assert len(ds) == 30
    assert meta.planted_pairs == ()
    assert set(ds.labels()) <= {0, 1, 2, 3}
    for vid in ds.video_ids():
        video = ds[vid]
        assert 120.0 <= video.duration <= 480.0
        assert 4 <= len(video.ground_truths) <= 12
        for seg, _ in video.ground_truths:
            assert 0.0 <= seg.start <= seg.end <= video.duration


def test_no_replicates_without_planting():
    ds, meta = generate_dataset(SynthConfig(num_videos=50, replicate_rate=0.0, seed=4))
    assert near_replicates(ds).fraction == 0.0
    assert meta.planted_fraction == 0.0


def test_planted_replicates_are_recovered():
    config = SynthConfig(num_videos=140, replicate_rate=0.15, seed=0)
    ds, meta = generate_dataset(config)
    assert meta.num_moments == ds.num_ground_truths() >= 1000
    report = near_replicates(ds)
    assert report.fraction == meta.planted_fraction
    assert [(vid, i, j) for vid, i, j, _ in report.pairs] == list(meta.planted_pairs)
    assert abs(meta.planted_fraction - 0.15) < 0.06
    for _, _, _, t in report.pairs:
        assert 0.9 <= t < 1.0


def test_metadata_to_dict():
    meta = SynthMetadata((("video_00000", 0, 1),), 4, 11)
    assert meta.planted_fraction == 0.5
    assert meta.to_dict() == {
        "seed": 11, "num_moments": 4, "num_pairs": 1, "planted_fraction": 0.5,
        "planted_pairs": [["video_00000", 0, 1]],
    }


def test_noiseless_predictions_are_perfect():
    config = SynthConfig(num_videos=30, seed=1).noiseless()
    ds, _ = generate_dataset(config)
    preds = generate_predictions(ds, config)
    assert preds.num_predictions() == ds.num_ground_truths()
    report = evaluate(ds, preds)
    assert report.average_map == 1.0
    assert all(v == 1.0 for v in report.recall_at.values())


def test_duplicate_rate_one_gives_two_predictions_per_moment():
    config = replace(SynthConfig(num_videos=10, seed=3).noiseless(), duplicate_rate=1.0)
    ds, _ = generate_dataset(config)
    preds = generate_predictions(ds, config)
    for vid in ds.video_ids():
        assert len(preds.get(vid)) == 2 * len(ds[vid].ground_truths)


def test_noisy_predictions():
    config = SynthConfig(num_videos=20, seed=5)
    ds, _ = generate_dataset(config)
    preds = generate_predictions(ds, config)
    assert preds.video_ids() == ds.video_ids()
    for vid in preds.video_ids():
        duration = ds[vid].duration
        for p in preds.get(vid):
            assert 0.0 <= p.score <= 1.0
            assert 0.0 <= p.start <= p.end <= duration
            assert p.label in ds.labels()
    assert 0.0 < evaluate(ds, preds).average_map < 1.0


def test_miss_probability():
    config = SynthConfig(miss_length_scale=10.0)
    assert miss_probability(10.0, config) == pytest.approx(math.exp(-1.0))
    assert miss_probability(10.0, SynthConfig()) == 0.0
    assert miss_probability(10.0, SynthConfig(miss_rate=0.5, miss_length_scale=10.0)) == pytest.approx(
        0.5 + 0.5 * math.exp(-1.0)
    )


def test_missing_every_prediction():
    config = SynthConfig(num_videos=5, miss_rate=1.0, seed=6)
    ds, _ = generate_dataset(config)
    assert generate_predictions(ds, config).num_predictions() == 0


@pytest.mark.parametrize("kwargs", [
    dict(num_videos=0),
    dict(num_videos=1.5),
    dict(seed=-1),
    dict(moments_per_video=(5, 2)),
    dict(moments_per_video=3),
    dict(duration_range=(0, 10)),
    dict(moment_length_range=(200, 300)),
    dict(replicate_tiou_range=(0.5, 0.95)),
    dict(replicate_tiou_range=(0.95, 1.0)),
    dict(replicate_rate=1.5),
    dict(boundary_jitter=-1),
    dict(background_score_range=(0.5, 1.5)),
    dict(score_base=2.0),
])
def test_config_errors(kwargs):
    with pytest.raises(ConfigError):
        SynthConfig(**kwargs)


def test_twins_come_on_top_of_moments_per_video():
    config = SynthConfig(num_videos=30, moments_per_video=(3, 3), replicate_rate=0.5, seed=4)
    ds, metadata = generate_dataset(config)
    assert metadata.planted_pairs
    for vid in ds.video_ids():
        twins = sum(1 for v, _, _ in metadata.planted_pairs if v == vid)
        assert len(ds[vid].ground_truths) == 3 + twins


def test_crowded_videos_raise():
    config = SynthConfig(num_videos=1, duration_range=(10, 10), moment_length_range=(9, 10),
                         moments_per_video=(30, 30), replicate_rate=0.0)
    with pytest.raises(ConfigError):
        generate_dataset(config)


def test_generate_candidates():
    config = SynthConfig(num_videos=8, num_categories=4, seed=2)
    ds, _ = generate_dataset(config)
    instances = generate_candidates(ds, config, max_videos=3)
    assert [inst.instance_id for inst in instances] == ds.video_ids()[:3]
    assert sum(inst.center_sampling().num_positives for inst in instances) >= 1
    for inst in instances:
        video = ds[inst.instance_id]
        assert inst.labels == tuple(ds.labels())
        assert inst.ground_truths == video.ground_truths
        for c in inst.candidates:
            assert len(c.class_probs) == len(inst.labels)
            assert 0.0 <= c.decoded.start <= c.decoded.end <= video.duration
        result = inst.assign()
        covered = [j for j, members in enumerate(result.assigned) if members]
        assert len(covered) >= 1
        assert all(g == BACKGROUND or 0 <= g < len(video.ground_truths) for g in result.gt_index)
    again = generate_candidates(ds, config, max_videos=3)
    assert again == instances
    with pytest.raises(ValueError):
        generate_candidates(ds, config, max_videos=0)


def test_sigma_sweep_rows():
    config = SynthConfig(num_videos=10, seed=4)
    ds, _ = generate_dataset(config)
    preds = generate_predictions(ds, config)
    rows = sigma_sweep(ds, preds, sigmas=(0.9, 2.0), evaluate_kwargs={"thresholds": (0.3, 0.5), "recall_ks": (1,)})
    assert [r.sigma for r in rows] == [0.9, 2.0]
    d = rows[0].to_dict()
    assert list(d) == ["sigma", "average_map", "map_at", "recall_at"]
    assert list(d["map_at"]) == ["0.3", "0.5"]
    assert list(d["recall_at"]) == ["R@1x,tIoU=0.3", "R@1x,tIoU=0.5"]
    with pytest.raises(ValueError):
        sigma_sweep(ds, preds, sigmas=())


def test_sigma_sweep_rises_then_falls():
    config = SynthConfig(num_videos=300, seed=0)
    ds, _ = generate_dataset(config)
    preds = generate_predictions(ds, config)
    rows = {r.sigma: r.average_map for r in sigma_sweep(ds, preds)}
    assert list(rows) == [0.9, 1.5, 2.0, 4.0]
    assert rows[2.0] > rows[0.9]
    assert rows[4.0] < rows[2.0]
    assert max(rows, key=rows.get) != 0.9
