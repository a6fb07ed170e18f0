import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stfall.ingest import load_dataset, read_labels
from stfall.synthgen import PERSON, SynthConfig, fall_span, gen_adl_video, gen_dataset, gen_fall_video


def runs_of_ones(labels):
    padded = np.concatenate([[0], labels, [0]])
    return int(np.sum(np.diff(padded) == 1))


def test_adl_video_length_and_labels():
    seq = gen_adl_video(SynthConfig(frames_per_video=64), 0)
    assert len(seq) == 64
    assert seq.labels.tolist() == [0] * 64


def test_adl_video_deterministic_without_noise():
    cfg = SynthConfig(noise_sigma=0.0)
    assert gen_adl_video(cfg, 3).frames.tobytes() == gen_adl_video(cfg, 3).frames.tobytes()


def test_adl_foreground_pixel_bound():
    cfg = SynthConfig(noise_sigma=0.0, blob_width=8, blob_height=20)
    for i in range(5):
        counts = (gen_adl_video(cfg, i).frames == PERSON).sum(axis=(1, 2, 3))
        assert counts.min() >= 0 and counts.max() <= 160


def test_adl_video_has_person_and_empty_frames():
    counts = (gen_adl_video(SynthConfig(noise_sigma=0.0), 0).frames == PERSON).sum(axis=(1, 2, 3))
    assert counts[0] == 0
    assert counts.max() > 0


def test_fall_label_count():
    seq = gen_fall_video(SynthConfig(fall_duration=8, lying_tail=16), 0)
    assert int(seq.labels.sum()) == 24


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 20), st.integers(3, 13))
def test_fall_labels_single_run(seed, index, duration):
    cfg = SynthConfig(seed=seed, fall_duration=duration, lying_tail=10)
    seq = gen_fall_video(cfg, index)
    assert runs_of_ones(seq.labels) == 1
    assert int(seq.labels.sum()) == duration + 10
    assert seq.frames.min() >= 0 and seq.frames.max() <= 255


def test_seed_changes_onset_not_structure():
    onsets = set()
    for seed in range(6):
        seq = gen_fall_video(SynthConfig(seed=seed), 0)
        assert runs_of_ones(seq.labels) == 1
        assert int(seq.labels.sum()) == 24
        onsets.add(fall_span(seq.labels)[0])
    assert len(onsets) > 1


def test_fall_motion_exceeds_walking_motion():
    cfg = SynthConfig(frames_per_video=96, noise_sigma=0.0)
    for i in range(8):
        seq = gen_fall_video(cfg, i)
        f = seq.frames[..., 0].astype(np.float64)
        diff = np.abs(np.diff(f, axis=0)).mean(axis=(1, 2))  # diff[k]: frame k -> k+1
        onset = fall_span(seq.labels)[0] - 1
        falling = diff[onset - 1:onset + cfg.fall_duration - 1].mean()
        visible = (f == PERSON).any(axis=(1, 2))
        # transitions between two frames that both show the walking person
        walking = diff[:onset - 1][visible[:onset - 1] & visible[1:onset]]
        assert falling > walking.mean(), i


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(fall_duration=14)
    with pytest.raises(ValueError):
        SynthConfig(frames_per_video=16)
    with pytest.raises(ValueError):
        SynthConfig(noise_sigma=-1)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    cfg = SynthConfig(seed=3, num_adl_videos=9, num_fall_videos=6, num_test_adl_videos=3,
                      frames_per_video=40, lying_tail=8)
    root = tmp_path_factory.mktemp("synth")
    return cfg, root, gen_dataset(cfg, root)


def test_dataset_layout(small_dataset):
    cfg, root, manifest = small_dataset
    dirs = sorted(p.name for p in root.iterdir() if p.is_dir())
    assert len(dirs) == 15
    assert len(list((root / dirs[0]).glob("frame_*.png"))) == 40
    with open(root / "labels.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == sum(v["n_frames"] for v in manifest["videos"]) == 15 * 40
    on_disk = json.loads((root / "manifest.json").read_text())
    assert on_disk == manifest
    splits = [v["split"] for v in manifest["videos"]]
    assert splits.count("train") == 6 and splits.count("test") == 9


def test_manifest_spans_match_labels_csv(small_dataset):
    _, root, manifest = small_dataset
    labels = read_labels(root / "labels.csv")
    for v in manifest["videos"]:
        ones = sorted(j for j, lab in labels[v["video_id"]].items() if lab == 1)
        if v["fall_span"] is None:
            assert ones == []
        else:
            assert ones == list(range(v["fall_span"][0], v["fall_span"][1] + 1))


def test_dataset_rerun_byte_identical(small_dataset, tmp_path):
    cfg, root, manifest = small_dataset
    again = gen_dataset(cfg, tmp_path)
    assert (tmp_path / "labels.csv").read_bytes() == (root / "labels.csv").read_bytes()
    assert again["dataset_hash"] == manifest["dataset_hash"]


def test_written_frames_round_trip(small_dataset):
    cfg, root, _ = small_dataset
    seq = load_dataset(root, video_ids=["fall_000"])[0]
    direct = gen_fall_video(cfg, 0)
    assert seq.labels.tolist() == direct.labels.tolist()
