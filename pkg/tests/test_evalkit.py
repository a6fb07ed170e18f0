import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_sequence
from oracles import pairwise_auc
from stfall.evalkit import (AlphaRule, EvalReport, EvaluationError, evaluate_frame_level, fall_counts,
                            per_video_auc, plot_sweep, read_sweep_csv, roc_auc, sweep_alpha,
                            window_labels, write_sweep_csv)
from stfall.ingest import FrameSequence, InputError, make_windows


def random_instance(rng, n=None, ties=False):
    n = n or int(rng.integers(2, 80))
    y = rng.integers(0, 2, size=n)
    y[0], y[1] = 0, 1
    s = rng.integers(0, 4, size=n).astype(float) if ties else rng.normal(size=n)
    return s, y


# -- roc_auc ------------------------------------------------------------------


def test_perfect_separation():
    assert roc_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0


def test_all_ties_is_half():
    assert roc_auc([3.0] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_single_class_is_degenerate():
    with pytest.raises(EvaluationError, match="degenerate label set"):
        roc_auc([1, 2, 3], [1, 1, 1])


def test_length_mismatch():
    with pytest.raises(EvaluationError):
        roc_auc([1, 2], [0, 1, 1])


def test_fifty_point_instance_matches_pairwise():
    s, y = random_instance(np.random.default_rng(50), n=50)
    assert abs(roc_auc(s, y) - pairwise_auc(s.tolist(), y.tolist())) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_auc_matches_pairwise_oracle(seed, ties):
    s, y = random_instance(np.random.default_rng(seed), ties=ties)
    assert abs(roc_auc(s, y) - pairwise_auc(s.tolist(), y.tolist())) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_complement_identity_exact(seed, ties):
    s, y = random_instance(np.random.default_rng(seed), ties=ties)
    assert roc_auc(s, y) + roc_auc(-s, y) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_transform_invariance(seed):
    s, y = random_instance(np.random.default_rng(seed), ties=True)
    base = roc_auc(s, y)
    assert abs(roc_auc(np.exp(s), y) - base) <= 1e-12
    assert abs(roc_auc(s ** 3 + 7, y) - base) <= 1e-12


# -- window labels --------------------------------------------------------------


def fall_sequence(n=40, start=10, length=8):
    labels = np.zeros(n, dtype=np.int64)
    labels[start:start + length] = 1
    return random_sequence(n, size=2, labels=labels)


def test_all_adl_windows_are_zero():
    seq = random_sequence(30, size=2, labels=np.zeros(30, int))
    ws = make_windows(seq, 8, 1)
    for a in range(1, 9):
        assert window_labels(seq.labels, ws, AlphaRule(a)).sum() == 0


def test_aligned_run_alpha8_one_window():
    seq = fall_sequence()
    ws = make_windows(seq, 8, 1)
    y = window_labels(seq.labels, ws, AlphaRule(8))
    assert y.sum() == 1 and ws.window_start[y == 1].tolist() == [10]


def test_run_alpha1_fifteen_windows():
    seq = fall_sequence()
    assert window_labels(seq.labels, make_windows(seq, 8, 1), 1).sum() == 15


@pytest.mark.parametrize("alpha", [0, 9])
def test_alpha_out_of_range(alpha):
    with pytest.raises(InputError):
        AlphaRule(alpha, 8)


def test_labels_length_checked():
    seq = fall_sequence()
    with pytest.raises(InputError):
        window_labels(seq.labels[:-1], make_windows(seq, 8, 1), 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=8, max_size=60))
def test_alpha_subset_property(labels):
    seq = FrameSequence("v", np.zeros((len(labels), 1, 1, 1)), labels=labels)
    ws = make_windows(seq, 8, 1)
    prev = window_labels(seq.labels, ws, 1)
    for a in range(2, 9):
        cur = window_labels(seq.labels, ws, a)
        assert np.all(cur <= prev)
        prev = cur


def test_fall_counts_brute_force():
    labels = np.random.default_rng(3).integers(0, 2, size=50)
    starts = np.arange(0, 43)
    counts = fall_counts(labels, starts, 8)
    assert counts.tolist() == [int(sum(labels[s:s + 8])) for s in starts]


# -- frame-level evaluation -------------------------------------------------------


def test_all_zero_scores_give_half():
    labels = {"a": np.array([0, 0, 1, 1]), "b": np.array([0, 1])}
    scores = {"c_mu": {"a": np.zeros(4), "b": np.zeros(2)}}
    assert evaluate_frame_level(scores, labels) == {"c_mu": 0.5}


def test_pooling_equals_concatenation():
    rng = np.random.default_rng(8)
    labels = {v: rng.integers(0, 2, size=n) for v, n in (("x", 30), ("y", 12), ("z", 25))}
    per_video = {v: rng.normal(size=len(lab)) for v, lab in labels.items()}
    pooled = evaluate_frame_level({"s": per_video}, labels)["s"]
    vids = sorted(labels)
    assert pooled == roc_auc(np.concatenate([per_video[v] for v in vids]),
                             np.concatenate([labels[v] for v in vids]))


def test_per_video_auc_skips_single_class():
    labels = {"adl": np.zeros(5, int), "fall": np.array([0, 0, 1, 1])}
    scores = {"s": {"adl": np.arange(5.0), "fall": np.array([0.0, 1, 2, 3])}}
    out = per_video_auc(scores, labels)
    assert out["s"] == {"adl": None, "fall": 1.0}


# -- alpha sweep ------------------------------------------------------------------


def sweep_inputs(counts_by_video, seed=0):
    rng = np.random.default_rng(seed)
    scores = {name: {v: rng.normal(size=len(c)) for v, c in counts_by_video.items()}
              for name in ("w_mu", "d_x")}
    return scores, counts_by_video


def test_all_adl_sweep_undefined():
    scores, counts = sweep_inputs({"a": np.zeros(10, int), "b": np.zeros(7, int)})
    cells = sweep_alpha(scores, counts, 8)
    assert len(cells) == 16
    assert all(c.auc is None for c in cells)


def test_fixed_fall_count_gives_equal_cells():
    counts = {"a": np.array([0, 0, 3, 3, 3, 0]), "b": np.array([3, 0, 0, 3])}
    scores, _ = sweep_inputs(counts, seed=2)
    cells = sweep_alpha(scores, counts, 8)
    for name in scores:
        aucs = {c.alpha: c.auc for c in cells if c.score_name == name}
        assert aucs[1] == aucs[2] == aucs[3]
        assert all(aucs[a] is None for a in range(4, 9))


def test_sweep_csv_round_trip(tmp_path):
    counts = {"a": np.array([0, 1, 2, 8, 8, 5, 0])}
    scores, _ = sweep_inputs(counts, seed=4)
    cells = sweep_alpha(scores, counts, 8)
    write_sweep_csv(cells, tmp_path / "sweep.csv")
    header = (tmp_path / "sweep.csv").read_text().splitlines()[0]
    assert header == "score_name,alpha,auc,n_pos,n_neg"
    assert read_sweep_csv(tmp_path / "sweep.csv") == cells


def test_sweep_positive_counts_non_increasing():
    counts = {"a": np.array([0, 1, 2, 3, 4, 5, 6, 7, 8, 8, 2, 0])}
    scores, _ = sweep_inputs(counts)
    cells = [c for c in sweep_alpha(scores, counts, 8) if c.score_name == "w_mu"]
    n_pos = [c.n_pos for c in cells]
    assert n_pos == sorted(n_pos, reverse=True)


def test_plot_sweep_writes_png(tmp_path):
    counts = {"a": np.array([0, 1, 2, 8, 8, 5, 0])}
    scores, _ = sweep_inputs(counts)
    plot_sweep(sweep_alpha(scores, counts, 8), tmp_path / "sweep.png", title="synthetic")
    assert (tmp_path / "sweep.png").read_bytes()[:4] == b"\x89PNG"


def test_report_from_cells_is_json_ready():
    counts = {"a": np.array([0, 0, 8, 8])}
    scores, _ = sweep_inputs(counts)
    cells = sweep_alpha(scores, counts, 8)
    report = EvalReport.from_cells({"c_sigma": 0.9}, cells, metadata={"seed": 0})
    d = json.loads(json.dumps(report.to_dict()))
    assert d["window_level"]["w_mu"]["8"] == cells[7].auc
    assert all(v is None or 0 <= v <= 1 for s in d["window_level"].values() for v in s.values())
