"""Ground-truth labelling, ROC-AUC and the alpha sweep."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .ingest import InputError, WindowSet


class EvaluationError(ValueError):
    pass


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC with midranks; label 1 is the anomalous (positive) class."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise EvaluationError(f"{len(s)} scores for {len(y)} labels")
    if not np.all((y == 0) | (y == 1)):
        raise EvaluationError("labels must be 0 or 1")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("degenerate label set: need both classes")
    # doubled midranks are integers, so U stays exact
    r2 = np.rint(2 * rankdata(s, method="average")).astype(np.int64)
    u2 = int(r2[pos].sum()) - n_pos * (n_pos + 1)
    total = 2 * n_pos * n_neg
    # divide the smaller side and reflect, so auc(s) + auc(-s) == 1.0 in floats
    if 2 * u2 <= total:
        return u2 / total
    return 1.0 - (total - u2) / total


@dataclass(frozen=True)
class AlphaRule:
    alpha: int
    T: int = 8

    def __post_init__(self):
        if not 1 <= self.alpha <= self.T:
            raise InputError(f"alpha must lie in [1, {self.T}], got {self.alpha}")


def fall_counts(labels: np.ndarray, window_start: np.ndarray, T: int) -> np.ndarray:
    """Number of label-1 frames in each window."""
    c = np.concatenate([[0], np.cumsum(np.asarray(labels, dtype=np.int64))])
    return c[window_start + T] - c[window_start]


def window_labels(labels: Sequence[int], ws: WindowSet, rule: AlphaRule | int) -> np.ndarray:
    if isinstance(rule, int):
        rule = AlphaRule(rule, ws.T)
    elif rule.T != ws.T:
        rule = AlphaRule(rule.alpha, ws.T)
    labels = np.asarray(labels)
    if len(labels) != ws.n_frames:
        raise InputError(f"{len(labels)} labels for {ws.n_frames} frames")
    return (fall_counts(labels, ws.window_start, ws.T) >= rule.alpha).astype(np.int64)


def evaluate_frame_level(scores: Mapping[str, Mapping[str, np.ndarray]],
                         labels: Mapping[str, np.ndarray]) -> dict[str, float]:
    """Pooled AUC per score name.

    ``scores`` maps score name -> {video_id: per-frame scores}.
    """
    out = {}
    for name, per_video in scores.items():
        vids = sorted(per_video)
        s = np.concatenate([np.asarray(per_video[v]) for v in vids])
        y = np.concatenate([np.asarray(labels[v]) for v in vids])
        out[name] = roc_auc(s, y)
    return out


def per_video_auc(scores: Mapping[str, Mapping[str, np.ndarray]],
                  labels: Mapping[str, np.ndarray]) -> dict[str, dict[str, Optional[float]]]:
    """Diagnostic AUC per (score, video); None where a video has a single class."""
    out: dict[str, dict[str, Optional[float]]] = {}
    for name, per_video in scores.items():
        out[name] = {}
        for v in sorted(per_video):
            y = np.asarray(labels[v])
            out[name][v] = roc_auc(per_video[v], y) if 0 < y.sum() < len(y) else None
    return out


@dataclass
class SweepCell:
    score_name: str
    alpha: int
    auc: Optional[float]
    n_pos: int
    n_neg: int


def sweep_alpha(window_scores: Mapping[str, Mapping[str, np.ndarray]],
                fall_count: Mapping[str, np.ndarray], T: int,
                alphas: Optional[Sequence[int]] = None) -> list[SweepCell]:
    """AUC for every (score, alpha); single-class cells get ``auc=None``.

    ``window_scores`` maps score name -> {video_id: per-window scores} and
    ``fall_count`` maps video_id -> label-1 frames per window.
    """
    alphas = list(range(1, T + 1)) if alphas is None else list(alphas)
    cells = []
    for name, per_video in window_scores.items():
        vids = sorted(per_video)
        s = np.concatenate([np.asarray(per_video[v]) for v in vids])
        counts = np.concatenate([np.asarray(fall_count[v]) for v in vids])
        for a in alphas:
            AlphaRule(a, T)
            y = (counts >= a).astype(np.int64)
            n_pos = int(y.sum())
            n_neg = len(y) - n_pos
            auc = roc_auc(s, y) if n_pos and n_neg else None
            cells.append(SweepCell(name, a, auc, n_pos, n_neg))
    return cells


def write_sweep_csv(cells: Sequence[SweepCell], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["score_name", "alpha", "auc", "n_pos", "n_neg"])
        for c in cells:
            w.writerow([c.score_name, c.alpha, "" if c.auc is None else repr(c.auc), c.n_pos, c.n_neg])


def read_sweep_csv(path) -> list[SweepCell]:
    with open(path, newline="") as fh:
        return [
            SweepCell(r["score_name"], int(r["alpha"]), float(r["auc"]) if r["auc"] else None,
                      int(r["n_pos"]), int(r["n_neg"]))
            for r in csv.DictReader(fh)
        ]


def plot_sweep(cells: Sequence[SweepCell], path, title: str = "") -> None:
    """Line chart: alpha on x, AUC on y, one line per score."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    names = list(dict.fromkeys(c.score_name for c in cells))
    for name in names:
        pts = [(c.alpha, c.auc) for c in cells if c.score_name == name and c.auc is not None]
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel("alpha (fall frames per window)")
    ax.set_ylabel("AUC")
    ax.set_ylim(0, 1.02)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


@dataclass
class EvalReport:
    frame_level: dict[str, float] = field(default_factory=dict)
    window_level: dict[str, dict[str, Optional[float]]] = field(default_factory=dict)
    per_video: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_cells(cls, frame_level, cells: Sequence[SweepCell], per_video=None, metadata=None):
        window = {}
        for c in cells:
            window.setdefault(c.score_name, {})[str(c.alpha)] = c.auc
        return cls(frame_level, window, per_video or {}, metadata or {})

    def to_dict(self) -> dict:
        return asdict(self)
