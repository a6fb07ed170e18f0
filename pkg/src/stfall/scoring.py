"""Anomaly scores from a trained (generator, discriminator) pair.

All exported anomaly scores are oriented so that larger means more
anomalous; discriminator probabilities enter as ``1 - D``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .ingest import FrameSequence, InputError, WindowSet

# column order for window_scores.csv
WINDOW_SCORES = (
    "w_mu", "w_sigma", "d_x", "d_rx",
    "w_mu_d_x", "w_sigma_d_x", "w_mu_d_rx", "w_sigma_d_rx",
)


@dataclass
class ReconErrorMatrix:
    """Per-(window, frame) squared reconstruction errors.

    ``values[i, p]`` is the error of global frame ``window_start[i] + p``
    (0-based) inside window ``i``.
    """

    video_id: str
    T: int
    window_start: np.ndarray
    values: np.ndarray
    n_frames: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.window_start = np.asarray(self.window_start, dtype=np.int64)
        if self.values.shape != (len(self.window_start), self.T):
            raise InputError(f"values must be (M, T) = ({len(self.window_start)}, {self.T})")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise InputError("reconstruction errors must be finite and non-negative")

    def entries(self) -> Iterator[tuple[tuple[int, int], float]]:
        """Yield ``((window, frame), R)`` with 1-based indices."""
        for i, start in enumerate(self.window_start):
            for p in range(self.T):
                yield (i + 1, int(start) + p + 1), float(self.values[i, p])

    def __len__(self) -> int:
        return self.values.size


@dataclass
class FrameScoreSeries:
    video_id: str
    c_mu: np.ndarray
    c_sigma: np.ndarray


@dataclass
class WindowScoreTable:
    video_id: str
    window_start: np.ndarray  # 0-based
    w_mu: np.ndarray
    w_sigma: np.ndarray
    prob_x: np.ndarray   # D(x)
    prob_rx: np.ndarray  # D(R(x))
    lam: float

    def scores(self) -> dict[str, np.ndarray]:
        dx = 1.0 - self.prob_x
        drx = 1.0 - self.prob_rx
        return {
            "w_mu": self.w_mu,
            "w_sigma": self.w_sigma,
            "d_x": dx,
            "d_rx": drx,
            "w_mu_d_x": self.lam * self.w_mu + dx,
            "w_sigma_d_x": self.lam * self.w_sigma + dx,
            "w_mu_d_rx": self.lam * self.w_mu + drx,
            "w_sigma_d_rx": self.lam * self.w_sigma + drx,
        }


def _squared_error(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sum of squared differences over the trailing (H, W, C) axes."""
    d = x.astype(np.float64) - y.astype(np.float64)
    return np.einsum("...hwc,...hwc->...", d, d)


def recon_errors(gen, ws: WindowSet, batch_size: int = 64) -> ReconErrorMatrix:
    """``gen`` is anything with ``predict(np.ndarray) -> np.ndarray``."""
    expected = tuple(getattr(getattr(gen, "spec", None), "input_shape", ws.windows.shape[1:]))
    if tuple(ws.windows.shape[1:]) != expected:
        raise InputError(f"window shape {ws.windows.shape[1:]} != model input {expected}")
    rows = []
    for b in range(0, len(ws), batch_size):
        x = np.ascontiguousarray(ws.windows[b:b + batch_size])
        out = gen.predict(x)
        if out.shape != x.shape:
            raise InputError(f"reconstruction shape {out.shape} != input {x.shape}")
        rows.append(_squared_error(x, out))
    return ReconErrorMatrix(ws.source, ws.T, ws.window_start.copy(), np.concatenate(rows), ws.n_frames)


def frame_recon_errors(gen, seq: FrameSequence, batch_size: int = 64) -> np.ndarray:
    """Per-frame error for frame-based generators (one frame in, one frame out)."""
    out = np.concatenate([gen.predict(np.ascontiguousarray(seq.frames[b:b + batch_size]))
                          for b in range(0, len(seq), batch_size)])
    return _squared_error(seq.frames, out)


def frame_scores(R: ReconErrorMatrix) -> FrameScoreSeries:
    """Mean and population std of R over every window that covers each frame."""
    n, T = R.n_frames, R.T
    cols = (R.window_start[:, None] + np.arange(T)[None, :]).ravel()
    vals = R.values.ravel()
    counts = np.bincount(cols, minlength=n)
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0]) + 1
        raise InputError(f"frame {missing} is not covered by any window")
    c_mu = np.bincount(cols, weights=vals, minlength=n) / counts
    dev = vals - c_mu[cols]
    c_sigma = np.sqrt(np.bincount(cols, weights=dev * dev, minlength=n) / counts)
    return FrameScoreSeries(R.video_id, c_mu, c_sigma)


def window_stats(R: ReconErrorMatrix) -> tuple[np.ndarray, np.ndarray]:
    """(W_mu, W_sigma) per window."""
    return R.values.mean(axis=1), R.values.std(axis=1)


def _disc_prob(disc, x: np.ndarray) -> np.ndarray:
    return np.asarray(disc.predict(x), dtype=np.float64).reshape(len(x))


def window_scores(R: ReconErrorMatrix, gen, disc, ws: WindowSet, lam: float = 1.0,
                  batch_size: int = 64) -> WindowScoreTable:
    if len(ws) != len(R.window_start) or not np.array_equal(ws.window_start, R.window_start):
        raise InputError("window set does not match the reconstruction-error matrix")
    w_mu, w_sigma = window_stats(R)
    px, prx = [], []
    for b in range(0, len(ws), batch_size):
        x = np.ascontiguousarray(ws.windows[b:b + batch_size])
        px.append(_disc_prob(disc, x))
        prx.append(_disc_prob(disc, gen.predict(x)))
    return WindowScoreTable(R.video_id, R.window_start.copy(), w_mu, w_sigma,
                            np.concatenate(px), np.concatenate(prx), float(lam))
