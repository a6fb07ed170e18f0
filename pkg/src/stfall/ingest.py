"""Frame loading, preprocessing and sliding-window bookkeeping.

Dataset layout on disk::

    <root>/<video_id>/frame_000001.png ...
    <root>/labels.csv            video_id,frame_index,label (1-based frames)
    <root>/manifest.json         optional, written by the synthetic generator

Videos missing from ``labels.csv`` are treated as all-ADL.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

FRAME_SIZE = 64
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm"}


class InputError(ValueError):
    """Bad or missing input data."""


@dataclass
class FrameSequence:
    """One video: frames of shape ``(N, H, W, 1)`` and optional per-frame labels."""

    video_id: str
    frames: np.ndarray
    labels: Optional[np.ndarray] = None
    fps: Optional[float] = None

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 1:
            raise InputError(f"{self.video_id}: frames must be (N, H, W, 1), got {self.frames.shape}")
        if len(self.frames) < 1:
            raise InputError(f"{self.video_id}: empty sequence")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.frames),):
                raise InputError(
                    f"{self.video_id}: {len(self.labels)} labels for {len(self.frames)} frames"
                )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def has_falls(self) -> bool:
        return self.labels is not None and bool(np.any(self.labels == 1))


@dataclass
class WindowSet:
    """Length-``T`` windows of one sequence.

    ``window_start[i]`` is the 0-based global index of the first frame of
    window ``i``. ``windows`` is a read-only strided view into the source
    frames, so no frame data is copied.
    """

    source: str
    T: int
    stride: int
    windows: np.ndarray
    window_start: np.ndarray
    n_frames: int

    def __len__(self) -> int:
        return len(self.window_start)


def _decode(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "I;16", "I", "F", "1"):
                arr = np.asarray(im.convert("F"), dtype=np.float64)
                if im.mode in ("I;16", "I") and arr.max(initial=0) > 255:
                    arr = arr * (255.0 / 65535.0)
            else:
                # luminance average of the colour channels
                arr = np.asarray(im.convert("RGB"), dtype=np.float64).mean(axis=-1)
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"cannot decode frame {path}: {exc}") from exc
    return arr


def load_video(path, video_id: Optional[str] = None, fps: Optional[float] = None) -> FrameSequence:
    """Decode a directory of frame images (lexicographic order) into raw intensities in [0, 255]."""
    path = Path(path)
    if not path.is_dir():
        raise InputError(f"video directory not found: {path}")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise InputError(f"no image frames in {path}")
    arrays = [_decode(f) for f in files]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise InputError(f"{path}: frames have differing sizes {sorted(shapes)}")
    frames = np.stack(arrays)[..., None]
    return FrameSequence(video_id or path.name, frames, fps=fps)


def _resize(frame: np.ndarray, size: int) -> np.ndarray:
    if frame.shape == (size, size):
        return frame
    im = Image.fromarray(frame.astype(np.float32), mode="F")
    return np.asarray(im.resize((size, size), Image.BILINEAR), dtype=np.float64)


def subtract_frame_means(frames: np.ndarray) -> np.ndarray:
    return frames - frames.mean(axis=(1, 2, 3), keepdims=True)


def preprocess(raw: FrameSequence, size: int = FRAME_SIZE) -> FrameSequence:
    """Resize to ``size`` x ``size`` (bilinear), scale by 1/255, subtract each frame's mean."""
    frames = np.stack([_resize(f[..., 0], size) for f in raw.frames])[..., None]
    frames = subtract_frame_means(frames / 255.0).astype(np.float32)
    # float32 rounding can leave a residual mean of a few ulps
    frames -= frames.mean(axis=(1, 2, 3), keepdims=True, dtype=np.float64).astype(np.float32)
    return replace(raw, frames=frames)


def make_windows(seq: FrameSequence, T: int, stride: int = 1) -> WindowSet:
    if T < 1 or stride < 1:
        raise InputError(f"window length and stride must be positive (T={T}, stride={stride})")
    n = len(seq.frames)
    if n < T:
        raise InputError(f"{seq.video_id}: sequence shorter than window ({n} < {T})")
    view = np.lib.stride_tricks.sliding_window_view(seq.frames, T, axis=0)
    view = np.moveaxis(view, -1, 1)[::stride]  # (M, T, H, W, C)
    starts = np.arange(0, n - T + 1, stride, dtype=np.int64)
    return WindowSet(seq.video_id, T, stride, view, starts, n)


def frame_coverage(ws: WindowSet, j: int) -> list[tuple[int, int]]:
    """Windows containing 1-based frame ``j`` as 1-based ``(window, position)`` pairs."""
    if not 1 <= j <= ws.n_frames:
        raise InputError(f"frame index {j} outside 1..{ws.n_frames}")
    j0 = j - 1
    pos = j0 - ws.window_start
    hit = np.nonzero((pos >= 0) & (pos < ws.T))[0]
    return [(int(i) + 1, int(pos[i]) + 1) for i in hit]


def coverage_counts(ws: WindowSet) -> np.ndarray:
    counts = np.zeros(ws.n_frames, dtype=np.int64)
    for s in ws.window_start:
        counts[s:s + ws.T] += 1
    return counts


# --------------------------------------------------------------------------
# dataset level


def read_labels(path) -> dict[str, dict[int, int]]:
    """Parse ``labels.csv`` into ``{video_id: {frame_index: label}}``."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"labels file not found: {path}")
    out: dict[str, dict[int, int]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"video_id", "frame_index", "label"} - set(reader.fieldnames or ())
        if missing:
            raise InputError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            label = int(row["label"])
            if label not in (0, 1):
                raise InputError(f"{path}: label must be 0 or 1, got {label}")
            out.setdefault(row["video_id"], {})[int(row["frame_index"])] = label
    return out


def labels_for(video_labels: Optional[dict[int, int]], n: int) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int64)
    for idx, lab in (video_labels or {}).items():
        if not 1 <= idx <= n:
            raise InputError(f"label for frame {idx} outside 1..{n}")
        labels[idx - 1] = lab
    return labels


def read_manifest(root) -> Optional[dict]:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        return None
    with open(path) as fh:
        return json.load(fh)


def list_videos(root, split: Optional[str] = None) -> list[str]:
    """Video ids under ``root``; when ``split`` is given the manifest decides membership."""
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"dataset root not found: {root}")
    ids = sorted(p.name for p in root.iterdir() if p.is_dir())
    if split is not None:
        manifest = read_manifest(root)
        if manifest is None:
            raise InputError(f"{root}: split {split!r} requested but no manifest.json")
        wanted = {v["video_id"] for v in manifest["videos"] if v.get("split") == split}
        ids = [v for v in ids if v in wanted]
    return ids


def load_dataset(root, split: Optional[str] = None, video_ids: Optional[Iterable[str]] = None,
                 size: int = FRAME_SIZE) -> list[FrameSequence]:
    """Load and preprocess every video under ``root`` with labels attached."""
    root = Path(root)
    ids = list(video_ids) if video_ids is not None else list_videos(root, split)
    if not ids:
        raise InputError(f"no videos found under {root}" + (f" for split {split!r}" if split else ""))
    labels_path = root / "labels.csv"
    all_labels = read_labels(labels_path) if labels_path.is_file() else {}
    seqs = []
    for vid in ids:
        raw = load_video(root / vid, vid)
        raw.labels = labels_for(all_labels.get(vid), len(raw))
        seqs.append(preprocess(raw, size))
    log.info("loaded %d videos (%d frames) from %s", len(seqs), sum(len(s) for s in seqs), root)
    return seqs
