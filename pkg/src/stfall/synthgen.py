"""Deterministic synthetic stand-in for privacy-preserving fall videos.

A scene is a dim constant background with a few static "furniture"
rectangles. The person is a bright upright rectangle that walks across the
floor line, sometimes pausing. In a fall video the rectangle tips over to
horizontal (accelerating, pivoting on its base) within ``fall_duration``
frames and then lies still for ``lying_tail`` frames; those frames are
labelled 1. After the annotated tail the clip cuts to the empty scene.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .ingest import FrameSequence

BACKGROUND = 40.0
FURNITURE = 95.0
PERSON = 215.0
MAX_FALL_FRAMES = 13


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_adl_videos: int = 9
    num_fall_videos: int = 6
    num_test_adl_videos: int = 3  # ADL videos held out for testing
    frames_per_video: int = 64
    frame_height: int = 64
    frame_width: int = 64
    blob_width: int = 8
    blob_height: int = 20
    walk_speed: float = 1.5
    fall_duration: int = 8
    lying_tail: int = 16
    noise_sigma: float = 2.0
    num_furniture: int = 2

    def __post_init__(self):
        if self.frames_per_video < 32:
            raise ValueError("frames_per_video must be at least 32")
        if not 3 <= self.fall_duration <= MAX_FALL_FRAMES:
            raise ValueError(f"fall_duration must lie in [3, {MAX_FALL_FRAMES}]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.lying_tail < 0:
            raise ValueError("lying_tail must be non-negative")
        if not 0 <= self.num_test_adl_videos <= self.num_adl_videos:
            raise ValueError("num_test_adl_videos must lie in [0, num_adl_videos]")
        if self.fall_duration + self.lying_tail + 12 > self.frames_per_video:
            raise ValueError("frames_per_video too short for the fall event")
        if self.blob_height > self.frame_height - 8 or self.blob_height > self.frame_width:
            raise ValueError("person blob does not fit in the frame")


@dataclass
class _Scene:
    base: np.ndarray  # background + furniture
    floor: float      # y coordinate of the person's feet
    rng: np.random.Generator
    yy: np.ndarray = field(init=False)
    xx: np.ndarray = field(init=False)

    def __post_init__(self):
        h, w = self.base.shape
        self.yy, self.xx = np.mgrid[0:h, 0:w] + 0.5  # pixel centres


def _video_rng(cfg: SynthConfig, kind: int, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, kind, index])


def _make_scene(cfg: SynthConfig, rng: np.random.Generator) -> _Scene:
    h, w = cfg.frame_height, cfg.frame_width
    base = np.full((h, w), BACKGROUND)
    floor = float(h - 6 - rng.integers(0, 5))
    for _ in range(cfg.num_furniture):
        fw, fh = rng.integers(6, 16), rng.integers(4, 12)
        x0 = rng.integers(0, w - fw)
        # furniture sits on the floor or hangs on the wall behind the walking lane
        if rng.random() < 0.5:
            y0 = int(floor) - fh
        else:
            y0 = rng.integers(1, max(2, int(floor) - cfg.blob_height - fh))
        base[y0:y0 + fh, x0:x0 + fw] = FURNITURE
    return _Scene(base, floor, rng)


def _person_mask(scene: _Scene, cx: float, cy: float, width: float, height: float,
                 angle: float = 0.0) -> np.ndarray:
    """Rectangle of ``width`` x ``height`` centred at (cx, cy), rotated by ``angle`` radians."""
    dx, dy = scene.xx - cx, scene.yy - cy
    c, s = np.cos(angle), np.sin(angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) <= width / 2) & (np.abs(v) <= height / 2)


def _finish(cfg: SynthConfig, scene: _Scene, masks: list) -> np.ndarray:
    frames = []
    for m in masks:
        f = scene.base.copy()
        if m is not None:
            f[m] = PERSON
        if cfg.noise_sigma > 0:
            f = f + scene.rng.normal(0.0, cfg.noise_sigma, f.shape)
        frames.append(np.clip(np.round(f), 0, 255))
    return np.stack(frames).astype(np.uint8)[..., None]


def _walk(cfg: SynthConfig, rng: np.random.Generator, n: int, x0: float, direction: int,
          stop_inside: bool) -> list[float]:
    """Horizontal positions over ``n`` frames: smooth speed modulation plus short pauses."""
    xs, x = [], x0
    phase = rng.uniform(0, 2 * np.pi)
    speed = cfg.walk_speed * rng.uniform(0.8, 1.2)
    pause_left = 0
    margin = cfg.blob_width
    for t in range(n):
        xs.append(x)
        if pause_left > 0:
            pause_left -= 1
            continue
        if rng.random() < 0.04:
            pause_left = int(rng.integers(3, 8))
            continue
        x += direction * speed * (1.0 + 0.25 * np.sin(phase + 0.3 * t))
        if stop_inside:
            # halt at the far wall instead of leaving the scene
            x = min(x, cfg.frame_width - margin) if direction > 0 else max(x, margin)
    return xs


def gen_adl_video(cfg: SynthConfig, index: int) -> FrameSequence:
    """Empty lead-in, a person crossing (possibly several times), empty tail; all labels 0."""
    rng = _video_rng(cfg, 0, index)
    scene = _make_scene(cfg, rng)
    n, w = cfg.frames_per_video, cfg.frame_width
    bw, bh = cfg.blob_width, cfg.blob_height
    masks: list = [None] * int(rng.integers(2, 7))
    while len(masks) < n:
        direction = 1 if rng.random() < 0.5 else -1
        x0 = -bw / 2 if direction > 0 else w + bw / 2
        for x in _walk(cfg, rng, n - len(masks), x0, direction, stop_inside=False):
            if x < -bw or x > w + bw:
                break
            masks.append(_person_mask(scene, x, scene.floor - bh / 2, bw, bh))
        masks += [None] * int(rng.integers(2, 7))
    masks = masks[:n]
    frames = _finish(cfg, scene, masks)
    return FrameSequence(f"adl_{index:03d}", frames, labels=np.zeros(n, dtype=np.int64))


def gen_fall_video(cfg: SynthConfig, index: int) -> FrameSequence:
    """A person walks in, falls once, lies still; fall and lying frames are labelled 1."""
    rng = _video_rng(cfg, 1, index)
    scene = _make_scene(cfg, rng)
    n, w = cfg.frames_per_video, cfg.frame_width
    bw, bh = cfg.blob_width, cfg.blob_height
    event = cfg.fall_duration + cfg.lying_tail
    lead = int(rng.integers(2, 6))
    trail = int(rng.integers(1, 4))
    latest = n - event - trail
    earliest = min(lead + 8, latest)
    onset = int(rng.integers(earliest, latest + 1))

    direction = 1 if rng.random() < 0.5 else -1
    x0 = -bw / 2 if direction > 0 else w + bw / 2
    xs = _walk(cfg, rng, onset - lead, x0, direction, stop_inside=True)
    masks: list = [None] * lead
    masks += [_person_mask(scene, x, scene.floor - bh / 2, bw, bh) for x in xs]

    # pivot on the base: the long side ends flat on the floor
    x_fall = xs[-1] if xs else w / 2
    tip = direction if rng.random() < 0.7 else -direction
    for k in range(cfg.fall_duration + cfg.lying_tail):
        frac = min(1.0, (k + 1) / cfg.fall_duration)
        theta = (np.pi / 2) * frac ** 2
        cx = x_fall + tip * (bh / 2 - bw / 2) * np.sin(theta)
        cy = scene.floor - (bh / 2 * np.cos(theta) + bw / 2 * np.sin(theta))
        masks.append(_person_mask(scene, cx, cy, bw, bh, angle=tip * theta))
    masks += [None] * (n - len(masks))

    labels = np.zeros(n, dtype=np.int64)
    labels[onset:onset + event] = 1
    frames = _finish(cfg, scene, masks)
    return FrameSequence(f"fall_{index:03d}", frames, labels=labels)


def fall_span(labels: np.ndarray) -> tuple[int, int]:
    """1-based inclusive (first, last) frame of the single run of label 1."""
    idx = np.flatnonzero(labels == 1)
    return int(idx[0]) + 1, int(idx[-1]) + 1


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def gen_dataset(cfg: SynthConfig, out_root) -> dict:
    """Write frame directories, labels.csv and manifest.json under ``out_root``."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    videos = [gen_adl_video(cfg, i) for i in range(cfg.num_adl_videos)]
    videos += [gen_fall_video(cfg, i) for i in range(cfg.num_fall_videos)]
    n_train_adl = cfg.num_adl_videos - cfg.num_test_adl_videos

    entries = []
    rows = []
    for k, seq in enumerate(videos):
        vdir = out_root / seq.video_id
        vdir.mkdir(exist_ok=True)
        for j, frame in enumerate(seq.frames, start=1):
            Image.fromarray(frame[..., 0], mode="L").save(vdir / f"frame_{j:06d}.png")
        entry = {
            "video_id": seq.video_id,
            "n_frames": len(seq),
            "kind": "fall" if seq.has_falls else "adl",
            "split": "train" if k < n_train_adl else "test",
            "fall_span": list(fall_span(seq.labels)) if seq.has_falls else None,
        }
        entries.append(entry)
        rows += [(seq.video_id, j, int(lab)) for j, lab in enumerate(seq.labels, start=1)]

    with open(out_root / "labels.csv.tmp", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["video_id", "frame_index", "label"])
        writer.writerows(rows)
    os.replace(out_root / "labels.csv.tmp", out_root / "labels.csv")

    manifest = {
        "config": asdict(cfg),
        "videos": entries,
        "dataset_hash": dataset_hash(out_root, [e["video_id"] for e in entries]),
    }
    _atomic_write_text(out_root / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def dataset_hash(root, video_ids=None) -> str:
    """SHA-256 over labels.csv and every frame file, in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    labels = root / "labels.csv"
    if labels.is_file():
        h.update(labels.read_bytes())
    if video_ids is None:
        video_ids = sorted(p.name for p in root.iterdir() if p.is_dir())
    for vid in sorted(video_ids):
        for f in sorted((root / vid).iterdir()):
            h.update(f"{vid}/{f.name}".encode())
            h.update(f.read_bytes())
    return h.hexdigest()
