"""``stfall`` command line.

Exit codes: 0 success, 1 evaluation/precondition failure, 2 configuration
error, 3 missing or unreadable input / I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import __version__
from .config import ConfigError, dump_config, env_seed, load_config
from .evalkit import (EvalReport, EvaluationError, evaluate_frame_level, fall_counts, per_video_auc,
                      plot_sweep, read_sweep_csv, sweep_alpha, write_sweep_csv)
from .ingest import InputError, labels_for, load_dataset, make_windows, read_labels, read_manifest
from .nets import FAMILIES, family_specs, shape_report
from .scoring import WINDOW_SCORES, frame_recon_errors, frame_scores, recon_errors, window_scores
from .synthgen import dataset_hash, gen_dataset
from .trainer import PreconditionError, TrainConfig, load_models, model_hash, train

log = logging.getLogger("stfall")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


class MissingArtifact(FileNotFoundError):
    pass


def _require(path: Path, what: str = "input") -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path}")
    return path


def _write_json(obj, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _write_run_manifest(out_dir: Path, command: str, argv: Sequence[str], config: dict,
                        seeds: dict, inputs_hash: Optional[str], outputs: Sequence[Path],
                        started: float) -> Path:
    outputs = [Path(p) for p in outputs]
    missing = [str(p) for p in outputs if not p.exists()]
    if missing:
        raise MissingArtifact(f"declared outputs were not written: {missing}")
    manifest = {
        "command": ["stfall", *argv],
        "config": config,
        "seeds": seeds,
        "input_hash": inputs_hash,
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "seconds": round(time.time() - started, 3),
    }
    path = out_dir / f"run_{command}.json"
    _write_json(manifest, path)
    return path


def _dataset_id(root: Path) -> str:
    manifest = read_manifest(root)
    if manifest and "dataset_hash" in manifest:
        return manifest["dataset_hash"]
    return dataset_hash(root)


def _resolve_split(root: Path, split: str, default: str) -> Optional[str]:
    if split == "all":
        return None
    if split == "auto":
        manifest = read_manifest(root)
        has_splits = manifest is not None and any("split" in v for v in manifest.get("videos", []))
        return default if has_splits else None
    return split


def _fmt(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------
# commands


def cmd_gen_synth(args, argv) -> int:
    started = time.time()
    cfg = load_config(_require(Path(args.config), "config"), "synth")
    out = Path(args.out)
    manifest = gen_dataset(cfg, out)
    _write_run_manifest(out, "gen-synth", argv, dump_config(cfg), {"seed": cfg.seed}, None,
                        [out / "manifest.json", out / "labels.csv"], started)
    print(f"wrote {len(manifest['videos'])} videos to {out} (dataset {manifest['dataset_hash'][:12]})")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    started = time.time()
    if args.config:
        cfg = load_config(_require(Path(args.config), "config"), "train")
    else:
        cfg = TrainConfig(**({"seed": env_seed()} if env_seed() is not None else {}))
    if args.family:
        cfg = dataclasses.replace(cfg, family=args.family)
    root = _require(Path(args.data), "dataset")
    split = _resolve_split(root, args.split, "train")
    data = load_dataset(root, split=split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _gen, _disc, history = train(data, cfg, out_dir=out)
    last = history.records[-1] if history.records else None
    if last:
        print(f"trained {cfg.family} for {len(history.records)} epochs; final L_R={last.recon_loss:.4f}")
    outputs = [out / "generator.pt", out / "discriminator.pt", out / "model.json", out / "history.csv"]
    _write_run_manifest(out, "train", argv, dump_config(cfg), {"seed": cfg.seed},
                        _dataset_id(root), outputs, started)
    return EXIT_OK


def cmd_score(args, argv) -> int:
    started = time.time()
    model_dir = _require(Path(args.model), "model directory")
    gen, disc, cfg = load_models(model_dir)
    lam = cfg.lam if args.lam is None else args.lam
    root = _require(Path(args.data), "dataset")
    split = _resolve_split(root, args.split, "test")
    data = load_dataset(root, split=split)
    out_csv = Path(args.out)
    out_dir = out_csv.parent
    out_dir.mkdir(parents=True, exist_ok=True)

    outputs = [out_csv]
    with torch.inference_mode():
        if cfg.windowed:
            frame_rows, window_rows = [], []
            for seq in data:
                ws = make_windows(seq, cfg.T, 1)
                R = recon_errors(gen, ws)
                fs = frame_scores(R)
                table = window_scores(R, gen, disc, ws, lam)
                for j in range(len(seq)):
                    frame_rows.append([seq.video_id, j + 1, _fmt(fs.c_mu[j]), _fmt(fs.c_sigma[j])])
                sc = table.scores()
                for i, start in enumerate(table.window_start):
                    window_rows.append([seq.video_id, int(start) + 1]
                                       + [_fmt(sc[k][i]) for k in WINDOW_SCORES]
                                       + [_fmt(table.prob_x[i]), _fmt(table.prob_rx[i])])
            _write_csv(out_csv, ["video_id", "frame_index", "c_mu", "c_sigma"], frame_rows)
            wpath = out_dir / "window_scores.csv"
            _write_csv(wpath, ["video_id", "window_start", *WINDOW_SCORES, "prob_x", "prob_rx"],
                       window_rows)
            outputs.append(wpath)
        else:
            rows = []
            for seq in data:
                r = frame_recon_errors(gen, seq)
                rows += [[seq.video_id, j + 1, _fmt(v)] for j, v in enumerate(r)]
            _write_csv(out_csv, ["video_id", "frame_index", "recon_error"], rows)

    meta = {
        "family": cfg.family,
        "T": cfg.T if cfg.windowed else 1,
        "lambda": lam,
        "seed": cfg.seed,
        "model_hash": model_hash(gen),
        "discriminator_hash": model_hash(disc),
        "dataset_hash": _dataset_id(root),
        "split": split,
        "videos": [s.video_id for s in data],
        "scores_file": out_csv.name,
    }
    meta_path = out_dir / "score_meta.json"
    _write_json(meta, meta_path)
    outputs.append(meta_path)
    _write_run_manifest(out_dir, "score", argv, {"lambda": lam, "split": split},
                        {"seed": cfg.seed}, meta["dataset_hash"], outputs, started)
    print(f"scored {len(data)} videos -> {out_csv}")
    return EXIT_OK


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _read_scores_dir(scores_dir: Path):
    """Load frame scores, window scores and metadata written by ``score``."""
    meta = json.loads(_require(scores_dir / "score_meta.json", "score metadata").read_text())
    frame: dict[str, dict[str, list]] = {}
    with open(_require(scores_dir / meta.get("scores_file", "scores.csv"), "scores")) as fh:
        reader = csv.DictReader(fh)
        names = [c for c in reader.fieldnames if c not in ("video_id", "frame_index")]
        for row in reader:
            for n in names:
                frame.setdefault(n, {}).setdefault(row["video_id"], []).append(float(row[n]))
    frame_arr = {n: {v: np.asarray(x) for v, x in d.items()} for n, d in frame.items()}

    windows = None
    wpath = scores_dir / "window_scores.csv"
    if wpath.is_file():
        win: dict[str, dict[str, list]] = {}
        starts: dict[str, list] = {}
        with open(wpath) as fh:
            for row in csv.DictReader(fh):
                starts.setdefault(row["video_id"], []).append(int(row["window_start"]) - 1)
                for n in WINDOW_SCORES:
                    win.setdefault(n, {}).setdefault(row["video_id"], []).append(float(row[n]))
        windows = ({n: {v: np.asarray(x) for v, x in d.items()} for n, d in win.items()},
                   {v: np.asarray(s, dtype=np.int64) for v, s in starts.items()})
    return meta, frame_arr, windows


def _frame_labels(labels_csv: Path, frame_scores_: dict) -> dict[str, np.ndarray]:
    all_labels = read_labels(_require(labels_csv, "labels file"))
    any_score = next(iter(frame_scores_.values()))
    return {v: labels_for(all_labels.get(v), len(s)) for v, s in any_score.items()}


def _sweep_cells(meta, windows, labels):
    win_scores, starts = windows
    T = int(meta["T"])
    counts = {v: fall_counts(labels[v], s, T) for v, s in starts.items()}
    return sweep_alpha(win_scores, counts, T)


def cmd_evaluate(args, argv) -> int:
    started = time.time()
    scores_dir = _require(Path(args.scores), "scores directory")
    labels_csv = Path(args.labels)
    meta, frame, windows = _read_scores_dir(scores_dir)
    labels = _frame_labels(labels_csv, frame)
    frame_auc = evaluate_frame_level(frame, labels)
    cells = _sweep_cells(meta, windows, labels) if windows else []
    per_video = per_video_auc(frame, labels)
    report = EvalReport.from_cells(frame_auc, cells, per_video, {
        "family": meta["family"],
        "model_hash": meta["model_hash"],
        "dataset_hash": meta["dataset_hash"],
        "seed": meta["seed"],
        "lambda": meta["lambda"],
        "T": meta["T"],
        "split": meta["split"],
        "protocol": "train on ADL-only training videos; test on held-out ADL and all fall videos; "
                    "AUC pooled over all test frames/windows",
        "n_frames": int(sum(len(v) for v in labels.values())),
        "n_fall_frames": int(sum(int(v.sum()) for v in labels.values())),
    })
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(report.to_dict(), out)
    _write_run_manifest(out.parent, "evaluate", argv, {}, {"seed": meta["seed"]},
                        meta["dataset_hash"], [out], started)
    for name, auc in frame_auc.items():
        print(f"{name:>12s}  AUC={auc:.4f}")
    return EXIT_OK


def cmd_sweep_alpha(args, argv) -> int:
    started = time.time()
    scores_dir = _require(Path(args.scores), "scores directory")
    meta, frame, windows = _read_scores_dir(scores_dir)
    if windows is None:
        raise MissingArtifact(f"missing window scores: {scores_dir / 'window_scores.csv'}")
    labels = _frame_labels(Path(args.labels), frame)
    cells = _sweep_cells(meta, windows, labels)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(cells, out)
    outputs = [out]
    if args.plot:
        plot_sweep(cells, args.plot, title=args.title or "")
        outputs.append(Path(args.plot))
    _write_run_manifest(out.parent, "sweep-alpha", argv, {}, {"seed": meta["seed"]},
                        meta["dataset_hash"], outputs, started)
    print(f"wrote {len(cells)} cells to {out}")
    return EXIT_OK


def cmd_plot(args, argv) -> int:
    started = time.time()
    cells = read_sweep_csv(_require(Path(args.sweep), "sweep csv"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    plot_sweep(cells, out, title=args.title or "")
    _write_run_manifest(out.parent, "plot", argv, {}, {}, None, [out], started)
    return EXIT_OK


def cmd_inspect(args, argv) -> int:
    gspec, dspec = family_specs(args.family, args.width, args.T)
    for label, spec in (("generator", gspec), ("discriminator", dspec)):
        if label == "discriminator" and not args.discriminator:
            continue
        print(f"# {label} {spec.name}  input {tuple(spec.input_shape)}")
        for name, shape in shape_report(spec):
            print(f"{name}\t{tuple(shape)}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stfall", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-synth", help="generate a synthetic ADL/fall dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_synth)

    s = sub.add_parser("train", help="adversarially train a model family on ADL videos")
    s.add_argument("--family", choices=FAMILIES)
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="auto", help="train|test|all|auto (default: manifest train split)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="compute frame and window anomaly scores")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="auto", help="train|test|all|auto (default: manifest test split)")
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("evaluate", help="frame- and window-level AUC report")
    s.add_argument("--scores", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep-alpha", help="window-level AUC for alpha = 1..T")
    s.add_argument("--scores", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--plot")
    s.add_argument("--title")
    s.set_defaults(func=cmd_sweep_alpha)

    s = sub.add_parser("plot", help="render a sweep.csv as an AUC-vs-alpha chart")
    s.add_argument("--sweep", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--title")
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("inspect", help="print per-layer output shapes")
    s.add_argument("--family", choices=FAMILIES, required=True)
    s.add_argument("--width", type=float, default=1.0)
    s.add_argument("--T", type=int, default=8)
    s.add_argument("--discriminator", action="store_true")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, InputError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EvaluationError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
