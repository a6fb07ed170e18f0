#!/usr/bin/env python3
"""Synthetic end-to-end benchmark.

Generates the synthetic corpus, trains 3DCAE-AN and the two frame-based
baselines on the ADL training split, scores the held-out split, and writes:

    <out>/table.md        frame-level AUC per family and score
    <out>/benchmark.json  AUCs, fall/ADL mean errors, wall-clock per stage
    <out>/3dcae-an/eval/{report.json, sweep.csv, sweep.png}

Usage:
    python3 scripts/run_benchmark.py --config configs/bench.cfg --out runs/bench
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from stfall.cli import main as stfall

FAMILIES = ("3dcae-an", "dae-an", "cae-an")


def _run(*argv: str) -> None:
    code = stfall(list(argv))
    if code != 0:
        raise RuntimeError(f"stfall {' '.join(argv)} exited with {code}")


def mean_error_by_class(scores_csv: Path, labels_csv: Path) -> tuple[float, float]:
    """Mean per-frame reconstruction error over fall frames and over ADL frames."""
    labels = {}
    with open(labels_csv) as fh:
        for r in csv.DictReader(fh):
            labels[(r["video_id"], int(r["frame_index"]))] = int(r["label"])
    fall, adl = [], []
    with open(scores_csv) as fh:
        reader = csv.DictReader(fh)
        col = "c_mu" if "c_mu" in reader.fieldnames else "recon_error"
        for r in reader:
            v = float(r[col])
            (fall if labels.get((r["video_id"], int(r["frame_index"])), 0) else adl).append(v)
    return float(np.mean(fall)), float(np.mean(adl))


def run(config: Path, out: Path, families=FAMILIES) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    data = out / "data"
    timings = {}
    t0 = time.perf_counter()
    _run("gen-synth", "--config", str(config), "--out", str(data))
    timings["gen-synth"] = time.perf_counter() - t0
    labels = data / "labels.csv"

    results = {}
    for family in families:
        fdir = out / family
        t0 = time.perf_counter()
        _run("train", "--family", family, "--data", str(data), "--config", str(config),
             "--out", str(fdir / "model"))
        t_train = time.perf_counter() - t0
        _run("score", "--model", str(fdir / "model"), "--data", str(data),
             "--out", str(fdir / "scores" / "scores.csv"))
        _run("evaluate", "--scores", str(fdir / "scores"), "--labels", str(labels),
             "--out", str(fdir / "eval" / "report.json"))
        if family == "3dcae-an":
            _run("sweep-alpha", "--scores", str(fdir / "scores"), "--labels", str(labels),
                 "--out", str(fdir / "eval" / "sweep.csv"), "--plot", str(fdir / "eval" / "sweep.png"),
                 "--title", "synthetic: AUC vs alpha (3DCAE-AN)")
        timings[family] = time.perf_counter() - t0
        report = json.loads((fdir / "eval" / "report.json").read_text())
        fall_err, adl_err = mean_error_by_class(fdir / "scores" / "scores.csv", labels)
        results[family] = {
            "frame_level": report["frame_level"],
            "window_level": report["window_level"],
            "mean_error_fall": fall_err,
            "mean_error_adl": adl_err,
            "train_seconds": t_train,
        }

    summary = {"config": str(config), "results": results, "seconds": timings,
               "total_seconds": sum(timings.values())}
    (out / "benchmark.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "table.md").write_text(format_table(results) + "\n")
    return summary


def format_table(results: dict) -> str:
    lines = ["| method | score | frame AUC |", "|---|---|---|"]
    for family, r in results.items():
        for name, auc in r["frame_level"].items():
            lines.append(f"| {family.upper()} | {name} | {auc:.3f} |")
    return "\n".join(lines)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "bench.cfg"))
    p.add_argument("--out", default="runs/bench")
    p.add_argument("--families", nargs="+", default=list(FAMILIES), choices=FAMILIES)
    args = p.parse_args(argv)
    summary = run(Path(args.config), Path(args.out), args.families)
    print(format_table(summary["results"]))
    for family, r in summary["results"].items():
        print(f"{family}: mean error fall={r['mean_error_fall']:.3f} adl={r['mean_error_adl']:.3f}")
    print(f"total {summary['total_seconds']:.0f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
