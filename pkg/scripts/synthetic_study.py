"""Train the three detectors on a synthetic corpus and write the stress-test reports.

    python3 scripts/synthetic_study.py --out runs/study --seed 0
"""

import argparse
import logging
import os
from pathlib import Path

from vdlab.evaluation import write_summary, write_sweep_csv
from vdlab.pipelines import save_detector
from vdlab.study import StudyConfig, run_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/study")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-tracks", type=int, default=40)
    ap.add_argument("--n-test", type=int, default=8)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=os.environ.get("VDLAB_LOG", "INFO").upper(), format="%(asctime)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_study(StudyConfig(seed=args.seed, n_tracks=args.n_tracks, n_test=args.n_test), jobs=args.jobs)
    for name, det in res.detectors.items():
        save_detector(out / f"model_{name}.vdm", det)
    write_sweep_csv(res.sweep, out / "sweep.csv")
    for name, grid in res.heatmaps.items():
        grid.write(out / f"heatmap_{name}")
    regions = {name: dict(zip(("singer", "extreme"), res.heatmap_regions(name))) for name in res.heatmaps}
    write_summary(out / "summary.json", "synthetic-study", {
        "seed": args.seed, "n_tracks": args.n_tracks, "n_test": args.n_test,
        "accuracy": res.accuracy, "train_seconds": res.train_seconds,
        "fnr": {name: res.fnr_curve(name) for name in res.accuracy}, "heatmap_regions": regions})

    for name in res.accuracy:
        curve = " ".join(f"{v:6.2f}" for v in res.fnr_curve(name))
        print(f"{name:4s} accuracy {res.accuracy[name]:6.2f}%  train {res.train_seconds[name]:6.1f} s  FNR {curve}")
    for name, r in regions.items():
        print(f"{name} heatmap: singer region {r['singer']:.3f}, extreme region {r['extreme']:.3f}")


if __name__ == "__main__":
    main()
