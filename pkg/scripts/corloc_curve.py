"""CorLoc against IoU threshold for each mode, written as CSV and a PNG plot."""

import argparse
import csv
import tempfile
from pathlib import Path

from cosparse.dataset_io import SynthConfig, generate_synthetic
from cosparse.detector import TrainConfig, train
from cosparse.evaluation import corloc_curve
from cosparse.pipeline import MODES, predict


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--points", type=int, default=101)
    ap.add_argument("--out", type=Path, default=Path("curve_out"))
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        data = generate_synthetic(SynthConfig(50, 100, 64, seed=args.seed), Path(tmp) / "ds")
    d, _ = train(data, TrainConfig(seed=args.seed))
    gts = {img.id: img.ground_truth for img in data.images}
    curves = {mode: corloc_curve(predict(data, mode, d), gts, args.points) for mode in MODES}

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "corloc_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", *MODES])
        thresholds = curves[MODES[0]].thresholds
        for i, t in enumerate(thresholds):
            w.writerow([f"{t:.4f}", *(f"{curves[m].values[i]:.4f}" for m in MODES)])

    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print(f"wrote {args.out / 'corloc_curve.csv'} (matplotlib missing, no plot)")
        return
    fig, ax = plt.subplots(figsize=(5, 4))
    for m in MODES:
        ax.plot(curves[m].thresholds, curves[m].values, label=m)
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("CorLoc")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out / "corloc_curve.png", dpi=120)
    print(f"wrote {args.out / 'corloc_curve.csv'} and {args.out / 'corloc_curve.png'}")


if __name__ == "__main__":
    main()
