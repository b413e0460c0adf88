"""Our-sel CorLoc@0.5 as the per-image proposal cap shrinks.

The synthetic generator keeps the planted proposal in the first quarter of
each file, so caps below that fraction start dropping it on purpose.
"""

import argparse
import tempfile
from pathlib import Path

from cosparse.dataset_io import SynthConfig, generate_synthetic, load_manifest
from cosparse.detector import TrainConfig, train
from cosparse.evaluation import corloc
from cosparse.pipeline import predict


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--m", type=int, default=100)
    ap.add_argument("--caps", type=int, nargs="+", default=[5, 10, 25, 50, 100])
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "ds"
        generate_synthetic(SynthConfig(50, args.m, 64, seed=args.seed), root)
        print("cap   corloc")
        for cap in args.caps:
            data = load_manifest(root, max_proposals=cap)
            d, _ = train(data, TrainConfig(seed=args.seed))
            gts = {img.id: img.ground_truth for img in data.images}
            print(f"{cap:<5} {corloc(predict(data, 'our-sel', d), gts):.3f}")


if __name__ == "__main__":
    main()
