#!/usr/bin/env python3
"""Rate-distortion sweep: encode a fitted avatar + dataset at all four
quantization profiles and report rate/PSNR/SSIM on the test split.

Example:
    python3 scripts/run_rd.py --dataset out/e2e/dataset \\
        --avatar out/e2e/fitted.gava --out rd.csv
"""

import argparse
import sys


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset", required=True)
    ap.add_argument("--avatar", required=True)
    ap.add_argument("--out", default=None, help="optional CSV path")
    ap.add_argument("--fps", type=float, default=25.0)
    args = ap.parse_args()

    from gavatar.avatar import load_avatar
    from gavatar.codec import PROFILES
    from gavatar.dataset import load_dataset
    from gavatar.evalkit import rd_sweep

    dataset = load_dataset(args.dataset)
    avatar = load_avatar(args.avatar)
    points = rd_sweep(dataset, avatar, dataset.model, PROFILES,
                      out_csv=args.out, fps=args.fps)
    print(f"{'label':<6} {'rate_mbps':>10} {'psnr_db':>8} {'ssim':>7}")
    for p in points:
        print(f"{p.label:<6} {p.rate_mbps:>10.5f} {p.psnr_db:>8.2f} {p.ssim:>7.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
