#!/usr/bin/env python3
"""Full pipeline experiment: synthesize, fit, encode, decode, evaluate.

Writes the dataset, fitted avatar, loss log, RD CSV and a JSON report into
the work directory, and prints the report. Exit status 1 if any release
threshold fails.

Example:
    python3 scripts/run_e2e.py --workdir out/e2e --iters 2000
"""

import argparse
import json
import sys


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gaussians", type=int, default=200)
    ap.add_argument("--frames", type=int, default=10)
    ap.add_argument("--views", type=int, default=8)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--amplitude", type=float, default=0.3)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--threads", type=int, default=0)
    args = ap.parse_args()

    if args.threads > 0:
        import torch
        torch.set_num_threads(args.threads)

    from gavatar.optim import FitConfig
    from gavatar.pipeline import SynthConfig, run_end_to_end

    cfg = SynthConfig(seed=args.seed, gaussian_count=args.gaussians,
                      frame_count=args.frames, view_count=args.views,
                      image_width=args.size, image_height=args.size,
                      pose_amplitude=args.amplitude)
    report = run_end_to_end(cfg, FitConfig(iterations=args.iters, seed=args.seed),
                            args.workdir)
    print(json.dumps(report.to_dict(), indent=2))
    return 0 if report.thresholds_met else 1


if __name__ == "__main__":
    sys.exit(main())
