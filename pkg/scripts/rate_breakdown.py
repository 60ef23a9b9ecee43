#!/usr/bin/env python3
"""Print a byte-level breakdown of an encoded avatar stream: header,
canonical payload and per-frame payload sizes, plus the temporal rate.

Example:
    python3 scripts/rate_breakdown.py out/e2e/stream_q3.gavc
"""

import argparse
import sys

import numpy as np


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("stream")
    ap.add_argument("--fps", type=float, default=25.0)
    args = ap.parse_args()

    from gavatar.codec import HEADER_SIZE, read_stream
    from gavatar.evalkit import rate_mbps

    s = read_stream(args.stream)
    h = s.header
    frame_bytes = [len(p) for p in s.frame_payloads]
    print(f"gaussians        {h.gaussian_count}")
    print(f"joints           {h.joint_count}")
    print(f"frames           {h.frame_count}")
    print(f"header           {HEADER_SIZE} B")
    print(f"canonical        {len(s.canonical_payload)} B "
          f"({8 * len(s.canonical_payload) / max(h.gaussian_count, 1):.1f} bits/Gaussian)")
    if frame_bytes:
        print(f"frame payloads   total {sum(frame_bytes)} B, "
              f"mean {np.mean(frame_bytes):.1f} B, max {max(frame_bytes)} B")
        temporal_bits = 8 * sum(4 + b for b in frame_bytes)
        print(f"temporal rate    {rate_mbps(temporal_bits, h.frame_count, args.fps):.5f} Mbps")
        print(f"total rate       {rate_mbps(8 * s.total_size, h.frame_count, args.fps):.5f} Mbps "
              f"(canonical amortized)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
