"""Quality metrics, rate computation and rate-distortion sweeps."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .avatar import CanonicalAvatar, deform
from .codec import QuantConfig, decode_stream, encode_stream
from .dataset import Dataset
from .errors import ConfigError, ShapeError
from .optim import ssim
from .prior import PriorModel
from .render import rasterize

PSNR_CAP = 99.0
DEFAULT_FPS = 25.0


@dataclass(frozen=True)
class RDPoint:
    rate_mbps: float
    psnr_db: float
    ssim: float
    label: str


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) with peak 1.0, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("PSNR inputs must have equal dimensions")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def rate_mbps(total_bits: int, frame_count: int, fps: float = DEFAULT_FPS) -> float:
    """Stream rate with the canonical payload amortized over all frames."""
    if frame_count < 1:
        raise ConfigError("frame_count must be >= 1")
    return total_bits / frame_count * fps / 1e6


def rd_sweep(dataset: Dataset, avatar: CanonicalAvatar, model: PriorModel,
             profiles: dict[str, QuantConfig], out_csv=None,
             fps: float = DEFAULT_FPS) -> list[RDPoint]:
    """Encode/decode at each profile, render the test split, average metrics.

    Returns points sorted by rate; optionally writes the CSV report
    (columns: label,rate_mbps,psnr_db,ssim).
    """
    points = []
    for label, q in profiles.items():
        stream = encode_stream(avatar, dataset.frames, q, model)
        dec_avatar, dec_frames = decode_stream(stream)
        psnrs, ssims = [], []
        for f in dataset.test_frames:
            g = deform(dec_avatar, model, dec_frames[f])
            for v in dataset.test_views:
                out = rasterize(g, dataset.cameras[v])
                gt = dataset.gt_image(f, v)
                psnrs.append(psnr(out.image, gt))
                ssims.append(ssim(out.image, gt))
        rate = rate_mbps(stream.total_size * 8, len(dataset.frames), fps)
        points.append(RDPoint(rate, float(np.mean(psnrs)), float(np.mean(ssims)), label))
    points.sort(key=lambda p: p.rate_mbps)
    if out_csv is not None:
        write_rd_csv(points, out_csv)
    return points


def write_rd_csv(points: list[RDPoint], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label", "rate_mbps", "psnr_db", "ssim"])
        for p in points:
            writer.writerow([p.label, f"{p.rate_mbps:.6f}", f"{p.psnr_db:.4f}", f"{p.ssim:.6f}"])
