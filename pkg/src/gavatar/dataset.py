"""On-disk dataset layout shared by the fitter, eval harness and CLI.

Layout inside a dataset directory:
    model.gapm           prior model
    cameras.json         all camera views
    frames/NNNN.gafp     per-frame temporal parameters
    gt/NNNN_VV.ppm       ground-truth renders
    masks/NNNN_VV.pgm    ground-truth opacity masks
    manifest.json        train/test view and frame splits
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .avatar import FrameParams, load_frame_params, save_frame_params
from .errors import CorruptionError
from .prior import PriorModel, load_prior, save_prior
from .render import Camera, load_cameras, read_pgm, read_ppm, save_cameras


@dataclass
class Dataset:
    root: Path
    model: PriorModel
    cameras: list[Camera]
    frames: list[FrameParams]
    train_views: list[int]
    test_views: list[int]
    train_frames: list[int]
    test_frames: list[int]

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def gt_image(self, frame: int, view: int) -> np.ndarray:
        return read_ppm(self.root / "gt" / f"{frame:04d}_{view:02d}.ppm")

    def gt_mask(self, frame: int, view: int) -> np.ndarray:
        return read_pgm(self.root / "masks" / f"{frame:04d}_{view:02d}.pgm")


def write_dataset(root, model: PriorModel, cameras: list[Camera],
                  frames: list[FrameParams], images, masks,
                  train_views: list[int], test_views: list[int]) -> Dataset:
    """Write the directory layout; images/masks are dicts keyed by (frame, view)."""
    root = Path(root)
    from .render import write_pgm, write_ppm
    for sub in ("frames", "gt", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    save_prior(model, root / "model.gapm")
    save_cameras(cameras, root / "cameras.json")
    for f, fp in enumerate(frames):
        save_frame_params([fp], root / "frames" / f"{f:04d}.gafp")
    for (f, v), img in images.items():
        write_ppm(root / "gt" / f"{f:04d}_{v:02d}.ppm", img)
    for (f, v), m in masks.items():
        write_pgm(root / "masks" / f"{f:04d}_{v:02d}.pgm", m)
    all_frames = list(range(len(frames)))
    manifest = {
        "frame_count": len(frames),
        "view_count": len(cameras),
        "train_views": train_views,
        "test_views": test_views,
        "train_frames": all_frames,
        "test_frames": all_frames,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return load_dataset(root)


def load_dataset(root) -> Dataset:
    root = Path(root)
    try:
        with open(root / "manifest.json") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as e:
        raise CorruptionError(f"no manifest.json in {root}") from e
    if set(manifest["train_views"]) & set(manifest["test_views"]):
        raise CorruptionError("train and test views overlap")
    model = load_prior(root / "model.gapm")
    cameras = load_cameras(root / "cameras.json")
    frames = []
    for f in range(manifest["frame_count"]):
        path = root / "frames" / f"{f:04d}.gafp"
        if not path.exists():
            raise CorruptionError(f"manifest references missing {path.name}")
        frames.extend(load_frame_params(path))
    return Dataset(root, model, cameras, frames,
                   manifest["train_views"], manifest["test_views"],
                   manifest["train_frames"], manifest["test_frames"])
