"""Synthetic ground truth and the end-to-end prior->synth->fit->code->eval chain.

The ground truth is itself a Gaussian avatar rendered by this package's
rasterizer, so fitting quality is attributable to the optimizer rather than
representation mismatch.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .avatar import CanonicalAvatar, FrameParams, deform, save_avatar
from .codec import PROFILES, QuantConfig, decode_stream, encode_stream, write_stream
from .dataset import Dataset, write_dataset
from .errors import ConfigError
from .evalkit import RDPoint, psnr, rate_mbps, rd_sweep
from .optim import FitConfig, LossWeights, TrainingSample, fit, init_from_prior
from .prior import PriorModel, build_toy_prior
from .render import Camera, rasterize


@dataclass
class SynthConfig:
    seed: int = 0
    gaussian_count: int = 200
    frame_count: int = 20
    view_count: int = 8
    image_width: int = 64
    image_height: int = 64
    pose_amplitude: float = 0.3  # radians
    ring_radius: float = 2.5     # meters

    def __post_init__(self):
        if min(self.gaussian_count, self.frame_count, self.view_count,
               self.image_width, self.image_height) < 1:
            raise ConfigError("all synthesis counts must be >= 1")
        if not 0.0 <= self.pose_amplitude <= np.pi / 2:
            raise ConfigError("pose_amplitude must be in [0, pi/2]")


def make_gt_avatar(model: PriorModel, cfg: SynthConfig) -> CanonicalAvatar:
    """Deterministic subsample of the prior-vertex initialization with
    randomized colors (SH degree 1) and opacities in [0.6, 0.95]."""
    if cfg.gaussian_count > model.vertex_count:
        raise ConfigError("gaussian_count exceeds the prior's vertex count")
    base = init_from_prior(model, sh_degree=1)
    rng = np.random.default_rng((cfg.seed, 0xA7A7))
    idx = np.sort(rng.choice(base.count, cfg.gaussian_count, replace=False))

    n = cfg.gaussian_count
    sh = np.zeros((n, 3, 4))
    sh[:, :, 0] = rng.uniform(-1.4, 1.4, (n, 3))
    sh[:, :, 1:] = rng.uniform(-0.2, 0.2, (n, 3, 3))
    opac = rng.uniform(0.6, 0.95, n)
    return CanonicalAvatar(
        positions=base.positions[idx],
        log_scales=base.log_scales[idx] + rng.uniform(-0.3, 0.3, (n, 3)),
        rotations=base.rotations[idx],
        opacities=np.log(opac / (1.0 - opac)),
        sh_coeffs=sh,
        gauss_weights=base.gauss_weights[idx],
    )


def make_pose_sequence(cfg: SynthConfig, joint_count: int = 24) -> list[FrameParams]:
    """Smooth sinusoidal joint trajectories around the canonical pose; frame 0
    is exactly the canonical parameters (identity global motion)."""
    rng = np.random.default_rng((cfg.seed, 0xF05E))
    dims = 3 * joint_count
    phase = rng.uniform(0, 2 * np.pi, dims)
    gain = rng.uniform(0.2, 0.5, dims)
    frames = []
    f_count = cfg.frame_count
    for t in range(f_count):
        arg = 2 * np.pi * t / f_count
        theta = cfg.pose_amplitude * gain * (np.sin(arg + phase) - np.sin(phase))
        yaw = 0.35 * np.sin(arg)
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        trans = np.array([0.15 * np.sin(arg), 0.0, 0.08 * (1.0 - np.cos(arg))])
        frames.append(FrameParams(theta, np.zeros(10), rot, trans))
    return frames


def make_ring_cameras(cfg: SynthConfig, look_at=(0.0, -0.1, 0.0)) -> list[Camera]:
    look_at = np.asarray(look_at, dtype=np.float64)
    up = np.array([0.0, 1.0, 0.0])
    cams = []
    for v in range(cfg.view_count):
        ang = 2 * np.pi * v / cfg.view_count
        center = look_at + cfg.ring_radius * np.array([np.sin(ang), 0.08, np.cos(ang)])
        z = look_at - center
        z /= np.linalg.norm(z)
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        rot = np.stack([x, y, z])
        cams.append(Camera(rot, -rot @ center,
                           fx=1.1 * cfg.image_width, fy=1.1 * cfg.image_width,
                           cx=cfg.image_width / 2.0, cy=cfg.image_height / 2.0,
                           width=cfg.image_width, height=cfg.image_height))
    return cams


def render_dataset(avatar: CanonicalAvatar, model: PriorModel,
                   poses: list[FrameParams], cameras: list[Camera],
                   cfg: SynthConfig, root) -> Dataset:
    """Render GT images/masks for every (frame, view) and write the layout.
    Views alternate into the train (even) and test (odd) splits."""
    images, masks = {}, {}
    for f, fp in enumerate(poses):
        g = deform(avatar, model, fp)
        for v, cam in enumerate(cameras):
            out = rasterize(g, cam)
            images[(f, v)] = out.image
            masks[(f, v)] = out.alpha
    train_views = [v for v in range(len(cameras)) if v % 2 == 0]
    test_views = [v for v in range(len(cameras)) if v % 2 == 1]
    return write_dataset(root, model, cameras, poses, images, masks,
                         train_views, test_views)


def training_samples(dataset: Dataset, views: list[int]) -> list[TrainingSample]:
    samples = []
    for f in dataset.train_frames:
        for v in views:
            samples.append(TrainingSample(dataset.frames[f], dataset.cameras[v],
                                          dataset.gt_image(f, v), dataset.gt_mask(f, v)))
    return samples


def _split_psnr(avatar: CanonicalAvatar, model: PriorModel, dataset: Dataset,
                views: list[int]) -> float:
    vals = []
    for f in dataset.train_frames:
        g = deform(avatar, model, dataset.frames[f])
        for v in views:
            out = rasterize(g, dataset.cameras[v])
            vals.append(psnr(out.image, dataset.gt_image(f, v)))
    return float(np.mean(vals))


@dataclass
class EndToEndReport:
    train_psnr: float
    test_psnr: float
    rd_points: list[RDPoint]
    finest_vs_uncompressed_psnr: float
    temporal_rate_mbps: float
    thresholds_met: bool
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["rd_points"] = [dataclasses.asdict(p) for p in self.rd_points]
        return d


def run_end_to_end(cfg: SynthConfig, fit_cfg: FitConfig, workdir,
                   profiles: dict[str, QuantConfig] | None = None,
                   weights: LossWeights | None = None) -> EndToEndReport:
    """synth -> fit on train views -> encode -> decode -> render held-out views
    -> RD report. Threshold failures are reported, not raised."""
    profiles = profiles if profiles is not None else PROFILES
    weights = weights if weights is not None else LossWeights()
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    model = build_toy_prior(cfg.seed, 24, max(600, cfg.gaussian_count))
    gt_avatar = make_gt_avatar(model, cfg)
    poses = make_pose_sequence(cfg)
    cameras = make_ring_cameras(cfg)
    dataset = render_dataset(gt_avatar, model, poses, cameras, cfg, workdir / "dataset")

    samples = training_samples(dataset, dataset.train_views)
    fitted, losses = fit(model, samples, fit_cfg, weights, sh_degree=1)
    save_avatar(fitted, workdir / "fitted.gava")
    np.savetxt(workdir / "loss_log.csv", np.array(losses), header="loss", comments="")

    train_psnr = _split_psnr(fitted, model, dataset, dataset.train_views)
    test_psnr = _split_psnr(fitted, model, dataset, dataset.test_views)

    points = rd_sweep(dataset, fitted, model, profiles, out_csv=workdir / "rd.csv")

    finest_label = max(profiles, key=lambda k: profiles[k].pos_bits)
    finest = profiles[finest_label]
    stream = encode_stream(fitted, dataset.frames, finest, model)
    write_stream(stream, workdir / f"stream_{finest_label}.gavc")
    dec_avatar, dec_frames = decode_stream(stream)
    fidelity = []
    for f in dataset.test_frames[:4]:
        ref = rasterize(deform(fitted, model, dataset.frames[f]), dataset.cameras[0])
        dec = rasterize(deform(dec_avatar, model, dec_frames[f]), dataset.cameras[0])
        fidelity.append(psnr(dec.image, ref.image))
    finest_fidelity = float(np.mean(fidelity))

    default_stream = encode_stream(fitted, dataset.frames, PROFILES["q3"], model)
    temporal_bits = sum(len(p) * 8 for p in default_stream.frame_payloads)
    temporal_rate = rate_mbps(temporal_bits, len(dataset.frames))

    failures = []
    if train_psnr < 30.0:
        failures.append(f"train PSNR {train_psnr:.2f} dB < 30 dB")
    if train_psnr - test_psnr > 3.0:
        failures.append(f"test PSNR {test_psnr:.2f} dB more than 3 dB below train")
    if finest_fidelity < 40.0:
        failures.append(f"finest-profile fidelity {finest_fidelity:.2f} dB < 40 dB")
    if temporal_rate >= 0.05:
        failures.append(f"temporal rate {temporal_rate:.4f} Mbps >= 0.05 Mbps")
    rates = [p.rate_mbps for p in points]
    if not all(r1 < r2 for r1, r2 in zip(rates, rates[1:])):
        failures.append("profile rates are not strictly increasing")

    report = EndToEndReport(train_psnr, test_psnr, points, finest_fidelity,
                            temporal_rate, not failures, failures)
    with open(workdir / "report.json", "w") as f:
        json.dump(report.to_dict(), f, indent=1)
    return report
