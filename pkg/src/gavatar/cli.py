"""Command line interface: prior, synth, fit, encode, decode, render, rd, e2e."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

log = logging.getLogger("gavatar")


def _apply_threads(args) -> None:
    import torch
    threads = args.threads or int(os.environ.get("GAVATAR_THREADS", "0"))
    if threads > 0:
        torch.set_num_threads(threads)


def _cmd_prior(args) -> int:
    from .prior import build_toy_prior, save_prior
    model = build_toy_prior(args.seed, args.joints, args.vertices)
    save_prior(model, args.output)
    log.info("wrote prior with %d joints, %d vertices to %s",
             model.joint_count, model.vertex_count, args.output)
    return 0


def _synth_config(args):
    from .pipeline import SynthConfig
    return SynthConfig(seed=args.seed, gaussian_count=args.gaussians,
                       frame_count=args.frames, view_count=args.views,
                       image_width=args.size, image_height=args.size,
                       pose_amplitude=args.amplitude)


def _cmd_synth(args) -> int:
    from .pipeline import (make_gt_avatar, make_pose_sequence, make_ring_cameras,
                           render_dataset)
    from .prior import build_toy_prior
    from .avatar import save_avatar
    cfg = _synth_config(args)
    model = build_toy_prior(cfg.seed, 24, max(600, cfg.gaussian_count))
    avatar = make_gt_avatar(model, cfg)
    poses = make_pose_sequence(cfg)
    cameras = make_ring_cameras(cfg)
    dataset = render_dataset(avatar, model, poses, cameras, cfg, args.output)
    save_avatar(avatar, dataset.root / "gt_avatar.gava")
    log.info("wrote synthetic dataset (%d frames x %d views) to %s",
             cfg.frame_count, cfg.view_count, args.output)
    return 0


def _cmd_fit(args) -> int:
    from .avatar import save_avatar
    from .dataset import load_dataset
    from .optim import FitConfig, LossWeights, fit
    from .pipeline import training_samples
    from .prior import load_prior
    dataset = load_dataset(args.dataset)
    model = load_prior(args.model) if args.model else dataset.model
    cfg = FitConfig(iterations=args.iters, seed=args.seed)
    samples = training_samples(dataset, dataset.train_views)
    avatar, losses = fit(model, samples, cfg, LossWeights(), sh_degree=args.sh_degree)
    save_avatar(avatar, args.output)
    if args.loss_log:
        np.savetxt(args.loss_log, np.array(losses), header="loss", comments="")
    log.info("fit finished: %d Gaussians, final loss %.6f", avatar.count, losses[-1])
    return 0


def _load_frames(args, theta_len: int = 72):
    from .avatar import load_frame_params
    from .dataset import load_dataset
    if args.dataset:
        return load_dataset(args.dataset).frames
    return load_frame_params(args.frames)


def _cmd_encode(args) -> int:
    from .avatar import load_avatar
    from .codec import PROFILES, encode_stream, write_stream
    from .prior import load_prior
    avatar = load_avatar(args.avatar)
    model = load_prior(args.model)
    frames = _load_frames(args)
    stream = encode_stream(avatar, frames, PROFILES[args.qp], model)
    write_stream(stream, args.output)
    log.info("encoded %d Gaussians + %d frames at %s: %d bytes",
             avatar.count, len(frames), args.qp, stream.total_size)
    return 0


def _cmd_decode(args) -> int:
    from .avatar import save_avatar, save_frame_params
    from .codec import decode_stream, read_stream
    stream = read_stream(args.input)
    avatar, frames = decode_stream(stream)
    save_avatar(avatar, args.avatar_out)
    if args.frames_out:
        save_frame_params(frames, args.frames_out)
    log.info("decoded %d Gaussians and %d frames", avatar.count, len(frames))
    return 0


def _cmd_render(args) -> int:
    from .avatar import deform, load_avatar, load_frame_params
    from .prior import load_prior
    from .render import load_cameras, rasterize, write_pgm, write_ppm
    avatar = load_avatar(args.avatar)
    model = load_prior(args.model)
    frames = load_frame_params(args.frames)
    cameras = load_cameras(args.cameras)
    g = deform(avatar, model, frames[args.frame])
    out = rasterize(g, cameras[args.view])
    write_ppm(args.output, out.image)
    if args.alpha:
        write_pgm(args.alpha, out.alpha)
    log.info("rendered frame %d view %d to %s", args.frame, args.view, args.output)
    return 0


def _cmd_rd(args) -> int:
    from .avatar import load_avatar
    from .codec import PROFILES
    from .dataset import load_dataset
    from .evalkit import rd_sweep
    dataset = load_dataset(args.dataset)
    avatar = load_avatar(args.avatar)
    points = rd_sweep(dataset, avatar, dataset.model, PROFILES, out_csv=args.output)
    for p in points:
        log.info("%s: %.4f Mbps, %.2f dB, ssim %.4f", p.label, p.rate_mbps, p.psnr_db, p.ssim)
    return 0


def _cmd_e2e(args) -> int:
    from .optim import FitConfig
    from .pipeline import run_end_to_end
    cfg = _synth_config(args)
    fit_cfg = FitConfig(iterations=args.iters, seed=args.seed)
    report = run_end_to_end(cfg, fit_cfg, args.workdir)
    print(json.dumps(report.to_dict(), indent=1))
    if not report.thresholds_met:
        for f in report.failures:
            log.error("threshold failure: %s", f)
        return 1
    return 0


def _add_synth_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gaussians", type=int, default=200)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--amplitude", type=float, default=0.3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gavatar",
                                     description="Animated Gaussian avatar codec")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=0,
                        help="torch thread count (0 = default / GAVATAR_THREADS)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prior", help="generate a procedural prior model")
    p.add_argument("--joints", type=int, default=24)
    p.add_argument("--vertices", type=int, default=600)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_prior)

    p = sub.add_parser("synth", help="generate a synthetic ground-truth dataset")
    _add_synth_args(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fit", help="fit a canonical avatar to a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", help="prior file; defaults to the dataset's model")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--sh-degree", type=int, default=1)
    p.add_argument("--loss-log")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("encode", help="encode avatar + frame parameters to a stream")
    p.add_argument("--avatar", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--frames", help="GAFP frame parameter file")
    p.add_argument("--dataset", help="take frames from a dataset directory")
    p.add_argument("--qp", choices=["q1", "q2", "q3", "q4"], default="q3")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode a stream")
    p.add_argument("input")
    p.add_argument("--avatar-out", required=True)
    p.add_argument("--frames-out")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("render", help="deform and rasterize one frame/view")
    p.add_argument("--avatar", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--alpha", help="also write the opacity map (PGM)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("rd", help="rate-distortion sweep over the 4 profiles")
    p.add_argument("--dataset", required=True)
    p.add_argument("--avatar", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=_cmd_rd)

    p = sub.add_parser("e2e", help="synth, fit, encode, decode, evaluate")
    _add_synth_args(p)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--workdir", required=True)
    p.set_defaults(func=_cmd_e2e)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    _apply_threads(args)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
