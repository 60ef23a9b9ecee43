"""Animated 3D Gaussian human avatar codec.

Encode: one canonical Gaussian avatar plus a 94-parameter temporal payload
per frame (72 pose + 10 shape + 9 rotation + 3 translation), entropy coded.
Decode: arithmetic decoding, LBS canonical-to-target deformation, splatting.
"""

from .avatar import CanonicalAvatar, DeformedGaussians, FrameParams, deform
from .codec import PROFILES, AvatarBitstream, QuantConfig, decode_stream, encode_stream
from .errors import (ConfigError, ContractError, CorruptionError, FitError,
                     GavatarError, ShapeError)
from .evalkit import RDPoint, psnr, rate_mbps, rd_sweep
from .optim import FitConfig, LossWeights, TrainingSample, fit, gradients, init_from_prior, ssim
from .pipeline import SynthConfig, run_end_to_end
from .prior import PoseShape, PriorModel, build_toy_prior, forward, rodrigues
from .render import Camera, RenderOutput, eval_sh, project_gaussian, rasterize

__version__ = "0.1.0"
