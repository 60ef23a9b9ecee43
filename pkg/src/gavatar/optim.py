"""Canonical-avatar fitting through the deform -> splat chain.

The loss graph is built with torch (float64) so gradients for all five
attribute groups come from the exact forward used for rendering; finite
differences serve as the independent check in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .avatar import CanonicalAvatar, FrameParams
from .errors import ConfigError, FitError, ShapeError
from .prior import PriorModel, forward
from .render import Camera, RenderOutput, splat_t

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1    # mask (rendered opacity vs. mask, squared)
    lambda2: float = 0.01   # structural similarity
    lambda3: float = 0.0    # perceptual term; unsupported, must stay 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda3 < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.lambda3 != 0:
            raise ConfigError("lambda3 (perceptual term) is not supported; set it to 0")


@dataclass
class FitConfig:
    iterations: int = 2000
    lr_position: float = 2e-4
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    position_lr_decay: float = 0.99  # applied every 100 iterations
    prune_interval: int = 500
    prune_opacity_threshold: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        for name in ("lr_position", "lr_scale", "lr_rotation", "lr_opacity", "lr_sh"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


@dataclass
class TrainingSample:
    frame_params: FrameParams
    camera: Camera
    image: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray   # (H, W) in [0, 1]

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.image.shape != (self.camera.height, self.camera.width, 3):
            raise ShapeError("image dimensions do not match the camera")
        if self.mask.shape != (self.camera.height, self.camera.width):
            raise ShapeError("mask dimensions do not match the camera")


def _gaussian_window() -> torch.Tensor:
    half = (SSIM_WINDOW - 1) / 2.0
    coords = torch.arange(SSIM_WINDOW, dtype=torch.float64) - half
    g = torch.exp(-(coords ** 2) / (2 * SSIM_SIGMA ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


_WINDOW = _gaussian_window()


def ssim_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM of two (H, W, 3) images, valid-windowed, dynamic range 1."""
    if a.shape != b.shape:
        raise ShapeError("SSIM inputs must have equal dimensions")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ShapeError(f"images must be at least {SSIM_WINDOW}px on each side")
    kernel = _WINDOW[None, None].expand(3, 1, SSIM_WINDOW, SSIM_WINDOW)
    x = a.permute(2, 0, 1)[None]
    y = b.permute(2, 0, 1)[None]

    def blur(img):
        return torch.nn.functional.conv2d(img, kernel, groups=3)

    mu_x, mu_y = blur(x), blur(y)
    sig_x = blur(x * x) - mu_x * mu_x
    sig_y = blur(y * y) - mu_y * mu_y
    cov = blur(x * y) - mu_x * mu_y
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sig_x + sig_y + c2)
    return (num / den).mean()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    with torch.no_grad():
        return float(ssim_t(torch.as_tensor(a, dtype=torch.float64),
                            torch.as_tensor(b, dtype=torch.float64)))


def _loss_terms_t(image: torch.Tensor, alpha: torch.Tensor, sample: TrainingSample,
                  w: LossWeights) -> torch.Tensor:
    gt = torch.as_tensor(sample.image, dtype=torch.float64)
    mask = torch.as_tensor(sample.mask, dtype=torch.float64)
    if image.shape != gt.shape:
        raise ShapeError("render / target dimensions differ")
    total = torch.mean(torch.abs(image - gt))
    total = total + w.lambda1 * torch.mean((alpha - mask) ** 2)
    if w.lambda2 != 0.0:
        total = total + w.lambda2 * (1.0 - ssim_t(image, gt))
    return total


def loss(out: RenderOutput, sample: TrainingSample, w: LossWeights) -> float:
    with torch.no_grad():
        return float(_loss_terms_t(torch.as_tensor(out.image, dtype=torch.float64),
                                   torch.as_tensor(out.alpha, dtype=torch.float64),
                                   sample, w))


def quat_to_matrix_t(q: torch.Tensor) -> torch.Tensor:
    """(N, 4) wxyz quaternions -> (N, 3, 3); inputs are normalized in-graph."""
    q = q / torch.linalg.norm(q, dim=-1, keepdim=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rows = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ]
    return torch.stack(rows, dim=1).reshape(-1, 3, 3)


def blended_transforms(model: PriorModel, weights: np.ndarray, fp: FrameParams
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Per-Gaussian blended (A, b) for one frame; fixed w.r.t. the avatar."""
    _, tr = forward(model, fp.pose_shape())
    a = np.einsum("nk,kij->nij", weights, tr.rotations)
    b = weights @ tr.translations
    return a, b


@dataclass
class _Params:
    """Torch leaves for the five optimized attribute groups."""
    positions: torch.Tensor
    log_scales: torch.Tensor
    rotations: torch.Tensor
    opacities: torch.Tensor
    sh_coeffs: torch.Tensor

    GROUPS = ("positions", "log_scales", "rotations", "opacities", "sh_coeffs")

    @staticmethod
    def from_avatar(avatar: CanonicalAvatar, requires_grad: bool) -> "_Params":
        mk = lambda a: torch.tensor(a, dtype=torch.float64, requires_grad=requires_grad)
        return _Params(mk(avatar.positions), mk(avatar.log_scales), mk(avatar.rotations),
                       mk(avatar.opacities), mk(avatar.sh_coeffs))


def _render_t(p: _Params, blend_a: torch.Tensor, blend_b: torch.Tensor,
              fp: FrameParams, cam: Camera) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable deform + splat with fixed frame parameters."""
    r_t = torch.as_tensor(fp.global_rot, dtype=torch.float64)
    t_t = torch.as_tensor(fp.global_trans, dtype=torch.float64)
    posed = torch.einsum("nij,nj->ni", blend_a, p.positions) + blend_b
    means = posed @ r_t.T + t_t

    rot_c = quat_to_matrix_t(p.rotations)
    s2 = torch.exp(2.0 * p.log_scales)
    sigma_c = torch.einsum("nij,nj,nkj->nik", rot_c, s2, rot_c)
    m = torch.einsum("ij,njk->nik", r_t, blend_a)
    cov = torch.einsum("nij,njk,nlk->nil", m, sigma_c, m)
    cov = 0.5 * (cov + cov.transpose(1, 2))
    opac = torch.sigmoid(p.opacities)
    return splat_t(means, cov, opac, p.sh_coeffs, cam)


def gradients(avatar: CanonicalAvatar, model: PriorModel, sample: TrainingSample,
              w: LossWeights) -> dict[str, np.ndarray]:
    """Analytic loss gradients for positions, log_scales, rotations (raw
    quaternion components; in-graph normalization makes them tangent-space),
    opacity logits and SH coefficients."""
    p = _Params.from_avatar(avatar, requires_grad=True)
    a, b = blended_transforms(model, avatar.gauss_weights, sample.frame_params)
    image, alpha = _render_t(p, torch.as_tensor(a), torch.as_tensor(b),
                             sample.frame_params, sample.camera)
    total = _loss_terms_t(image, alpha, sample, w)
    total.backward()
    out = {}
    for name in _Params.GROUPS:
        leaf = getattr(p, name)
        out[name] = (leaf.grad.numpy().copy() if leaf.grad is not None
                     else np.zeros(leaf.shape))
    return out


def render_loss(avatar: CanonicalAvatar, model: PriorModel, sample: TrainingSample,
                w: LossWeights) -> float:
    """Loss of the current avatar on one sample, via the same forward as gradients()."""
    p = _Params.from_avatar(avatar, requires_grad=False)
    a, b = blended_transforms(model, avatar.gauss_weights, sample.frame_params)
    with torch.no_grad():
        image, alpha = _render_t(p, torch.as_tensor(a), torch.as_tensor(b),
                                 sample.frame_params, sample.camera)
        return float(_loss_terms_t(image, alpha, sample, w))


def init_from_prior(model: PriorModel, sh_degree: int = 0) -> CanonicalAvatar:
    """One Gaussian per canonical vertex: isotropic scale from the mean
    nearest-neighbor spacing, identity rotation, low opacity, gray color."""
    verts, _ = forward(model, model.canonical())
    n = verts.shape[0]
    diff = verts[:, None, :] - verts[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    np.fill_diagonal(dist, np.inf)
    mean_nn = float(np.mean(dist.min(axis=1)))

    bands = (sh_degree + 1) ** 2
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return CanonicalAvatar(
        positions=verts,
        log_scales=np.full((n, 3), np.log(0.3 * mean_nn)),
        rotations=rot,
        opacities=np.full(n, np.log(0.1 / 0.9)),
        sh_coeffs=np.zeros((n, 3, bands)),
        gauss_weights=model.skin_weights.copy(),
    )


class _Adam:
    def __init__(self, shape, lr: float, beta1=0.9, beta2=0.999, eps=1e-15):
        self.m = torch.zeros(shape, dtype=torch.float64)
        self.v = torch.zeros(shape, dtype=torch.float64)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, param: torch.Tensor, grad: torch.Tensor) -> None:
        self.t += 1
        self.m.mul_(self.beta1).add_(grad, alpha=1 - self.beta1)
        self.v.mul_(self.beta2).addcmul_(grad, grad, value=1 - self.beta2)
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        param.data.add_(-self.lr * mhat / (torch.sqrt(vhat) + self.eps))

    def keep_rows(self, mask: torch.Tensor) -> None:
        self.m = self.m[mask]
        self.v = self.v[mask]


def fit(model: PriorModel, samples: list[TrainingSample], cfg: FitConfig,
        w: LossWeights, init: CanonicalAvatar | None = None, sh_degree: int = 1,
        ) -> tuple[CanonicalAvatar, list[float]]:
    """Optimize a canonical avatar against multi-view target frames.

    Deterministic for a fixed seed. Returns the fitted avatar and the
    per-iteration loss log.
    """
    if not samples:
        raise ConfigError("fit requires at least one training sample")
    avatar = init if init is not None else init_from_prior(model, sh_degree)
    p = _Params.from_avatar(avatar, requires_grad=True)
    weights = avatar.gauss_weights.copy()

    # (A, b) per distinct frame; fixed because skin weights are not optimized.
    frame_key = {}
    frame_ab: list[tuple[torch.Tensor, torch.Tensor]] = []
    sample_frame = []
    for s in samples:
        key = s.frame_params.to_vector().tobytes()
        if key not in frame_key:
            frame_key[key] = len(frame_ab)
            a, b = blended_transforms(model, weights, s.frame_params)
            frame_ab.append((torch.as_tensor(a), torch.as_tensor(b)))
        sample_frame.append(frame_key[key])

    lrs = {"positions": cfg.lr_position, "log_scales": cfg.lr_scale,
           "rotations": cfg.lr_rotation, "opacities": cfg.lr_opacity,
           "sh_coeffs": cfg.lr_sh}
    opt = {name: _Adam(getattr(p, name).shape, lrs[name]) for name in _Params.GROUPS}

    rng = np.random.default_rng(cfg.seed)
    losses: list[float] = []
    for it in range(cfg.iterations):
        s_idx = int(rng.integers(len(samples)))
        s = samples[s_idx]
        a, b = frame_ab[sample_frame[s_idx]]

        for name in _Params.GROUPS:
            leaf = getattr(p, name)
            if leaf.grad is not None:
                leaf.grad = None
        image, alpha = _render_t(p, a, b, s.frame_params, s.camera)
        total = _loss_terms_t(image, alpha, s, w)
        total.backward()
        losses.append(float(total.detach()))

        opt["positions"].lr = cfg.lr_position * cfg.position_lr_decay ** (it // 100)
        with torch.no_grad():
            for name in _Params.GROUPS:
                leaf = getattr(p, name)
                grad = leaf.grad if leaf.grad is not None else torch.zeros_like(leaf)
                opt[name].step(leaf, grad)
            p.rotations.data /= torch.linalg.norm(p.rotations.data, dim=1, keepdim=True)

        if cfg.prune_interval > 0 and (it + 1) % cfg.prune_interval == 0 and it + 1 < cfg.iterations:
            keep = torch.sigmoid(p.opacities.detach()) >= cfg.prune_opacity_threshold
            if not bool(keep.any()):
                raise FitError("all Gaussians pruned; lower the opacity threshold")
            if not bool(keep.all()):
                with torch.no_grad():
                    for name in _Params.GROUPS:
                        leaf = getattr(p, name)
                        setattr(p, name, leaf.detach()[keep].clone().requires_grad_(True))
                        opt[name].keep_rows(keep)
                    weights = weights[keep.numpy()]
                    frame_ab = [(a[keep], b[keep]) for a, b in frame_ab]

    fitted = CanonicalAvatar(
        positions=p.positions.detach().numpy(),
        log_scales=p.log_scales.detach().numpy(),
        rotations=p.rotations.detach().numpy(),
        opacities=p.opacities.detach().numpy(),
        sh_coeffs=p.sh_coeffs.detach().numpy(),
        gauss_weights=weights,
    )
    return fitted, losses
