"""CPU Gaussian splatting: perspective projection, SH shading, front-to-back compositing.

The core is written with torch tensors (float64) so the optimizer can
differentiate through the exact same forward pass; the public API takes and
returns numpy arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .avatar import DeformedGaussians
from .errors import ConfigError, CorruptionError, ShapeError

ALPHA_CAP = 0.99
ALPHA_SKIP = 1.0 / 255.0
TRANSMITTANCE_STOP = 1e-4
COV2D_DILATION = 0.3  # px^2 added to the diagonal
MIN_COV2D_DET = 1e-12
CULL_SIGMA = 3.0

_SH_C0 = 0.28209479177387814
_SH_C1 = 0.4886025119029199
_SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
          -1.0925484305920792, 0.5462742152960396)

SUPPORTED_SH_BANDS = (1, 4, 9)


@dataclass
class Camera:
    rotation: np.ndarray     # (3,3) world-to-camera
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ConfigError("image dimensions must be >= 1")
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-6:
            raise ConfigError("camera rotation must be orthonormal")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height, "near": self.near,
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(np.array(d["rotation"]), np.array(d["translation"]),
                      d["fx"], d["fy"], d["cx"], d["cy"],
                      int(d["width"]), int(d["height"]), d.get("near", 0.01))


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    alpha: np.ndarray  # (H, W) in [0, 1]


def _t(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a), dtype=torch.float64)


def eval_sh_t(coeffs: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Real SH up to degree 2 plus the 0.5 offset, clamped to [0,1].

    coeffs: (N, 3, B), dirs: (N, 3) unit vectors -> (N, 3).
    """
    bands = coeffs.shape[-1]
    if bands not in SUPPORTED_SH_BANDS:
        raise ConfigError(f"unsupported SH band count {bands}; expected one of {SUPPORTED_SH_BANDS}")
    rgb = _SH_C0 * coeffs[..., 0]
    if bands >= 4:
        x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        rgb = rgb - _SH_C1 * y * coeffs[..., 1] + _SH_C1 * z * coeffs[..., 2] \
            - _SH_C1 * x * coeffs[..., 3]
    if bands >= 9:
        xx, yy, zz = x * x, y * y, z * z
        rgb = rgb \
            + _SH_C2[0] * (x * y) * coeffs[..., 4] \
            + _SH_C2[1] * (y * z) * coeffs[..., 5] \
            + _SH_C2[2] * (2 * zz - xx - yy) * coeffs[..., 6] \
            + _SH_C2[3] * (x * z) * coeffs[..., 7] \
            + _SH_C2[4] * (xx - yy) * coeffs[..., 8]
    return torch.clamp(rgb + 0.5, 0.0, 1.0)


def eval_sh(coeffs: np.ndarray, direction: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != 3:
        raise ShapeError("coeffs must be (3, B)")
    with torch.no_grad():
        out = eval_sh_t(_t(coeffs)[None], _t(direction).reshape(1, 3))
    return out[0].numpy()


def project_t(means: torch.Tensor, covs: torch.Tensor, cam: Camera
              ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """EWA projection of (N,3) means and (N,3,3) covariances.

    Returns (mean2d (N,2), cov2d (N,2,2), depth (N,), in_front (N,) bool).
    cov2d = J W Sigma W^T J^T + dilation, with J the perspective Jacobian at
    the mean. Entries for culled Gaussians are computed at a safe depth and
    must be ignored by the caller.
    """
    w = _t(cam.rotation)
    t = _t(cam.translation)
    pc = means @ w.T + t                       # camera space
    depth = pc[:, 2]
    in_front = depth >= cam.near
    z = torch.clamp(depth, min=cam.near)  # keeps culled rows finite; caller ignores them
    x, y = pc[:, 0], pc[:, 1]
    mean2d = torch.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], dim=1)

    zero = torch.zeros_like(z)
    jrow0 = torch.stack([cam.fx / z, zero, -cam.fx * x / (z * z)], dim=1)
    jrow1 = torch.stack([zero, cam.fy / z, -cam.fy * y / (z * z)], dim=1)
    jac = torch.stack([jrow0, jrow1], dim=1)   # (N,2,3)
    jw = jac @ w                               # (N,2,3)
    cov2d = jw @ covs @ jw.transpose(1, 2)
    cov2d = cov2d + COV2D_DILATION * torch.eye(2, dtype=torch.float64)
    return mean2d, cov2d, depth, in_front


def project_gaussian(mean: np.ndarray, sigma: np.ndarray, cam: Camera):
    """Project one Gaussian; returns (mean2d, cov2d, depth) or None if culled."""
    with torch.no_grad():
        m2, c2, d, ok = project_t(_t(mean).reshape(1, 3), _t(sigma).reshape(1, 3, 3), cam)
    if not bool(ok[0]):
        return None
    return m2[0].numpy(), c2[0].numpy(), float(d[0])


def splat_t(means: torch.Tensor, covs: torch.Tensor, opacities: torch.Tensor,
            sh: torch.Tensor, cam: Camera) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable splatting core. Returns (image (H,W,3), alpha (H,W))."""
    h, w = cam.height, cam.width
    n = means.shape[0]
    if n == 0:
        return (torch.zeros((h, w, 3), dtype=torch.float64),
                torch.zeros((h, w), dtype=torch.float64))

    mean2d, cov2d, depth, in_front = project_t(means, covs, cam)
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    usable = in_front & (det > MIN_COV2D_DET)
    idx = torch.nonzero(usable, as_tuple=False).flatten()
    if idx.numel() == 0:
        return (torch.zeros((h, w, 3), dtype=torch.float64),
                torch.zeros((h, w), dtype=torch.float64))
    # Front-to-back, stable tie-break on original index.
    order = torch.argsort(depth[idx], stable=True)
    idx = idx[order]

    center = _t(cam.center)
    dirs = means[idx] - center
    dirs = dirs / torch.linalg.norm(dirs, dim=1, keepdim=True)
    colors = eval_sh_t(sh[idx], dirs)                     # (K,3)

    m2 = mean2d[idx]
    c2 = cov2d[idx]
    dt = det[idx]
    inv00 = c2[:, 1, 1] / dt
    inv01 = -c2[:, 0, 1] / dt
    inv11 = c2[:, 0, 0] / dt

    px = torch.arange(w, dtype=torch.float64) + 0.5
    py = torch.arange(h, dtype=torch.float64) + 0.5
    dx = px[None, None, :] - m2[:, 0][:, None, None]      # (K,1,W) broadcast
    dy = py[None, :, None] - m2[:, 1][:, None, None]      # (K,H,1)

    power = -0.5 * (inv00[:, None, None] * dx * dx
                    + 2.0 * inv01[:, None, None] * dx * dy
                    + inv11[:, None, None] * dy * dy)
    gauss = torch.exp(torch.clamp(power, max=0.0))        # (K,H,W)

    rx = CULL_SIGMA * torch.sqrt(c2[:, 0, 0])
    ry = CULL_SIGMA * torch.sqrt(c2[:, 1, 1])
    inside = (dx.abs() <= rx[:, None, None]) & (dy.abs() <= ry[:, None, None])

    alpha = torch.clamp(opacities[idx][:, None, None] * gauss, max=ALPHA_CAP)
    alpha = torch.where(inside & (alpha >= ALPHA_SKIP), alpha, torch.zeros_like(alpha))

    # Sequential early stop: a Gaussian is composited only while the running
    # transmittance (exclusive product) is still >= the stop threshold.
    trans_excl = torch.cumprod(1.0 - alpha, dim=0)
    trans_excl = torch.cat([torch.ones_like(alpha[:1]), trans_excl[:-1]], dim=0)
    active = trans_excl >= TRANSMITTANCE_STOP
    alpha = torch.where(active, alpha, torch.zeros_like(alpha))
    trans_excl = torch.cumprod(1.0 - alpha, dim=0)
    trans_excl = torch.cat([torch.ones_like(alpha[:1]), trans_excl[:-1]], dim=0)

    weight = alpha * trans_excl                           # (K,H,W)
    image = torch.einsum("khw,kc->hwc", weight, colors)
    alpha_map = 1.0 - torch.prod(1.0 - alpha, dim=0)
    return image, alpha_map


def rasterize(g: DeformedGaussians, cam: Camera) -> RenderOutput:
    with torch.no_grad():
        image, alpha = splat_t(_t(g.world_means), _t(g.covariances),
                               _t(g.opacities), _t(g.sh_coeffs), cam)
    return RenderOutput(image.numpy(), alpha.numpy())


def write_ppm(path, image: np.ndarray) -> None:
    img = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    img = np.clip(np.rint(np.asarray(gray) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())


def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != magic:
        raise CorruptionError(f"expected {magic.decode()} file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise CorruptionError("only 8-bit PNM supported")
    count = w * h * channels
    if len(data) - pos < count:
        raise CorruptionError("truncated PNM payload")
    raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    arr = raw.astype(np.float64) / 255.0
    return arr.reshape(h, w, channels) if channels > 1 else arr.reshape(h, w)


def read_ppm(path) -> np.ndarray:
    return _read_pnm(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    return _read_pnm(path, b"P5", 1)


def save_cameras(cams: list[Camera], path) -> None:
    with open(path, "w") as f:
        json.dump([c.to_dict() for c in cams], f, indent=1)


def load_cameras(path) -> list[Camera]:
    with open(path) as f:
        return [Camera.from_dict(d) for d in json.load(f)]
