"""Canonical Gaussian avatar and its LBS canonical-to-target deformation."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, CorruptionError, ShapeError
from .prior import JointTransforms, PoseShape, PriorModel, forward

MAX_GAUSS_BONES = 4


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """(..., 4) wxyz quaternions to (..., 3, 3) rotation matrices (inputs normalized)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


@dataclass
class CanonicalAvatar:
    """Gaussian set in the star-shaped canonical pose."""

    positions: np.ndarray      # (N, 3) meters
    log_scales: np.ndarray     # (N, 3) log-meters
    rotations: np.ndarray      # (N, 4) unit quaternions, wxyz
    opacities: np.ndarray      # (N,) pre-sigmoid logits
    sh_coeffs: np.ndarray      # (N, 3, B), B = (deg+1)^2
    gauss_weights: np.ndarray  # (N, J) row-stochastic, <=4 nonzeros

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64).reshape(n, 3, -1)
        self.gauss_weights = np.asarray(self.gauss_weights, dtype=np.float64).reshape(n, -1)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def sh_bands(self) -> int:
        return self.sh_coeffs.shape[2]

    @property
    def joint_count(self) -> int:
        return self.gauss_weights.shape[1]

    def validate(self):
        if np.max(np.abs(np.linalg.norm(self.rotations, axis=1) - 1.0)) > 1e-6:
            raise ContractError("quaternions must be unit norm")
        scales = np.exp(self.log_scales)
        if np.any(scales <= 1e-7) or np.any(scales >= 10.0):
            raise ContractError("scales out of (1e-7, 10) m")
        w = self.gauss_weights
        if np.any(w < 0) or np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-6:
            raise ContractError("gauss_weights rows must be convex combinations")
        if np.max(np.count_nonzero(w, axis=1)) > MAX_GAUSS_BONES:
            raise ContractError(f"more than {MAX_GAUSS_BONES} joints per Gaussian")


@dataclass(frozen=True)
class FrameParams:
    """The per-frame temporal payload: pose, shape, global rotation + translation.

    With the 24-joint prior this is 72 + 10 + 9 + 3 = 94 scalars.
    """

    theta: np.ndarray        # (3*J,)
    beta: np.ndarray         # (10,)
    global_rot: np.ndarray   # (3, 3)
    global_trans: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "global_rot", np.asarray(self.global_rot, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "global_trans", np.asarray(self.global_trans, dtype=np.float64).reshape(3))

    @property
    def param_count(self) -> int:
        return self.theta.size + self.beta.size + 12

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.beta, self.global_rot.ravel(), self.global_trans])

    @staticmethod
    def from_vector(vec: np.ndarray, theta_len: int = 72) -> "FrameParams":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.size != theta_len + 10 + 12:
            raise ShapeError(f"expected {theta_len + 22} values, got {vec.size}")
        t = theta_len
        return FrameParams(vec[:t], vec[t:t + 10], vec[t + 10:t + 19].reshape(3, 3), vec[t + 19:])

    def pose_shape(self) -> PoseShape:
        return PoseShape(self.theta, self.beta)


@dataclass
class DeformedGaussians:
    """Renderer input: world-space Gaussians for one frame."""

    world_means: np.ndarray  # (N, 3)
    covariances: np.ndarray  # (N, 3, 3) symmetric PSD
    opacities: np.ndarray    # (N,) in (0, 1)
    sh_coeffs: np.ndarray    # (N, 3, B)

    @property
    def count(self) -> int:
        return self.world_means.shape[0]


def blend_transforms(transforms: JointTransforms, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Convex blend of per-joint rotation/translation parts: A = sum w_k A_k, b = sum w_k b_k."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != transforms.joint_count:
        raise ShapeError("weight row length != joint count")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
        raise ContractError("weight row is not a convex combination")
    a = np.einsum("k,kij->ij", w, transforms.rotations)
    b = w @ transforms.translations
    return a, b


def transform_position(p_c: np.ndarray, a: np.ndarray, b: np.ndarray,
                       r_t: np.ndarray, t_t: np.ndarray) -> np.ndarray:
    """Pose transform then world transform: (A p + b) row-multiplied by R^T, plus T."""
    posed = np.asarray(a) @ np.asarray(p_c, dtype=np.float64).reshape(3) + np.asarray(b).reshape(3)
    return np.asarray(r_t) @ posed + np.asarray(t_t).reshape(3)


def canonical_covariance(log_scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Sigma_c = R S S^T R^T with S = diag(exp(log_scale))."""
    r = quat_to_matrix(np.asarray(rotation, dtype=np.float64).reshape(4))
    s2 = np.exp(2.0 * np.asarray(log_scale, dtype=np.float64).reshape(3))
    return (r * s2[None, :]) @ r.T


def transform_covariance(sigma_c: np.ndarray, a: np.ndarray, r_t: np.ndarray) -> np.ndarray:
    """Sigma_t = R_t A Sigma_c A^T R_t^T, symmetrized against float drift."""
    m = np.asarray(r_t) @ np.asarray(a)
    out = m @ np.asarray(sigma_c, dtype=np.float64) @ m.T
    return 0.5 * (out + out.T)


def deform(avatar: CanonicalAvatar, model: PriorModel, fp: FrameParams) -> DeformedGaussians:
    """Canonical-to-target transform of every Gaussian; opacity and SH pass through."""
    if avatar.joint_count != model.joint_count:
        raise ShapeError("avatar skin weights do not match the prior's joint count")
    _, transforms = forward(model, fp.pose_shape())

    w = avatar.gauss_weights
    a = np.einsum("nk,kij->nij", w, transforms.rotations)   # (N,3,3)
    b = w @ transforms.translations                         # (N,3)

    posed = np.einsum("nij,nj->ni", a, avatar.positions) + b
    means = posed @ fp.global_rot.T + fp.global_trans

    rot_c = quat_to_matrix(avatar.rotations)                # (N,3,3)
    s2 = np.exp(2.0 * avatar.log_scales)                    # (N,3)
    sigma_c = np.einsum("nij,nj,nkj->nik", rot_c, s2, rot_c)
    m = np.einsum("ij,njk->nik", fp.global_rot, a)
    cov = np.einsum("nij,njk,nlk->nil", m, sigma_c, m)
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))

    opac = 1.0 / (1.0 + np.exp(-avatar.opacities))
    return DeformedGaussians(means, cov, opac, avatar.sh_coeffs.copy())


AVATAR_MAGIC = b"GAVA"
AVATAR_VERSION = 1


def save_avatar(avatar: CanonicalAvatar, path) -> None:
    with open(path, "wb") as f:
        f.write(AVATAR_MAGIC)
        deg = int(round(np.sqrt(avatar.sh_bands))) - 1
        f.write(struct.pack("<HIHB", AVATAR_VERSION, avatar.count, avatar.joint_count, deg))
        for arr in (avatar.positions, avatar.log_scales, avatar.rotations,
                    avatar.opacities, avatar.sh_coeffs, avatar.gauss_weights):
            f.write(np.asarray(arr, dtype="<f4").tobytes())


def load_avatar(path) -> CanonicalAvatar:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != AVATAR_MAGIC:
        raise CorruptionError("bad avatar file magic")
    version, n, j, deg = struct.unpack_from("<HIHB", data, 4)
    if version != AVATAR_VERSION:
        raise CorruptionError(f"unsupported avatar version {version}")
    bands = (deg + 1) ** 2
    off = 13

    def take(shape):
        nonlocal off
        cnt = int(np.prod(shape))
        if off + 4 * cnt > len(data):
            raise CorruptionError("truncated avatar file")
        arr = np.frombuffer(data, dtype="<f4", count=cnt, offset=off).astype(np.float64)
        off += 4 * cnt
        return arr.reshape(shape)

    positions = take((n, 3))
    log_scales = take((n, 3))
    rotations = take((n, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
    opacities = take((n,))
    sh = take((n, 3, bands))
    weights = take((n, j))
    weights /= weights.sum(axis=1, keepdims=True)
    return CanonicalAvatar(positions, log_scales, rotations, opacities, sh, weights)


FRAMES_MAGIC = b"GAFP"
FRAMES_VERSION = 1


def save_frame_params(frames: list[FrameParams], path) -> None:
    theta_len = frames[0].theta.size if frames else 72
    with open(path, "wb") as f:
        f.write(FRAMES_MAGIC)
        f.write(struct.pack("<HHI", FRAMES_VERSION, theta_len, len(frames)))
        for fp in frames:
            f.write(np.asarray(fp.to_vector(), dtype="<f4").tobytes())


def load_frame_params(path) -> list[FrameParams]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FRAMES_MAGIC:
        raise CorruptionError("bad frame params magic")
    version, theta_len, count = struct.unpack_from("<HHI", data, 4)
    if version != FRAMES_VERSION:
        raise CorruptionError(f"unsupported frame params version {version}")
    per = theta_len + 22
    need = 12 + 4 * per * count
    if len(data) < need:
        raise CorruptionError("truncated frame params file")
    vals = np.frombuffer(data, dtype="<f4", count=per * count, offset=12).astype(np.float64)
    return [FrameParams.from_vector(vals[i * per:(i + 1) * per], theta_len) for i in range(count)]


def frames_to_json(frames: list[FrameParams]) -> str:
    return json.dumps([fp.to_vector().tolist() for fp in frames])


def frames_from_json(text: str, theta_len: int = 72) -> list[FrameParams]:
    return [FrameParams.from_vector(np.array(v), theta_len) for v in json.loads(text)]
