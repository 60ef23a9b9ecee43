"""Parametric human prior: skeleton, shape blendshapes, skinning weights, forward kinematics.

The prior is a procedurally generated stand-in with the standard layout of
parametric body models: 24 joints driven by 72 axis-angle pose scalars and
10 shape coefficients. Joint counts other than 24 are supported for testing;
the pose vector then has 3*J entries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

ROOT_SENTINEL = -1
SHAPE_DIM = 10

# SMPL-style kinematic tree for the 24-joint skeleton.
_HUMANOID_PARENTS = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
    9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
]

# Star-shaped rest skeleton (y up, meters): arms horizontal, legs spread.
_HUMANOID_JOINTS = np.array([
    [0.00, 0.00, 0.00],    # pelvis
    [0.10, -0.08, 0.00],   # left hip
    [-0.10, -0.08, 0.00],  # right hip
    [0.00, 0.12, 0.00],    # spine1
    [0.18, -0.50, 0.00],   # left knee
    [-0.18, -0.50, 0.00],  # right knee
    [0.00, 0.25, 0.00],    # spine2
    [0.26, -0.90, 0.00],   # left ankle
    [-0.26, -0.90, 0.00],  # right ankle
    [0.00, 0.38, 0.00],    # spine3
    [0.30, -0.98, 0.10],   # left foot
    [-0.30, -0.98, 0.10],  # right foot
    [0.00, 0.55, 0.00],    # neck
    [0.08, 0.48, 0.00],    # left collar
    [-0.08, 0.48, 0.00],   # right collar
    [0.00, 0.68, 0.00],    # head
    [0.20, 0.50, 0.00],    # left shoulder
    [-0.20, 0.50, 0.00],   # right shoulder
    [0.46, 0.50, 0.00],    # left elbow
    [-0.46, 0.50, 0.00],   # right elbow
    [0.72, 0.50, 0.00],    # left wrist
    [-0.72, 0.50, 0.00],   # right wrist
    [0.82, 0.50, 0.00],    # left hand
    [-0.82, 0.50, 0.00],   # right hand
])

MAX_SKIN_BONES = 4


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Axis-angle 3-vector to rotation matrix; the zero vector maps to identity."""
    v = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return np.eye(3)
    axis = v / angle
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class PoseShape:
    """Pose (axis-angle per joint) and shape coefficients."""

    theta: np.ndarray  # (3*J,)
    beta: np.ndarray   # (SHAPE_DIM,)

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64).reshape(-1))
        if self.theta.size % 3 != 0:
            raise ShapeError(f"theta length {self.theta.size} is not a multiple of 3")
        if self.beta.size != SHAPE_DIM:
            raise ShapeError(f"beta must have {SHAPE_DIM} entries, got {self.beta.size}")


@dataclass(frozen=True)
class JointTransforms:
    """Per-joint rigid transform relative to the shaped rest pose."""

    rotations: np.ndarray        # (J, 3, 3)
    translations: np.ndarray     # (J, 3)
    joint_positions: np.ndarray  # (J, 3)

    @property
    def joint_count(self) -> int:
        return self.rotations.shape[0]


@dataclass(frozen=True)
class PriorModel:
    parent: np.ndarray             # (J,) int, ROOT_SENTINEL for the root
    rest_joints: np.ndarray        # (J, 3)
    rest_vertices: np.ndarray      # (V, 3)
    shape_basis: np.ndarray        # (V, 3, SHAPE_DIM)
    joint_shape_basis: np.ndarray  # (J, 3, SHAPE_DIM)
    skin_weights: np.ndarray       # (V, J) row-stochastic, <=4 nonzeros per row
    canonical_pose: np.ndarray     # (3*J,)
    canonical_shape: np.ndarray    # (SHAPE_DIM,)

    def __post_init__(self):
        for name in ("parent", "rest_joints", "rest_vertices", "shape_basis",
                     "joint_shape_basis", "skin_weights", "canonical_pose",
                     "canonical_shape"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()

    @property
    def joint_count(self) -> int:
        return self.parent.shape[0]

    @property
    def vertex_count(self) -> int:
        return self.rest_vertices.shape[0]

    def canonical(self) -> PoseShape:
        return PoseShape(self.canonical_pose, self.canonical_shape)

    def _validate(self):
        j, v = self.joint_count, self.vertex_count
        if self.parent[0] != ROOT_SENTINEL:
            raise ConfigError("joint 0 must be the root")
        for k in range(1, j):
            if not (0 <= self.parent[k] < k):
                raise ConfigError(f"parent of joint {k} must precede it, got {self.parent[k]}")
        if self.rest_joints.shape != (j, 3) or self.rest_vertices.shape != (v, 3):
            raise ShapeError("rest geometry shape mismatch")
        if self.shape_basis.shape != (v, 3, SHAPE_DIM):
            raise ShapeError("shape_basis shape mismatch")
        if self.joint_shape_basis.shape != (j, 3, SHAPE_DIM):
            raise ShapeError("joint_shape_basis shape mismatch")
        if self.skin_weights.shape != (v, j):
            raise ShapeError("skin_weights shape mismatch")
        if self.canonical_pose.shape != (3 * j,) or self.canonical_shape.shape != (SHAPE_DIM,):
            raise ShapeError("canonical parameter shape mismatch")
        w = self.skin_weights
        if np.any(w < 0):
            raise ConfigError("skin weights must be non-negative")
        if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-9:
            raise ConfigError("skin weight rows must sum to 1")
        if np.max(np.count_nonzero(w, axis=1)) > MAX_SKIN_BONES:
            raise ConfigError(f"more than {MAX_SKIN_BONES} bones influence a vertex")


def forward(model: PriorModel, ps: PoseShape) -> tuple[np.ndarray, JointTransforms]:
    """Pose the prior: shaped rest geometry, kinematic chain, LBS-skinned vertices.

    Transforms are relative to the shaped rest pose, so the canonical pose
    (all-zero axis angles) yields identity per-joint transforms.
    """
    j = model.joint_count
    if ps.theta.size != 3 * j:
        raise ShapeError(f"theta length {ps.theta.size} != 3*J = {3 * j}")
    shaped_joints = model.rest_joints + model.joint_shape_basis @ ps.beta
    shaped_verts = model.rest_vertices + model.shape_basis @ ps.beta

    local = ps.theta.reshape(j, 3)
    rot_world = np.empty((j, 3, 3))
    pos_world = np.empty((j, 3))
    rot_world[0] = rodrigues(local[0])
    pos_world[0] = shaped_joints[0]
    for k in range(1, j):
        p = model.parent[k]
        rot_world[k] = rot_world[p] @ rodrigues(local[k])
        pos_world[k] = pos_world[p] + rot_world[p] @ (shaped_joints[k] - shaped_joints[p])

    # Affine rest->posed per joint: x -> W x + b with b = pos - W @ rest.
    trans = pos_world - np.einsum("kij,kj->ki", rot_world, shaped_joints)
    transforms = JointTransforms(rot_world, trans, pos_world)

    skinned = np.einsum("vk,kij,vj->vi", model.skin_weights, rot_world, shaped_verts)
    skinned += model.skin_weights @ trans
    return skinned, transforms


def _generic_skeleton(rng: np.random.Generator, joint_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic tree with pairwise joint separation > 2 cm."""
    parent = np.full(joint_count, ROOT_SENTINEL, dtype=np.int32)
    joints = np.zeros((joint_count, 3))
    for k in range(1, joint_count):
        parent[k] = (k - 1) // 2
        while True:
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            cand = joints[parent[k]] + 0.25 * d
            if np.min(np.linalg.norm(joints[:k] - cand, axis=1)) > 0.02:
                joints[k] = cand
                break
    return parent, joints


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point (M,3) to each segment a[s]->b[s], result (M,S)."""
    ab = b - a                                        # (S,3)
    ap = points[:, None, :] - a[None, :, :]           # (M,S,3)
    denom = np.maximum(np.einsum("sj,sj->s", ab, ab), 1e-12)
    t = np.clip(np.einsum("msj,sj->ms", ap, ab) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(points[:, None, :] - closest, axis=2)


def build_toy_prior(seed: int, joint_count: int = 24, vertex_count: int = 600) -> PriorModel:
    """Procedural body prior: capsule-sampled vertices, inverse-distance skinning.

    Deterministic for a given seed; all arrays are rounded through float32 so
    a file round-trip is exact.
    """
    if joint_count < 2:
        raise ConfigError(f"joint_count must be >= 2, got {joint_count}")
    if vertex_count < joint_count:
        raise ConfigError(f"vertex_count {vertex_count} < joint_count {joint_count}")
    rng = np.random.default_rng(seed)

    if joint_count == 24:
        parent = np.array(_HUMANOID_PARENTS, dtype=np.int32)
        joints = _HUMANOID_JOINTS.copy()
    else:
        parent, joints = _generic_skeleton(rng, joint_count)

    bones = np.array([(parent[k], k) for k in range(1, joint_count)])
    seg_a, seg_b = joints[bones[:, 0]], joints[bones[:, 1]]

    bone_idx = rng.integers(0, len(bones), size=vertex_count)
    t = rng.uniform(0.0, 1.0, size=vertex_count)
    axis_pts = seg_a[bone_idx] + t[:, None] * (seg_b[bone_idx] - seg_a[bone_idx])
    radial = rng.normal(size=(vertex_count, 3))
    radial /= np.linalg.norm(radial, axis=1, keepdims=True)
    radius = rng.uniform(0.02, 0.06, size=vertex_count)
    vertices = axis_pts + radius[:, None] * radial

    # Weights: inverse distance to the 4 nearest bones; each bone binds to
    # its proximal joint, duplicate joints merged.
    dist = _segment_distances(vertices, seg_a, seg_b)   # (V, S)
    weights = np.zeros((vertex_count, joint_count))
    order = np.argsort(dist, axis=1, kind="stable")[:, :MAX_SKIN_BONES]
    for v in range(vertex_count):
        for s in order[v]:
            weights[v, bones[s, 0]] += 1.0 / (dist[v, s] + 1e-3)
    weights /= weights.sum(axis=1, keepdims=True)

    # Shape bases: each coefficient drives one low-frequency wave, evaluated
    # at both the vertices and the joints so the skeleton follows the surface.
    basis_rng = np.random.default_rng((seed, 0xB0D7))
    shape_basis = np.empty((vertex_count, 3, SHAPE_DIM))
    joint_basis = np.empty((joint_count, 3, SHAPE_DIM))
    for b in range(SHAPE_DIM):
        wave = basis_rng.normal(scale=3.0, size=3)
        phase = basis_rng.uniform(0, 2 * np.pi)
        direction = basis_rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        shape_basis[:, :, b] = np.sin(vertices @ wave + phase)[:, None] * direction
        joint_basis[:, :, b] = np.sin(joints @ wave + phase)[:, None] * direction
    # Bound |basis . beta| by 5 cm for |beta|_inf <= 2.
    norm = np.linalg.norm(shape_basis, axis=1).sum(axis=1)     # (V,)
    norm = max(np.max(norm), np.max(np.linalg.norm(joint_basis, axis=1).sum(axis=1)))
    scale = 0.025 / norm
    shape_basis *= scale
    joint_basis *= scale

    f32 = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)
    return PriorModel(
        parent=parent,
        rest_joints=f32(joints),
        rest_vertices=f32(vertices),
        shape_basis=f32(shape_basis),
        joint_shape_basis=f32(joint_basis),
        skin_weights=_renorm_f32(weights),
        canonical_pose=np.zeros(3 * joint_count),
        canonical_shape=np.zeros(SHAPE_DIM),
    )


def _renorm_f32(weights: np.ndarray) -> np.ndarray:
    """Round weights through float32 then renormalize rows in float64."""
    w = np.asarray(weights, dtype=np.float32).astype(np.float64)
    return w / w.sum(axis=1, keepdims=True)


PRIOR_MAGIC = b"GAPM"
PRIOR_VERSION = 1


def prior_to_bytes(model: PriorModel) -> bytes:
    parts = [PRIOR_MAGIC,
             struct.pack("<HHI", PRIOR_VERSION, model.joint_count, model.vertex_count),
             model.parent.astype("<i2").tobytes()]
    for arr in (model.rest_joints, model.rest_vertices, model.shape_basis,
                model.joint_shape_basis, model.skin_weights,
                model.canonical_pose, model.canonical_shape):
        parts.append(np.asarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_prior(model: PriorModel, path) -> None:
    with open(path, "wb") as f:
        f.write(prior_to_bytes(model))


def load_prior(path) -> PriorModel:
    from .errors import CorruptionError
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != PRIOR_MAGIC:
        raise CorruptionError("bad prior file magic")
    version, j, v = struct.unpack_from("<HHI", data, 4)
    if version != PRIOR_VERSION:
        raise CorruptionError(f"unsupported prior version {version}")
    off = 12
    parent = np.frombuffer(data, dtype="<i2", count=j, offset=off).astype(np.int32)
    off += 2 * j

    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        if off + 4 * n > len(data):
            raise CorruptionError("truncated prior file")
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64)
        off += 4 * n
        return arr.reshape(shape)

    rest_joints = take((j, 3))
    rest_vertices = take((v, 3))
    shape_basis = take((v, 3, SHAPE_DIM))
    joint_shape_basis = take((j, 3, SHAPE_DIM))
    skin_weights = _renorm_f32(take((v, j)))
    canonical_pose = take((3 * j,))
    canonical_shape = take((SHAPE_DIM,))
    return PriorModel(parent, rest_joints, rest_vertices, shape_basis,
                      joint_shape_basis, skin_weights, canonical_pose, canonical_shape)
