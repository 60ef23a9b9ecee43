"""Bitstream layer: quantization, temporal 94-parameter coding, canonical avatar
coding, and the stream container.

Temporal coding is closed-loop inter prediction: each frame's quantized
indices are coded as deltas against the re-quantized *decoded* previous frame
(first frame: against the range midpoint), binarized sign + exp-Golomb and
arithmetic-coded. A per-payload raw fallback guarantees the coder never
expands beyond fixed-length packing plus a flag byte.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .avatar import CanonicalAvatar, FrameParams
from .entropy import Decoder, Encoder, make_contexts
from .errors import ConfigError, CorruptionError, ShapeError
from .prior import PriorModel, prior_to_bytes

STREAM_MAGIC = b"GAVC"
STREAM_VERSION = 1
QUANT_BLOCK_SIZE = 64
PRIOR_HASH_SIZE = 8
ROT_RANGE = (-1.0, 1.0)
QUAT_RANGE = (-1.0, 1.0)
WEIGHT_BITS = 16
_EG_CTX = 12  # prefix-position contexts per syntax element


@dataclass(frozen=True)
class QuantConfig:
    theta_bits: int = 12
    beta_bits: int = 10
    rot_bits: int = 14
    trans_bits: int = 16
    pos_bits: int = 14
    scale_bits: int = 10
    quat_bits: int = 10
    opacity_bits: int = 8
    sh_bits: int = 8
    theta_range: tuple[float, float] = (-np.pi, np.pi)
    beta_range: tuple[float, float] = (-3.0, 3.0)
    trans_range: tuple[float, float] = (-10.0, 10.0)
    scale_range: tuple[float, float] = (-12.0, 2.5)
    opacity_range: tuple[float, float] = (-8.0, 8.0)
    sh_range: tuple[float, float] = (-2.0, 2.0)

    def __post_init__(self):
        for name in ("theta_bits", "beta_bits", "rot_bits", "trans_bits", "pos_bits",
                     "scale_bits", "quat_bits", "opacity_bits", "sh_bits"):
            b = getattr(self, name)
            if not 2 <= b <= 24:
                raise ConfigError(f"{name} must be in [2, 24], got {b}")
        for name in ("theta_range", "beta_range", "trans_range", "scale_range",
                     "opacity_range", "sh_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise ConfigError(f"{name} must be a finite increasing pair")

    def pack(self) -> bytes:
        block = struct.pack(
            "<9B", self.theta_bits, self.beta_bits, self.rot_bits, self.trans_bits,
            self.pos_bits, self.scale_bits, self.quat_bits, self.opacity_bits, self.sh_bits)
        block += struct.pack("<12f", *self.theta_range, *self.beta_range, *self.trans_range,
                             *self.scale_range, *self.opacity_range, *self.sh_range)
        return block.ljust(QUANT_BLOCK_SIZE, b"\x00")

    @staticmethod
    def unpack(block: bytes) -> "QuantConfig":
        if len(block) != QUANT_BLOCK_SIZE:
            raise CorruptionError("quant config block has wrong size")
        bits = struct.unpack_from("<9B", block, 0)
        r = struct.unpack_from("<12f", block, 9)
        return QuantConfig(*bits,
                           theta_range=(r[0], r[1]), beta_range=(r[2], r[3]),
                           trans_range=(r[4], r[5]), scale_range=(r[6], r[7]),
                           opacity_range=(r[8], r[9]), sh_range=(r[10], r[11]))


# Four rate points, coarsest (q1) to finest (q4). q3 is the default depth set.
PROFILES: dict[str, QuantConfig] = {
    "q1": QuantConfig(theta_bits=8, beta_bits=7, rot_bits=9, trans_bits=11,
                      pos_bits=10, scale_bits=6, quat_bits=6, opacity_bits=5, sh_bits=5),
    "q2": QuantConfig(theta_bits=10, beta_bits=8, rot_bits=11, trans_bits=13,
                      pos_bits=12, scale_bits=8, quat_bits=8, opacity_bits=6, sh_bits=6),
    "q3": QuantConfig(),
    "q4": QuantConfig(theta_bits=14, beta_bits=12, rot_bits=16, trans_bits=18,
                      pos_bits=18, scale_bits=14, quat_bits=14, opacity_bits=10, sh_bits=10),
}


def quantize(x, lo: float, hi: float, bits: int):
    """Uniform mid-rise quantizer over [lo, hi]; out-of-range values clamp."""
    if not 2 <= bits <= 24:
        raise ConfigError(f"bits must be in [2, 24], got {bits}")
    step = (hi - lo) / (1 << bits)
    q = np.floor((np.asarray(x, dtype=np.float64) - lo) / step)
    return np.clip(q, 0, (1 << bits) - 1).astype(np.int64)


def dequantize(q, lo: float, hi: float, bits: int):
    """Bin center of quantizer index q."""
    step = (hi - lo) / (1 << bits)
    return lo + (np.asarray(q, dtype=np.float64) + 0.5) * step


def gram_schmidt(m: np.ndarray) -> np.ndarray:
    """Orthonormalize a near-rotation 3x3 matrix (row-wise), det forced to +1."""
    m = np.asarray(m, dtype=np.float64).reshape(3, 3).copy()
    r0 = m[0] / np.linalg.norm(m[0])
    r1 = m[1] - (m[1] @ r0) * r0
    r1 /= np.linalg.norm(r1)
    r2 = np.cross(r0, r1)
    return np.stack([r0, r1, r2])


def _frame_layout(q: QuantConfig, theta_len: int):
    """(count, lo, hi, bits, eg-context-group) per syntax element."""
    return [
        (theta_len, *q.theta_range, q.theta_bits, 0),
        (10, *q.beta_range, q.beta_bits, 1),
        (9, *ROT_RANGE, q.rot_bits, 2),
        (3, *q.trans_range, q.trans_bits, 3),
    ]


def _quantize_frame(fp: FrameParams, q: QuantConfig) -> np.ndarray:
    vec = fp.to_vector()
    layout = _frame_layout(q, fp.theta.size)
    out = []
    pos = 0
    for count, lo, hi, bits, _ in layout:
        out.append(quantize(vec[pos:pos + count], lo, hi, bits))
        pos += count
    return np.concatenate(out)


def _dequantize_frame(idx: np.ndarray, q: QuantConfig, theta_len: int,
                      orthonormalize: bool = True) -> FrameParams:
    layout = _frame_layout(q, theta_len)
    vals = np.empty(idx.size)
    pos = 0
    for count, lo, hi, bits, _ in layout:
        vals[pos:pos + count] = dequantize(idx[pos:pos + count], lo, hi, bits)
        pos += count
    fp = FrameParams.from_vector(vals, theta_len)
    if orthonormalize:
        fp = FrameParams(fp.theta, fp.beta, gram_schmidt(fp.global_rot), fp.global_trans)
    return fp


def _midpoint_indices(q: QuantConfig, theta_len: int) -> np.ndarray:
    layout = _frame_layout(q, theta_len)
    return np.concatenate([np.full(count, 1 << (bits - 1), dtype=np.int64)
                           for count, _, _, bits, _ in layout])


def _pack_raw(idx: np.ndarray, widths: np.ndarray) -> bytes:
    bits: list[int] = []
    for v, b in zip(idx.tolist(), widths.tolist()):
        bits.extend((v >> i) & 1 for i in range(b - 1, -1, -1))
    pad = (-len(bits)) % 8
    return np.packbits(np.array(bits + [0] * pad, dtype=np.uint8)).tobytes()


def _unpack_raw(data: bytes, widths: np.ndarray) -> np.ndarray:
    need = int(widths.sum())
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if bits.size < need:
        raise CorruptionError("truncated raw frame payload")
    out = np.empty(widths.size, dtype=np.int64)
    pos = 0
    for i, b in enumerate(widths.tolist()):
        v = 0
        for j in range(b):
            v = (v << 1) | int(bits[pos + j])
        out[i] = v
        pos += b
    return out


def _frame_widths(q: QuantConfig, theta_len: int) -> np.ndarray:
    return np.concatenate([np.full(count, bits, dtype=np.int64)
                           for count, _, _, bits, _ in _frame_layout(q, theta_len)])


def encode_frame(fp: FrameParams, prev: FrameParams | None, q: QuantConfig) -> bytes:
    """Code one frame's parameters. `prev` must be the *decoded* previous frame
    (closed-loop prediction), or None for the first frame."""
    idx = _quantize_frame(fp, q)
    pred = _quantize_frame(prev, q) if prev is not None else _midpoint_indices(q, fp.theta.size)
    delta = idx - pred

    enc = Encoder()
    ctxs = [make_contexts(_EG_CTX) for _ in range(4)]
    pos = 0
    for count, _, _, _, group in _frame_layout(q, fp.theta.size):
        for v in delta[pos:pos + count].tolist():
            enc.encode_signed(v, ctxs[group])
        pos += count
    coded = enc.finish()

    raw = _pack_raw(idx, _frame_widths(q, fp.theta.size))
    if len(raw) < len(coded):
        return b"\x01" + raw
    return b"\x00" + coded


def decode_frame(data: bytes, prev: FrameParams | None, q: QuantConfig,
                 theta_len: int = 72) -> FrameParams:
    if len(data) < 1:
        raise CorruptionError("empty frame payload")
    widths = _frame_widths(q, theta_len)
    if data[0] == 1:
        idx = _unpack_raw(data[1:], widths)
    elif data[0] == 0:
        pred = (_quantize_frame(prev, q) if prev is not None
                else _midpoint_indices(q, theta_len))
        dec = Decoder(data[1:])
        ctxs = [make_contexts(_EG_CTX) for _ in range(4)]
        delta = np.empty(widths.size, dtype=np.int64)
        pos = 0
        for count, _, _, _, group in _frame_layout(q, theta_len):
            for i in range(count):
                delta[pos + i] = dec.decode_signed(ctxs[group])
            pos += count
        idx = pred + delta
        if np.any(idx < 0) or np.any(idx >= (1 << widths)):
            raise CorruptionError("decoded frame index out of range")
    else:
        raise CorruptionError(f"unknown frame payload mode {data[0]}")
    return _dequantize_frame(idx, q, theta_len)


def encode_sequence(frames: list[FrameParams], q: QuantConfig) -> list[bytes]:
    """Closed-loop encoding of a frame sequence."""
    payloads = []
    prev = None
    for fp in frames:
        payloads.append(encode_frame(fp, prev, q))
        prev = _dequantize_frame(_quantize_frame(fp, q), q, fp.theta.size)
    return payloads


def decode_sequence(payloads: list[bytes], q: QuantConfig, theta_len: int = 72
                    ) -> list[FrameParams]:
    frames: list[FrameParams] = []
    prev = None
    for data in payloads:
        fp = decode_frame(data, prev, q, theta_len)
        frames.append(fp)
        prev = fp
    return frames


def _morton_key(ix: int, iy: int, iz: int, bits: int) -> int:
    key = 0
    for b in range(bits):
        key |= ((ix >> b) & 1) << (3 * b)
        key |= ((iy >> b) & 1) << (3 * b + 1)
        key |= ((iz >> b) & 1) << (3 * b + 2)
    return key


def _aabb(positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    hi = np.maximum(hi, lo + 1e-6)  # degenerate axes still need a finite range
    return lo, hi


def encode_canonical(avatar: CanonicalAvatar, q: QuantConfig) -> bytes:
    """Quantize all attributes, traverse in Morton order of quantized positions,
    delta-code per attribute; skin weights are coded losslessly (sparse)."""
    n, j, bands = avatar.count, avatar.joint_count, avatar.sh_bands
    lo, hi = _aabb(avatar.positions)
    head = struct.pack("<IHB", n, j, bands) + struct.pack("<6f", *lo, *hi)
    lo32 = np.frombuffer(struct.pack("<3f", *lo), dtype="<f4").astype(np.float64)
    hi32 = np.frombuffer(struct.pack("<3f", *hi), dtype="<f4").astype(np.float64)

    pos_idx = np.stack([quantize(avatar.positions[:, a], lo32[a], hi32[a], q.pos_bits)
                        for a in range(3)], axis=1)
    keys = [_morton_key(int(px), int(py), int(pz), q.pos_bits) for px, py, pz in pos_idx]
    order = np.lexsort((np.arange(n), np.array(keys)))

    scale_idx = quantize(avatar.log_scales, *q.scale_range, q.scale_bits)
    quat_idx = quantize(avatar.rotations, *QUAT_RANGE, q.quat_bits)
    opa_idx = quantize(avatar.opacities, *q.opacity_range, q.opacity_bits)
    sh_idx = quantize(avatar.sh_coeffs.reshape(n, -1), *q.sh_range, q.sh_bits)

    attrs = [
        (pos_idx[order], 1 << (q.pos_bits - 1)),
        (scale_idx[order], 1 << (q.scale_bits - 1)),
        (quat_idx[order], 1 << (q.quat_bits - 1)),
        (opa_idx[order].reshape(n, 1), 1 << (q.opacity_bits - 1)),
        (sh_idx[order], 1 << (q.sh_bits - 1)),
    ]

    enc = Encoder()
    ctx_attr = [make_contexts(_EG_CTX) for _ in range(len(attrs))]
    for (mat, mid), ctxs in zip(attrs, ctx_attr):
        prev = np.full(mat.shape[1], mid, dtype=np.int64)
        for row in mat:
            for d in (row - prev).tolist():
                enc.encode_signed(d, ctxs)
            prev = row

    joint_bits = max(int(j - 1).bit_length(), 1)
    ctx_nnz = make_contexts(4)
    w = avatar.gauss_weights[order]
    for row in w:
        nz = np.nonzero(row)[0]
        enc.encode_unsigned(len(nz), ctx_nnz)
        for k in nz.tolist():
            enc.encode_bypass_bits(k, joint_bits)
            enc.encode_bypass_bits(int(round(row[k] * ((1 << WEIGHT_BITS) - 1))), WEIGHT_BITS)
    return head + enc.finish()


def decode_canonical(data: bytes, q: QuantConfig) -> CanonicalAvatar:
    """Inverse of encode_canonical; Gaussians come back in Morton order."""
    if len(data) < 31:
        raise CorruptionError("canonical payload too short")
    n, j, bands = struct.unpack_from("<IHB", data, 0)
    box = struct.unpack_from("<6f", data, 7)
    lo, hi = np.array(box[:3], dtype=np.float64), np.array(box[3:], dtype=np.float64)
    dec = Decoder(data[31:])

    shapes = [(n, 3), (n, 3), (n, 4), (n, 1), (n, 3 * bands)]
    mids = [1 << (q.pos_bits - 1), 1 << (q.scale_bits - 1), 1 << (q.quat_bits - 1),
            1 << (q.opacity_bits - 1), 1 << (q.sh_bits - 1)]
    mats = []
    for (rows, cols), mid in zip(shapes, mids):
        ctxs = make_contexts(_EG_CTX)
        mat = np.empty((rows, cols), dtype=np.int64)
        prev = np.full(cols, mid, dtype=np.int64)
        for r in range(rows):
            for c in range(cols):
                mat[r, c] = prev[c] + dec.decode_signed(ctxs)
            prev = mat[r]
        mats.append(mat)
    pos_idx, scale_idx, quat_idx, opa_idx, sh_idx = mats

    positions = np.stack([dequantize(pos_idx[:, a], lo[a], hi[a], q.pos_bits)
                          for a in range(3)], axis=1)
    log_scales = dequantize(scale_idx, *q.scale_range, q.scale_bits)
    quats = dequantize(quat_idx, *QUAT_RANGE, q.quat_bits)
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    if np.any(norms < 1e-9):
        raise CorruptionError("decoded quaternion collapsed to zero")
    quats /= norms
    opacities = np.clip(dequantize(opa_idx[:, 0], *q.opacity_range, q.opacity_bits),
                        *q.opacity_range)
    sh = dequantize(sh_idx, *q.sh_range, q.sh_bits).reshape(n, 3, bands)

    joint_bits = max(int(j - 1).bit_length(), 1)
    ctx_nnz = make_contexts(4)
    weights = np.zeros((n, j))
    scale = (1 << WEIGHT_BITS) - 1
    for r in range(n):
        nnz = dec.decode_unsigned(ctx_nnz)
        if nnz > min(4, j):
            raise CorruptionError("decoded skin weight row has too many entries")
        for _ in range(nnz):
            k = dec.decode_bypass_bits(joint_bits)
            if k >= j:
                raise CorruptionError("decoded joint index out of range")
            weights[r, k] = dec.decode_bypass_bits(WEIGHT_BITS) / scale
    sums = weights.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise CorruptionError("decoded skin weight row is empty")
    weights /= sums
    return CanonicalAvatar(positions, log_scales, quats, opacities, sh, weights)


@dataclass
class StreamHeader:
    gaussian_count: int
    joint_count: int
    sh_degree: int
    frame_count: int
    quant: QuantConfig
    prior_hash: bytes

    def pack(self) -> bytes:
        return (STREAM_MAGIC
                + struct.pack("<HHIHBBI", STREAM_VERSION, 0, self.gaussian_count,
                              self.joint_count, self.sh_degree, 0, self.frame_count)
                + self.quant.pack() + self.prior_hash)


# magic + (version, flags, count, joints, sh degree, reserved, frames) + quant + hash
_FIXED_FIELDS_SIZE = struct.calcsize("<HHIHBBI")
HEADER_SIZE = 4 + _FIXED_FIELDS_SIZE + QUANT_BLOCK_SIZE + PRIOR_HASH_SIZE


@dataclass
class AvatarBitstream:
    header: StreamHeader
    canonical_payload: bytes
    frame_payloads: list[bytes]

    @property
    def total_size(self) -> int:
        return (HEADER_SIZE + 8 + len(self.canonical_payload)
                + sum(4 + len(p) for p in self.frame_payloads))


def prior_hash(model: PriorModel) -> bytes:
    return hashlib.sha256(prior_to_bytes(model)).digest()[:PRIOR_HASH_SIZE]


def write_stream(stream: AvatarBitstream, path) -> None:
    if stream.header.frame_count != len(stream.frame_payloads):
        raise ShapeError("header frame count != number of frame payloads")
    with open(path, "wb") as f:
        f.write(stream.header.pack())
        f.write(struct.pack("<Q", len(stream.canonical_payload)))
        f.write(stream.canonical_payload)
        for p in stream.frame_payloads:
            f.write(struct.pack("<I", len(p)))
            f.write(p)


def read_stream(path) -> AvatarBitstream:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < HEADER_SIZE + 8:
        raise CorruptionError("stream shorter than header")
    if data[:4] != STREAM_MAGIC:
        raise CorruptionError("bad stream magic")
    version, _flags, n, j, sh_degree, _res, frame_count = struct.unpack_from("<HHIHBBI", data, 4)
    if version != STREAM_VERSION:
        raise CorruptionError(f"unsupported stream version {version}")
    off = 4 + _FIXED_FIELDS_SIZE
    quant = QuantConfig.unpack(data[off:off + QUANT_BLOCK_SIZE])
    off += QUANT_BLOCK_SIZE
    phash = data[off:off + PRIOR_HASH_SIZE]
    off += PRIOR_HASH_SIZE
    (can_len,) = struct.unpack_from("<Q", data, off)
    off += 8
    if off + can_len > len(data):
        raise CorruptionError("canonical payload truncated")
    canonical = data[off:off + can_len]
    off += can_len
    payloads = []
    for _ in range(frame_count):
        if off + 4 > len(data):
            raise CorruptionError("frame payload table truncated")
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + ln > len(data):
            raise CorruptionError("frame payload truncated")
        payloads.append(data[off:off + ln])
        off += ln
    if off != len(data):
        raise CorruptionError("trailing bytes after declared stream contents")
    header = StreamHeader(n, j, sh_degree, frame_count, quant, phash)
    return AvatarBitstream(header, canonical, payloads)


def encode_stream(avatar: CanonicalAvatar, frames: list[FrameParams],
                  q: QuantConfig, model: PriorModel) -> AvatarBitstream:
    sh_degree = int(round(np.sqrt(avatar.sh_bands))) - 1
    header = StreamHeader(avatar.count, avatar.joint_count, sh_degree,
                          len(frames), q, prior_hash(model))
    return AvatarBitstream(header, encode_canonical(avatar, q),
                           encode_sequence(frames, q))


def decode_stream(stream: AvatarBitstream) -> tuple[CanonicalAvatar, list[FrameParams]]:
    q = stream.header.quant
    avatar = decode_canonical(stream.canonical_payload, q)
    theta_len = 3 * stream.header.joint_count
    frames = decode_sequence(stream.frame_payloads, q, theta_len)
    return avatar, frames
