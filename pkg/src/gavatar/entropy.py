"""Adaptive binary arithmetic coder with per-context probability estimation.

Count-based contexts (initialized 1/1, counts halved when their sum reaches
1024) drive a 32-bit low/high coder with underflow handling. Bypass coding
uses a fixed 1/2 split. Exp-Golomb order-0 binarization helpers sit on top
for magnitude coding.
"""

from __future__ import annotations

import numpy as np

from .errors import CorruptionError

_TOP = (1 << 32) - 1
_HALF = 1 << 31
_QUARTER = 1 << 30
_THREE_QUARTERS = 3 << 30
CONTEXT_RESCALE = 1024
MAX_EG_PREFIX = 40


class ContextModel:
    """Adaptive binary probability from symbol counts."""

    __slots__ = ("c0", "c1")

    def __init__(self):
        self.c0 = 1
        self.c1 = 1

    def update(self, bit: int) -> None:
        if bit:
            self.c1 += 1
        else:
            self.c0 += 1
        if self.c0 + self.c1 >= CONTEXT_RESCALE:
            self.c0 = (self.c0 + 1) >> 1
            self.c1 = (self.c1 + 1) >> 1


class Encoder:
    def __init__(self):
        self.low = 0
        self.high = _TOP
        self.pending = 0
        self._bits: list[int] = []
        self._finished = False

    def _emit(self, bit: int) -> None:
        self._bits.append(bit)
        inv = 1 - bit
        while self.pending:
            self._bits.append(inv)
            self.pending -= 1

    def _renorm(self) -> None:
        while True:
            if self.high < _HALF:
                self._emit(0)
            elif self.low >= _HALF:
                self._emit(1)
                self.low -= _HALF
                self.high -= _HALF
            elif self.low >= _QUARTER and self.high < _THREE_QUARTERS:
                self.pending += 1
                self.low -= _QUARTER
                self.high -= _QUARTER
            else:
                return
            self.low <<= 1
            self.high = (self.high << 1) | 1

    def _encode(self, bit: int, c0: int, total: int) -> None:
        span = self.high - self.low + 1
        split = self.low + (span * c0) // total - 1
        if bit:
            self.low = split + 1
        else:
            self.high = split
        self._renorm()

    def encode_bit(self, ctx: ContextModel, bit: int) -> None:
        self._encode(bit, ctx.c0, ctx.c0 + ctx.c1)
        ctx.update(bit)

    def encode_bypass(self, bit: int) -> None:
        self._encode(bit, 1, 2)

    def encode_bypass_bits(self, value: int, count: int) -> None:
        for i in range(count - 1, -1, -1):
            self.encode_bypass((value >> i) & 1)

    def encode_unsigned(self, value: int, contexts: list[ContextModel]) -> None:
        """Exp-Golomb order 0: unary-coded prefix length then bypass suffix."""
        m = value + 1
        k = m.bit_length() - 1
        for i in range(k):
            self.encode_bit(contexts[min(i, len(contexts) - 1)], 1)
        self.encode_bit(contexts[min(k, len(contexts) - 1)], 0)
        self.encode_bypass_bits(m - (1 << k), k)

    def encode_signed(self, value: int, contexts: list[ContextModel]) -> None:
        self.encode_unsigned(abs(value), contexts)
        if value != 0:
            self.encode_bypass(1 if value < 0 else 0)

    def finish(self) -> bytes:
        if not self._finished:
            self.pending += 1
            if self.low < _QUARTER:
                self._emit(0)
            else:
                self._emit(1)
            self._finished = True
        bits = self._bits
        pad = (-len(bits)) % 8
        arr = np.array(bits + [0] * pad, dtype=np.uint8)
        return np.packbits(arr).tobytes()


class Decoder:
    # The value register is primed with 32 bits, so reads past the end of the
    # payload are expected; anything beyond the flush slack is corruption.
    _OVERDRAW_LIMIT = 64

    def __init__(self, data: bytes):
        self._bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8)).tolist()
        self._pos = 0
        self._overdraw = 0
        self.low = 0
        self.high = _TOP
        self.value = 0
        for _ in range(32):
            self.value = (self.value << 1) | self._next_bit()

    def _next_bit(self) -> int:
        if self._pos < len(self._bits):
            bit = self._bits[self._pos]
            self._pos += 1
            return bit
        self._overdraw += 1
        if self._overdraw > self._OVERDRAW_LIMIT:
            raise CorruptionError("arithmetic decoder ran past end of stream")
        return 0

    def _renorm(self) -> None:
        while True:
            if self.high < _HALF:
                pass
            elif self.low >= _HALF:
                self.low -= _HALF
                self.high -= _HALF
                self.value -= _HALF
            elif self.low >= _QUARTER and self.high < _THREE_QUARTERS:
                self.low -= _QUARTER
                self.high -= _QUARTER
                self.value -= _QUARTER
            else:
                return
            self.low <<= 1
            self.high = (self.high << 1) | 1
            self.value = (self.value << 1) | self._next_bit()

    def _decode(self, c0: int, total: int) -> int:
        span = self.high - self.low + 1
        split = self.low + (span * c0) // total - 1
        if self.value <= split:
            bit = 0
            self.high = split
        else:
            bit = 1
            self.low = split + 1
        self._renorm()
        return bit

    def decode_bit(self, ctx: ContextModel) -> int:
        bit = self._decode(ctx.c0, ctx.c0 + ctx.c1)
        ctx.update(bit)
        return bit

    def decode_bypass(self) -> int:
        return self._decode(1, 2)

    def decode_bypass_bits(self, count: int) -> int:
        value = 0
        for _ in range(count):
            value = (value << 1) | self.decode_bypass()
        return value

    def decode_unsigned(self, contexts: list[ContextModel]) -> int:
        k = 0
        while self.decode_bit(contexts[min(k, len(contexts) - 1)]):
            k += 1
            if k > MAX_EG_PREFIX:
                raise CorruptionError("exp-Golomb prefix too long (corrupt stream)")
        return ((1 << k) | self.decode_bypass_bits(k)) - 1

    def decode_signed(self, contexts: list[ContextModel]) -> int:
        mag = self.decode_unsigned(contexts)
        if mag and self.decode_bypass():
            return -mag
        return mag


def make_contexts(count: int) -> list[ContextModel]:
    return [ContextModel() for _ in range(count)]


def ac_encode(bits, context_ids, num_contexts: int) -> bytes:
    """Encode a bit sequence where bit i adapts context context_ids[i]."""
    ctxs = make_contexts(num_contexts)
    enc = Encoder()
    for bit, cid in zip(bits, context_ids, strict=True):
        enc.encode_bit(ctxs[cid], int(bit))
    return enc.finish()


def ac_decode(data: bytes, context_ids, num_contexts: int) -> list[int]:
    """Inverse of ac_encode for the same context id sequence."""
    ctxs = make_contexts(num_contexts)
    dec = Decoder(data)
    return [dec.decode_bit(ctxs[cid]) for cid in context_ids]
