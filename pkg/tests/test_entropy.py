import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gavatar.entropy import (CONTEXT_RESCALE, ContextModel, Decoder, Encoder,
                             ac_decode, ac_encode, make_contexts)
from gavatar.errors import CorruptionError


class TestContextModel:
    def test_initial_counts(self):
        ctx = ContextModel()
        assert ctx.c0 == 1 and ctx.c1 == 1

    def test_update_tracks_counts(self):
        ctx = ContextModel()
        for _ in range(5):
            ctx.update(1)
        ctx.update(0)
        assert (ctx.c0, ctx.c1) == (2, 6)

    def test_rescale_halves_counts(self):
        ctx = ContextModel()
        for _ in range(CONTEXT_RESCALE - 3):
            ctx.update(0)
        assert ctx.c0 + ctx.c1 == CONTEXT_RESCALE - 1
        ctx.update(0)
        assert ctx.c0 + ctx.c1 < CONTEXT_RESCALE
        assert ctx.c0 >= 1 and ctx.c1 >= 1


class TestRoundTrip:
    def test_empty(self):
        enc = Encoder()
        data = enc.finish()
        assert 1 <= len(data) <= 4

    @given(st.lists(st.integers(0, 1), max_size=400), st.integers(1, 5))
    @settings(max_examples=60, deadline=None)
    def test_contextual_bits(self, bits, nctx):
        ids = [i % nctx for i in range(len(bits))]
        data = ac_encode(bits, ids, nctx)
        assert ac_decode(data, ids, nctx) == bits

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=300))
    @settings(max_examples=40, deadline=None)
    def test_bypass_bits(self, bits):
        enc = Encoder()
        for b in bits:
            enc.encode_bypass(b)
        dec = Decoder(enc.finish())
        assert [dec.decode_bypass() for _ in bits] == bits

    @given(st.lists(st.integers(0, 2 ** 20), max_size=60))
    @settings(max_examples=40, deadline=None)
    def test_unsigned_values(self, values):
        enc = Encoder()
        ctxs = make_contexts(24)
        for v in values:
            enc.encode_unsigned(v, ctxs)
        dec = Decoder(enc.finish())
        ctxs = make_contexts(24)
        assert [dec.decode_unsigned(ctxs) for _ in values] == values

    @given(st.lists(st.integers(-2 ** 18, 2 ** 18), max_size=60))
    @settings(max_examples=40, deadline=None)
    def test_signed_values(self, values):
        enc = Encoder()
        ctxs = make_contexts(24)
        for v in values:
            enc.encode_signed(v, ctxs)
        dec = Decoder(enc.finish())
        ctxs = make_contexts(24)
        assert [dec.decode_signed(ctxs) for _ in values] == values

    @given(st.integers(0, 2 ** 30), st.integers(1, 31))
    @settings(max_examples=60, deadline=None)
    def test_fixed_width_bypass(self, value, width):
        value &= (1 << width) - 1
        enc = Encoder()
        enc.encode_bypass_bits(value, width)
        dec = Decoder(enc.finish())
        assert dec.decode_bypass_bits(width) == value

    def test_mixed_stream(self):
        rng = np.random.default_rng(99)
        ops = []
        for _ in range(500):
            kind = int(rng.integers(4))
            if kind == 0:
                ops.append(("bit", int(rng.integers(2)), int(rng.integers(12))))
            elif kind == 1:
                ops.append(("bypass", int(rng.integers(2)), 0))
            elif kind == 2:
                ops.append(("u", int(rng.integers(0, 5000)), 0))
            else:
                ops.append(("s", int(rng.integers(-5000, 5000)), 0))

        enc = Encoder()
        ctxs = make_contexts(12)
        for kind, v, ci in ops:
            if kind == "bit":
                enc.encode_bit(ctxs[ci], v)
            elif kind == "bypass":
                enc.encode_bypass(v)
            elif kind == "u":
                enc.encode_unsigned(v, ctxs)
            else:
                enc.encode_signed(v, ctxs)

        dec = Decoder(enc.finish())
        ctxs = make_contexts(12)
        for kind, v, ci in ops:
            if kind == "bit":
                assert dec.decode_bit(ctxs[ci]) == v
            elif kind == "bypass":
                assert dec.decode_bypass() == v
            elif kind == "u":
                assert dec.decode_unsigned(ctxs) == v
            else:
                assert dec.decode_signed(ctxs) == v


class TestCompression:
    def test_skewed_source_near_entropy(self):
        # P(1) = 0.05 -> H = 0.2864 bits/symbol.
        rng = np.random.default_rng(0)
        bits = (rng.uniform(size=100_000) < 0.05).astype(int).tolist()
        data = ac_encode(bits, [0] * len(bits), 1)
        shannon = -(0.05 * np.log2(0.05) + 0.95 * np.log2(0.95))
        assert len(data) * 8 <= shannon * len(bits) * 1.10

    def test_uniform_source_no_miracle(self):
        rng = np.random.default_rng(1)
        bits = rng.integers(0, 2, 50_000).tolist()
        data = ac_encode(bits, [0] * len(bits), 1)
        assert len(data) * 8 >= 0.99 * len(bits)

    def test_constant_source_tiny(self):
        bits = [0] * 10_000
        data = ac_encode(bits, [0] * len(bits), 1)
        assert len(data) < 50


class TestCorruption:
    def _payload(self):
        enc = Encoder()
        ctxs = make_contexts(8)
        rng = np.random.default_rng(7)
        values = [int(v) for v in rng.integers(0, 4000, 200)]
        for v in values:
            enc.encode_unsigned(v, ctxs)
        return enc.finish(), values

    def test_truncated_stream_raises(self):
        data, values = self._payload()
        dec = Decoder(data[: len(data) // 3])
        ctxs = make_contexts(8)
        with pytest.raises(CorruptionError):
            for _ in values:
                dec.decode_unsigned(ctxs)

    def test_overread_raises(self):
        data, values = self._payload()
        dec = Decoder(data)
        ctxs = make_contexts(8)
        for _ in values:
            dec.decode_unsigned(ctxs)
        with pytest.raises(CorruptionError):
            for _ in range(10_000):
                dec.decode_unsigned(ctxs)

    def test_mismatched_contexts_detected_or_wrong(self):
        # Decoding with the wrong context layout must never crash with a
        # non-library exception; it either raises CorruptionError or yields
        # different values.
        data, values = self._payload()
        dec = Decoder(data)
        ctxs = make_contexts(1)
        try:
            out = [dec.decode_unsigned(ctxs) for _ in values]
        except CorruptionError:
            return
        assert out != values
