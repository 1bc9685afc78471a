import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from east.lz4 import CorruptBlockError, lz4_compress, lz4_decompress

VECTOR_DIR = Path(__file__).parent / "data" / "lz4_vectors"
MANIFEST = json.loads((VECTOR_DIR / "manifest.json").read_text())


def reference_decode(payload: bytes, expected_len: int) -> bytes:
    """Minimal independent block decoder, a direct transcription of the
    format: token nibbles, 255-extension lengths, little-endian u16 offset,
    match length biased by 4. Shares no code with the package."""
    out = bytearray()
    i = 0
    n = len(payload)
    while True:
        if i >= n:
            raise ValueError("ran out of input")
        token = payload[i]
        i += 1
        lit_len = token >> 4
        if lit_len == 15:
            while True:
                b = payload[i]
                i += 1
                lit_len += b
                if b != 255:
                    break
        out += payload[i : i + lit_len]
        i += lit_len
        if i == n:
            break  # block ends after the literals of the last sequence
        offset = payload[i] | (payload[i + 1] << 8)
        i += 2
        match_len = (token & 0xF) + 4
        if (token & 0xF) == 15:
            while True:
                b = payload[i]
                i += 1
                match_len += b
                if b != 255:
                    break
        src = len(out) - offset
        for _ in range(match_len):  # byte-by-byte so overlaps self-extend
            out.append(out[src])
            src += 1
    if len(out) != expected_len:
        raise ValueError(f"decoded {len(out)} bytes, expected {expected_len}")
    return bytes(out)


class TestFrozenVectors:
    """Cross-validation against blobs produced by an independent encoder.

    For every vector the independent implementation decoded this
    package's output at generation time (`ref_decodes_mine`), and this
    package must decode the independent blobs (`.ref.lz4`) byte-exactly.
    """

    @pytest.mark.parametrize("name", sorted(MANIFEST))
    def test_compressor_output_frozen(self, name):
        raw = (VECTOR_DIR / f"{name}.raw").read_bytes()
        frozen = (VECTOR_DIR / f"{name}.mine.lz4").read_bytes()
        assert lz4_compress(raw) == frozen

    @pytest.mark.parametrize("name", sorted(MANIFEST))
    def test_decodes_independent_encoder_output(self, name):
        if MANIFEST[name]["ref_len"] is None:
            pytest.skip("independent encoder cannot express this input")
        raw = (VECTOR_DIR / f"{name}.raw").read_bytes()
        ref = (VECTOR_DIR / f"{name}.ref.lz4").read_bytes()
        assert lz4_decompress(ref, len(raw)) == raw

    @pytest.mark.parametrize("name", sorted(MANIFEST))
    def test_independent_decoder_accepts_our_output(self, name):
        raw = (VECTOR_DIR / f"{name}.raw").read_bytes()
        blob = (VECTOR_DIR / f"{name}.mine.lz4").read_bytes()
        assert reference_decode(blob, len(raw)) == raw

    @pytest.mark.parametrize("name", sorted(MANIFEST))
    def test_cross_decode_recorded_at_generation(self, name):
        entry = MANIFEST[name]
        if entry["raw_len"] == 0:
            return  # the independent decoder cannot target empty output
        assert entry["ref_decodes_mine"] is True

    def test_several_vectors_byte_identical_to_reference(self):
        identical = [n for n, e in MANIFEST.items() if e["mine_equals_ref"]]
        assert len(identical) >= 5


class TestRoundTrip:
    def test_empty(self):
        assert lz4_compress(b"") == b"\x00"
        assert lz4_decompress(b"\x00", 0) == b""

    @pytest.mark.parametrize(
        "raw",
        [
            b"a",
            b"ab",
            b"abcd",
            b"x" * 5,
            b"abcabcabcabc",  # 12 bytes: below the compressible minimum
            b"abcabcabcabca",  # 13 bytes: at it
            b"\x00" * 64,
            bytes(range(256)),
            b"\xff" * 100,
        ],
    )
    def test_small_and_boundary_buffers(self, raw):
        assert lz4_decompress(lz4_compress(raw), len(raw)) == raw

    def test_short_inputs_stored_as_literals(self):
        # a 12-byte input is one literal run: token + 12 bytes
        raw = b"abcabcabcabc"
        assert lz4_compress(raw) == bytes([0xC0]) + raw

    def test_adversarial_patterns(self):
        rng = np.random.default_rng(7)
        cases = [
            b"\x00" * 65_536,
            b"\x55" * 70_000,
            bytes(rng.integers(0, 256, size=65_537, dtype=np.uint8)),
            (b"0123456" * 10_000)[:65_535],
            bytes(rng.integers(0, 2, size=30_000, dtype=np.uint8)),  # binary alphabet
            b"a" * 12 + b"b" + b"a" * 12,
            (b"\x00" * 17 + b"\x01\x02\x03") * 400,  # pruned-tensor shape
        ]
        for raw in cases:
            assert lz4_decompress(lz4_compress(raw), len(raw)) == raw

    def test_long_distance_match_within_window(self):
        # matching data 65535 bytes apart: the farthest expressible offset
        rng = np.random.default_rng(3)
        chunk = bytes(rng.integers(0, 256, size=64, dtype=np.uint8))
        raw = chunk + bytes(rng.integers(0, 256, size=65_535 - 64, dtype=np.uint8)) + chunk
        blob = lz4_compress(raw)
        assert lz4_decompress(blob, len(raw)) == raw
        assert reference_decode(blob, len(raw)) == raw

    def test_determinism(self, rng):
        raw = bytes(rng.integers(0, 8, size=5000, dtype=np.uint8))
        assert lz4_compress(raw) == lz4_compress(raw)

    @settings(max_examples=150, deadline=None)
    @given(st.binary(max_size=4096))
    def test_round_trip_property(self, raw):
        blob = lz4_compress(raw)
        assert lz4_decompress(blob, len(raw)) == raw

    @settings(max_examples=50, deadline=None)
    @given(st.binary(min_size=1, max_size=64), st.integers(2, 400))
    def test_repeated_content_round_trips(self, unit, reps):
        raw = unit * reps
        blob = lz4_compress(raw)
        assert lz4_decompress(blob, len(raw)) == raw
        assert reference_decode(blob, len(raw)) == raw


class TestDecoderErrors:
    def test_empty_payload(self):
        with pytest.raises(CorruptBlockError):
            lz4_decompress(b"", 0)

    def test_truncated_literals(self):
        # token says 5 literals, only 2 present
        with pytest.raises(CorruptBlockError):
            lz4_decompress(bytes([0x50]) + b"ab", 5)

    def test_truncated_literal_length_extension(self):
        with pytest.raises(CorruptBlockError):
            lz4_decompress(bytes([0xF0, 0xFF]), 300)

    def test_missing_offset(self):
        # one literal then a sequence with no room for the offset
        with pytest.raises(CorruptBlockError):
            lz4_decompress(bytes([0x10, 0x41, 0x01]), 6)

    def test_zero_offset(self):
        with pytest.raises(CorruptBlockError, match="offset"):
            lz4_decompress(bytes([0x40]) + b"abcd" + bytes([0x00, 0x00]), 12)

    def test_offset_beyond_output(self):
        with pytest.raises(CorruptBlockError, match="offset"):
            lz4_decompress(bytes([0x40]) + b"abcd" + bytes([0x09, 0x00]), 12)

    def test_output_length_mismatch(self):
        blob = lz4_compress(b"hello world, hello world")
        with pytest.raises(CorruptBlockError):
            lz4_decompress(blob, 99)

    def test_match_overruns_expected_length(self):
        # 4 literals + 8-byte match = 12, but caller expects 10
        blob = bytes([0x44]) + b"abcd" + bytes([0x04, 0x00])
        with pytest.raises(CorruptBlockError):
            lz4_decompress(blob, 10)

    def test_literals_overrun_expected_length(self):
        with pytest.raises(CorruptBlockError):
            lz4_decompress(bytes([0x50]) + b"abcde", 3)

    def test_fuzzed_corruption_never_crashes(self, rng):
        raw = bytes(rng.integers(0, 4, size=400, dtype=np.uint8))
        blob = bytearray(lz4_compress(raw))
        for _ in range(300):
            pos = int(rng.integers(0, len(blob)))
            mutated = bytes(blob[:pos]) + bytes([int(rng.integers(0, 256))]) + bytes(blob[pos + 1 :])
            try:
                lz4_decompress(mutated, len(raw))
            except CorruptBlockError:
                pass  # rejection is fine, crashes or hangs are not


class TestOverlappingMatches:
    def test_run_length_via_offset_one(self):
        # RLE idiom: literal 'a', then a match with offset 1
        raw = b"a" * 1000
        blob = lz4_compress(raw)
        assert len(blob) < 20
        assert lz4_decompress(blob, 1000) == raw

    def test_period_two_overlap(self):
        raw = b"ab" * 500
        assert lz4_decompress(lz4_compress(raw), 1000) == raw

    def test_overlap_against_reference_decoder(self):
        for period in range(1, 9):
            raw = bytes(range(1, period + 1)) * 300
            blob = lz4_compress(raw)
            assert reference_decode(blob, len(raw)) == raw
            assert lz4_decompress(blob, len(raw)) == raw
