import struct

import numpy as np
import pytest

from east.codec import (
    KIND_BIAS,
    KIND_CONV2D,
    KIND_FULLY_CONNECTED,
    KIND_INPUT,
    KIND_RELU,
    MAGIC,
    ContainerEntry,
    CorruptContainerError,
    build_entries,
    decode_entry,
    decode_float_entry,
    estimate_memory,
    network_from_checkpoint,
    pack_container,
    parse_container,
    unpack_layer,
)
from east.quantize import choose_net_fracs, quantize_array

from conftest import small_net

HEADER_SIZE = 8
ENTRY_SIZE = 28


def packed_net(seed=0):
    net = small_net(seed)
    wf, bf = choose_net_fracs(net)
    entries = build_entries(net, wf, bf)
    return net, wf, bf, pack_container(entries)


class TestPackParse:
    def test_header_fields(self):
        net, _, _, blob = packed_net()
        assert blob[:4] == MAGIC
        version, count = struct.unpack_from("<HH", blob, 4)
        assert version == 1
        # input + every layer + one bias entry per weighted layer
        assert count == 1 + len(net.layers) + len(net.weighted_indices())

    def test_file_size_arithmetic(self):
        _, _, _, blob = packed_net()
        parsed = parse_container(blob)
        total = HEADER_SIZE + ENTRY_SIZE * len(parsed.entries) + sum(
            e.compressed_len for e in parsed.entries
        )
        assert total == len(blob) == parsed.total_bytes

    def test_first_entry_is_input_descriptor(self):
        net, _, _, blob = packed_net()
        e = parse_container(blob).entries[0]
        assert e.kind == KIND_INPUT
        assert e.dims == (1, *net.input_shape)
        assert e.raw_len == 0

    def test_weighted_entries_followed_by_bias(self):
        _, _, _, blob = packed_net()
        entries = parse_container(blob).entries
        seen = 0
        for i, e in enumerate(entries):
            if e.kind in (KIND_CONV2D, KIND_FULLY_CONNECTED):
                assert entries[i + 1].kind == KIND_BIAS
                seen += 1
        assert seen == 3  # two convs and the classifier

    def test_entry_offsets_partition_payload(self):
        _, _, _, blob = packed_net()
        entries = parse_container(blob).entries
        pos = HEADER_SIZE + ENTRY_SIZE * len(entries)
        for e in entries:
            if e.compressed_len:
                assert e.offset == pos
                pos += e.compressed_len
        assert pos == len(blob)

    def test_pack_requires_entries(self):
        with pytest.raises(ValueError):
            pack_container([])


class TestParseErrors:
    def test_bad_magic(self):
        _, _, _, blob = packed_net()
        with pytest.raises(CorruptContainerError, match="magic"):
            parse_container(b"JUNK" + blob[4:])

    def test_bad_version(self):
        _, _, _, blob = packed_net()
        bad = blob[:4] + struct.pack("<H", 9) + blob[6:]
        with pytest.raises(CorruptContainerError, match="version"):
            parse_container(bad)

    def test_short_header(self):
        with pytest.raises(CorruptContainerError, match="header"):
            parse_container(b"EAST")

    def test_truncated_table(self):
        _, _, _, blob = packed_net()
        with pytest.raises(CorruptContainerError, match="table"):
            parse_container(blob[: HEADER_SIZE + 5])

    def test_truncated_blocks(self):
        _, _, _, blob = packed_net()
        with pytest.raises(CorruptContainerError, match="size mismatch"):
            parse_container(blob[:-3])

    def test_trailing_garbage(self):
        _, _, _, blob = packed_net()
        with pytest.raises(CorruptContainerError, match="size mismatch"):
            parse_container(blob + b"xx")

    def test_unknown_kind_code(self):
        entry = ContainerEntry(KIND_RELU)
        blob = bytearray(pack_container([entry]))
        blob[HEADER_SIZE] = 0x55
        with pytest.raises(CorruptContainerError, match="kind"):
            parse_container(bytes(blob))

    def test_dims_inconsistent_with_raw_len(self):
        q = np.zeros(11, dtype=np.int8).tobytes()  # 12 expected from dims
        entry = ContainerEntry(KIND_BIAS, dims=(12, 1, 1, 1), payload=q)
        with pytest.raises(CorruptContainerError, match="dims"):
            parse_container(pack_container([entry]))

    def test_corrupt_payload_rejected_at_decode(self):
        from east.lz4 import CorruptBlockError

        net, _, _, blob = packed_net()
        target = next(
            e for e in parse_container(blob).entries if e.kind == KIND_CONV2D
        )
        mutated = bytearray(blob)
        # zeroed block reads as "zero literals, match at offset 0", always invalid
        mutated[target.offset : target.offset + target.compressed_len] = bytes(
            target.compressed_len
        )
        mutated = bytes(mutated)
        e = next(x for x in parse_container(mutated).entries if x.kind == KIND_CONV2D)
        with pytest.raises(CorruptBlockError):
            decode_entry(mutated, e)


class TestRoundTrip:
    def test_unpack_layer_reproduces_quantized_weights(self):
        net, wf, bf, blob = packed_net()
        entries = parse_container(blob).entries
        li = iter(net.weighted_indices())
        for idx, e in enumerate(entries):
            if e.kind not in (KIND_CONV2D, KIND_FULLY_CONNECTED):
                continue
            i = next(li)
            q = unpack_layer(blob, idx)
            np.testing.assert_array_equal(
                q.qdata, quantize_array(net.weights[i].ravel(), wf[i])
            )
            assert q.params.frac_bits == wf[i]

    def test_bias_entries_round_trip(self):
        net, wf, bf, blob = packed_net()
        entries = parse_container(blob).entries
        li = iter(net.weighted_indices())
        for idx, e in enumerate(entries):
            if e.kind != KIND_BIAS:
                continue
            i = next(li)
            q = unpack_layer(blob, idx)
            np.testing.assert_array_equal(q.qdata, quantize_array(net.biases[i], bf[i]))

    def test_unpack_into_scratch_aliases_buffer(self):
        net, _, _, blob = packed_net()
        entries = parse_container(blob).entries
        idx = next(i for i, e in enumerate(entries) if e.kind == KIND_CONV2D)
        scratch = bytearray(max(e.raw_len for e in entries))
        q = unpack_layer(blob, idx, scratch)
        assert bytes(scratch[: entries[idx].raw_len]) == q.qdata.tobytes()
        scratch[0] = 7  # writes through to the view, proving no copy was made
        assert q.qdata[0] == 7

    def test_unpack_layer_index_and_kind_errors(self):
        _, _, _, blob = packed_net()
        with pytest.raises(IndexError):
            unpack_layer(blob, 999)
        with pytest.raises(CorruptContainerError, match="no tensor"):
            unpack_layer(blob, 0)  # input entry

    def test_decode_entry_wrong_variant(self):
        net = small_net()
        ckpt = pack_container(
            build_entries(net, {i: 0 for i in net.weighted_indices()},
                          {i: 0 for i in net.weighted_indices()}, float_payload=True)
        )
        entries = parse_container(ckpt).entries
        e = next(x for x in entries if x.kind == KIND_CONV2D)
        with pytest.raises(CorruptContainerError, match="float"):
            decode_entry(ckpt, e)
        _, _, _, qblob = packed_net()
        qe = next(x for x in parse_container(qblob).entries if x.kind == KIND_CONV2D)
        with pytest.raises(CorruptContainerError, match="quantized"):
            decode_float_entry(qblob, qe)


class TestEstimate:
    def test_estimate_equals_packed_size_exactly(self):
        net, wf, bf, blob = packed_net()
        report = estimate_memory(net, wf, bf)
        assert report.total_bytes == len(blob)

    def test_estimate_with_default_fracs(self):
        net = small_net(3)
        report = estimate_memory(net)
        wf, bf = choose_net_fracs(net)
        blob = pack_container(build_entries(net, wf, bf))
        assert report.total_bytes == len(blob)

    def test_report_fields(self):
        net, wf, bf, blob = packed_net()
        report = estimate_memory(net, wf, bf)
        entries = parse_container(blob).entries
        assert report.header_bytes == HEADER_SIZE + ENTRY_SIZE * len(entries)
        assert report.per_layer_bytes == [e.compressed_len for e in entries]
        assert report.raw_payload_bytes == sum(e.raw_len for e in entries)
        assert report.scratch_bytes == max(e.raw_len for e in entries)

    def test_sparsity_shrinks_estimate(self):
        net = small_net(5)
        before = estimate_memory(net).total_bytes
        for i in net.weighted_indices():
            w = net.weights[i].reshape(-1)
            w[: w.size // 2] = 0.0
        after = estimate_memory(net).total_bytes
        assert after < before


class TestFloatCheckpoint:
    def test_checkpoint_reconstruction(self):
        net = small_net(7)
        act = list(range(len(net.layers) + 1))
        act = [min(a, 14) for a in act]
        zero = {i: 0 for i in net.weighted_indices()}
        blob = pack_container(build_entries(net, zero, dict(zero), act, float_payload=True))
        rebuilt, stored_act = network_from_checkpoint(blob)
        assert stored_act == act
        assert rebuilt.input_shape == net.input_shape
        assert [s.kind for s in rebuilt.layers] == [s.kind for s in net.layers]
        for i in net.weighted_indices():
            np.testing.assert_array_equal(rebuilt.weights[i], net.weights[i])
            np.testing.assert_array_equal(rebuilt.biases[i], net.biases[i])

    def test_checkpoint_masks_reflect_zeros(self):
        net = small_net(7)
        i0 = net.weighted_indices()[0]
        net.weights[i0].reshape(-1)[:10] = 0.0
        zero = {i: 0 for i in net.weighted_indices()}
        blob = pack_container(build_entries(net, zero, dict(zero), float_payload=True))
        rebuilt, _ = network_from_checkpoint(blob)
        np.testing.assert_array_equal(rebuilt.masks[i0][:10], np.zeros(10, dtype=np.float32))

    def test_quantized_container_rejected(self):
        _, _, _, blob = packed_net()
        with pytest.raises(CorruptContainerError, match="checkpoint"):
            network_from_checkpoint(blob)

    def test_float_payload_stored_uncompressed(self):
        net = small_net()
        zero = {i: 0 for i in net.weighted_indices()}
        blob = pack_container(build_entries(net, zero, dict(zero), float_payload=True))
        for e in parse_container(blob).entries:
            if e.raw_len:
                assert e.float_payload
                assert e.compressed_len == e.raw_len
