"""Deployable model container: header, per-layer entry table, LZ4 blocks.

Layout (all integers little-endian):

    offset 0   magic  b"EAST"
    offset 4   u16    format version (currently 1)
    offset 6   u16    entry count E
    offset 8   E x 28-byte entries
    then       payload blocks, one per entry with a payload, in entry order

Entry (28 bytes):

    u8   kind       low 7 bits: layer kind code; bit 0x80 set means the
                    payload is raw float32 instead of a compressed int8 block
    s8   weight_frac_bits   fixed-point position of this entry's payload
    s8   act_frac_bits      fixed-point position of the layer's output
    s8   bias_frac_bits     fixed-point position of the companion bias entry
    u32  dims[4]    kind-specific (see below)
    u32  raw_len    payload size before compression, bytes
    u32  compressed_len     stored block size, bytes (equal to raw_len for
                    float payloads, which are stored uncompressed)

dims by kind: conv2d (out, kh, kw, in); fully_connected (out, 1, 1, in);
bias (out, 1, 1, 1); input (1, H, W, C); max_pool (window, window, stride,
0); residual_add (source layer index, 0, 0, 0); otherwise zeros.

The first entry is always the input descriptor. Each weighted layer
contributes its weight entry immediately followed by a bias entry. File
size is exactly 8 + 28*E + sum(compressed_len), which is what
estimate_memory reports without building the file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .layers import LayerSpec, Network, activation_shapes
from .lz4 import lz4_compress, lz4_decompress
from .quantize import QuantParams, QuantTensor, choose_net_fracs, quantize_array
from .tensor import Shape

MAGIC = b"EAST"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHH")
ENTRY = struct.Struct("<Bbbb6I")
HEADER_SIZE = HEADER.size  # 8
ENTRY_SIZE = ENTRY.size  # 28

KIND_INPUT = 0
KIND_CONV2D = 1
KIND_FULLY_CONNECTED = 2
KIND_RELU = 3
KIND_MAX_POOL = 4
KIND_GLOBAL_AVG_POOL = 5
KIND_RESIDUAL_ADD = 6
KIND_FLATTEN = 7
KIND_BIAS = 8
FLOAT_PAYLOAD_FLAG = 0x80

_KIND_CODES = {
    "conv2d": KIND_CONV2D,
    "fully_connected": KIND_FULLY_CONNECTED,
    "relu": KIND_RELU,
    "max_pool": KIND_MAX_POOL,
    "global_avg_pool": KIND_GLOBAL_AVG_POOL,
    "residual_add": KIND_RESIDUAL_ADD,
    "flatten": KIND_FLATTEN,
}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_KIND_NAMES[KIND_INPUT] = "input"
_KIND_NAMES[KIND_BIAS] = "bias"


class CorruptContainerError(ValueError):
    """Raised when container bytes cannot be parsed or decoded."""


@dataclass(frozen=True)
class ContainerEntry:
    """One entry before packing. payload is the raw (uncompressed) block."""

    kind: int
    weight_frac_bits: int = 0
    act_frac_bits: int = 0
    bias_frac_bits: int = 0
    dims: tuple[int, int, int, int] = (0, 0, 0, 0)
    payload: bytes | None = None

    @property
    def float_payload(self) -> bool:
        return bool(self.kind & FLOAT_PAYLOAD_FLAG)


@dataclass(frozen=True)
class ParsedEntry:
    kind: int
    float_payload: bool
    weight_frac_bits: int
    act_frac_bits: int
    bias_frac_bits: int
    dims: tuple[int, int, int, int]
    raw_len: int
    compressed_len: int
    offset: int  # payload position within the container

    @property
    def kind_name(self) -> str:
        return _KIND_NAMES.get(self.kind, f"unknown({self.kind})")


@dataclass(frozen=True)
class ParsedContainer:
    version: int
    entries: list[ParsedEntry]
    total_bytes: int


@dataclass(frozen=True)
class MemoryReport:
    """Exact byte cost of a packed container, without materializing it."""

    total_bytes: int
    header_bytes: int
    per_layer_bytes: list[int]  # stored block size per entry (0 if no payload)
    raw_payload_bytes: int  # sum of uncompressed payload sizes
    scratch_bytes: int  # largest single decoded block


def _encode_block(entry: ContainerEntry) -> bytes:
    if entry.payload is None:
        return b""
    if entry.float_payload:
        return entry.payload
    return lz4_compress(entry.payload)


def pack_container(entries: list[ContainerEntry]) -> bytes:
    """Serialize entries into container bytes."""
    if not entries:
        raise ValueError("container needs at least one entry")
    if len(entries) > 0xFFFF:
        raise ValueError("too many entries for a u16 count")
    blocks = []
    table = bytearray()
    for e in entries:
        raw_len = len(e.payload) if e.payload is not None else 0
        block = _encode_block(e)
        for d in e.dims:
            if not (0 <= d < 2**32):
                raise ValueError(f"entry dim {d} does not fit in u32")
        if raw_len >= 2**32 or len(block) >= 2**32:
            raise ValueError("payload too large for u32 length fields")
        table += ENTRY.pack(
            e.kind,
            e.weight_frac_bits,
            e.act_frac_bits,
            e.bias_frac_bits,
            *e.dims,
            raw_len,
            len(block),
        )
        blocks.append(block)
    return HEADER.pack(MAGIC, FORMAT_VERSION, len(entries)) + bytes(table) + b"".join(blocks)


def parse_container(blob: bytes) -> ParsedContainer:
    """Validate and index container bytes; payloads stay compressed."""
    if len(blob) < HEADER_SIZE:
        raise CorruptContainerError("container shorter than its header")
    magic, version, count = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CorruptContainerError(f"bad magic {magic!r}, not a model container")
    if version != FORMAT_VERSION:
        raise CorruptContainerError(f"unsupported container version {version}")
    table_end = HEADER_SIZE + count * ENTRY_SIZE
    if len(blob) < table_end:
        raise CorruptContainerError("entry table truncated")
    entries: list[ParsedEntry] = []
    offset = table_end
    for idx in range(count):
        kind, wf, af, bf, d0, d1, d2, d3, raw_len, comp_len = ENTRY.unpack_from(
            blob, HEADER_SIZE + idx * ENTRY_SIZE
        )
        is_float = bool(kind & FLOAT_PAYLOAD_FLAG)
        base_kind = kind & ~FLOAT_PAYLOAD_FLAG
        if base_kind not in _KIND_NAMES:
            raise CorruptContainerError(f"entry {idx}: unknown layer kind code {base_kind}")
        if is_float and raw_len != comp_len:
            raise CorruptContainerError(f"entry {idx}: float payload with mismatched lengths")
        if (raw_len == 0) != (comp_len == 0):
            raise CorruptContainerError(f"entry {idx}: inconsistent empty payload lengths")
        dims = (d0, d1, d2, d3)
        if base_kind in (KIND_CONV2D, KIND_FULLY_CONNECTED, KIND_BIAS) and raw_len:
            elem = 4 if is_float else 1
            expect = int(np.prod(dims, dtype=np.int64)) * elem
            if expect != raw_len:
                raise CorruptContainerError(
                    f"entry {idx}: dims {dims} imply {expect} bytes, raw_len is {raw_len}"
                )
        entries.append(
            ParsedEntry(base_kind, is_float, wf, af, bf, dims, raw_len, comp_len, offset)
        )
        offset += comp_len
    if offset != len(blob):
        raise CorruptContainerError(
            f"container size mismatch: blocks end at {offset}, file has {len(blob)} bytes"
        )
    return ParsedContainer(version=version, entries=entries, total_bytes=len(blob))


def decode_entry(
    blob: bytes, entry: ParsedEntry, scratch: bytearray | None = None
) -> np.ndarray:
    """Decode one quantized block, optionally into a caller-owned scratch buffer.

    Returns an int8 array of raw_len elements. With scratch given, the array
    is a view into it, valid until the scratch is reused.
    """
    if entry.float_payload:
        raise CorruptContainerError("entry holds float data, use decode_float_entry")
    if entry.raw_len == 0:
        return np.empty(0, dtype=np.int8)
    payload = blob[entry.offset : entry.offset + entry.compressed_len]
    if scratch is None:
        raw = lz4_decompress(payload, entry.raw_len)
        return np.frombuffer(raw, dtype=np.int8)
    if len(scratch) < entry.raw_len:
        raise ValueError(
            f"scratch buffer too small: need {entry.raw_len} bytes, have {len(scratch)}"
        )
    lz4_decompress(payload, entry.raw_len, out=scratch)
    return np.frombuffer(scratch, dtype=np.int8, count=entry.raw_len)


def decode_float_entry(blob: bytes, entry: ParsedEntry) -> np.ndarray:
    if not entry.float_payload:
        raise CorruptContainerError("entry holds quantized data, use decode_entry")
    payload = blob[entry.offset : entry.offset + entry.compressed_len]
    return np.frombuffer(payload, dtype="<f4").copy()


def network_from_checkpoint(blob: bytes) -> tuple[Network, list[int]]:
    """Rebuild a float network from an uncompressed float32 checkpoint.

    Returns the network plus the stored activation positions (input first),
    which are zeros when the checkpoint was written without calibration.
    """
    parsed = parse_container(blob)
    entries = parsed.entries
    if not entries or entries[0].kind != KIND_INPUT:
        raise CorruptContainerError("first entry must be the input descriptor")
    tensor_kinds = (KIND_CONV2D, KIND_FULLY_CONNECTED, KIND_BIAS)
    if any(e.kind in tensor_kinds and not e.float_payload for e in entries):
        raise CorruptContainerError("container holds quantized data, not a checkpoint")
    _, h, w, c = entries[0].dims
    specs: list[LayerSpec] = []
    weights: dict[int, np.ndarray] = {}
    biases: dict[int, np.ndarray] = {}
    act_fracs = [entries[0].act_frac_bits]
    i = 1
    while i < len(entries):
        e = entries[i]
        d = e.dims
        if e.kind == KIND_CONV2D:
            specs.append(
                LayerSpec("conv2d", out_channels=d[0], in_channels=d[3], kernel=d[1])
            )
        elif e.kind == KIND_FULLY_CONNECTED:
            specs.append(LayerSpec("fully_connected", out_features=d[0], in_features=d[3]))
        elif e.kind == KIND_MAX_POOL:
            specs.append(LayerSpec("max_pool", window=d[0], stride=d[2]))
        elif e.kind == KIND_RESIDUAL_ADD:
            specs.append(LayerSpec("residual_add", source=d[0]))
        elif e.kind in (KIND_RELU, KIND_GLOBAL_AVG_POOL, KIND_FLATTEN):
            specs.append(LayerSpec(_KIND_NAMES[e.kind]))
        else:
            raise CorruptContainerError(f"unexpected entry kind {e.kind_name} at {i}")
        act_fracs.append(e.act_frac_bits)
        if specs[-1].kind in ("conv2d", "fully_connected"):
            idx = len(specs) - 1
            shape = specs[-1].weight_shape()
            weights[idx] = decode_float_entry(blob, e).reshape(shape)
            if i + 1 >= len(entries) or entries[i + 1].kind != KIND_BIAS:
                raise CorruptContainerError(f"entry {i} has no bias entry after it")
            biases[idx] = decode_float_entry(blob, entries[i + 1])
            i += 1
        i += 1
    net = Network(layers=specs, input_shape=(h, w, c), weights=weights, biases=biases)
    for idx in net.weighted_indices():
        net.masks[idx] = (net.weights[idx].ravel() != 0).astype(np.float32)
    activation_shapes(net)
    return net, act_fracs


def unpack_layer(
    blob: bytes, index: int, scratch: bytearray | None = None
) -> QuantTensor:
    """Decode entry `index` of a container into a quantized tensor.

    The tensor's data aliases `scratch` when one is provided.
    """
    parsed = parse_container(blob)
    if not (0 <= index < len(parsed.entries)):
        raise IndexError(f"entry index {index} out of range 0..{len(parsed.entries) - 1}")
    entry = parsed.entries[index]
    if entry.kind not in (KIND_CONV2D, KIND_FULLY_CONNECTED, KIND_BIAS):
        raise CorruptContainerError(f"entry {index} ({entry.kind_name}) carries no tensor")
    q = decode_entry(blob, entry, scratch)
    shape = Shape(tuple(d for d in entry.dims))
    return QuantTensor(shape=shape, qdata=q, params=QuantParams(entry.weight_frac_bits))


def build_entries(
    net: Network,
    weight_fracs: dict[int, int],
    bias_fracs: dict[int, int],
    act_fracs: list[int] | None = None,
    float_payload: bool = False,
) -> list[ContainerEntry]:
    """Entry list for a network: input descriptor, then one entry per layer
    (weighted layers followed by their bias entry).

    act_fracs has len(net.layers) + 1 values, index 0 being the network
    input; None stores zeros, which leaves every block size unchanged and
    is how size estimation avoids running calibration.
    """
    if act_fracs is None:
        act_fracs = [0] * (len(net.layers) + 1)
    if len(act_fracs) != len(net.layers) + 1:
        raise ValueError("act_fracs must cover input plus every layer")
    h, w, c = net.input_shape
    flag = FLOAT_PAYLOAD_FLAG if float_payload else 0

    def encode(arr: np.ndarray, frac: int) -> bytes:
        if float_payload:
            return np.ascontiguousarray(arr, dtype="<f4").tobytes()
        return quantize_array(arr, frac).tobytes()

    entries = [
        ContainerEntry(KIND_INPUT, act_frac_bits=act_fracs[0], dims=(1, h, w, c))
    ]
    for i, spec in enumerate(net.layers):
        out_frac = act_fracs[i + 1]
        if spec.kind == "conv2d":
            wf, bf = weight_fracs[i], bias_fracs[i]
            dims = (spec.out_channels, spec.kernel, spec.kernel, spec.in_channels)
            entries.append(
                ContainerEntry(
                    KIND_CONV2D | flag, wf, out_frac, bf, dims, encode(net.weights[i], wf)
                )
            )
            entries.append(
                ContainerEntry(
                    KIND_BIAS | flag,
                    bf,
                    dims=(spec.out_channels, 1, 1, 1),
                    payload=encode(net.biases[i], bf),
                )
            )
        elif spec.kind == "fully_connected":
            wf, bf = weight_fracs[i], bias_fracs[i]
            dims = (spec.out_features, 1, 1, spec.in_features)
            entries.append(
                ContainerEntry(
                    KIND_FULLY_CONNECTED | flag,
                    wf,
                    out_frac,
                    bf,
                    dims,
                    encode(net.weights[i], wf),
                )
            )
            entries.append(
                ContainerEntry(
                    KIND_BIAS | flag,
                    bf,
                    dims=(spec.out_features, 1, 1, 1),
                    payload=encode(net.biases[i], bf),
                )
            )
        elif spec.kind == "max_pool":
            entries.append(
                ContainerEntry(
                    KIND_MAX_POOL,
                    act_frac_bits=out_frac,
                    dims=(spec.window, spec.window, spec.stride, 0),
                )
            )
        elif spec.kind == "residual_add":
            entries.append(
                ContainerEntry(
                    KIND_RESIDUAL_ADD, act_frac_bits=out_frac, dims=(spec.source, 0, 0, 0)
                )
            )
        else:
            entries.append(
                ContainerEntry(_KIND_CODES[spec.kind], act_frac_bits=out_frac)
            )
    return entries


def estimate_memory(
    net: Network,
    weight_fracs: dict[int, int] | None = None,
    bias_fracs: dict[int, int] | None = None,
) -> MemoryReport:
    """Exact packed size of the network's container, byte for byte.

    Shares the block encoder with pack_container, so the reported total
    equals len(pack_container(build_entries(...))) for the same fracs.
    Activation positions never change block sizes and are not needed.
    """
    if weight_fracs is None or bias_fracs is None:
        chosen_w, chosen_b = choose_net_fracs(net)
        weight_fracs = weight_fracs or chosen_w
        bias_fracs = bias_fracs or chosen_b
    entries = build_entries(net, weight_fracs, bias_fracs)
    per_layer = [len(_encode_block(e)) for e in entries]
    raw = sum(len(e.payload) for e in entries if e.payload is not None)
    scratch = max(
        (len(e.payload) for e in entries if e.payload is not None), default=0
    )
    header = HEADER_SIZE + ENTRY_SIZE * len(entries)
    return MemoryReport(
        total_bytes=header + sum(per_layer),
        header_bytes=header,
        per_layer_bytes=per_layer,
        raw_payload_bytes=raw,
        scratch_bytes=scratch,
    )
