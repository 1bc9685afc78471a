"""LZ4 block-format compressor and decompressor.

Block format: a stream of sequences, each

    token | [literal-length ext] | literals | offset(u16 LE) | [match-length ext]

where the token's high nibble is the literal count and the low nibble the
match length minus 4 (value 15 in either nibble adds extension bytes, 255
meaning "more follows"). The final sequence is literals-only. Encoder-side
restrictions kept for interoperability: matches never start within the
last 12 bytes nor extend into the last 5, and blocks shorter than 13 bytes
are emitted as plain literals.

The compressor is a greedy hash-table matcher with the adaptive skip
heuristic of the common fast encoders (step grows while matches keep
failing), a 64 kB offset window, and a 4-byte minimum match. Any compliant
decoder accepts its streams; the decoder here accepts streams from any
compliant encoder.
"""

from __future__ import annotations

import numpy as np

MIN_MATCH = 4
MAX_DISTANCE = 65535
MF_LIMIT = 12  # matches must start at least this many bytes before the end
LAST_LITERALS = 5  # matches must not extend into the final 5 bytes
MIN_COMPRESS_LENGTH = 13  # shorter inputs are emitted as literals only
HASH_LOG = 13
SKIP_TRIGGER = 6  # step = fail_count >> SKIP_TRIGGER
MAX_INPUT = 2**31 - 1


class CorruptBlockError(ValueError):
    """Raised when a compressed block cannot be decoded."""


def _emit_len_ext(out: bytearray, v: int) -> None:
    while v >= 255:
        out.append(255)
        v -= 255
    out.append(v)


def _emit_sequence(out: bytearray, raw: bytes, anchor: int, ip: int, offset: int, mlen: int) -> None:
    lit_len = ip - anchor
    m = mlen - MIN_MATCH
    out.append((min(lit_len, 15) << 4) | min(m, 15))
    if lit_len >= 15:
        _emit_len_ext(out, lit_len - 15)
    out += raw[anchor:ip]
    out.append(offset & 0xFF)
    out.append(offset >> 8)
    if m >= 15:
        _emit_len_ext(out, m - 15)


def _emit_literal_tail(out: bytearray, raw: bytes, anchor: int, end: int) -> None:
    lit_len = end - anchor
    out.append(min(lit_len, 15) << 4)
    if lit_len >= 15:
        _emit_len_ext(out, lit_len - 15)
    out += raw[anchor:end]


def _match_length(
    uvals: list, raw: bytes, src: np.ndarray, p_match: int, p_ip: int, limit: int
) -> int:
    """Count equal bytes from (p_match, p_ip) forward, p_ip capped at limit.

    Short matches dominate in practice, so the first 64 bytes are compared
    4 at a time through the precomputed little-endian words; only runs
    longer than that pay for vectorized chunk scans.
    """
    max_count = limit - p_ip
    count = 0
    while count + 4 <= max_count and count < 64:
        x = uvals[p_ip + count] ^ uvals[p_match + count]
        if x:
            if x & 0xFF:
                return count
            if x & 0xFFFF:
                return count + 1
            if x & 0xFFFFFF:
                return count + 2
            return count + 3
        count += 4
    if count >= 64:
        chunk = 256
        while count < max_count:
            c = min(chunk, max_count - count)
            neq = src[p_ip + count : p_ip + count + c] != src[p_match + count : p_match + count + c]
            if neq.any():
                return count + int(np.argmax(neq))
            count += c
            chunk = min(chunk * 4, 1 << 16)
        return max_count
    while count < max_count and raw[p_ip + count] == raw[p_match + count]:
        count += 1
    return count


def lz4_compress(raw: bytes) -> bytes:
    """Compress to a valid LZ4 block. Deterministic for a given input."""
    n = len(raw)
    if n > MAX_INPUT:
        raise ValueError("input too large for an LZ4 block")
    if n == 0:
        return b"\x00"
    out = bytearray()
    if n < MIN_COMPRESS_LENGTH:
        _emit_literal_tail(out, raw, 0, n)
        return bytes(out)

    src = np.frombuffer(raw, dtype=np.uint8)
    a32 = src.astype(np.uint32)
    u32 = a32[: n - 3] | (a32[1 : n - 2] << 8) | (a32[2 : n - 1] << 16) | (a32[3:n] << 24)
    hashes = ((u32 * np.uint32(2654435761)) >> np.uint32(32 - HASH_LOG)).tolist()
    uvals = u32.tolist()
    table = [-1] * (1 << HASH_LOG)

    mflimit = n - MF_LIMIT
    matchlimit = n - LAST_LITERALS
    anchor = 0
    table[hashes[0]] = 0
    ip = 1

    while True:
        # search forward with growing step while matches fail
        fwd = ip
        search_nb = 1 << SKIP_TRIGGER
        match = -1
        while True:
            ip = fwd
            step = search_nb >> SKIP_TRIGGER
            search_nb += 1
            fwd = ip + step
            if fwd > mflimit:
                break
            h = hashes[ip]
            cand = table[h]
            table[h] = ip
            if cand >= 0 and ip - cand <= MAX_DISTANCE and uvals[cand] == uvals[ip]:
                match = cand
                break
        if match < 0:
            break

        # widen the match over preceding equal bytes
        while ip > anchor and match > 0 and raw[ip - 1] == raw[match - 1]:
            ip -= 1
            match -= 1
        mlen = MIN_MATCH + _match_length(
            uvals, raw, src, match + MIN_MATCH, ip + MIN_MATCH, matchlimit
        )
        _emit_sequence(out, raw, anchor, ip, ip - match, mlen)
        ip += mlen
        anchor = ip
        if ip > mflimit:
            break
        table[hashes[ip - 2]] = ip - 2

    _emit_literal_tail(out, raw, anchor, n)
    return bytes(out)


def lz4_decompress(payload: bytes, expected_len: int, out: bytearray | None = None) -> bytes:
    """Decode a block to exactly `expected_len` bytes.

    Accepts any well-formed block stream. When `out` is given the result is
    written into its first `expected_len` bytes (it must be large enough)
    and the same object's content is returned as bytes.
    """
    n = len(payload)
    if n == 0:
        raise CorruptBlockError("corrupt block: empty payload")
    if expected_len < 0:
        raise ValueError("expected_len must be >= 0")
    if out is None:
        dst = bytearray(expected_len)
    else:
        if len(out) < expected_len:
            raise ValueError(
                f"output buffer too small: need {expected_len} bytes, have {len(out)}"
            )
        dst = out
    src = payload
    i = 0
    o = 0
    while True:
        if i >= n:
            raise CorruptBlockError("corrupt block: truncated before token")
        token = src[i]
        i += 1
        lit = token >> 4
        if lit == 15:
            while True:
                if i >= n:
                    raise CorruptBlockError("corrupt block: truncated literal length")
                b = src[i]
                i += 1
                lit += b
                if b != 255:
                    break
        if i + lit > n:
            raise CorruptBlockError("corrupt block: literal run past end of payload")
        if o + lit > expected_len:
            raise CorruptBlockError("corrupt block: output overrun in literals")
        dst[o : o + lit] = src[i : i + lit]
        i += lit
        o += lit
        if i == n:
            break  # literals-only final sequence
        if i + 2 > n:
            raise CorruptBlockError("corrupt block: truncated match offset")
        offset = src[i] | (src[i + 1] << 8)
        i += 2
        if offset == 0:
            raise CorruptBlockError("corrupt block: zero match offset")
        if offset > o:
            raise CorruptBlockError("corrupt block: match offset before output start")
        mlen = token & 0xF
        if mlen == 15:
            while True:
                if i >= n:
                    raise CorruptBlockError("corrupt block: truncated match length")
                b = src[i]
                i += 1
                mlen += b
                if b != 255:
                    break
        mlen += MIN_MATCH
        if o + mlen > expected_len:
            raise CorruptBlockError("corrupt block: output overrun in match")
        start = o - offset
        if offset >= mlen:
            dst[o : o + mlen] = dst[start : start + mlen]
            o += mlen
        else:
            # overlapping match: the copied region doubles every pass
            end = o + mlen
            while o < end:
                ncopy = min(o - start, end - o)
                dst[o : o + ncopy] = dst[start : start + ncopy]
                o += ncopy
    if o != expected_len:
        raise CorruptBlockError(
            f"corrupt block: decoded {o} bytes, expected {expected_len}"
        )
    return bytes(dst[:expected_len]) if out is None else bytes(dst[:expected_len])
