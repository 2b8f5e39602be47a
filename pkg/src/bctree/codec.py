"""Canonical binary encoding and hashing.

All persisted structures reduce to two byte layouts:

  field map    count:u32be, then per present field in ascending number order:
               number:u16be, byte-length:u32be, utf-8 value bytes
  block header version:u32be | previous-hash:32B | content-hash:32B |
               timestamp:u64be | creator-length:u32be | creator utf-8

Equal values always encode to identical bytes; absent optional fields are
omitted entirely (never written with zero length). Digests are SHA-256 and
render as 64 lowercase hex chars everywhere text output is produced.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Mapping

from .errors import ChainFormatError, FieldTooLong, InvalidFieldNumber

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


def hash_bytes(data: bytes) -> bytes:
    """SHA-256 digest of `data` (32 bytes)."""
    return hashlib.sha256(data).digest()


def is_digest(value) -> bool:
    return isinstance(value, bytes) and len(value) == DIGEST_SIZE


def encode_field_map(fields: Mapping[int, str], caps: Mapping[int, int]) -> bytes:
    """Encode a field-number -> text map under the per-field byte caps.

    `caps` doubles as the set of admissible field numbers for this payload
    kind; a number outside it raises InvalidFieldNumber, an over-cap UTF-8
    value raises FieldTooLong.
    """
    present = sorted(fields)
    parts = [_U32.pack(len(present))]
    for num in present:
        if num not in caps:
            raise InvalidFieldNumber(num)
        raw = fields[num].encode("utf-8")
        if len(raw) > caps[num]:
            raise FieldTooLong(num, len(raw), caps[num])
        parts.append(_U16.pack(num))
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
    return b"".join(parts)


def decode_field_map(data: bytes, offset: int = 0) -> tuple[dict[int, str], int]:
    """Inverse of encode_field_map. Returns (fields, new offset).

    Enforces the canonical-form rules (strictly ascending field numbers) so
    that decode(encode(x)) == x and non-canonical bytes are rejected rather
    than silently re-ordered.
    """
    try:
        (count,) = _U32.unpack_from(data, offset)
        offset += 4
        fields: dict[int, str] = {}
        prev_num = -1
        for _ in range(count):
            (num,) = _U16.unpack_from(data, offset)
            (length,) = _U32.unpack_from(data, offset + 2)
            offset += 6
            if num <= prev_num:
                raise ChainFormatError(f"field numbers not strictly ascending at {num}")
            prev_num = num
            raw = data[offset:offset + length]
            if len(raw) != length:
                raise ChainFormatError("truncated field value")
            offset += length
            fields[num] = raw.decode("utf-8")
        return fields, offset
    except struct.error as exc:
        raise ChainFormatError(f"truncated field map: {exc}") from None
    except UnicodeDecodeError as exc:
        raise ChainFormatError(f"field value is not valid utf-8: {exc}") from None


def encode_header_fields(version: int, previous_hash: bytes, content_hash: bytes,
                         timestamp: int, creator_id: str) -> bytes:
    if not is_digest(previous_hash) or not is_digest(content_hash):
        raise ChainFormatError("header hashes must be 32-byte digests")
    if version < 0 or timestamp < 0:
        raise ChainFormatError("version and timestamp must be non-negative")
    creator = creator_id.encode("utf-8")
    return b"".join((
        _U32.pack(version),
        previous_hash,
        content_hash,
        _U64.pack(timestamp),
        _U32.pack(len(creator)),
        creator,
    ))


def decode_header_fields(data: bytes, offset: int = 0) -> tuple[tuple[int, bytes, bytes, int, str], int]:
    """Returns ((version, previous_hash, content_hash, timestamp, creator), new offset)."""
    try:
        (version,) = _U32.unpack_from(data, offset)
        previous_hash = bytes(data[offset + 4:offset + 36])
        content_hash = bytes(data[offset + 36:offset + 68])
        if len(content_hash) != DIGEST_SIZE:
            raise ChainFormatError("truncated header")
        (timestamp,) = _U64.unpack_from(data, offset + 68)
        (creator_len,) = _U32.unpack_from(data, offset + 76)
        offset += 80
        raw = data[offset:offset + creator_len]
        if len(raw) != creator_len:
            raise ChainFormatError("truncated creator id")
        offset += creator_len
        return (version, previous_hash, content_hash, timestamp, raw.decode("utf-8")), offset
    except struct.error as exc:
        raise ChainFormatError(f"truncated header: {exc}") from None
    except UnicodeDecodeError as exc:
        raise ChainFormatError(f"creator id is not valid utf-8: {exc}") from None


def pack_u32(value: int) -> bytes:
    return _U32.pack(value)


def unpack_u32(data: bytes, offset: int) -> tuple[int, int]:
    try:
        (value,) = _U32.unpack_from(data, offset)
    except struct.error:
        raise ChainFormatError("truncated length prefix") from None
    return value, offset + 4


def read_blob(data: bytes, offset: int) -> tuple[bytes, int]:
    """Read one u32be-length-prefixed byte string."""
    length, offset = unpack_u32(data, offset)
    raw = data[offset:offset + length]
    if len(raw) != length:
        raise ChainFormatError("truncated blob")
    return bytes(raw), offset + length
