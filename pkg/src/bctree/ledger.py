"""Append-only hash-linked chain of identity blocks.

A block is header + payload + detached signatures + the whole-block hash.
The header's content hash covers the payload bytes; the whole-block hash
covers header and payload together, so altering either is detectable. Chains
only grow; every append is checked for linkage and strictly increasing
timestamps (a block backdated behind the head is refused, which is what
blocks fabricated "in the past" run into).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from . import codec, records
from .card import verify_signature
from .codec import ZERO_DIGEST, hash_bytes
from .errors import (
    BadLinkage,
    ChainFormatError,
    ContentHashMismatch,
    NonMonotonicTimestamp,
)

CHAIN_MAGIC = b"BCT1"


@dataclass(frozen=True)
class BlockHeader:
    version: int
    previous_hash: bytes
    content_hash: bytes
    timestamp: int
    creator_id: str


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    payload: records.FieldPayload
    signatures: tuple[tuple[str, bytes], ...]
    cached_hash: bytes


def encode_header(header: BlockHeader) -> bytes:
    """Canonical 80+len(creator) byte header encoding."""
    return codec.encode_header_fields(
        header.version, header.previous_hash, header.content_hash,
        header.timestamp, header.creator_id)


def raw_block_hash(header: BlockHeader, payload: records.FieldPayload) -> bytes:
    """Hash over header bytes followed by payload bytes, no preconditions.

    This is what verification recomputes; block_hash() is the checked variant
    used when constructing blocks.
    """
    return hash_bytes(encode_header(header) + records.encode_payload(payload))


def block_hash(block: Block) -> bytes:
    expected = hash_bytes(records.encode_payload(block.payload))
    if block.header.content_hash != expected:
        raise ContentHashMismatch(
            "header content hash does not match the payload bytes")
    return raw_block_hash(block.header, block.payload)


def make_block(payload: records.FieldPayload, prev: bytes, timestamp: int,
               creator_id: str, version: int = 1) -> Block:
    """Assemble a block: content hash, header, whole-block hash. No signatures."""
    content = hash_bytes(records.encode_payload(payload))
    header = BlockHeader(version=version, previous_hash=prev,
                         content_hash=content, timestamp=int(timestamp),
                         creator_id=creator_id)
    cached = raw_block_hash(header, payload)
    return Block(header=header, payload=payload, signatures=(), cached_hash=cached)


def with_signature(block: Block, signer_id: str, signature: bytes) -> Block:
    """Attach a detached signature (over the whole-block hash)."""
    return replace(block, signatures=block.signatures + ((signer_id, signature),))


@dataclass(frozen=True)
class Chain:
    """Ordered blocks plus the expected previous-hash of the first block.

    The anchor is the zero digest for a top-level chain and the parent
    block's hash for a subchain. Chains are values: append returns a new one.
    """

    blocks: tuple[Block, ...] = ()
    anchor: bytes = ZERO_DIGEST

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def head(self) -> Block | None:
        return self.blocks[-1] if self.blocks else None

    @property
    def head_hash(self) -> bytes:
        return self.blocks[-1].cached_hash if self.blocks else self.anchor


def append(chain: Chain, block: Block) -> Chain:
    """Extend the chain by one block; existing blocks are never touched."""
    if block.header.previous_hash != chain.head_hash:
        raise BadLinkage(
            f"previous hash {block.header.previous_hash.hex()[:16]}.. does not "
            f"match chain head {chain.head_hash.hex()[:16]}..")
    head = chain.head
    if head is not None and block.header.timestamp <= head.header.timestamp:
        raise NonMonotonicTimestamp(
            f"timestamp {block.header.timestamp} not after head "
            f"{head.header.timestamp}")
    return Chain(blocks=chain.blocks + (block,), anchor=chain.anchor)


@dataclass(frozen=True)
class BlockCheck:
    linkage_ok: bool
    content_hash_ok: bool
    timestamp_ok: bool
    signature_ok: bool
    block_hash_ok: bool

    @property
    def ok(self) -> bool:
        return (self.linkage_ok and self.content_hash_ok and self.timestamp_ok
                and self.signature_ok and self.block_hash_ok)


@dataclass(frozen=True)
class Finding:
    index: int
    check: str
    detail: str

    def as_dict(self) -> dict:
        return {"index": self.index, "check": self.check, "detail": self.detail}


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[BlockCheck, ...] = ()
    findings: tuple[Finding, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.findings

    def as_dict(self) -> dict:
        return {"valid": self.valid,
                "blocks": len(self.checks),
                "findings": [f.as_dict() for f in self.findings]}


def verify_chain(chain: Chain, keys: Mapping[str, bytes] | None = None) -> VerificationReport:
    """Re-derive every hash and report all integrity failures, never raising.

    Linkage is checked against the RECOMPUTED hash of the predecessor, so a
    mutated block also surfaces as a linkage failure on its successor. With
    `keys` given, detached signatures are verified over the recomputed
    whole-block hash; without it signature checks are vacuous.
    """
    checks: list[BlockCheck] = []
    findings: list[Finding] = []
    prev_actual = chain.anchor
    prev_timestamp: int | None = None
    for index, block in enumerate(chain.blocks):
        try:
            payload_bytes = records.encode_payload(block.payload)
        except Exception:  # payload itself unencodable: count as content failure
            payload_bytes = None
        if payload_bytes is None:
            content_ok = False
            actual = b""
        else:
            content_ok = block.header.content_hash == hash_bytes(payload_bytes)
            actual = hash_bytes(encode_header(block.header) + payload_bytes)
        linkage_ok = block.header.previous_hash == prev_actual
        timestamp_ok = (block.header.timestamp >= 0
                        and (prev_timestamp is None
                             or block.header.timestamp > prev_timestamp))
        block_hash_ok = bool(actual) and block.cached_hash == actual
        signature_ok = True
        if keys is not None:
            for signer_id, signature in block.signatures:
                key = keys.get(signer_id)
                if key is None or not verify_signature(key, actual, signature):
                    signature_ok = False
                    findings.append(Finding(index, "signature",
                                            f"signature by {signer_id!r} does not verify"))
        if not content_ok:
            findings.append(Finding(index, "content_hash",
                                    "payload bytes do not match header content hash"))
        if not linkage_ok:
            findings.append(Finding(index, "linkage",
                                    "previous hash does not match predecessor"))
        if not timestamp_ok:
            findings.append(Finding(index, "timestamp",
                                    "timestamp not after predecessor"))
        if not block_hash_ok:
            findings.append(Finding(index, "block_hash",
                                    "stored block hash does not match header+payload"))
        checks.append(BlockCheck(linkage_ok, content_ok, timestamp_ok,
                                 signature_ok, block_hash_ok))
        prev_actual = actual
        prev_timestamp = block.header.timestamp
    return VerificationReport(checks=tuple(checks), findings=tuple(findings))


# wire format -----------------------------------------------------------------

def block_to_wire(block: Block) -> bytes:
    parts = [encode_header(block.header), records.encode_payload(block.payload),
             codec.pack_u32(len(block.signatures))]
    for signer_id, signature in block.signatures:
        raw_id = signer_id.encode("utf-8")
        parts.append(codec.pack_u32(len(raw_id)))
        parts.append(raw_id)
        parts.append(codec.pack_u32(len(signature)))
        parts.append(signature)
    return b"".join(parts)


def block_from_wire(data: bytes, offset: int = 0) -> tuple[Block, int]:
    """Parse one block. The whole-block hash is recomputed, not trusted."""
    from .errors import LedgerError

    (version, prev, content, timestamp, creator), offset = \
        codec.decode_header_fields(data, offset)
    fields, offset = codec.decode_field_map(data, offset)
    try:
        payload = records.payload_from_fields(fields)
    except ChainFormatError:
        raise
    except LedgerError as exc:  # e.g. an over-cap value in a stored block
        raise ChainFormatError(f"stored payload is malformed: {exc}") from None
    sig_count, offset = codec.unpack_u32(data, offset)
    signatures = []
    for _ in range(sig_count):
        raw_id, offset = codec.read_blob(data, offset)
        signature, offset = codec.read_blob(data, offset)
        signatures.append((raw_id.decode("utf-8"), signature))
    header = BlockHeader(version=version, previous_hash=prev, content_hash=content,
                         timestamp=timestamp, creator_id=creator)
    block = Block(header=header, payload=payload, signatures=tuple(signatures),
                  cached_hash=raw_block_hash(header, payload))
    return block, offset


def chain_to_bytes(chain: Chain) -> bytes:
    parts = [CHAIN_MAGIC, codec.pack_u32(len(chain.blocks))]
    parts.extend(block_to_wire(b) for b in chain.blocks)
    return b"".join(parts)


def chain_from_bytes(data: bytes, anchor: bytes = ZERO_DIGEST) -> Chain:
    if data[:4] != CHAIN_MAGIC:
        raise ChainFormatError("bad chain magic")
    count, offset = codec.unpack_u32(data, 4)
    blocks = []
    for _ in range(count):
        block, offset = block_from_wire(data, offset)
        blocks.append(block)
    if offset != len(data):
        raise ChainFormatError("trailing bytes after last block")
    return Chain(blocks=tuple(blocks), anchor=anchor)


def save_chain(chain: Chain, path) -> None:
    with open(path, "wb") as fh:
        fh.write(chain_to_bytes(chain))


def load_chain(path, anchor: bytes = ZERO_DIGEST) -> Chain:
    with open(path, "rb") as fh:
        return chain_from_bytes(fh.read(), anchor=anchor)


def build_chain(payloads: Iterable[records.FieldPayload], timestamps: Iterable[int],
                creator_id: str, anchor: bytes = ZERO_DIGEST, version: int = 1) -> Chain:
    """Convenience: fold make_block+append over parallel payload/timestamp lists."""
    chain = Chain(anchor=anchor)
    for payload, timestamp in zip(payloads, timestamps):
        block = make_block(payload, chain.head_hash, timestamp, creator_id, version)
        chain = append(chain, block)
    return chain
