"""Chain construction, linkage discipline, verification, wire round-trips."""

import dataclasses

import pytest

from bctree import card, codec, ledger, records
from bctree.errors import BadLinkage, ChainFormatError, NonMonotonicTimestamp
from bctree.records import PersonalRecord

from conftest import FULL_FIELDS, make_personal

# oracle pipeline applied three times (same throwaway encoder as test_codec)
THREE_BLOCK_HEAD_HASH = "c1778dffe76b60ac85686593b0480431c1bb1a1320421d266afbecc072fe7cf0"


def three_block_chain() -> ledger.Chain:
    recs = [dict(FULL_FIELDS) for _ in range(3)]
    recs[1][2], recs[1][3] = "AA00001CC", "Maria"
    recs[2][2], recs[2][3] = "AA00002DD", "Luca"
    return ledger.build_chain([PersonalRecord(r) for r in recs],
                              [1565654400, 1565654500, 1565654600],
                              "IT-MILANO-01")


def test_three_block_head_hash_matches_oracle():
    chain = three_block_chain()
    assert len(chain) == 3
    assert chain.head_hash.hex() == THREE_BLOCK_HEAD_HASH


def test_append_to_empty_chain_needs_zero_prev():
    block = ledger.make_block(make_personal(1), codec.ZERO_DIGEST, 5, "X")
    chain = ledger.append(ledger.Chain(), block)
    assert len(chain) == 1
    assert chain.blocks[0].header.previous_hash == codec.ZERO_DIGEST


def test_append_rejects_bad_linkage():
    chain = three_block_chain()
    stray = ledger.make_block(make_personal(9), codec.ZERO_DIGEST, 99, "X")
    with pytest.raises(BadLinkage):
        ledger.append(chain, stray)


@pytest.mark.parametrize("delta", [0, -10])
def test_append_rejects_non_increasing_timestamp(delta):
    chain = three_block_chain()
    head_ts = chain.head.header.timestamp
    block = ledger.make_block(make_personal(9), chain.head_hash,
                              head_ts + delta, "X")
    with pytest.raises(NonMonotonicTimestamp):
        ledger.append(chain, block)


def test_append_only_snapshot():
    chain = ledger.Chain()
    snapshots = []
    for i in range(4):
        block = ledger.make_block(make_personal(i), chain.head_hash, 10 + i, "X")
        chain = ledger.append(chain, block)
        snapshots.append([ledger.block_to_wire(b) for b in chain.blocks])
    for earlier, later in zip(snapshots, snapshots[1:]):
        assert later[:len(earlier)] == earlier


def test_verify_untampered_chain():
    report = ledger.verify_chain(three_block_chain())
    assert report.valid
    assert report.findings == ()
    assert all(c.ok for c in report.checks)


def test_verify_single_genesis_chain():
    chain = ledger.build_chain([make_personal(0)], [7], "X")
    assert ledger.verify_chain(chain).valid


def test_mutated_payload_flags_block_and_successor():
    chain = three_block_chain()
    victim = chain.blocks[1]
    tampered = dataclasses.replace(
        victim, payload=victim.payload.replace_field(3, "Mallory"))
    chain = ledger.Chain(blocks=(chain.blocks[0], tampered, chain.blocks[2]),
                         anchor=chain.anchor)
    report = ledger.verify_chain(chain)
    assert not report.valid
    by_block = {(f.index, f.check) for f in report.findings}
    assert (1, "content_hash") in by_block
    assert (2, "linkage") in by_block
    assert all(index != 0 for index, _ in by_block)


def _mutations_of(block: ledger.Block):
    """Every single-field mutation of one block (payload, header, stored hash)."""
    for num, value in block.payload.items():
        yield dataclasses.replace(
            block, payload=block.payload.replace_field(num, value + "?")
            if len(value.encode()) < PersonalRecord.CAPS.get(num, 100)
            else block.payload.replace_field(num, value[:-1] + "?"))
    header = block.header
    yield dataclasses.replace(block, header=dataclasses.replace(
        header, version=header.version + 1))
    yield dataclasses.replace(block, header=dataclasses.replace(
        header, previous_hash=codec.hash_bytes(b"forged")))
    yield dataclasses.replace(block, header=dataclasses.replace(
        header, content_hash=codec.hash_bytes(b"forged")))
    yield dataclasses.replace(block, header=dataclasses.replace(
        header, timestamp=header.timestamp + 1))
    yield dataclasses.replace(block, header=dataclasses.replace(
        header, creator_id=header.creator_id + "?"))
    yield dataclasses.replace(block, cached_hash=codec.hash_bytes(b"forged"))


def test_tamper_completeness_full_sweep():
    """Any single-field mutation of any block is reported at i or i+1."""
    mutations = 0
    for length in range(1, 7):
        base = ledger.build_chain(
            [PersonalRecord({**FULL_FIELDS, 2: f"AA{i:05d}ZZ"})
             for i in range(length)],
            [1000 + 50 * i for i in range(length)], "OFF")
        assert ledger.verify_chain(base).valid
        for index in range(length):
            for mutated_block in _mutations_of(base.blocks[index]):
                blocks = list(base.blocks)
                blocks[index] = mutated_block
                report = ledger.verify_chain(
                    ledger.Chain(blocks=tuple(blocks), anchor=base.anchor))
                mutations += 1
                assert not report.valid
                assert any(f.index in (index, index + 1) for f in report.findings)
    assert mutations >= 500


def test_rebuild_determinism():
    a = three_block_chain()
    b = three_block_chain()
    assert a.head_hash == b.head_hash
    assert ledger.chain_to_bytes(a) == ledger.chain_to_bytes(b)


def test_chain_file_roundtrip(tmp_path):
    chain = three_block_chain()
    path = tmp_path / "chain.bct"
    ledger.save_chain(chain, path)
    raw = path.read_bytes()
    assert raw[:4] == b"BCT1"
    assert raw[4:8] == b"\x00\x00\x00\x03"
    loaded = ledger.load_chain(path)
    assert loaded == chain
    assert ledger.verify_chain(loaded).valid


def test_chain_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bct"
    path.write_bytes(b"NOPE" + b"\x00" * 10)
    with pytest.raises(ChainFormatError):
        ledger.load_chain(path)
    path.write_bytes(ledger.chain_to_bytes(three_block_chain()) + b"junk")
    with pytest.raises(ChainFormatError):
        ledger.load_chain(path)


def test_signatures_roundtrip_and_verify():
    seed = card.derive_key(b"fp:operator", b"NODE-1")
    public = card.public_key_for(b"fp:operator", b"NODE-1")
    block = ledger.make_block(make_personal(3), codec.ZERO_DIGEST, 11, "NODE-1")
    signed = ledger.with_signature(block, "NODE-1",
                                   card.sign_with_seed(seed, block.cached_hash))
    chain = ledger.append(ledger.Chain(), signed)
    keys = {"NODE-1": public}
    assert ledger.verify_chain(chain, keys).valid
    # tampering the payload invalidates the signature as well
    tampered = dataclasses.replace(
        signed, payload=signed.payload.replace_field(3, "Other"))
    report = ledger.verify_chain(
        ledger.Chain(blocks=(tampered,), anchor=codec.ZERO_DIGEST), keys)
    assert {f.check for f in report.findings} >= {"content_hash", "signature"}

    wire = ledger.block_to_wire(signed)
    decoded, _ = ledger.block_from_wire(wire)
    assert decoded == signed
