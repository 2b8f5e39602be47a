"""The blockchain tree: a top-level chain whose blocks anchor subchains.

Layers, top to bottom:

  root chain      genesis + (nested mode) one country block per member state,
                  or (flat mode) genesis + identity blocks directly
  country chains  one per country block, holding that country's identity blocks
  reissue chains  one per identity block, holding replacement card versions
  access chains   one per card-version block (identity or reissue), holding
                  the access log

Every subchain's first block links to the hash of its parent block, which is
what makes cross-level tampering visible: mutate a parent and both its own
chain and the anchoring of everything hanging off it break.

Trees are values with copy-on-write semantics: mutating operations return a
new TreeLedger. Concurrent writers must serialize externally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Mapping

from . import ledger, records
from .codec import ZERO_DIGEST, hash_bytes
from .errors import (
    AddressOutOfRange,
    BadPreviousReference,
    ChainFormatError,
    DuplicateCountry,
    KindMismatch,
    NotAnIdentityBlock,
    UnknownCountry,
)

ROOT = "root"
COUNTRY = "country"
REISSUE = "reissue"
ACCESS = "access"

MODE_FLAT = "flat"
MODE_NESTED = "nested"

# admissible kind sequences for an address path
_KIND_ORDER = {ROOT: 0, COUNTRY: 1, REISSUE: 2, ACCESS: 3}


@dataclass(frozen=True, order=True)
class BlockAddress:
    """Path of (chain kind, block index) pairs from the root chain down."""

    path: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if not self.path:
            raise KindMismatch("address path is empty")
        kinds = [kind for kind, _ in self.path]
        if kinds[0] != ROOT:
            raise KindMismatch(f"address must start at the root chain, got {kinds[0]!r}")
        ranks = [_KIND_ORDER.get(kind) for kind in kinds]
        if None in ranks or any(b <= a for a, b in zip(ranks, ranks[1:])):
            raise KindMismatch(f"invalid chain-kind sequence {kinds}")
        if any(index < 0 for _, index in self.path):
            raise AddressOutOfRange("negative block index")

    @property
    def kind(self) -> str:
        return self.path[-1][0]

    @property
    def index(self) -> int:
        return self.path[-1][1]

    def child(self, kind: str, index: int) -> "BlockAddress":
        return BlockAddress(self.path + ((kind, index),))

    def parent_chain_key(self) -> "BlockAddress":
        """Address of the block the last segment's chain hangs off."""
        return BlockAddress(self.path[:-1])

    def label(self) -> str:
        """Filesystem-safe form, e.g. root3-country0-reissue1."""
        return "-".join(f"{kind}{index}" for kind, index in self.path)

    def to_jsonable(self) -> list[list]:
        return [[kind, index] for kind, index in self.path]

    @classmethod
    def from_jsonable(cls, obj) -> "BlockAddress":
        try:
            path = tuple((str(kind), int(index)) for kind, index in obj)
        except (TypeError, ValueError) as exc:
            raise KindMismatch(f"malformed address: {exc}") from None
        return cls(path)

    def __str__(self) -> str:
        return self.label()


def root_address(index: int) -> BlockAddress:
    return BlockAddress(((ROOT, index),))


@dataclass(frozen=True)
class TreeLedger:
    mode: str
    root: ledger.Chain
    country_chains: dict[int, ledger.Chain]
    reissue_chains: dict[BlockAddress, ledger.Chain]
    access_chains: dict[BlockAddress, ledger.Chain]


@dataclass(frozen=True)
class CountBreakdown:
    """Per-layer block counts; total always equals exhaustive enumeration."""

    root_blocks: int
    country_blocks: dict[int, int]
    reissue_blocks: dict[BlockAddress, int]
    access_blocks: dict[BlockAddress, int]

    @property
    def total(self) -> int:
        return (self.root_blocks + sum(self.country_blocks.values())
                + sum(self.reissue_blocks.values())
                + sum(self.access_blocks.values()))

    def as_dict(self) -> dict:
        return {
            "root_blocks": self.root_blocks,
            "country_blocks": {str(k): v for k, v in sorted(self.country_blocks.items())},
            "reissue_blocks": {a.label(): v for a, v in sorted(self.reissue_blocks.items())},
            "access_blocks": {a.label(): v for a, v in sorted(self.access_blocks.items())},
            "total": self.total,
        }


def new_tree(mode: str, country_codes=(), timestamp: int = 0,
             creator: str = "genesis") -> TreeLedger:
    """Fresh tree: genesis only (flat) or genesis + one block per country (nested)."""
    if mode not in (MODE_FLAT, MODE_NESTED):
        raise KindMismatch(f"unknown tree mode {mode!r}")
    chain = ledger.Chain()
    genesis = ledger.make_block(records.PersonalRecord(), ZERO_DIGEST,
                                timestamp, creator)
    chain = ledger.append(chain, genesis)
    if mode == MODE_NESTED:
        codes = list(country_codes)
        if not codes:
            raise UnknownCountry("nested mode requires at least one country code")
        if len(set(codes)) != len(codes):
            raise DuplicateCountry(f"duplicate country codes in {codes}")
        for offset, code in enumerate(codes):
            descriptor = records.CountryDescriptor(
                country_code=code, joined_timestamp=timestamp + 1 + offset)
            descriptor.validate()
            block = ledger.make_block(descriptor, chain.head_hash,
                                      timestamp + 1 + offset, creator)
            chain = ledger.append(chain, block)
    return TreeLedger(mode=mode, root=chain, country_chains={},
                      reissue_chains={}, access_chains={})


def _chain_for(tree: TreeLedger, address: BlockAddress) -> ledger.Chain:
    """The chain containing the addressed block; AddressOutOfRange if absent."""
    kind = address.kind
    if kind == ROOT:
        return tree.root
    if kind == COUNTRY:
        root_index = address.path[0][1]
        chain = tree.country_chains.get(root_index)
    elif kind == REISSUE:
        chain = tree.reissue_chains.get(address.parent_chain_key())
    else:
        chain = tree.access_chains.get(address.parent_chain_key())
    if chain is None:
        raise AddressOutOfRange(f"no {kind} chain at {address.parent_chain_key()}")
    return chain


def resolve(tree: TreeLedger, address: BlockAddress) -> ledger.Block:
    """Return the addressed block; total on well-formed addresses."""
    if not isinstance(address, BlockAddress):
        address = BlockAddress.from_jsonable(address)
    if tree.mode == MODE_FLAT and any(kind == COUNTRY for kind, _ in address.path):
        raise KindMismatch("flat trees have no country chains")
    # every prefix must address an existing block
    for depth in range(1, len(address.path) + 1):
        prefix = BlockAddress(address.path[:depth])
        chain = _chain_for(tree, prefix)
        if prefix.index >= len(chain.blocks):
            raise AddressOutOfRange(
                f"{prefix} indexes past chain length {len(chain.blocks)}")
    return chain.blocks[address.index]


def is_identity_address(tree: TreeLedger, address: BlockAddress) -> bool:
    kinds = tuple(kind for kind, _ in address.path)
    if tree.mode == MODE_FLAT:
        return kinds == (ROOT,) and address.index >= 1
    return kinds == (ROOT, COUNTRY)


def is_card_version_address(tree: TreeLedger, address: BlockAddress) -> bool:
    if is_identity_address(tree, address):
        return True
    if address.kind != REISSUE:
        return False
    return is_identity_address(tree, address.parent_chain_key())


def attach_identity_block(tree: TreeLedger, country: int | None,
                          payload: records.PersonalRecord, timestamp: int,
                          creator: str, version: int = 1
                          ) -> tuple[TreeLedger, BlockAddress]:
    """Append one identity block (to the country chain, or to the root when flat)."""
    payload.validate_identity()
    if tree.mode == MODE_FLAT:
        if country is not None:
            raise UnknownCountry("flat trees take no country index")
        block = ledger.make_block(payload, tree.root.head_hash, timestamp,
                                  creator, version)
        root = ledger.append(tree.root, block)
        return replace(tree, root=root), root_address(len(root.blocks) - 1)
    if country is None:
        raise UnknownCountry("nested trees require a country index")
    if not 1 <= country < len(tree.root.blocks):
        raise UnknownCountry(f"no country block at root index {country}")
    anchor_block = tree.root.blocks[country]
    chain = tree.country_chains.get(
        country, ledger.Chain(anchor=anchor_block.cached_hash))
    block = ledger.make_block(payload, chain.head_hash, timestamp, creator, version)
    chain = ledger.append(chain, block)
    chains = dict(tree.country_chains)
    chains[country] = chain
    address = root_address(country).child(COUNTRY, len(chain.blocks) - 1)
    return replace(tree, country_chains=chains), address


def expected_reissue_version(tree: TreeLedger, identity: BlockAddress) -> int:
    """Version number (1-based) of the card the next reissue replaces."""
    chain = tree.reissue_chains.get(identity)
    return 1 + (len(chain.blocks) if chain else 0)


def attach_reissue(tree: TreeLedger, identity: BlockAddress,
                   payload: records.PersonalRecord, timestamp: int,
                   creator: str) -> tuple[TreeLedger, BlockAddress]:
    """Append a replacement card version to the identity block's reissue chain.

    The payload's field 21 must name the version being replaced: the latest
    existing one (the original card is version 1). 0 marks a first issuance
    and is never valid here.
    """
    if not is_identity_address(tree, identity):
        raise NotAnIdentityBlock(f"{identity} does not address an identity block")
    payload.validate_identity()
    identity_block = resolve(tree, identity)
    expected = expected_reissue_version(tree, identity)
    if payload.previous_version != expected:
        raise BadPreviousReference(
            f"field 21 is {payload.previous_version}, expected {expected} "
            f"(latest existing version)")
    chain = tree.reissue_chains.get(
        identity, ledger.Chain(anchor=identity_block.cached_hash))
    block = ledger.make_block(payload, chain.head_hash, timestamp, creator)
    chain = ledger.append(chain, block)
    chains = dict(tree.reissue_chains)
    chains[identity] = chain
    return (replace(tree, reissue_chains=chains),
            identity.child(REISSUE, len(chain.blocks) - 1))


def record_access(tree: TreeLedger, card_version: BlockAddress,
                  entry: records.AccessEntry) -> tuple[TreeLedger, BlockAddress]:
    """Log one access attempt on the addressed card-version block."""
    if not is_card_version_address(tree, card_version):
        raise KindMismatch(f"{card_version} is not a card-version block")
    entry.validate()
    target_block = resolve(tree, card_version)
    chain = tree.access_chains.get(
        card_version, ledger.Chain(anchor=target_block.cached_hash))
    block = ledger.make_block(entry, chain.head_hash, entry.timestamp,
                              entry.user_id)
    chain = ledger.append(chain, block)
    chains = dict(tree.access_chains)
    chains[card_version] = chain
    return (replace(tree, access_chains=chains),
            card_version.child(ACCESS, len(chain.blocks) - 1))


def iter_chains(tree: TreeLedger) -> Iterator[tuple[str, BlockAddress | None, ledger.Chain]]:
    """All chains as (label, parent block address or None for root, chain).

    Deterministic order: root, then country/reissue/access chains sorted by
    their parent address.
    """
    yield "root", None, tree.root
    for index in sorted(tree.country_chains):
        yield f"country-{index}", root_address(index), tree.country_chains[index]
    for address in sorted(tree.reissue_chains):
        yield f"reissue-{address.label()}", address, tree.reissue_chains[address]
    for address in sorted(tree.access_chains):
        yield f"access-{address.label()}", address, tree.access_chains[address]


def _chain_block_address(parent: BlockAddress | None, label: str, index: int) -> BlockAddress:
    if parent is None:
        return root_address(index)
    kind = label.split("-", 1)[0]
    if kind == "country":
        return parent.child(COUNTRY, index)
    if kind == "reissue":
        return parent.child(REISSUE, index)
    return parent.child(ACCESS, index)


def enumerate_blocks(tree: TreeLedger) -> Iterator[tuple[BlockAddress, ledger.Block]]:
    """Every block in the tree exactly once, with its address."""
    for label, parent, chain in iter_chains(tree):
        for index, block in enumerate(chain.blocks):
            yield _chain_block_address(parent, label, index), block


def cardinality(tree: TreeLedger) -> CountBreakdown:
    """Closed-form per-layer counts from chain lengths."""
    return CountBreakdown(
        root_blocks=len(tree.root.blocks),
        country_blocks={i: len(c.blocks) for i, c in tree.country_chains.items()},
        reissue_blocks={a: len(c.blocks) for a, c in tree.reissue_chains.items()},
        access_blocks={a: len(c.blocks) for a, c in tree.access_chains.items()},
    )


@dataclass(frozen=True)
class TreeFinding:
    chain: str
    check: str
    detail: str

    def as_dict(self) -> dict:
        return {"chain": self.chain, "check": self.check, "detail": self.detail}


@dataclass(frozen=True)
class TreeReport:
    chain_reports: dict[str, ledger.VerificationReport]
    findings: tuple[TreeFinding, ...]

    @property
    def valid(self) -> bool:
        return (not self.findings
                and all(r.valid for r in self.chain_reports.values()))

    def all_findings(self) -> list[dict]:
        out = [dict(chain=label, **f.as_dict())
               for label, report in sorted(self.chain_reports.items())
               for f in report.findings]
        out.extend(f.as_dict() for f in self.findings)
        return out

    def as_dict(self) -> dict:
        return {
            "valid": self.valid,
            "chains": {label: report.as_dict()
                       for label, report in sorted(self.chain_reports.items())},
            "tree_findings": [f.as_dict() for f in self.findings],
        }


def audit_tree(tree: TreeLedger, keys: Mapping[str, bytes] | None = None) -> TreeReport:
    """verify_chain over every chain plus cross-chain anchoring and mode checks."""
    chain_reports: dict[str, ledger.VerificationReport] = {}
    findings: list[TreeFinding] = []
    for label, parent, chain in iter_chains(tree):
        chain_reports[label] = ledger.verify_chain(chain, keys)
        if parent is None:
            if chain.anchor != ZERO_DIGEST:
                findings.append(TreeFinding(label, "anchoring",
                                            "root chain anchor is not the zero digest"))
            continue
        try:
            parent_block = resolve(tree, parent)
        except (AddressOutOfRange, KindMismatch) as exc:
            findings.append(TreeFinding(label, "anchoring",
                                        f"parent block missing: {exc}"))
            continue
        actual = ledger.raw_block_hash(parent_block.header, parent_block.payload)
        if chain.anchor != actual:
            findings.append(TreeFinding(
                label, "anchoring",
                f"subchain anchor does not match parent block {parent}"))
    findings.extend(_mode_findings(tree))
    return TreeReport(chain_reports=chain_reports, findings=tuple(findings))


def _mode_findings(tree: TreeLedger) -> list[TreeFinding]:
    findings = []
    if tree.mode == MODE_FLAT and tree.country_chains:
        findings.append(TreeFinding("root", "structure",
                                    "flat tree contains country chains"))
    for index, block in enumerate(tree.root.blocks):
        payload = block.payload
        if index == 0:
            if not isinstance(payload, records.PersonalRecord) or payload.fields:
                findings.append(TreeFinding("root", "structure",
                                            "genesis payload is not empty"))
        elif tree.mode == MODE_NESTED:
            if not isinstance(payload, records.CountryDescriptor):
                findings.append(TreeFinding(
                    "root", "structure",
                    f"nested root block {index} is not a country descriptor"))
        else:
            if not isinstance(payload, records.PersonalRecord):
                findings.append(TreeFinding(
                    "root", "structure",
                    f"flat root block {index} is not a personal record"))
    return findings


def replace_block_unchecked(tree: TreeLedger, address: BlockAddress,
                            block: ledger.Block) -> TreeLedger:
    """Swap a block in place, bypassing append-only rules.

    Exists for the network simulator's compromise injection and for repair
    adoption; regular code never calls this.
    """
    resolve(tree, address)  # range check
    chain = _chain_for(tree, address)
    blocks = list(chain.blocks)
    blocks[address.index] = block
    new_chain = ledger.Chain(blocks=tuple(blocks), anchor=chain.anchor)
    kind = address.kind
    if kind == ROOT:
        return replace(tree, root=new_chain)
    if kind == COUNTRY:
        chains = dict(tree.country_chains)
        chains[address.path[0][1]] = new_chain
        return replace(tree, country_chains=chains)
    if kind == REISSUE:
        chains = dict(tree.reissue_chains)
        chains[address.parent_chain_key()] = new_chain
        return replace(tree, reissue_chains=chains)
    chains = dict(tree.access_chains)
    chains[address.parent_chain_key()] = new_chain
    return replace(tree, access_chains=chains)


# persistence -----------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def save_tree(tree: TreeLedger, directory) -> None:
    """Directory layout: one .bct file per chain plus a JSON manifest with the
    mode and the anchoring table."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "BCT1", "mode": tree.mode, "chains": []}
    for label, parent, chain in iter_chains(tree):
        filename = f"{label}.bct"
        ledger.save_chain(chain, directory / filename)
        manifest["chains"].append({
            "file": filename,
            "label": label,
            "parent": parent.to_jsonable() if parent is not None else None,
            "anchor": chain.anchor.hex(),
        })
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tree(directory) -> TreeLedger:
    directory = Path(directory)
    try:
        with open(directory / MANIFEST_NAME, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ChainFormatError(f"cannot read tree manifest: {exc}") from None
    if manifest.get("format") != "BCT1":
        raise ChainFormatError("unknown tree format")
    mode = manifest.get("mode")
    if mode not in (MODE_FLAT, MODE_NESTED):
        raise ChainFormatError(f"unknown tree mode {mode!r}")
    root = None
    country_chains: dict[int, ledger.Chain] = {}
    reissue_chains: dict[BlockAddress, ledger.Chain] = {}
    access_chains: dict[BlockAddress, ledger.Chain] = {}
    for entry in manifest.get("chains", []):
        try:
            anchor = bytes.fromhex(entry["anchor"])
            label = entry["label"]
            chain = ledger.load_chain(directory / entry["file"], anchor=anchor)
        except (KeyError, ValueError, OSError) as exc:
            raise ChainFormatError(f"bad manifest chain entry: {exc}") from None
        if label == "root":
            root = chain
        elif label.startswith("country-"):
            country_chains[int(label.split("-", 1)[1])] = chain
        elif label.startswith(("reissue-", "access-")):
            parent = BlockAddress.from_jsonable(entry["parent"])
            if label.startswith("reissue-"):
                reissue_chains[parent] = chain
            else:
                access_chains[parent] = chain
        else:
            raise ChainFormatError(f"unknown chain label {label!r}")
    if root is None:
        raise ChainFormatError("manifest lists no root chain")
    return TreeLedger(mode=mode, root=root, country_chains=country_chains,
                      reissue_chains=reissue_chains, access_chains=access_chains)


def tree_digest(tree: TreeLedger) -> bytes:
    """One digest over the whole tree; equal trees give equal digests."""
    parts = [tree.mode.encode("utf-8")]
    for label, _, chain in iter_chains(tree):
        parts.append(label.encode("utf-8"))
        parts.append(chain.anchor)
        parts.append(ledger.chain_to_bytes(chain))
    return hash_bytes(b"\x00".join(parts))
