"""Issuing and verification of ID-cards against the tree ledger.

Issuing does two things at once: accounting (a new identity block in the
tree) and manufacturing (a card image bound to that block by address and
hash). Active cards and latest-version card blocks stay in one-to-one
correspondence; reissuing revokes the old serial and binds a new card to a
new block on the identity's reissue chain.

Verification is total: any card image, however mangled, yields a boolean
decision plus findings naming each failed check, never an exception.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from . import card as card_emu
from . import ledger, tree as tree_mod
from .errors import (
    AlreadyRevoked,
    BadPreviousReference,
    CardFormatError,
    DuplicateSerial,
    LedgerError,
    UnknownSerial,
)
from .records import AccessEntry, PersonalRecord
from .tree import BlockAddress, TreeLedger


@dataclass(frozen=True)
class CardImage:
    """The manufactured card artifact: a payload copy bound to one block."""

    payload_copy: PersonalRecord
    bound_address: BlockAddress
    bound_hash: bytes
    card_serial: str
    card_public_key: bytes

    def to_json_dict(self) -> dict:
        return {
            "payload": self.payload_copy.to_json_dict(),
            "address": self.bound_address.to_jsonable(),
            "bound_hash": self.bound_hash.hex(),
            "serial": self.card_serial,
            "public_key": self.card_public_key.hex(),
        }

    @classmethod
    def from_json_dict(cls, obj) -> "CardImage":
        try:
            payload = PersonalRecord.from_json_dict(obj["payload"])
            address = BlockAddress.from_jsonable(obj["address"])
            bound_hash = bytes.fromhex(obj["bound_hash"])
            serial = str(obj["serial"])
            public_key = bytes.fromhex(obj["public_key"])
        except LedgerError as exc:
            raise CardFormatError(str(exc)) from None
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise CardFormatError(f"malformed card dump: {exc}") from None
        return cls(payload_copy=payload, bound_address=address,
                   bound_hash=bound_hash, card_serial=serial,
                   card_public_key=public_key)


def card_from_json_bytes(raw: bytes) -> CardImage:
    """Parse a card dump file; raises CardFormatError on anything unparseable."""
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CardFormatError(f"card file is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise CardFormatError("card file must be a JSON object")
    return CardImage.from_json_dict(obj)


@dataclass(frozen=True)
class RegistryState:
    tree: TreeLedger
    issued_cards: dict[str, CardImage] = field(default_factory=dict)
    revoked_serials: frozenset[str] = frozenset()


def new_registry(mode: str = tree_mod.MODE_FLAT, country_codes=()) -> RegistryState:
    return RegistryState(tree=tree_mod.new_tree(mode, country_codes))


def user_secret_for(pd: PersonalRecord) -> bytes:
    """Holder-specific key-derivation input: fingerprints when sampled,
    otherwise the fiscal code."""
    raw = pd.get(PersonalRecord.FINGERPRINT_FIELD) or pd.get(PersonalRecord.FISCAL_CODE_FIELD)
    if not raw:
        raise LedgerError("record carries no holder-specific data for key derivation")
    return raw.encode("utf-8")


def _prepare_payload(pd: PersonalRecord, officer_id: str) -> PersonalRecord:
    if not officer_id:
        raise LedgerError("officer-id must be non-empty")
    if PersonalRecord.OFFICER_FIELD not in pd:
        pd = pd.replace_field(PersonalRecord.OFFICER_FIELD, officer_id)
    pd.validate_identity()
    return pd


def issue(state: RegistryState, pd: PersonalRecord, country: int | None,
          timestamp: int, officer_id: str) -> tuple[RegistryState, CardImage]:
    """First issuance: one new identity block, one new card bound to it."""
    pd = _prepare_payload(pd, officer_id)
    if pd.previous_version != 0:
        raise BadPreviousReference(
            f"first issuance must carry 0 in field 21, got {pd.previous_version}")
    serial = pd.serial
    if serial in state.issued_cards:
        raise DuplicateSerial(f"serial {serial!r} already issued")
    new_tree, address = tree_mod.attach_identity_block(
        state.tree, country, pd, timestamp, officer_id)
    block = tree_mod.resolve(new_tree, address)
    _, public_key = card_emu.CardState.manufacture(
        serial, pd.fields, user_secret_for(pd))
    image = CardImage(payload_copy=pd, bound_address=address,
                      bound_hash=block.cached_hash, card_serial=serial,
                      card_public_key=public_key)
    issued = dict(state.issued_cards)
    issued[serial] = image
    return replace(state, tree=new_tree, issued_cards=issued), image


def reissue(state: RegistryState, old_serial: str, new_pd: PersonalRecord,
            timestamp: int, officer_id: str) -> tuple[RegistryState, CardImage]:
    """Replace an active card: revoke it, append a reissue block, bind a new card."""
    old = state.issued_cards.get(old_serial)
    if old is None:
        raise UnknownSerial(f"serial {old_serial!r} was never issued")
    if old_serial in state.revoked_serials:
        raise AlreadyRevoked(f"serial {old_serial!r} is already revoked")
    new_pd = _prepare_payload(new_pd, officer_id)
    serial = new_pd.serial
    if serial in state.issued_cards:
        raise DuplicateSerial(f"serial {serial!r} already issued")
    identity = identity_address_of(old.bound_address)
    if PersonalRecord.PREVIOUS_VERSION_FIELD not in new_pd:
        expected = tree_mod.expected_reissue_version(state.tree, identity)
        new_pd = new_pd.replace_field(PersonalRecord.PREVIOUS_VERSION_FIELD,
                                      str(expected))
    new_tree, address = tree_mod.attach_reissue(
        state.tree, identity, new_pd, timestamp, officer_id)
    block = tree_mod.resolve(new_tree, address)
    _, public_key = card_emu.CardState.manufacture(
        serial, new_pd.fields, user_secret_for(new_pd))
    image = CardImage(payload_copy=new_pd, bound_address=address,
                      bound_hash=block.cached_hash, card_serial=serial,
                      card_public_key=public_key)
    issued = dict(state.issued_cards)
    issued[serial] = image
    return (replace(state, tree=new_tree, issued_cards=issued,
                    revoked_serials=state.revoked_serials | {old_serial}),
            image)


def identity_address_of(address: BlockAddress) -> BlockAddress:
    """Strip a trailing reissue segment: the identity block anchoring the lineage."""
    if address.kind == tree_mod.REISSUE:
        return address.parent_chain_key()
    return address


def verify_card(state: RegistryState, card: CardImage) -> tuple[bool, list[str]]:
    """Decide whether the presented card matches the ledger and the registry.

    Checks: (a) the bound address resolves, (b) the resolved block's hash
    equals the card's bound hash, (c) block payload and card payload agree
    field by field, (d) the serial is not revoked, (e) the registry's own
    record of that serial matches the presented card. Forgery is a False
    decision with findings, never an error.
    """
    findings: list[str] = []
    block = None
    try:
        block = tree_mod.resolve(state.tree, card.bound_address)
    except LedgerError as exc:
        findings.append(f"no such block: {exc}")
    if block is not None:
        if block.cached_hash != card.bound_hash:
            findings.append("bound hash does not match the ledger block")
        block_fields = block.payload.fields
        card_fields = card.payload_copy.fields
        for num in sorted(set(block_fields) | set(card_fields)):
            if block_fields.get(num) != card_fields.get(num):
                findings.append(f"payload field {num} mismatch")
    if card.card_serial in state.revoked_serials:
        findings.append("serial is revoked")
    registered = state.issued_cards.get(card.card_serial)
    if registered is None:
        findings.append("serial is not registered")
    else:
        if registered.card_public_key != card.card_public_key:
            findings.append("public key does not match the registered card")
        if registered.bound_address != card.bound_address:
            findings.append("bound address does not match the registered card")
        if registered.bound_hash != card.bound_hash:
            findings.append("bound hash does not match the registered card")
    return (not findings), findings


def verify_with_audit(state: RegistryState, card: CardImage, device_id: str,
                      user_id: str, timestamp: int
                      ) -> tuple[RegistryState, bool, list[str]]:
    """verify_card plus an access-log entry on the bound block.

    Every attempt is logged, failures included; only cards bound to a block
    that does not exist at all have nowhere to log.
    """
    decision, findings = verify_card(state, card)
    try:
        target = card.bound_address
        if tree_mod.is_card_version_address(state.tree, target):
            tree_mod.resolve(state.tree, target)
            entry = AccessEntry(timestamp=timestamp, device_id=device_id,
                                user_id=user_id,
                                purpose="verify:pass" if decision else "verify:fail")
            new_tree, _ = tree_mod.record_access(state.tree, target, entry)
            state = replace(state, tree=new_tree)
    except LedgerError as exc:
        findings = findings + [f"access log not appended: {exc}"]
    return state, decision, findings


def active_cards(state: RegistryState) -> dict[str, CardImage]:
    return {serial: image for serial, image in state.issued_cards.items()
            if serial not in state.revoked_serials}


def latest_version_addresses(state: RegistryState) -> set[BlockAddress]:
    """Card-bearing blocks without a newer reissue: one per identity lineage."""
    t = state.tree
    latest: set[BlockAddress] = set()
    for address, _ in tree_mod.enumerate_blocks(t):
        if not tree_mod.is_identity_address(t, address):
            continue
        chain = t.reissue_chains.get(address)
        if chain and chain.blocks:
            latest.add(address.child(tree_mod.REISSUE, len(chain.blocks) - 1))
        else:
            latest.add(address)
    return latest


def check_isomorphism(state: RegistryState) -> bool:
    """Active cards biject onto latest-version blocks (by bound address)."""
    actives = active_cards(state)
    bound = [image.bound_address for image in actives.values()]
    return len(set(bound)) == len(bound) and set(bound) == latest_version_addresses(state)


# persistence -----------------------------------------------------------------

REGISTRY_FILE = "registry.json"


def save_registry(state: RegistryState, directory) -> None:
    directory = Path(directory)
    tree_mod.save_tree(state.tree, directory)
    doc = {
        "cards": {serial: image.to_json_dict()
                  for serial, image in sorted(state.issued_cards.items())},
        "revoked": sorted(state.revoked_serials),
    }
    with open(directory / REGISTRY_FILE, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_registry(directory) -> RegistryState:
    directory = Path(directory)
    t = tree_mod.load_tree(directory)
    issued: dict[str, CardImage] = {}
    revoked: Iterable[str] = ()
    registry_path = directory / REGISTRY_FILE
    if registry_path.exists():
        try:
            with open(registry_path, encoding="utf-8") as fh:
                doc = json.load(fh)
            issued = {serial: CardImage.from_json_dict(entry)
                      for serial, entry in doc.get("cards", {}).items()}
            revoked = doc.get("revoked", ())
        except (OSError, json.JSONDecodeError, CardFormatError) as exc:
            raise CardFormatError(f"cannot read registry state: {exc}") from None
    return RegistryState(tree=t, issued_cards=issued,
                         revoked_serials=frozenset(revoked))
