"""ID-card chip emulation: sealed memory, key derivation, signing, multisig.

The emulated chip never stores a private key. A signing key is derived on
demand from two inputs (holder-specific data such as a fingerprint scan, and
card-specific data, i.e. the serial), used once, and discarded. The public
key is computed once at manufacture and published alongside the card.

Command frames (1-byte code, 2-byte big-endian body length, body):
  0x01 READ   body = sequence of u16 field numbers
  0x02 SIGN   body = u16 msg-len, msg, u16 input-len, holder input
  0x03 ERASE-APPLET  empty body, wipes memory areas numbered >= 100
Response frames (1-byte status, 2-byte big-endian body length, body):
  0x00 OK  0x10 MALFORMED  0x11 NO-SUCH-FIELD  0x12 EMPTY-INPUT
  0x13 NOT-MANUFACTURED
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .codec import pack_u32
from .errors import EmptyInput, NotManufactured, UnknownSigner

KDF_CONTEXT = b"IDCARD-KDF-v1"
KEY_SIZE = 32
SIGNATURE_SIZE = 64

CMD_READ = 0x01
CMD_SIGN = 0x02
CMD_ERASE_APPLET = 0x03

STATUS_OK = 0x00
STATUS_MALFORMED = 0x10
STATUS_NO_SUCH_FIELD = 0x11
STATUS_EMPTY_INPUT = 0x12
STATUS_NOT_MANUFACTURED = 0x13

APPLET_AREA_START = 100


def derive_key(user_input: bytes, card_data: bytes) -> bytes:
    """Deterministic 32-byte signing seed from holder + card inputs.

    Both inputs are length-prefixed before concatenation so that the split
    point is unambiguous; HKDF-SHA256 with a fixed context label expands the
    result to key size.
    """
    if not user_input or not card_data:
        raise EmptyInput("key derivation requires non-empty holder and card inputs")
    material = pack_u32(len(user_input)) + user_input + pack_u32(len(card_data)) + card_data
    kdf = HKDF(algorithm=hashes.SHA256(), length=KEY_SIZE, salt=None, info=KDF_CONTEXT)
    return kdf.derive(material)


def public_key_for(user_input: bytes, card_data: bytes) -> bytes:
    """Raw 32-byte verification key matching derive_key's signing seed."""
    seed = derive_key(user_input, card_data)
    return Ed25519PrivateKey.from_private_bytes(seed).public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def sign_with_seed(seed: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(seed).sign(message)


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """Total verification: malformed keys or signatures are just False."""
    if not isinstance(public_key, bytes) or len(public_key) != KEY_SIZE:
        return False
    if not isinstance(signature, bytes) or len(signature) != SIGNATURE_SIZE:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except InvalidSignature:
        return False


class CardState:
    """One emulated chip session. Memory is write-once at manufacture and is
    readable only through process_command."""

    def __init__(self):
        self._memory: dict[int, bytes] = {}
        self.card_serial: str = ""
        self.protocol_version: int = 1
        self.manufactured: bool = False

    def __repr__(self) -> str:
        return (f"CardState(serial={self.card_serial!r}, "
                f"fields={sorted(self._memory)}, manufactured={self.manufactured})")

    @classmethod
    def manufacture(cls, serial: str, fields: Mapping[int, str],
                    user_secret: bytes) -> tuple["CardState", bytes]:
        """Seal the holder fields into a new card; returns (card, public key)."""
        if not serial:
            raise EmptyInput("card serial must be non-empty")
        card = cls()
        card.card_serial = serial
        card._memory = {int(n): str(v).encode("utf-8") for n, v in fields.items()}
        card.manufactured = True
        return card, public_key_for(user_secret, card.card_data())

    def card_data(self) -> bytes:
        """The card-specific key-derivation input."""
        return self.card_serial.encode("utf-8")

    def sign(self, message: bytes, user_input: bytes) -> bytes:
        """Derive the key, sign, discard. Deterministic for fixed inputs."""
        if not self.manufactured:
            raise NotManufactured("card has no sealed identity")
        if not message:
            raise EmptyInput("message must be non-empty")
        seed = derive_key(user_input, self.card_data())
        return sign_with_seed(seed, message)


@dataclass(frozen=True)
class CardCommand:
    code: int
    field_numbers: tuple[int, ...] = ()
    message: bytes = b""
    user_input: bytes = b""


@dataclass(frozen=True)
class CardResponse:
    status: int
    body: bytes = b""

    def to_frame(self) -> bytes:
        return struct.pack(">BH", self.status, len(self.body)) + self.body


def parse_command(frame: bytes) -> CardCommand | None:
    """Decode one command frame; None when the frame is malformed."""
    if not isinstance(frame, (bytes, bytearray)) or len(frame) < 3:
        return None
    code, length = struct.unpack_from(">BH", frame, 0)
    body = bytes(frame[3:])
    if len(body) != length:
        return None
    if code == CMD_READ:
        if len(body) % 2:
            return None
        nums = struct.unpack(f">{len(body) // 2}H", body) if body else ()
        return CardCommand(code=code, field_numbers=nums)
    if code == CMD_SIGN:
        if len(body) < 2:
            return None
        (msg_len,) = struct.unpack_from(">H", body, 0)
        if len(body) < 2 + msg_len + 2:
            return None
        message = body[2:2 + msg_len]
        (input_len,) = struct.unpack_from(">H", body, 2 + msg_len)
        rest = body[4 + msg_len:]
        if len(rest) != input_len:
            return None
        return CardCommand(code=code, message=message, user_input=rest)
    if code == CMD_ERASE_APPLET:
        if body:
            return None
        return CardCommand(code=code)
    return None


def build_command_frame(command: CardCommand) -> bytes:
    if command.code == CMD_READ:
        body = struct.pack(f">{len(command.field_numbers)}H", *command.field_numbers)
    elif command.code == CMD_SIGN:
        body = (struct.pack(">H", len(command.message)) + command.message
                + struct.pack(">H", len(command.user_input)) + command.user_input)
    else:
        body = b""
    return struct.pack(">BH", command.code, len(body)) + body


def execute(card: CardState, command: CardCommand) -> CardResponse:
    if command.code == CMD_READ:
        missing = [n for n in command.field_numbers if n not in card._memory]
        if missing:
            body = struct.pack(f">{len(missing)}H", *missing)
            return CardResponse(STATUS_NO_SUCH_FIELD, body)
        parts = []
        for num in command.field_numbers:
            value = card._memory[num]
            parts.append(struct.pack(">HH", num, len(value)) + value)
        return CardResponse(STATUS_OK, b"".join(parts))
    if command.code == CMD_SIGN:
        if not card.manufactured:
            return CardResponse(STATUS_NOT_MANUFACTURED)
        if not command.message or not command.user_input:
            return CardResponse(STATUS_EMPTY_INPUT)
        return CardResponse(STATUS_OK, card.sign(command.message, command.user_input))
    if command.code == CMD_ERASE_APPLET:
        for num in [n for n in card._memory if n >= APPLET_AREA_START]:
            del card._memory[num]
        return CardResponse(STATUS_OK)
    return CardResponse(STATUS_MALFORMED)


def process_command(card: CardState, frame: bytes) -> bytes:
    """Total command dispatch: every byte string gets a status response."""
    command = parse_command(frame)
    if command is None:
        return CardResponse(STATUS_MALFORMED).to_frame()
    return execute(card, command).to_frame()


def parse_response(frame: bytes) -> CardResponse:
    status, length = struct.unpack_from(">BH", frame, 0)
    body = frame[3:]
    if len(body) != length:
        raise ValueError("truncated response frame")
    return CardResponse(status, bytes(body))


def read_fields(response: CardResponse) -> dict[int, bytes]:
    """Decode an OK READ response body."""
    fields: dict[int, bytes] = {}
    offset = 0
    body = response.body
    while offset < len(body):
        num, length = struct.unpack_from(">HH", body, offset)
        offset += 4
        fields[num] = body[offset:offset + length]
        offset += length
    return fields


def multisig_validate(change: bytes, signatures, required: set[str],
                      keys: Mapping[str, bytes]) -> bool:
    """True iff every required signer has a verifying signature over `change`.

    Extra signatures are ignored; order does not matter. A signature naming a
    signer with no registered key raises UnknownSigner.
    """
    if not required:
        raise ValueError("required signer set must be non-empty")
    verified: set[str] = set()
    for signer_id, signature in signatures:
        if signer_id not in keys:
            raise UnknownSigner(signer_id)
        if verify_signature(keys[signer_id], change, signature):
            verified.add(signer_id)
    return set(required) <= verified
