"""Payload record types carried by blocks.

Three payload kinds share one wire framing (codec.encode_field_map), each in
its own field-number space:

  PersonalRecord     1..25   the ID-card holder data
  AccessEntry        101..104 access-log entries (time, device, user, purpose)
  CountryDescriptor  201..203 country marker blocks of the top-level chain

Values are text; opaque content (photo, fingerprints, barcodes) is carried as
whatever text encoding the issuer chose, subject to the byte caps.
"""

from __future__ import annotations

from typing import Iterator, Mapping

from . import codec
from .errors import (
    BadPreviousReference,
    ChainFormatError,
    MissingMandatoryField,
)


class FieldPayload:
    """Immutable field-number -> text mapping with per-kind byte caps."""

    KIND = "payload"
    CAPS: dict[int, int] = {}

    __slots__ = ("_fields",)

    def __init__(self, fields: Mapping[int, str] | None = None):
        items = tuple(sorted((int(k), str(v)) for k, v in (fields or {}).items()))
        object.__setattr__(self, "_fields", items)
        # surface cap / field-number violations at construction time
        codec.encode_field_map(dict(items), self.CAPS)

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    @property
    def fields(self) -> dict[int, str]:
        return dict(self._fields)

    def get(self, number: int, default: str | None = None) -> str | None:
        for num, val in self._fields:
            if num == number:
                return val
        return default

    def __contains__(self, number: int) -> bool:
        return self.get(number) is not None

    def items(self) -> Iterator[tuple[int, str]]:
        return iter(self._fields)

    def __eq__(self, other) -> bool:
        return type(other) is type(self) and other._fields == self._fields

    def __hash__(self) -> int:
        return hash((type(self).__name__, self._fields))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({dict(self._fields)!r})"

    def replace_field(self, number: int, value: str) -> "FieldPayload":
        updated = self.fields
        updated[number] = value
        return type(self)(updated)

    def without_field(self, number: int) -> "FieldPayload":
        updated = self.fields
        updated.pop(number, None)
        return type(self)(updated)

    def to_json_dict(self) -> dict[str, str]:
        """Field-number-keyed JSON object (numbers rendered as strings)."""
        return {str(num): val for num, val in self._fields}

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "FieldPayload":
        return cls({int(k): str(v) for k, v in obj.items()})


class PersonalRecord(FieldPayload):
    """The holder data written into every identity block, 25 numbered fields."""

    KIND = "personal"
    CAPS = {
        1: 28,    # community of issue
        2: 15,    # card serial number
        3: 15,    # first name, line 1
        4: 15,    # first name, line 2
        5: 15,    # surname
        6: 35,    # place of birth
        7: 1,     # sex
        8: 3,     # nationality
        9: 10,    # date of birth
        10: 3,    # stature
        11: 3,    # citizenship
        12: 50,   # holder signature image
        13: 10,   # validity for expatriation
        14: 50,   # photo
        15: 50,   # fingerprints
        16: 50,   # parents (minor's card)
        17: 16,   # fiscal code
        18: 50,   # address of residence
        19: 100,  # tax barcode
        20: 50,   # issuance basis documents
        21: 50,   # previous card version number, "0" on first issuance
        22: 50,   # issuing officer id
        23: 50,   # notes 1
        24: 50,   # notes 2
        25: 50,   # notes 3
    }
    MANDATORY = frozenset({1, 2, 3, 5, 7, 8, 9, 17, 22})

    SERIAL_FIELD = 2
    FINGERPRINT_FIELD = 15
    FISCAL_CODE_FIELD = 17
    PREVIOUS_VERSION_FIELD = 21
    OFFICER_FIELD = 22

    @property
    def serial(self) -> str | None:
        return self.get(self.SERIAL_FIELD)

    @property
    def previous_version(self) -> int:
        """Value of field 21 as an integer; absent means 0 (first issuance)."""
        raw = self.get(self.PREVIOUS_VERSION_FIELD)
        if raw is None:
            return 0
        try:
            value = int(raw, 10)
        except ValueError:
            raise BadPreviousReference(
                f"field 21 must be a decimal integer, got {raw!r}") from None
        if value < 0:
            raise BadPreviousReference("field 21 must be non-negative")
        return value

    def validate_identity(self) -> None:
        """Check the invariants required of an identity-block payload."""
        missing = [n for n in self.MANDATORY if n not in self]
        if missing:
            raise MissingMandatoryField(missing)
        self.previous_version  # noqa: B018  - raises on a malformed field 21


class AccessEntry(FieldPayload):
    """One access-log record: when, from which device, by whom, and why.

    Semantic checks (required fields, integer timestamp) live in validate()
    and run when an entry is appended, not at construction, so that
    corrupted stored entries can still be represented and audited.
    """

    KIND = "access"
    CAPS = {101: 20, 102: 100, 103: 100, 104: 100}

    TIMESTAMP_FIELD = 101
    DEVICE_FIELD = 102
    USER_FIELD = 103
    PURPOSE_FIELD = 104

    def __init__(self, fields: Mapping[int, str] | None = None, *,
                 timestamp: int | None = None, device_id: str | None = None,
                 user_id: str | None = None, purpose: str | None = None):
        if fields is None:
            fields = {}
            if timestamp is not None:
                fields[self.TIMESTAMP_FIELD] = str(int(timestamp))
            if device_id is not None:
                fields[self.DEVICE_FIELD] = device_id
            if user_id is not None:
                fields[self.USER_FIELD] = user_id
            if purpose is not None:
                fields[self.PURPOSE_FIELD] = purpose
        super().__init__(fields)

    def validate(self) -> None:
        missing = [n for n in (self.TIMESTAMP_FIELD, self.DEVICE_FIELD,
                               self.USER_FIELD) if n not in self]
        if missing:
            raise MissingMandatoryField(missing)
        try:
            int(self.get(self.TIMESTAMP_FIELD), 10)
        except ValueError:
            raise ChainFormatError(
                "access timestamp must be a decimal integer") from None

    @property
    def timestamp(self) -> int:
        return int(self.get(self.TIMESTAMP_FIELD), 10)

    @property
    def device_id(self) -> str:
        return self.get(self.DEVICE_FIELD)

    @property
    def user_id(self) -> str:
        return self.get(self.USER_FIELD)

    @property
    def purpose(self) -> str | None:
        return self.get(self.PURPOSE_FIELD)


class CountryDescriptor(FieldPayload):
    """Marker payload of a top-level block that anchors one country's chain."""

    KIND = "country"
    CAPS = {201: 3, 202: 20, 203: 64}

    CODE_FIELD = 201
    JOINED_FIELD = 202
    ROSTER_HASH_FIELD = 203

    def __init__(self, fields: Mapping[int, str] | None = None, *,
                 country_code: str | None = None, joined_timestamp: int | None = None,
                 roster_hash: bytes | None = None):
        if fields is None:
            fields = {
                self.CODE_FIELD: country_code or "",
                self.JOINED_FIELD: str(int(joined_timestamp or 0)),
                self.ROSTER_HASH_FIELD: (roster_hash or codec.ZERO_DIGEST).hex(),
            }
        super().__init__(fields)

    def validate(self) -> None:
        if not self.get(self.CODE_FIELD):
            raise MissingMandatoryField([self.CODE_FIELD])

    @property
    def country_code(self) -> str:
        return self.get(self.CODE_FIELD)

    @property
    def joined_timestamp(self) -> int:
        return int(self.get(self.JOINED_FIELD, "0"), 10)


def encode_payload(payload: FieldPayload) -> bytes:
    """Canonical bytes of any payload kind (the block data area)."""
    return codec.encode_field_map(dict(payload.items()), payload.CAPS)


def encode_record(record: PersonalRecord) -> bytes:
    return encode_payload(record)


def decode_record(data: bytes) -> PersonalRecord:
    """Inverse of encode_record; rejects trailing bytes."""
    fields, offset = codec.decode_field_map(data)
    if offset != len(data):
        raise ChainFormatError("trailing bytes after record")
    return PersonalRecord(fields)


def payload_from_fields(fields: Mapping[int, str]) -> FieldPayload:
    """Classify decoded wire fields into the payload kind they belong to.

    An empty map is a PersonalRecord (genesis blocks carry no fields).
    """
    numbers = set(fields)
    if not numbers or numbers <= set(PersonalRecord.CAPS):
        return PersonalRecord(fields)
    if numbers <= set(AccessEntry.CAPS):
        return AccessEntry(fields)
    if numbers <= set(CountryDescriptor.CAPS):
        return CountryDescriptor(fields)
    raise ChainFormatError(f"field numbers {sorted(numbers)} match no payload kind")
