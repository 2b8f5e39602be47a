"""Exception hierarchy shared by all ledger modules.

Every error raised on a validation path derives from LedgerError so callers
(service layer, CLI) can map the whole family to one exit/status code while
still matching specific conditions by class.
"""


class LedgerError(Exception):
    """Base class for all ledger-domain errors."""


# codec / record validation

class FieldTooLong(LedgerError):
    def __init__(self, field_number: int, length: int, cap: int):
        super().__init__(f"field {field_number} is {length} bytes, cap is {cap}")
        self.field_number = field_number
        self.length = length
        self.cap = cap


class InvalidFieldNumber(LedgerError):
    def __init__(self, field_number: int):
        super().__init__(f"field number {field_number} outside the allowed range")
        self.field_number = field_number


class MissingMandatoryField(LedgerError):
    def __init__(self, field_numbers):
        nums = sorted(field_numbers)
        super().__init__(f"mandatory fields missing: {nums}")
        self.field_numbers = nums


class ContentHashMismatch(LedgerError):
    pass


class ChainFormatError(LedgerError):
    """Corrupt or truncated chain/block wire bytes."""


# chain linkage

class BadLinkage(LedgerError):
    pass


class NonMonotonicTimestamp(LedgerError):
    pass


# tree structure

class DuplicateCountry(LedgerError):
    pass


class UnknownCountry(LedgerError):
    pass


class NotAnIdentityBlock(LedgerError):
    pass


class BadPreviousReference(LedgerError):
    pass


class AddressOutOfRange(LedgerError):
    pass


class KindMismatch(LedgerError):
    pass


# registry

class DuplicateSerial(LedgerError):
    pass


class UnknownSerial(LedgerError):
    pass


class AlreadyRevoked(LedgerError):
    pass


class CardFormatError(LedgerError):
    """Card dump file cannot be parsed into a CardImage."""


class AuditFailed(LedgerError):
    """A mutating operation was refused because the stored tree fails audit."""


# card emulator

class EmptyInput(LedgerError):
    pass


class NotManufactured(LedgerError):
    pass


class UnknownSigner(LedgerError):
    def __init__(self, signer_id: str):
        super().__init__(f"no registered key for signer {signer_id!r}")
        self.signer_id = signer_id


# network simulation

class NotApprovedNode(LedgerError):
    def __init__(self, node_id: str):
        super().__init__(f"{node_id!r} is not on the approved node roster")
        self.node_id = node_id


class ScenarioError(LedgerError):
    """Scenario script cannot be parsed or names an unknown directive."""
