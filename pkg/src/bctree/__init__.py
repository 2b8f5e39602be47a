"""bctree: append-only blockchain-tree ledger for ID-card registries.

Core layers: codec (canonical bytes + hashing), ledger (hash-linked chains),
tree (subchain hierarchy), registry (issue/verify/reissue), card (chip
emulation), netsim (verified-node network simulation). The service subpackage
wraps the registry in a FastAPI app; cli is a thin client over it.
"""

from .codec import ZERO_DIGEST, hash_bytes
from .errors import LedgerError
from .ledger import Block, BlockHeader, Chain, append, make_block, verify_chain
from .records import AccessEntry, CountryDescriptor, PersonalRecord
from .registry import CardImage, RegistryState, issue, reissue, verify_card
from .tree import BlockAddress, TreeLedger, audit_tree, cardinality, new_tree

__version__ = "0.1.0"

__all__ = [
    "AccessEntry",
    "Block",
    "BlockAddress",
    "BlockHeader",
    "CardImage",
    "Chain",
    "CountryDescriptor",
    "LedgerError",
    "PersonalRecord",
    "RegistryState",
    "TreeLedger",
    "ZERO_DIGEST",
    "append",
    "audit_tree",
    "cardinality",
    "hash_bytes",
    "issue",
    "make_block",
    "new_tree",
    "reissue",
    "verify_card",
    "verify_chain",
]
