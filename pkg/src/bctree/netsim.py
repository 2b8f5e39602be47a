"""Deterministic discrete-event simulation of the verified-node network.

A fixed roster of approved nodes holds full tree replicas. A node proposes a
block, every roster node validates and votes, and the block commits once a
strict majority (floor(n/2)+1, the proposer's own vote included) has
accepted; committed blocks are then replicated to all nodes. Compromise is
modeled as in-place replica mutation; audit_and_repair restores tampered
blocks from the version a majority of peers agrees on, and flags
UNREPAIRABLE-CONFLICT instead of rewriting history it cannot trust.

Everything is driven by one event queue ordered by (time, sequence); the
only randomness is the per-link latency table drawn once from the seed, so a
(seed, script) pair always yields a byte-identical transcript.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field

from . import ledger, tree as tree_mod
from .errors import LedgerError, NotApprovedNode, ScenarioError
from .records import AccessEntry, PersonalRecord
from .tree import BlockAddress, TreeLedger

LATENCY_RANGE = (5, 50)  # simulated ms, per ordered node pair


def quorum(roster_size: int) -> int:
    """Strict majority: the smallest vote count exceeding half the roster."""
    if roster_size < 1:
        raise ValueError("roster must have at least one node")
    return roster_size // 2 + 1


@dataclass
class Proposal:
    proposal_id: str
    proposer: str
    target: dict
    payload_fields: dict[int, str]
    timestamp: int
    creator: str
    address: BlockAddress
    block_hash: bytes
    votes: set = field(default_factory=set)
    rejects: set = field(default_factory=set)
    committed: bool = False


@dataclass
class NodeState:
    node_id: str
    roster: tuple[str, ...]
    replica: TreeLedger
    pending: dict = field(default_factory=dict)        # own proposals by id
    voted_positions: set = field(default_factory=set)  # one accept per slot
    commit_buffer: list = field(default_factory=list)  # out-of-order commits
    clock_offset: int = 0


@dataclass(frozen=True)
class RepairReport:
    node: str
    replaced: tuple[dict, ...]
    conflicts: tuple[dict, ...]
    clean_after: bool

    def as_dict(self) -> dict:
        return {"node": self.node, "replaced": list(self.replaced),
                "conflicts": list(self.conflicts), "clean_after": self.clean_after}


def apply_target(tree: TreeLedger, target: dict, payload_fields: dict,
                 timestamp: int, creator: str) -> tuple[TreeLedger, BlockAddress, ledger.Block]:
    """Run the tree operation a proposal describes; returns the grown tree,
    the new block's address and the block itself."""
    kind = target.get("kind")
    if kind == "identity":
        payload = PersonalRecord(payload_fields)
        new_tree, address = tree_mod.attach_identity_block(
            tree, target.get("country"), payload, timestamp, creator)
    elif kind == "reissue":
        payload = PersonalRecord(payload_fields)
        identity = BlockAddress.from_jsonable(target["identity"])
        new_tree, address = tree_mod.attach_reissue(
            tree, identity, payload, timestamp, creator)
    elif kind == "access":
        entry = AccessEntry(payload_fields)
        card_version = BlockAddress.from_jsonable(target["card_version"])
        new_tree, address = tree_mod.record_access(tree, card_version, entry)
    else:
        raise ScenarioError(f"unknown proposal target kind {kind!r}")
    return new_tree, address, tree_mod.resolve(new_tree, address)


class Simulator:
    """One network of verified nodes over identical initial tree replicas."""

    def __init__(self, node_count: int = 5, seed: int = 1,
                 mode: str = tree_mod.MODE_FLAT, countries=(), roster=None):
        self.seed = seed
        self.roster: tuple[str, ...] = tuple(roster) if roster else tuple(
            f"N{i}" for i in range(node_count))
        rng = random.Random(seed)
        # latency drawn once per ordered pair, in roster order
        self.latency: dict[tuple[str, str], int] = {}
        for a in self.roster:
            for b in self.roster:
                if a != b:
                    self.latency[(a, b)] = rng.randint(*LATENCY_RANGE)
        base = tree_mod.new_tree(mode, countries)
        self.nodes: dict[str, NodeState] = {
            node_id: NodeState(node_id=node_id, roster=self.roster, replica=base)
            for node_id in self.roster}
        self.now = 0
        self._seq = 0
        self._events: list = []
        self._proposal_count = 0
        self.proposals: dict[str, Proposal] = {}
        self.transcript: list[dict] = []
        self.partition_groups: list[set] | None = None
        self.safety_violations: list[dict] = []
        self.quorum_violations: list[dict] = []
        self.repair_violations: list[dict] = []
        self._committed_by_address: dict[tuple, dict[str, bytes]] = {}

    # -- plumbing --------------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _log(self, event: str, **detail) -> dict:
        record = {"time": self.now, "seq": self._next_seq(), "event": event}
        record.update(detail)
        self.transcript.append(record)
        return record

    def _schedule(self, at: int, kind: str, data) -> None:
        heapq.heappush(self._events, (at, self._next_seq(), kind, data))

    def _reachable(self, sender: str, receiver: str) -> bool:
        if self.partition_groups is None:
            return True
        def group_of(node):
            for i, group in enumerate(self.partition_groups):
                if node in group:
                    return i
            return -1  # ungrouped nodes are unreachable while partitioned
        return group_of(sender) == group_of(receiver) != -1

    def _send(self, sender: str, receiver: str, message: dict) -> None:
        if not self._reachable(sender, receiver):
            self._log("drop", node=receiver, sender=sender,
                      reason="partition", proposal=message.get("proposal_id"))
            return
        self._schedule(self.now + self.latency[(sender, receiver)],
                       "deliver", (receiver, sender, message))

    def pending_event_count(self) -> int:
        return len(self._events)

    # -- operations ------------------------------------------------------

    def propose(self, proposer: str, target: dict, payload_fields: dict,
                timestamp: int) -> str:
        """Create a proposal, count the proposer's own vote, broadcast it."""
        if proposer not in self.nodes:
            raise NotApprovedNode(proposer)
        node = self.nodes[proposer]
        _, address, block = apply_target(
            node.replica, target, payload_fields, timestamp, proposer)
        position = tuple(address.path)
        if position in node.voted_positions:
            # re-proposing our own stuck slot withdraws the old proposal (it
            # can then never commit); voting twice on someone else's slot is
            # what the lock exists to prevent, so that still raises
            own_stale = [p for p in node.pending.values()
                         if tuple(p.address.path) == position and not p.committed]
            if not own_stale:
                raise LedgerError(
                    f"{proposer} already voted for position {address}; "
                    f"wait for the pending proposal to settle")
            for stale in own_stale:
                del node.pending[stale.proposal_id]
                self._log("withdraw", proposal=stale.proposal_id,
                          proposer=proposer)
        self._proposal_count += 1
        pid = f"P{self._proposal_count}"
        proposal = Proposal(
            proposal_id=pid, proposer=proposer, target=target,
            payload_fields={int(k): str(v) for k, v in payload_fields.items()},
            timestamp=timestamp, creator=proposer, address=address,
            block_hash=block.cached_hash, votes={proposer})
        self.proposals[pid] = proposal
        node.pending[pid] = proposal
        node.voted_positions.add(tuple(address.path))
        self._log("propose", proposal=pid, proposer=proposer, target=target,
                  address=address.to_jsonable(), block_hash=block.cached_hash.hex(),
                  timestamp=timestamp)
        self._log("vote", proposal=pid, voter=proposer, accept=True)
        message = {"type": "proposal", "proposal_id": pid, "proposer": proposer,
                   "target": target, "payload": proposal.payload_fields,
                   "timestamp": timestamp, "creator": proposer,
                   "block_hash": block.cached_hash.hex(),
                   "address": address.to_jsonable()}
        for other in self.roster:
            if other != proposer:
                self._send(proposer, other, message)
        self._maybe_commit(proposal)
        return pid

    def _maybe_commit(self, proposal: Proposal) -> None:
        if proposal.committed or len(proposal.votes) < quorum(len(self.roster)):
            return
        proposal.committed = True
        votes = sorted(proposal.votes)
        if len(votes) < quorum(len(self.roster)):
            self.quorum_violations.append({"proposal": proposal.proposal_id,
                                           "votes": votes})
        self._log("commit", proposal=proposal.proposal_id,
                  proposer=proposal.proposer,
                  address=proposal.address.to_jsonable(),
                  block_hash=proposal.block_hash.hex(), votes=votes)
        commit_msg = {"type": "commit", "proposal_id": proposal.proposal_id,
                      "target": proposal.target, "payload": proposal.payload_fields,
                      "timestamp": proposal.timestamp, "creator": proposal.creator,
                      "block_hash": proposal.block_hash.hex(),
                      "address": proposal.address.to_jsonable()}
        self._apply_commit(self.nodes[proposal.proposer], commit_msg)
        for other in self.roster:
            if other != proposal.proposer:
                self._send(proposal.proposer, other, commit_msg)

    def on_deliver(self, node_id: str, sender: str, message: dict) -> None:
        node = self.nodes[node_id]
        kind = message.get("type")
        self._log("deliver", node=node_id, sender=sender, type=kind,
                  proposal=message.get("proposal_id"))
        if kind == "proposal":
            self._handle_proposal(node, message)
        elif kind == "vote":
            self._handle_vote(node, message)
        elif kind == "commit":
            self._apply_commit(node, message)
            self._drain_commit_buffer(node)
        else:
            self._log("drop", node=node_id, sender=sender, reason="unknown-message-type")

    def _handle_proposal(self, node: NodeState, message: dict) -> None:
        pid = message["proposal_id"]
        accept, reason = True, None
        if message.get("proposer") not in self.roster:
            accept, reason = False, "proposer-not-approved"
        else:
            position = tuple(BlockAddress.from_jsonable(message["address"]).path)
            if position in node.voted_positions:
                accept, reason = False, "already-voted"
            else:
                try:
                    _, address, block = apply_target(
                        node.replica, message["target"], message["payload"],
                        message["timestamp"], message["creator"])
                    if block.cached_hash.hex() != message["block_hash"]:
                        accept, reason = False, "block-hash-mismatch"
                    elif address.to_jsonable() != message["address"]:
                        accept, reason = False, "address-mismatch"
                except LedgerError as exc:
                    accept, reason = False, f"{type(exc).__name__}"
                if accept:
                    node.voted_positions.add(position)
        self._log("vote", proposal=pid, voter=node.node_id, accept=accept,
                  **({"reason": reason} if reason else {}))
        self._send(node.node_id, message["proposer"],
                   {"type": "vote", "proposal_id": pid, "voter": node.node_id,
                    "accept": accept})

    def _handle_vote(self, node: NodeState, message: dict) -> None:
        proposal = node.pending.get(message["proposal_id"])
        if proposal is None:
            return
        if message["accept"]:
            proposal.votes.add(message["voter"])
        else:
            proposal.rejects.add(message["voter"])
        self._maybe_commit(proposal)

    def _apply_commit(self, node: NodeState, message: dict) -> bool:
        try:
            new_tree, address, block = apply_target(
                node.replica, message["target"], message["payload"],
                message["timestamp"], message["creator"])
        except (LedgerError, KeyError) as exc:
            # linkage gaps mean an earlier commit has not arrived yet
            node.commit_buffer.append(message)
            self._log("defer", node=node.node_id,
                      proposal=message.get("proposal_id"),
                      reason=type(exc).__name__)
            return False
        if block.cached_hash.hex() != message["block_hash"]:
            self._log("drop", node=node.node_id, sender=message.get("creator"),
                      reason="commit-hash-mismatch",
                      proposal=message.get("proposal_id"))
            return False
        node.replica = new_tree
        self._log("apply", proposal=message.get("proposal_id"),
                  node=node.node_id, address=address.to_jsonable(),
                  block_hash=block.cached_hash.hex())
        self._record_commit(node.node_id, address, block.cached_hash,
                            message.get("proposal_id"))
        return True

    def _drain_commit_buffer(self, node: NodeState) -> None:
        progress = True
        while progress and node.commit_buffer:
            progress = False
            for message in list(node.commit_buffer):
                node.commit_buffer.remove(message)
                if self._apply_commit(node, message):
                    progress = True

    def _record_commit(self, node_id: str, address: BlockAddress,
                       block_hash: bytes, proposal_id) -> None:
        key = tuple(address.path)
        seen = self._committed_by_address.setdefault(key, {})
        seen[node_id] = block_hash
        hashes = set(seen.values())
        if len(hashes) > 1:
            violation = {"address": address.to_jsonable(),
                         "nodes": sorted(seen),
                         "proposal": proposal_id}
            self.safety_violations.append(violation)
            self._log("safety-violation", **violation)

    def set_partition(self, groups) -> None:
        self.partition_groups = [set(g) for g in groups] if groups else None
        self._log("partition", groups=[sorted(g) for g in (groups or [])])

    def inject_tamper(self, node_id: str, address, field_number: int,
                      value: str) -> None:
        """Mutate one payload field of a replica block in place, keeping the
        stored hashes stale, the way an at-rest compromise would."""
        if node_id not in self.nodes:
            raise NotApprovedNode(node_id)
        node = self.nodes[node_id]
        if not isinstance(address, BlockAddress):
            address = BlockAddress.from_jsonable(address)
        block = tree_mod.resolve(node.replica, address)
        from dataclasses import replace as dc_replace
        tampered = dc_replace(block, payload=block.payload.replace_field(
            int(field_number), str(value)))
        node.replica = tree_mod.replace_block_unchecked(node.replica, address, tampered)
        self._log("tamper", node=node_id, address=address.to_jsonable(),
                  field=int(field_number),
                  block_hash_before=block.cached_hash.hex())

    # -- audit and repair --------------------------------------------------

    def _failing_addresses(self, replica: TreeLedger) -> set[BlockAddress]:
        """Addresses implicated by any audit finding on the replica."""
        report = tree_mod.audit_tree(replica)
        failing: set[BlockAddress] = set()
        chain_parents = {label: parent
                         for label, parent, _ in tree_mod.iter_chains(replica)}
        for label, chain_report in report.chain_reports.items():
            parent = chain_parents[label]
            for finding in chain_report.findings:
                failing.add(tree_mod._chain_block_address(parent, label, finding.index))
                if finding.check == "linkage" and finding.index > 0:
                    failing.add(tree_mod._chain_block_address(
                        parent, label, finding.index - 1))
        for finding in report.findings:
            if finding.check == "anchoring" and finding.chain in chain_parents:
                parent = chain_parents[finding.chain]
                if parent is not None:
                    failing.add(parent)
        return failing

    def _peer_versions(self, node_id: str, address: BlockAddress) -> dict[bytes, list[str]]:
        tally: dict[bytes, list[str]] = {}
        for peer_id in self.roster:
            if peer_id == node_id:
                continue
            try:
                block = tree_mod.resolve(self.nodes[peer_id].replica, address)
            except LedgerError:
                continue
            tally.setdefault(ledger.block_to_wire(block), []).append(peer_id)
        return tally

    def audit_and_repair(self, node_id: str) -> RepairReport:
        """Audit one replica, restore failing blocks from the peer majority,
        and flag what cannot be restored honestly."""
        if node_id not in self.nodes:
            raise NotApprovedNode(node_id)
        node = self.nodes[node_id]
        needed = quorum(len(self.roster))
        replaced: list[dict] = []
        conflicts: list[dict] = []
        failing = self._failing_addresses(node.replica)
        for address in sorted(failing):
            local_wire = ledger.block_to_wire(tree_mod.resolve(node.replica, address))
            tally = self._peer_versions(node_id, address)
            best_wire, holders = None, []
            for wire, peers in tally.items():
                if len(peers) > len(holders):
                    best_wire, holders = wire, peers
            if best_wire is None or len(holders) < needed:
                conflicts.append({"address": address.to_jsonable(),
                                  "reason": "no-quorum-version",
                                  "status": "UNREPAIRABLE-CONFLICT"})
                continue
            if best_wire == local_wire:
                continue  # neighbor damage, this block itself matches the majority
            adopted, _ = ledger.block_from_wire(best_wire)
            node.replica = tree_mod.replace_block_unchecked(node.replica, address, adopted)
            replaced.append({"address": address.to_jsonable(),
                             "votes": len(holders),
                             "block_hash": adopted.cached_hash.hex()})
        still_failing = self._failing_addresses(node.replica)
        flagged = {BlockAddress.from_jsonable(c["address"]) for c in conflicts}
        for address in sorted(still_failing):
            if address not in flagged:
                conflicts.append({"address": address.to_jsonable(),
                                  "reason": "quorum-version-does-not-restore-validity",
                                  "status": "UNREPAIRABLE-CONFLICT"})
        # a valid local block is never rewritten, even when outvoted
        for address, block in tree_mod.enumerate_blocks(node.replica):
            if address in failing or address in still_failing:
                continue
            local_wire = ledger.block_to_wire(block)
            tally = self._peer_versions(node_id, address)
            for wire, peers in tally.items():
                if wire != local_wire and len(peers) >= needed:
                    conflicts.append({"address": address.to_jsonable(),
                                      "reason": "quorum-differs-from-valid-local-history",
                                      "status": "UNREPAIRABLE-CONFLICT"})
        for entry in replaced:
            if BlockAddress.from_jsonable(entry["address"]) not in failing:
                self.repair_violations.append(entry)
        report = RepairReport(node=node_id, replaced=tuple(replaced),
                              conflicts=tuple(conflicts),
                              clean_after=not still_failing)
        self._log("repair", node=node_id, replaced=list(replaced),
                  conflicts=list(conflicts), clean_after=report.clean_after)
        return report

    # -- event loop --------------------------------------------------------

    def run(self, until: int | None = None) -> list[dict]:
        """Process events in (time, sequence) order up to the horizon."""
        while self._events:
            if until is not None and self._events[0][0] > until:
                break
            at, _, kind, data = heapq.heappop(self._events)
            self.now = at
            if kind == "deliver":
                receiver, sender, message = data
                self.on_deliver(receiver, sender, message)
            elif kind == "directive":
                self._execute_directive(data)
        return self.transcript

    def schedule_directives(self, directives) -> None:
        for index, directive in enumerate(directives):
            if not isinstance(directive, dict) or "action" not in directive:
                raise ScenarioError(f"directive {index} has no action")
            at = directive.get("time", 0)
            self._schedule(at, "directive", dict(directive, _index=index))

    def _execute_directive(self, directive: dict) -> None:
        action = directive["action"]
        node_id = directive.get("node", self.roster[0])
        timestamp = int(directive.get("timestamp", directive.get("time", self.now)))
        if action == "issue":
            fields = directive.get("record") or _auto_record_fields(directive["_index"])
            target = {"kind": "identity", "country": directive.get("country")}
            self.propose(node_id, target, _intkeys(fields), timestamp)
        elif action == "reissue":
            identity = directive["identity"]
            fields = _intkeys(directive["record"])
            if PersonalRecord.PREVIOUS_VERSION_FIELD not in fields:
                expected = tree_mod.expected_reissue_version(
                    self.nodes[node_id].replica, BlockAddress.from_jsonable(identity))
                fields[PersonalRecord.PREVIOUS_VERSION_FIELD] = str(expected)
            self.propose(node_id, {"kind": "reissue", "identity": identity},
                         fields, timestamp)
        elif action == "verify":
            address = directive["address"]
            found, block_hash = True, None
            try:
                block = tree_mod.resolve(self.nodes[node_id].replica,
                                         BlockAddress.from_jsonable(address))
                block_hash = block.cached_hash.hex()
            except LedgerError:
                found = False
            self._log("verify", node=node_id, address=address,
                      found=found, block_hash=block_hash)
            if found:
                entry = {AccessEntry.TIMESTAMP_FIELD: str(timestamp),
                         AccessEntry.DEVICE_FIELD: directive.get("device", "scanner-0"),
                         AccessEntry.USER_FIELD: directive.get("user", node_id),
                         AccessEntry.PURPOSE_FIELD: "verify"}
                self.propose(node_id, {"kind": "access", "card_version": address},
                             entry, timestamp)
        elif action == "tamper":
            self.inject_tamper(node_id, directive["address"],
                               directive["field"], directive["value"])
        elif action == "partition":
            self.set_partition(directive.get("groups") or [])
        elif action == "repair":
            if node_id == "all":
                for roster_node in self.roster:
                    self.audit_and_repair(roster_node)
            else:
                self.audit_and_repair(node_id)
        else:
            raise ScenarioError(f"unknown scenario action {action!r}")


def _intkeys(fields) -> dict[int, str]:
    return {int(k): str(v) for k, v in fields.items()}


def _auto_record_fields(index: int) -> dict[int, str]:
    return {
        1: "Milano",
        2: f"SIM{index:06d}",
        3: "Holder",
        5: f"Family{index}",
        7: "M",
        8: "ITA",
        9: "01.01.1990",
        17: f"SIMFC{index:011d}",
        22: "SIM-OFFICE",
    }


# -- scenarios ------------------------------------------------------------


@dataclass
class ScenarioResult:
    transcript: list[dict]
    verdict: str
    checks: dict
    sim: Simulator

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"


def load_scenario(text) -> list[dict]:
    """Parse a scenario script: a JSON list of timed directives."""
    try:
        directives = json.loads(text) if isinstance(text, (str, bytes)) else text
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from None
    if not isinstance(directives, list):
        raise ScenarioError("scenario must be a JSON list of directives")
    known = {"issue", "reissue", "verify", "tamper", "partition", "repair"}
    for index, directive in enumerate(directives):
        if not isinstance(directive, dict):
            raise ScenarioError(f"directive {index} is not an object")
        if directive.get("action") not in known:
            raise ScenarioError(
                f"directive {index} has unknown action {directive.get('action')!r}")
    return directives


def run_scenario(directives, node_count: int = 5, seed: int = 1,
                 mode: str = tree_mod.MODE_FLAT, countries=(),
                 until: int | None = None) -> ScenarioResult:
    sim = Simulator(node_count=node_count, seed=seed, mode=mode,
                    countries=countries)
    sim.schedule_directives(directives)
    transcript = sim.run(until=until)
    checks = {
        "safety": not sim.safety_violations,
        "quorum_commits": not sim.quorum_violations,
        "repair_honesty": not sim.repair_violations,
    }
    verdict = "PASS" if all(checks.values()) else "FAIL"
    return ScenarioResult(transcript=transcript, verdict=verdict,
                          checks=checks, sim=sim)


def transcript_to_jsonl(transcript) -> str:
    """Line-oriented JSON rendering; byte-identical for identical runs."""
    return "\n".join(json.dumps(record, separators=(",", ":"))
                     for record in transcript) + ("\n" if transcript else "")


def random_scenario(seed: int, node_count: int, length: int = 6,
                    tamper_nodes: int = 0) -> list[dict]:
    """Generate a small well-formed scenario deterministically from a seed."""
    rng = random.Random(seed)
    directives: list[dict] = []
    at = 10
    issued = 0
    for _ in range(length):
        node = f"N{rng.randrange(node_count)}"
        if issued and rng.random() < 0.3:
            directives.append({"time": at, "action": "verify", "node": node,
                               "address": [["root", rng.randrange(1, issued + 1)]],
                               "device": f"scanner-{rng.randrange(3)}",
                               "user": f"officer-{rng.randrange(5)}"})
        else:
            directives.append({"time": at, "action": "issue", "node": node})
            issued += 1
        at += 400
    for k in range(tamper_nodes):
        if not issued:
            break
        directives.append({"time": at, "action": "tamper", "node": f"N{k}",
                           "address": [["root", rng.randrange(1, issued + 1)]],
                           "field": 3, "value": f"Mallory{k}"})
        at += 50
    if tamper_nodes:
        directives.append({"time": at + 100, "action": "repair", "node": "all"})
    return directives
