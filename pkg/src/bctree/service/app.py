"""FastAPI service wrapping the registry, tree and simulator.

One service instance owns one tree directory. State is loaded from disk per
request and mutations run under a file lock, so a CLI invocation (which
mounts this app in-process) and a long-running server never interleave
writes. Mutating endpoints refuse to touch a tree that fails audit unless
the request carries force=true.
"""

from __future__ import annotations

import time
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from filelock import FileLock

from .. import netsim, registry, tree as tree_mod
from ..errors import AuditFailed, KindMismatch, LedgerError, UnknownSerial
from ..records import AccessEntry
from ..registry import CardImage, RegistryState
from ..tree import BlockAddress
from . import schemas

LOCK_NAME = ".bctree.lock"


class TreeStore:
    """Disk-backed registry state for one tree directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.lock = FileLock(str(self.directory / LOCK_NAME), timeout=10)

    @property
    def initialized(self) -> bool:
        return (self.directory / tree_mod.MANIFEST_NAME).exists()

    def require_initialized(self) -> None:
        if not self.initialized:
            raise LedgerError(
                f"tree directory {self.directory} is not initialized (run init)")

    def load(self) -> RegistryState:
        self.require_initialized()
        return registry.load_registry(self.directory)

    def save(self, state: RegistryState) -> None:
        registry.save_registry(state, self.directory)

    def guard_mutation(self, state: RegistryState, force: bool) -> None:
        if force:
            return
        report = tree_mod.audit_tree(state.tree)
        if not report.valid:
            raise AuditFailed(
                f"tree fails audit with {len(report.all_findings())} finding(s); "
                f"refusing to mutate (pass force to override)")


def _default_timestamp(state: RegistryState, requested: int | None) -> int:
    if requested is not None:
        return int(requested)
    latest = 0
    for _, block in tree_mod.enumerate_blocks(state.tree):
        latest = max(latest, block.header.timestamp)
    return max(int(time.time()), latest + 1)


def _card_to_model(image: CardImage) -> schemas.CardModel:
    return schemas.CardModel(**image.to_json_dict())


def _card_from_model(model: schemas.CardModel) -> CardImage:
    return CardImage.from_json_dict(model.model_dump())


def create_app(tree_dir) -> FastAPI:
    store = TreeStore(tree_dir)
    app = FastAPI(title="bctree ledger service", version="0.1.0")
    app.state.store = store

    @app.exception_handler(LedgerError)
    async def ledger_error_handler(request: Request, exc: LedgerError):
        return JSONResponse(
            status_code=422,
            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "initialized": store.initialized}

    @app.post("/init", response_model=schemas.InitResponse)
    def init_tree(req: schemas.InitRequest):
        store.directory.mkdir(parents=True, exist_ok=True)
        with store.lock:
            if store.initialized:
                raise LedgerError(f"{store.directory} is already initialized")
            state = registry.new_registry(req.mode, req.countries)
            store.save(state)
        counts = tree_mod.cardinality(state.tree)
        return schemas.InitResponse(mode=state.tree.mode,
                                    root_blocks=counts.root_blocks,
                                    total_blocks=counts.total)

    @app.post("/issue", response_model=schemas.IssueResponse)
    def issue_card(req: schemas.IssueRequest):
        store.require_initialized()
        with store.lock:
            state = store.load()
            store.guard_mutation(state, req.force)
            timestamp = _default_timestamp(state, req.timestamp)
            pd = registry.PersonalRecord(req.record)
            state, image = registry.issue(state, pd, req.country, timestamp,
                                          req.officer_id)
            store.save(state)
        return schemas.IssueResponse(
            serial=image.card_serial,
            address=image.bound_address.to_jsonable(),
            block_hash=image.bound_hash.hex(),
            card=_card_to_model(image))

    @app.post("/reissue", response_model=schemas.IssueResponse)
    def reissue_card(req: schemas.ReissueRequest):
        store.require_initialized()
        with store.lock:
            state = store.load()
            store.guard_mutation(state, req.force)
            timestamp = _default_timestamp(state, req.timestamp)
            pd = registry.PersonalRecord(req.record)
            state, image = registry.reissue(state, req.old_serial, pd,
                                            timestamp, req.officer_id)
            store.save(state)
        return schemas.IssueResponse(
            serial=image.card_serial,
            address=image.bound_address.to_jsonable(),
            block_hash=image.bound_hash.hex(),
            card=_card_to_model(image))

    @app.post("/verify", response_model=schemas.VerifyResponse)
    def verify_card(req: schemas.VerifyRequest):
        image = _card_from_model(req.card)
        if req.audit is None:
            state = store.load()
            decision, findings = registry.verify_card(state, image)
            return schemas.VerifyResponse(valid=decision, findings=findings)
        store.require_initialized()
        with store.lock:
            state = store.load()
            timestamp = _default_timestamp(state, req.timestamp)
            state, decision, findings = registry.verify_with_audit(
                state, image, req.audit.device_id, req.audit.user_id, timestamp)
            store.save(state)
        logged_at = None
        target = image.bound_address
        if tree_mod.is_card_version_address(state.tree, target):
            chain = state.tree.access_chains.get(target)
            if chain and chain.blocks:
                logged_at = target.child(tree_mod.ACCESS,
                                         len(chain.blocks) - 1).to_jsonable()
        return schemas.VerifyResponse(valid=decision, findings=findings,
                                      logged_at=logged_at)

    @app.post("/access", response_model=schemas.AccessResponse)
    def log_access(req: schemas.AccessRequest):
        store.require_initialized()
        with store.lock:
            state = store.load()
            store.guard_mutation(state, req.force)
            timestamp = _default_timestamp(state, req.timestamp)
            entry = AccessEntry(timestamp=timestamp, device_id=req.device_id,
                                user_id=req.user_id, purpose=req.purpose)
            new_tree, address = tree_mod.record_access(
                state.tree, BlockAddress.from_jsonable(req.address), entry)
            store.save(RegistryState(tree=new_tree,
                                     issued_cards=state.issued_cards,
                                     revoked_serials=state.revoked_serials))
        return schemas.AccessResponse(address=address.to_jsonable())

    @app.get("/audit", response_model=schemas.AuditResponse)
    def audit():
        state = store.load()
        report = tree_mod.audit_tree(state.tree)
        return schemas.AuditResponse(
            valid=report.valid,
            findings=[schemas.FindingModel(**f) for f in report.all_findings()],
            chains={label: r.as_dict()
                    for label, r in report.chain_reports.items()})

    @app.get("/inspect")
    def inspect(address: str | None = None):
        state = store.load()
        if address is None:
            counts = tree_mod.cardinality(state.tree)
            return schemas.InspectTreeResponse(
                mode=state.tree.mode,
                counts=counts.as_dict(),
                head_digest=tree_mod.tree_digest(state.tree).hex())
        addr = _parse_address_text(address)
        block = tree_mod.resolve(state.tree, addr)
        subchains = {}
        reissue_chain = state.tree.reissue_chains.get(addr)
        if reissue_chain:
            subchains["reissue"] = len(reissue_chain.blocks)
        access_chain = state.tree.access_chains.get(addr)
        if access_chain:
            subchains["access"] = len(access_chain.blocks)
        return schemas.InspectBlockResponse(
            address=addr.to_jsonable(),
            version=block.header.version,
            previous_hash=block.header.previous_hash.hex(),
            content_hash=block.header.content_hash.hex(),
            timestamp=block.header.timestamp,
            creator_id=block.header.creator_id,
            block_hash=block.cached_hash.hex(),
            payload_kind=type(block.payload).KIND,
            payload=block.payload.to_json_dict(),
            signatures=[signer for signer, _ in block.signatures],
            subchains=subchains)

    @app.get("/cards/{serial}", response_model=schemas.CardModel)
    def get_card(serial: str):
        state = store.load()
        image = state.issued_cards.get(serial)
        if image is None:
            raise UnknownSerial(f"serial {serial!r} was never issued")
        return _card_to_model(image)

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        directives = netsim.load_scenario(req.scenario)
        result = netsim.run_scenario(directives, node_count=req.nodes,
                                     seed=req.seed, mode=req.mode,
                                     countries=req.countries)
        if req.save_replicas:
            base = Path(req.save_replicas)
            for node_id, node in result.sim.nodes.items():
                tree_mod.save_tree(node.replica, base / node_id)
        return schemas.SimulateResponse(verdict=result.verdict,
                                        checks=result.checks,
                                        transcript=result.transcript)

    @app.post("/repair", response_model=schemas.RepairResponse)
    def repair(req: schemas.RepairRequest):
        store.require_initialized()
        with store.lock:
            state = store.load()
            peers = [tree_mod.load_tree(p) for p in req.replicas]
            sim = netsim.Simulator(node_count=len(peers) + 1, seed=req.seed,
                                   mode=state.tree.mode)
            sim.nodes["N0"].replica = state.tree
            for index, peer_tree in enumerate(peers, start=1):
                sim.nodes[f"N{index}"].replica = peer_tree
            report = sim.audit_and_repair("N0")
            if report.replaced:
                store.save(RegistryState(tree=sim.nodes["N0"].replica,
                                         issued_cards=state.issued_cards,
                                         revoked_serials=state.revoked_serials))
        return schemas.RepairResponse(replaced=list(report.replaced),
                                      conflicts=list(report.conflicts),
                                      clean_after=report.clean_after)

    return app


def _parse_address_text(text: str) -> BlockAddress:
    """Accept the label form root3-country0 as the address query parameter."""
    segments = []
    for token in text.split("-"):
        kind = token.rstrip("0123456789")
        digits = token[len(kind):]
        if not kind or not digits:
            raise KindMismatch(f"cannot parse address segment {token!r}")
        segments.append([kind, int(digits)])
    return BlockAddress.from_jsonable(segments)


def create_app_from_env() -> FastAPI:
    """Factory for `uvicorn --factory`; reads BCTREE_TREE_DIR."""
    import os

    tree_dir = os.environ.get("BCTREE_TREE_DIR")
    if not tree_dir:
        raise RuntimeError("set BCTREE_TREE_DIR to the tree directory to serve")
    return create_app(tree_dir)
