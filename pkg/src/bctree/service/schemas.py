"""Pydantic request/response models for the ledger service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class CardModel(BaseModel):
    """JSON form of a card image, identical to the card dump file format."""

    payload: dict[str, str]
    address: list[list]
    bound_hash: str
    serial: str
    public_key: str


class InitRequest(BaseModel):
    mode: str = "flat"
    countries: list[str] = Field(default_factory=list)


class InitResponse(BaseModel):
    mode: str
    root_blocks: int
    total_blocks: int


class IssueRequest(BaseModel):
    record: dict[int, str]
    country: Optional[int] = None
    officer_id: str
    timestamp: Optional[int] = None
    force: bool = False  # skip the pre-mutation audit refusal


class ReissueRequest(BaseModel):
    old_serial: str
    record: dict[int, str]
    officer_id: str
    timestamp: Optional[int] = None
    force: bool = False


class IssueResponse(BaseModel):
    serial: str
    address: list[list]
    block_hash: str
    card: CardModel


class AuditRef(BaseModel):
    device_id: str
    user_id: str


class VerifyRequest(BaseModel):
    card: CardModel
    audit: Optional[AuditRef] = None
    timestamp: Optional[int] = None


class VerifyResponse(BaseModel):
    valid: bool
    findings: list[str]
    logged_at: Optional[list[list]] = None


class AccessRequest(BaseModel):
    address: list[list]
    device_id: str
    user_id: str
    purpose: Optional[str] = None
    timestamp: Optional[int] = None
    force: bool = False


class AccessResponse(BaseModel):
    address: list[list]


class FindingModel(BaseModel):
    chain: str
    check: str
    detail: str
    index: Optional[int] = None


class AuditResponse(BaseModel):
    valid: bool
    findings: list[FindingModel]
    chains: dict[str, dict]


class InspectTreeResponse(BaseModel):
    mode: str
    counts: dict
    head_digest: str


class InspectBlockResponse(BaseModel):
    address: list[list]
    version: int
    previous_hash: str
    content_hash: str
    timestamp: int
    creator_id: str
    block_hash: str
    payload_kind: str
    payload: dict[str, str]
    signatures: list[str]
    subchains: dict[str, int]


class SimulateRequest(BaseModel):
    scenario: list[dict]
    nodes: int = 5
    seed: int = 1
    mode: str = "flat"
    countries: list[str] = Field(default_factory=list)
    save_replicas: Optional[str] = None


class SimulateResponse(BaseModel):
    verdict: str
    checks: dict[str, bool]
    transcript: list[dict]


class RepairRequest(BaseModel):
    replicas: list[str]
    seed: int = 1


class RepairResponse(BaseModel):
    replaced: list[dict]
    conflicts: list[dict]
    clean_after: bool


class ErrorResponse(BaseModel):
    error: str
    detail: str
