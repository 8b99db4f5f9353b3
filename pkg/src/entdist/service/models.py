"""Request/response schemas for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class TopologySummary(BaseModel):
    nodes: int
    links: int
    qnodes: int
    eps: int
    switches: int


class ValidateTopologyRequest(BaseModel):
    document: str


class ValidateTopologyResponse(BaseModel):
    ok: bool
    summary: Optional[TopologySummary] = None
    error: str = ""


class RwaSolveRequest(BaseModel):
    topology: str
    requests: str  # lines: request <eps> <qnode1> <qnode2>


class RwaResult(BaseModel):
    status: str  # ASSIGNED | BLOCKED
    signal: str = ""
    idler: str = ""
    loss1_db: float = 0.0
    loss2_db: float = 0.0
    cause: str = ""
    line: str


class RwaSolveResponse(BaseModel):
    results: list[RwaResult]


class RunRequest(BaseModel):
    topology: str
    scenario: str
    seed: int = 0
    max_retries: Optional[int] = None
    timeout_s: Optional[float] = None
    noise_threshold: Optional[float] = None
    end_time: Optional[float] = None


class SessionResult(BaseModel):
    session_id: str
    final_state: str
    cause: str = ""
    ebits: int
    retries: int
    duration_s: float
    line: str


class RunResponse(BaseModel):
    sessions: list[SessionResult]
    metrics: str = Field(description="key=value lines, deterministic for a seed")
    trace: str = Field(description="one line per delivered message")
    session_lines: str
    wall_runtime_s: float


class VersionResponse(BaseModel):
    name: str
    version: str
