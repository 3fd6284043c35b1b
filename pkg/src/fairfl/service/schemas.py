"""Request and response bodies for the HTTP service."""

from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class _Request(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RunRequest(_Request):
    config: dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    threads: Optional[int] = Field(default=None, ge=1)


class RunResponse(BaseModel):
    summary: dict[str, Any]
    lines: list[dict[str, Any]]


class SweepRequest(RunRequest):
    param: Literal["gamma", "attacker_fraction", "aggregator"]
    values: list[Any] = Field(..., min_length=1)


class SweepEntry(BaseModel):
    value: Any
    key: str
    ok: bool
    error: Optional[str] = None
    summary: Optional[dict[str, Any]] = None
    lines: Optional[list[dict[str, Any]]] = None


class SweepResponse(BaseModel):
    param: str
    results: list[SweepEntry]


class GenDataRequest(RunRequest):
    pass


class GenDataResponse(BaseModel):
    n_samples: int
    csv: str


class StatsRequest(_Request):
    csv: str = Field(..., min_length=1)


class GroupStats(BaseModel):
    n: int
    label_rate: Optional[float]


class StatsResponse(BaseModel):
    n_samples: int
    input_dim: int
    label_rate: Optional[float]
    label_rate_gap: Optional[float]
    groups: dict[str, GroupStats]


class ErrorBody(BaseModel):
    kind: Literal["config", "runtime"]
    field: Optional[str] = None
    message: str


class HealthResponse(BaseModel):
    status: str
    version: str
