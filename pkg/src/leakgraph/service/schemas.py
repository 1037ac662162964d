"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class SensorDoc(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    id: str
    tail: str = Field(alias="from")
    head: str = Field(alias="to")


class TopologyDoc(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    reference: str
    nodes: list[str]
    sensors: list[SensorDoc]


class FaultSpec(BaseModel):
    kind: Literal["leak", "sensor_fault", "anomaly"]
    node: str


class DetectRequest(BaseModel):
    topology: TopologyDoc
    faults: list[FaultSpec]
    diagnose: bool = True


class PartitionDoc(BaseModel):
    isolated: list[list[str]]
    sensor_only: list[list[str]]
    reference_component: list[str]


class DetectResponse(BaseModel):
    detectable: bool
    partition: PartitionDoc
    failing_component: Optional[list[str]] = None
    culprit_nodes: Optional[list[str]] = None


class EnumerateRequest(BaseModel):
    topology: TopologyDoc
    force: list[FaultSpec] = Field(default_factory=list)
    exclude: list[FaultSpec] = Field(default_factory=list)
    include_structures: bool = False


class EnumerateResponse(BaseModel):
    fingerprint: str
    n_candidates: int
    structure_size: int
    detectable: int
    undetectable: int
    offline_seconds: float
    structures: Optional[list[list[str]]] = None


class SolutionDoc(BaseModel):
    structure: list[str]
    values: dict[str, float]
    l1_norm: float
    valid: bool


class EnvelopeEntry(BaseModel):
    min: float
    max: float


class ReportFlags(BaseModel):
    propagated: list[str]
    forced_faults: list[str]
    no_valid_solution: bool


class ZoneReadoutDoc(BaseModel):
    leak_min: Optional[float] = None
    leak_max: Optional[float] = None
    fault_min: Optional[float] = None
    fault_max: Optional[float] = None
    propagated: bool


class WindowReportDoc(BaseModel):
    window: str
    minimal_solutions: list[SolutionDoc]
    envelope: dict[str, EnvelopeEntry]
    flags: ReportFlags
    zones: dict[str, ZoneReadoutDoc]


class EstimateRequest(BaseModel):
    topology: TopologyDoc
    csv_text: str
    window: str = "daily"
    eps_pos: Optional[float] = Field(default=None, ge=0)
    eps_tie: Optional[float] = Field(default=None, ge=0)


class TimingsDoc(BaseModel):
    offline_seconds: float
    online_seconds: float


class EstimateResponse(BaseModel):
    fingerprint: str
    windows: list[WindowReportDoc]
    timings: TimingsDoc


class BaselineRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    topology: TopologyDoc
    csv_text: str
    window: str = "daily"
    lam: float = Field(default=0.05, alias="lambda", ge=0)


class BaselineWindowDoc(BaseModel):
    window: str
    solution: SolutionDoc
    propagated: list[str]
    forced_faults: list[str]


class BaselineResponse(BaseModel):
    fingerprint: str
    windows: list[BaselineWindowDoc]
    seconds: float


class ScenarioFaultDoc(BaseModel):
    kind: Literal["leak", "sensor_fault", "anomaly", "stuck", "missing"]
    node: str
    value: float = 0.0
    start: float = 0.0
    end: Optional[float] = None


class ScenarioDoc(BaseModel):
    topology: TopologyDoc
    consumption: dict[str, float] = Field(default_factory=dict)
    faults: list[ScenarioFaultDoc] = Field(default_factory=list)
    noise_std: float = Field(default=0.0, ge=0)
    cadence_minutes: int = Field(default=15, gt=0)
    days: int = Field(default=1, ge=1)


class SimulateRequest(BaseModel):
    scenario: ScenarioDoc
    seed: int = 0


class SimulateResponse(BaseModel):
    samples_csv: str
    ground_truth: dict


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorResponse(BaseModel):
    error: str
    message: str
