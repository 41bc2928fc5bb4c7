"""Request/response models for the audit service.

Core domain types are already pydantic models, so most schemas compose
them directly; the envelope models here exist to make the wire contracts
explicit and versionable.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from ..dossier import Dossier, RedactedDossier, RedactionRuleSet, SyntheticIdentity
from ..elicitation import DistrictFrom, EvaluationResult, PerceptionResult, PromptCondition
from ..identity import College, NameCatalog
from ..provider import ChatRequest, ProviderConfig
from ..experiment import ExperimentPlan, PlannedItem, RefusalRecord


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorBody(BaseModel):
    code: str
    message: str
    details: dict = Field(default_factory=dict)


class RedactRequest(BaseModel):
    dossier: Dossier
    rules: RedactionRuleSet


class InstantiateRequest(BaseModel):
    redacted: RedactedDossier
    identity: SyntheticIdentity


class BlindRequest(BaseModel):
    redacted: RedactedDossier


class ExpandRequest(BaseModel):
    redacted: RedactedDossier
    catalog: Optional[NameCatalog] = None  # default catalog when omitted
    seed: int = 0


class ExpandedCell(BaseModel):
    cell: str
    identity: SyntheticIdentity
    dossier: Dossier


class ExpandResponse(BaseModel):
    cells: list[ExpandedCell]


class SampleIdentityRequest(BaseModel):
    cell: str  # "Race/gender"
    catalog: Optional[NameCatalog] = None
    seed: int = 0


class CatalogBuildRequest(BaseModel):
    rows: list[dict]  # {first, last, race, gender}
    penalty: float = 1.0
    colleges: Optional[list[College]] = None
    embedder: ProviderConfig
    embedder_id: str = "embedder"
    cache_dir: Optional[str] = None
    output_path: Optional[str] = None


class EvaluationPromptRequest(BaseModel):
    dossier: Dossier
    job_description: str
    condition: Optional[PromptCondition] = None
    model: str = ""
    district_from: Optional[DistrictFrom] = None


class ManipulationPromptRequest(BaseModel):
    dossier: Dossier
    model: str = ""


class PromptResponse(BaseModel):
    request: ChatRequest
    condition_id: str


class ParseTextRequest(BaseModel):
    text: str


class PlanRequest(BaseModel):
    plan: ExperimentPlan


class PlanExpansionResponse(BaseModel):
    count: int
    items: list[PlannedItem]


class AuditRunResponse(BaseModel):
    planned: int
    rows: int
    refusal_count: int
    refusals: list[RefusalRecord]
    conservation_ok: bool
    output_dir: str
    ratings_csv: str
    provider_stats: dict


class ManipulationRunResponse(BaseModel):
    planned: int
    matrices: dict
    absent_counts: dict
    output_path: str


class BlindingRunResponse(BaseModel):
    planned: int
    rows: int
    refusal_count: int
    output_path: str
    ratings_csv: str
    analysis: dict


class PredictabilityRequest(BaseModel):
    plan: ExperimentPlan
    k: int = 10
    penalty_grid: list[float] = Field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0])
    split_half: bool = False
    embedder_id: Optional[str] = None  # defaults to the first plan model


class PredictabilityResponse(BaseModel):
    results: list[dict]
    output_path: str


class AnalyzeRequest(BaseModel):
    ratings_csv: str
    output_dir: str
    thresholds: list[int] = Field(default_factory=lambda: [3, 4, 5])
    n_boot: int = 1000
    seed: int = 0


class AnalyzeResponse(BaseModel):
    analysis: dict
    output_path: str


class SimulateRequest(BaseModel):
    workdir: str
    offsets: dict[str, float] = Field(default_factory=dict)
    n_dossiers: int = 200
    noise_sd: float = 0.25
    seed: int = 0
    signal_channel: str = "full_content"
    parallelism: int = 1
    n_boot: int = 0


class SimulateResponse(BaseModel):
    report: dict
    output_path: str


class ReportRequest(BaseModel):
    output_dir: str
    master_seed: int = 0


class ReportResponse(BaseModel):
    report: dict
    report_json: str
    report_txt: str
