"""Request/response models for the HTTP service.

Field order in the manifest models mirrors the manifest dict built by the
pipeline, so a manifest fetched over HTTP serialises to the same bytes as
one produced locally.
"""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field

U64 = Field(0, ge=0, lt=2**64)
Format = Optional[Literal["binary", "csv"]]


class PoolSpec(BaseModel):
    name: str = Field(min_length=1)
    path: str


class SearchRequest(BaseModel):
    pools: list[PoolSpec] = Field(min_length=1)
    target: str
    clusters: int = Field(50, ge=1)
    seed_cluster: int = U64
    format: Format = None


class PruneRequest(SearchRequest):
    ids: str
    images: str
    seed_ids: int = U64
    seed_fps: int = U64
    prior_manifest: Optional[dict[str, Any]] = None


class FidRequest(BaseModel):
    a: str
    b: str
    format: Format = None


class FidResponse(BaseModel):
    fid: float


class CorrelationRowModel(BaseModel):
    label: str
    fid: float
    num_ids: float
    score: float


class CorrelateRequest(BaseModel):
    rows: list[CorrelationRowModel] = Field(min_length=2)


class CorrelateResponse(BaseModel):
    fid_vs_score: float
    num_ids_vs_score: float
    fid_vs_num_ids: float
    n: int


# -- manifest -------------------------------------------------------------------


class Toolkit(BaseModel):
    name: str
    version: str


class BudgetEcho(BaseModel):
    ids: Optional[str]
    images: Optional[str]


class Seeds(BaseModel):
    cluster: int
    ids: int
    fps: int


class ConfigEcho(BaseModel):
    pools: list[PoolSpec]
    target: str
    format: Format
    clusters: int
    budget: Optional[BudgetEcho]
    seeds: Seeds
    conventions: dict[str, Any]


class PoolSummary(BaseModel):
    datasets: list[str]
    records: int
    identities: int
    dimension: int


class TargetSummary(BaseModel):
    records: int
    dimension: int


class DatasetShareModel(BaseModel):
    name: str
    images: int
    image_fraction: float
    identities: int
    identity_fraction: float


class CompositionModel(BaseModel):
    datasets: list[DatasetShareModel]
    total_images: int
    total_identities: int
    achieved_fid: Optional[float]
    budget: Optional[dict[str, int]]


class ClusterFid(BaseModel):
    cluster: int
    fid: float


class MergedCluster(BaseModel):
    cluster: int
    into: int


class TracePoint(BaseModel):
    step: int
    cluster: int
    fid: float


class SearchSummary(BaseModel):
    clusters_effective: Optional[int]
    kmeans_iterations: Optional[int]
    merged_clusters: list[MergedCluster]
    cluster_fids: list[ClusterFid]
    trace: list[TracePoint]
    selected_clusters: list[int]
    best_fid: float
    identity_count: int
    image_count: int
    identity_ids: list[int]
    composition: CompositionModel


class SeedImage(BaseModel):
    identity: int
    record: int
    image_key: str


class PruneSummary(BaseModel):
    n: int
    m: int
    identities_available: int
    id_sample: list[int]
    universe_size: int
    seed_images: list[SeedImage]
    fps_order: list[int]
    selected_count: int
    cover_radius: float
    pruned_fid: Optional[float]


class SelectedImage(BaseModel):
    dataset: str
    identity: int
    local_identity: int
    image_key: str


class SelectionManifest(BaseModel):
    toolkit: Toolkit
    created_at: str
    command: Literal["search", "prune"]
    config: ConfigEcho
    pool: PoolSummary
    target: TargetSummary
    search: SearchSummary
    prune: Optional[PruneSummary]
    composition: CompositionModel
    selected: list[SelectedImage]


class ErrorResponse(BaseModel):
    kind: str
    detail: str
    exit_code: int
