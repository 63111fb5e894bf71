"""Pydantic request/response models for the extraction service.

Volumes and output artifacts are referenced by filesystem path: the service
reads and writes on its own host, and responses carry summaries, not voxels.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..config import PipelineConfig


class VolumeSpec(BaseModel):
    """Where to load a volume from. ``dims``/``spacing`` are only needed for
    headerless raw files (no ``.hdr.txt`` sidecar)."""

    path: str
    dims: tuple[int, int, int] | None = None
    spacing: tuple[float, float, float] | None = None


class TransformModel(BaseModel):
    scale: float
    rotation: list[float] = Field(description="row-major 3x3 rotation")
    translation: list[float]


class ExtractRequest(BaseModel):
    volume: VolumeSpec
    config: PipelineConfig = Field(default_factory=PipelineConfig)
    output_prefix: str | None = Field(
        default=None, description="writes <prefix>.keys.txt and <prefix>.desc.txt when set"
    )
    dump_pyramid_dir: str | None = None


class ExtractResponse(BaseModel):
    octaves: int
    keypoint_count: int
    frame_count: int
    descriptor_count: int
    dropped: int
    keypoints_path: str | None = None
    descriptors_path: str | None = None
    stage_micros: dict[str, float] = Field(default_factory=dict)


class MatchRequest(BaseModel):
    descriptors_a: str
    descriptors_b: str
    config: PipelineConfig = Field(default_factory=PipelineConfig)
    inlier_csv: str | None = None


class MatchResponse(BaseModel):
    kind: str
    count_a: int
    count_b: int
    match_count: int
    inlier_count: int
    consensus: TransformModel
    inlier_csv: str | None = None


class StageTimingModel(BaseModel):
    stage: str
    octave: int
    level: int
    workers: int
    chunk: int
    wall_micros: float


class SweepEntryModel(BaseModel):
    chunk: int
    mean_micros: float


class BenchRequest(BaseModel):
    volume: VolumeSpec
    config: PipelineConfig = Field(default_factory=PipelineConfig)
    repeats: int = Field(default=5, ge=1)
    workers: list[int] | None = Field(default=None, description="worker counts to compare")
    chunks: list[int] | None = Field(default=None, description="chunk sweep candidates")
    csv_path: str | None = None


class BenchResponse(BaseModel):
    rows: list[StageTimingModel]
    totals_by_workers: dict[str, float]
    sweep: list[SweepEntryModel] | None = None
    fastest_chunk: int | None = None
    csv_path: str | None = None


class ErrorBody(BaseModel):
    kind: str
    message: str
