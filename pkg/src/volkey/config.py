"""Pipeline configuration: one flat, validated set of parameters.

Serializes to a ``key = value`` text file (comments with ``#``) so runs are
reproducible and diffable; the CLI and service share this model.
"""

from __future__ import annotations

import os

from pydantic import BaseModel, Field, ValidationError, field_validator

from .errors import FormatError, InputOutputError, ParameterError


class PipelineConfig(BaseModel):
    # scale space
    base_sigma: float = Field(default=1.6, gt=0)
    levels_per_octave: int = Field(default=6, ge=4)
    num_octaves: int = Field(default=6, ge=1)
    min_octave_dim: int = Field(default=4, ge=2)
    # detection
    threshold_band: int = Field(default=0, ge=0, le=80)
    contrast_min: float = Field(default=0.0, ge=0)
    # orientation
    radius_factor: float = Field(default=4.0, gt=0)
    secondary_ratio: float = Field(default=0.8, gt=0, le=1)
    max_frames: int = Field(default=4, ge=1)
    # descriptors
    descriptor: str = Field(default="siftrank")
    pairs: int = Field(default=64, ge=1)
    method: int = Field(default=3, ge=1, le=5)
    patch_side: int = Field(default=15, ge=1)
    blur_sigma: float = Field(default=0.95, ge=0)
    seed: int = 13
    # matching
    ratio_max: float = Field(default=0.9, gt=0, le=1)
    min_votes: int = Field(default=3, ge=1)
    log_scale_bin: float = Field(default=0.2, gt=0)
    trans_bin: float = Field(default=16.0, gt=0)
    log_scale_tol: float = Field(default=0.25, gt=0)
    rot_tol_deg: float = Field(default=30.0, gt=0)
    trans_tol: float = Field(default=10.0, gt=0)
    # execution
    workers: int = Field(default=1, ge=1)
    chunk: int = Field(default=32, ge=1)

    @field_validator("descriptor")
    @classmethod
    def _known_kind(cls, v: str) -> str:
        if v not in ("siftrank", "brief", "rrief"):
            raise ValueError(f"descriptor must be siftrank, brief or rrief, got {v!r}")
        return v

    @field_validator("patch_side")
    @classmethod
    def _odd_side(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError(f"patch_side must be odd, got {v}")
        return v

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        return validate_config({**self.model_dump(), **clean})

    def to_file(self, path: str | os.PathLike) -> None:
        try:
            with open(path, "w") as fh:
                for key, value in self.model_dump().items():
                    fh.write(f"{key} = {value}\n")
        except OSError as exc:
            raise InputOutputError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "PipelineConfig":
        try:
            with open(path) as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise InputOutputError(f"cannot read {path}: {exc}") from exc
        values: dict[str, str] = {}
        for i, line in enumerate(lines, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise FormatError(f"{path}:{i}: expected 'key = value', got {line!r}")
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
        unknown = set(values) - set(cls.model_fields)
        if unknown:
            raise FormatError(f"{path}: unknown config keys {sorted(unknown)}")
        return validate_config(values)


def validate_config(values: dict) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(values)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"]) or "config"
        raise ParameterError(f"{loc}: {first['msg']}") from exc
