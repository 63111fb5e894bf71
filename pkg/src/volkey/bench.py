"""Per-stage timing harness and parallel-granularity sweep.

The harness times the production code paths (the same functions the CLI and
service execute); it only injects a recorder that wraps each stage call with a
monotonic clock. The first repeat is a discarded warm-up.
"""

from __future__ import annotations

import csv
import os
import statistics
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from .config import PipelineConfig
from .errors import InputOutputError, ParameterError
from .pipeline import extract_features
from .scalespace import convolve_separable, gaussian_kernel
from .volume import Volume

STAGES = ("convolution", "subsample", "dog", "peak_detect", "orient", "descriptor", "match")


@dataclass
class StageTiming:
    stage: str
    octave: int
    level: int
    workers: int
    chunk: int
    wall_micros: float


class StageRecorder:
    """Collects one wall-clock sample per (stage, octave, level) call."""

    def __init__(self, workers: int = 1, chunk: int = 0) -> None:
        self.workers = workers
        self.chunk = chunk
        self.samples: list[StageTiming] = []

    @contextmanager
    def stage(self, name: str, octave: int, level: int):
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = (time.perf_counter() - start) * 1e6
            self.samples.append(StageTiming(name, octave, level, self.workers, self.chunk, elapsed))


@dataclass
class TimingSummary:
    means: list[StageTiming]
    medians: list[StageTiming]
    total_mean_micros: float
    total_median_micros: float
    repeats: int


def time_pipeline(volume: Volume, config: PipelineConfig | None = None, workers: int | None = None,
                  repeats: int = 5) -> TimingSummary:
    """Run the extraction pipeline ``repeats`` times (plus a discarded warm-up)
    and aggregate per-stage wall times."""
    if repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {repeats}")
    cfg = config or PipelineConfig()
    if workers is not None:
        cfg = cfg.model_copy(update={"workers": workers})

    runs: list[list[StageTiming]] = []
    totals: list[float] = []
    for rep in range(repeats + 1):
        recorder = StageRecorder(cfg.workers, cfg.chunk)
        start = time.perf_counter()
        extract_features(volume, cfg, recorder=recorder)
        total = (time.perf_counter() - start) * 1e6
        if rep == 0:
            continue  # warm-up
        runs.append(recorder.samples)
        totals.append(total)

    by_key: dict[tuple[str, int, int], list[float]] = {}
    for samples in runs:
        for s in samples:
            by_key.setdefault((s.stage, s.octave, s.level), []).append(s.wall_micros)
    means = [
        StageTiming(stage, octave, level, cfg.workers, cfg.chunk, statistics.fmean(vals))
        for (stage, octave, level), vals in sorted(by_key.items())
    ]
    medians = [
        StageTiming(stage, octave, level, cfg.workers, cfg.chunk, statistics.median(vals))
        for (stage, octave, level), vals in sorted(by_key.items())
    ]
    return TimingSummary(means, medians, statistics.fmean(totals), statistics.median(totals), repeats)


@dataclass
class SweepResult:
    """Mean convolution time per work-partition granularity (chunk side)."""

    entries: list[tuple[int, float]] = field(default_factory=list)

    @property
    def fastest_chunk(self) -> int:
        return min(self.entries, key=lambda e: (e[1], e[0]))[0]

    @property
    def slowest_chunk(self) -> int:
        return max(self.entries, key=lambda e: (e[1], -e[0]))[0]


DEFAULT_SWEEP_CHUNKS = (1, 2, 5, 9, 10)


def chunk_sweep(volume: Volume, chunk_candidates=DEFAULT_SWEEP_CHUNKS, workers: int = 1,
                repeats: int = 3, sigma: float = 1.6) -> SweepResult:
    """Time one full separable blur per chunk granularity (k^3 voxels per task)."""
    candidates = list(chunk_candidates)
    if not candidates:
        raise ParameterError("chunk_candidates must not be empty")
    kernel = gaussian_kernel(sigma)
    result = SweepResult()
    for chunk in candidates:
        convolve_separable(volume, kernel, workers=workers, chunk=chunk)  # warm-up
        samples = []
        for _ in range(repeats):
            start = time.perf_counter()
            convolve_separable(volume, kernel, workers=workers, chunk=chunk)
            samples.append((time.perf_counter() - start) * 1e6)
        result.entries.append((chunk, statistics.fmean(samples)))
    return result


def emit_csv(timings: list[StageTiming], path: str | os.PathLike) -> None:
    """Plot-ready CSV: stage,octave,level,workers,chunk,wall_micros."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage", "octave", "level", "workers", "chunk", "wall_micros"])
            for t in timings:
                writer.writerow([t.stage, t.octave, t.level, t.workers, t.chunk, "%.9g" % t.wall_micros])
    except OSError as exc:
        raise InputOutputError(f"cannot write {path}: {exc}") from exc


def read_csv(path: str | os.PathLike) -> list[StageTiming]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc}") from exc
    return [
        StageTiming(r[0], int(r[1]), int(r[2]), int(r[3]), int(r[4]), float(r[5]))
        for r in rows[1:]
    ]
