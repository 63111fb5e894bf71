"""FastAPI service wrapping the extraction/matching/benchmark pipeline."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..bench import chunk_sweep, emit_csv, time_pipeline
from ..errors import VolkeyError
from ..keyfiles import read_descriptors, write_descriptors, write_inlier_csv, write_keypoints
from ..match import match_records
from ..pipeline import extract_features
from ..scalespace import dump_pyramid
from ..volume import Volume, load_volume
from .models import (
    BenchRequest,
    BenchResponse,
    ErrorBody,
    ExtractRequest,
    ExtractResponse,
    MatchRequest,
    MatchResponse,
    StageTimingModel,
    SweepEntryModel,
    TransformModel,
    VolumeSpec,
)


def _load(spec: VolumeSpec) -> Volume:
    return load_volume(spec.path, spec.dims, spec.spacing)


def create_app() -> FastAPI:
    app = FastAPI(title="volkey", version=__version__)

    @app.exception_handler(VolkeyError)
    async def volkey_error(request: Request, exc: VolkeyError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content=ErrorBody(kind=exc.kind, message=str(exc)).model_dump(),
        )

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "name": "volkey", "version": __version__}

    @app.get("/defaults")
    def defaults() -> dict:
        from ..config import PipelineConfig

        return PipelineConfig().model_dump()

    @app.post("/extract", response_model=ExtractResponse)
    def extract(req: ExtractRequest) -> ExtractResponse:
        from ..bench import StageRecorder

        volume = _load(req.volume)
        recorder = StageRecorder(req.config.workers, req.config.chunk)
        result = extract_features(volume, req.config, recorder=recorder)
        keypoints_path = descriptors_path = None
        if req.output_prefix:
            keypoints_path = req.output_prefix + ".keys.txt"
            descriptors_path = req.output_prefix + ".desc.txt"
            write_keypoints(keypoints_path, oriented=result.oriented)
            n = 64 if req.config.descriptor == "siftrank" else req.config.pairs
            write_descriptors(descriptors_path, result.records, req.config.descriptor, n, req.config.seed)
        if req.dump_pyramid_dir:
            dump_pyramid(result.pyramid, req.dump_pyramid_dir)
        stage_micros: dict[str, float] = {}
        for sample in recorder.samples:
            stage_micros[sample.stage] = stage_micros.get(sample.stage, 0.0) + sample.wall_micros
        return ExtractResponse(
            octaves=result.pyramid.num_octaves,
            keypoint_count=len(result.keypoints),
            frame_count=len(result.oriented),
            descriptor_count=len(result.records),
            dropped=result.dropped_orientation + result.dropped_descriptor,
            keypoints_path=keypoints_path,
            descriptors_path=descriptors_path,
            stage_micros=stage_micros,
        )

    @app.post("/match", response_model=MatchResponse)
    def match(req: MatchRequest) -> MatchResponse:
        kind_a, n_a, _, records_a = read_descriptors(req.descriptors_a)
        kind_b, n_b, _, records_b = read_descriptors(req.descriptors_b)
        if kind_a != kind_b or n_a != n_b:
            from ..errors import ParameterError

            raise ParameterError(
                f"descriptor kinds differ: {kind_a}(n={n_a}) vs {kind_b}(n={n_b})"
            )
        cfg = req.config.model_copy(update={"descriptor": kind_a, "pairs": n_a})
        consensus, matches, kind = match_records(records_a, records_b, cfg)
        if req.inlier_csv:
            write_inlier_csv(req.inlier_csv, consensus.inliers)
        t = consensus.transform
        return MatchResponse(
            kind=kind,
            count_a=len(records_a),
            count_b=len(records_b),
            match_count=len(matches),
            inlier_count=len(consensus.inliers),
            consensus=TransformModel(
                scale=t.scale,
                rotation=[float(v) for v in t.rotation.reshape(9)],
                translation=[float(v) for v in t.translation],
            ),
            inlier_csv=req.inlier_csv,
        )

    @app.post("/bench", response_model=BenchResponse)
    def bench(req: BenchRequest) -> BenchResponse:
        volume = _load(req.volume)
        worker_counts = req.workers or [req.config.workers]
        rows: list[StageTimingModel] = []
        totals: dict[str, float] = {}
        for workers in worker_counts:
            summary = time_pipeline(volume, req.config, workers=workers, repeats=req.repeats)
            totals[str(workers)] = summary.total_mean_micros
            rows.extend(StageTimingModel(**vars(t)) for t in summary.means)
        sweep_models = None
        fastest = None
        if req.chunks:
            sweep = chunk_sweep(volume, req.chunks, workers=max(worker_counts), sigma=req.config.base_sigma)
            sweep_models = [SweepEntryModel(chunk=c, mean_micros=m) for c, m in sweep.entries]
            fastest = sweep.fastest_chunk
        csv_path = None
        if req.csv_path:
            from ..bench import StageTiming

            emit_csv([StageTiming(**r.model_dump()) for r in rows], req.csv_path)
            csv_path = req.csv_path
        return BenchResponse(
            rows=rows,
            totals_by_workers=totals,
            sweep=sweep_models,
            fastest_chunk=fastest,
            csv_path=csv_path,
        )

    return app
