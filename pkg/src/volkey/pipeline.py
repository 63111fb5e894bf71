"""End-to-end extraction: pyramid -> detection -> orientation -> description.

This is the single production path used by the CLI, the service, the matcher,
and the benchmark harness.
"""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass

from .config import PipelineConfig
from .descriptor import DescriptorRecord, describe_all, sample_point_pairs
from .detect import Keypoint, detect_keypoints
from .orient import OrientationFrame, dominant_orientations, gradient_histogram
from .scalespace import DoGPyramid, GaussianPyramid, build_dog_pyramid, build_gaussian_pyramid
from .volume import Volume


@dataclass
class ExtractionResult:
    pyramid: GaussianPyramid
    dog: DoGPyramid
    keypoints: list[Keypoint]
    oriented: list[tuple[Keypoint, OrientationFrame]]
    records: list[DescriptorRecord]
    dropped_orientation: int = 0
    dropped_descriptor: int = 0

    @property
    def stats(self) -> dict:
        return {
            "octaves": self.pyramid.num_octaves,
            "keypoints": len(self.keypoints),
            "frames": len(self.oriented),
            "descriptors": len(self.records),
            "dropped": self.dropped_orientation + self.dropped_descriptor,
        }


def assign_orientations(
    pyr: GaussianPyramid,
    keypoints: list[Keypoint],
    config: PipelineConfig,
    recorder=None,
) -> tuple[list[tuple[Keypoint, OrientationFrame]], int]:
    """Orientation frames per keypoint, grouped by (octave, level) for timing."""
    rec = recorder.stage if recorder is not None else (lambda *a: nullcontext())
    groups: dict[tuple[int, int], list[Keypoint]] = {}
    for kp in keypoints:
        groups.setdefault((kp.octave, kp.level), []).append(kp)
    oriented: dict[int, list[tuple[Keypoint, OrientationFrame]]] = {}
    dropped = 0
    index = {id(kp): i for i, kp in enumerate(keypoints)}
    for (octave, level), group in sorted(groups.items()):
        with rec("orient", octave, level):
            for kp in group:
                hist = gradient_histogram(pyr, kp, config.radius_factor)
                frames = dominant_orientations(hist, config.secondary_ratio, config.max_frames)
                if not frames:
                    dropped += 1
                    continue
                oriented[index[id(kp)]] = [(kp, f) for f in frames]
    flat: list[tuple[Keypoint, OrientationFrame]] = []
    for i in sorted(oriented):
        flat.extend(oriented[i])
    return flat, dropped


def extract_features(volume: Volume, config: PipelineConfig | None = None, recorder=None) -> ExtractionResult:
    cfg = config or PipelineConfig()
    rec = recorder.stage if recorder is not None else (lambda *a: nullcontext())
    pyramid = build_gaussian_pyramid(
        volume,
        base_sigma=cfg.base_sigma,
        levels_per_octave=cfg.levels_per_octave,
        num_octaves=cfg.num_octaves,
        workers=cfg.workers,
        chunk=cfg.chunk,
        min_octave_dim=cfg.min_octave_dim,
        recorder=recorder,
    )
    dog = build_dog_pyramid(pyramid, recorder=recorder)
    keypoints = detect_keypoints(dog, cfg.threshold_band, cfg.contrast_min, cfg.workers, recorder=recorder)
    oriented, dropped_orient = assign_orientations(pyramid, keypoints, cfg, recorder=recorder)
    pairs = None
    if cfg.descriptor != "siftrank":
        pairs = sample_point_pairs(cfg.method, cfg.pairs, 1.0, cfg.seed)
    with rec("descriptor", -1, -1):
        records, dropped_desc = describe_all(
            pyramid,
            oriented,
            kind=cfg.descriptor,
            pairs=pairs,
            patch_side=cfg.patch_side,
            blur_sigma=cfg.blur_sigma,
            radius_factor=cfg.radius_factor,
            workers=cfg.workers,
        )
    return ExtractionResult(
        pyramid, dog, keypoints, oriented, records, dropped_orient, dropped_desc
    )
