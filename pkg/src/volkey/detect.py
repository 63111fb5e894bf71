"""4D extrema detection over difference-of-Gaussian triples.

Every interior voxel of the middle volume is compared against its 80 neighbors
(26 in its own volume, 27 in each adjacent scale) through a sum-of-signs map;
values of +/-80 mark strict peaks/valleys, and a configurable band admits
near-extrema.
"""

from __future__ import annotations

import math
from contextlib import nullcontext
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ParameterError
from .parallel import run_ranges
from .scalespace import DoGPyramid
from .volume import Volume

# Reported keypoint scale is the geometric mean of the two source sigmas times
# sqrt(3/2): the scale-normalized 3D blob response peaks at sqrt(2/3) of the
# blob's own sigma, so this calibration makes the reported scale track blob size.
SCALE_CALIBRATION = math.sqrt(1.5)

_OFFSETS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
]


@dataclass(frozen=True)
class Keypoint:
    """Scale-space extremum in base-volume voxel coordinates."""

    position: tuple[float, float, float]
    sigma: float
    octave: int
    level: int
    dog_value: float
    sign: Literal["peak", "valley"]


def sum_of_signs_map(dog_prev: Volume, dog_cur: Volume, dog_next: Volume, workers: int = 1) -> np.ndarray:
    """Integer map of sign(center - neighbor) summed over the 80-neighborhood.

    Computed for interior voxels only; the 1-voxel border stays zero. sign(0)
    contributes nothing, so plateaus never reach +/-80.
    """
    if not (dog_prev.dims == dog_cur.dims == dog_next.dims):
        raise ParameterError(
            f"DoG triple dims differ: {dog_prev.dims}, {dog_cur.dims}, {dog_next.dims}"
        )
    nx, ny, nz = dog_cur.dims
    out = np.zeros((nx, ny, nz), dtype=np.int16)
    if min(nx, ny, nz) < 3:
        return out

    prev_d, cur_d, next_d = dog_prev.data, dog_cur.data, dog_next.data

    def fill(x_start: int, x_stop: int) -> None:
        # Offsets relative to the interior [1:-1] window, shifted per slab.
        lo, hi = 1 + x_start, 1 + x_stop
        center = cur_d[lo:hi, 1 : ny - 1, 1 : nz - 1]
        acc = out[lo:hi, 1 : ny - 1, 1 : nz - 1]
        for vol, skip_center in ((prev_d, False), (cur_d, True), (next_d, False)):
            for dx, dy, dz in _OFFSETS:
                if skip_center and dx == dy == dz == 0:
                    continue
                neighbor = vol[lo + dx : hi + dx, 1 + dy : ny - 1 + dy, 1 + dz : nz - 1 + dz]
                acc += (center > neighbor).astype(np.int16)
                acc -= (center < neighbor).astype(np.int16)

    run_ranges(nx - 2, fill, workers)
    return out


def extract_extrema(
    extremum_map: np.ndarray,
    dog_cur: Volume,
    threshold_band: int,
    contrast_min: float,
    octave: int = 0,
    level: int = 0,
    sigma_local: float = 1.0,
) -> list[Keypoint]:
    """Turn map values within ``threshold_band`` of +/-80 into keypoints.

    Positions and sigma are rescaled to base-volume coordinates by 2**octave.
    Keypoints are ordered by (z, y, x) for determinism.
    """
    if not 0 <= threshold_band <= 80:
        raise ParameterError(f"threshold_band must be in [0, 80], got {threshold_band}")
    nx, ny, nz = dog_cur.dims
    if min(nx, ny, nz) < 3:
        return []
    interior = (slice(1, nx - 1), slice(1, ny - 1), slice(1, nz - 1))
    m = extremum_map[interior]
    dog = dog_cur.data[interior]
    contrast_ok = np.abs(dog) >= contrast_min
    scale = 2.0**octave
    # Block-mean sub-sampling places octave-o voxel centers at
    # 2^o * i + (2^o - 1) / 2 in base coordinates; without the offset every
    # coarse-octave keypoint carries a systematic half-voxel-per-level bias.
    offset = (scale - 1.0) / 2.0
    sigma = sigma_local * scale

    keypoints: list[Keypoint] = []
    # A peak needs a strictly positive map value (and a valley a negative one):
    # sign(0) contributes nothing, so exact plateaus are never extrema even at
    # the widest band.
    for sign_name, mask in (
        ("peak", (m >= 80 - threshold_band) & (m > 0) & contrast_ok),
        ("valley", (m <= -80 + threshold_band) & (m < 0) & contrast_ok),
    ):
        coords = np.argwhere(mask)
        if len(coords) == 0:
            continue
        order = np.lexsort((coords[:, 0], coords[:, 1], coords[:, 2]))  # keys: x fastest, z slowest
        for ix, iy, iz in coords[order] + 1:
            keypoints.append(
                Keypoint(
                    position=(
                        float(ix * scale + offset),
                        float(iy * scale + offset),
                        float(iz * scale + offset),
                    ),
                    sigma=sigma,
                    octave=octave,
                    level=level,
                    dog_value=float(dog_cur.data[ix, iy, iz]),
                    sign=sign_name,
                )
            )
    keypoints.sort(key=lambda k: (k.position[2], k.position[1], k.position[0], k.sign == "valley"))
    return keypoints


def level_sigma_local(dog: DoGPyramid, octave: int, level: int) -> float:
    """Octave-local keypoint scale for a DoG level (calibrated effective sigma)."""
    finer = dog.octaves[octave].sigmas[level] / (2.0**octave)
    return finer * math.sqrt(dog.kappa) * SCALE_CALIBRATION


def detect_keypoints(
    dog: DoGPyramid,
    threshold_band: int = 0,
    contrast_min: float = 0.0,
    workers: int = 1,
    recorder=None,
) -> list[Keypoint]:
    """Run the sum-of-signs detector over every consecutive DoG triple.

    Results are ordered by (octave, level, z, y, x) regardless of worker count.
    """
    rec = recorder.stage if recorder is not None else (lambda *a: nullcontext())
    keypoints: list[Keypoint] = []
    for o, octave in enumerate(dog.octaves):
        if len(octave.levels) < 3:
            raise ParameterError(f"octave {o} has {len(octave.levels)} DoG levels; need >= 3")
        for i in range(1, len(octave.levels) - 1):
            with rec("peak_detect", o, i):
                m = sum_of_signs_map(octave.levels[i - 1], octave.levels[i], octave.levels[i + 1], workers)
                keypoints.extend(
                    extract_extrema(
                        m,
                        octave.levels[i],
                        threshold_band,
                        contrast_min,
                        octave=o,
                        level=i,
                        sigma_local=level_sigma_local(dog, o, i),
                    )
                )
    keypoints.sort(
        key=lambda k: (k.octave, k.level, k.position[2], k.position[1], k.position[0], k.sign == "valley")
    )
    return keypoints
