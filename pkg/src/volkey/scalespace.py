"""Gaussian scale-space pyramids: 1D kernels, separable convolution, octave
sub-sampling, and difference volumes.

Sigma is expressed in voxel units throughout (spacing metadata is carried but
does not enter the blur schedule). Borders use replicate padding everywhere.
"""

from __future__ import annotations

import math
import os
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .parallel import DEFAULT_CHUNK, iter_blocks, run_blocks
from .volume import Volume, save_raw

# Octaves stop once the next sub-sampled grid would drop below this side length;
# the default admits six octaves on a (145, 174, 145) input.
MIN_OCTAVE_DIM = 4


@dataclass(frozen=True)
class GaussianKernel1D:
    """Sampled, normalized 1D Gaussian with radius ceil(3*sigma)."""

    sigma: float
    radius: int
    weights: np.ndarray


def gaussian_kernel(sigma: float) -> GaussianKernel1D:
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    radius = max(1, math.ceil(3.0 * sigma))
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(taps**2) / (2.0 * sigma * sigma))
    weights /= weights.sum()
    return GaussianKernel1D(float(sigma), radius, weights.astype(np.float32))


def convolve_array(
    arr: np.ndarray,
    kernel: GaussianKernel1D,
    workers: int = 1,
    chunk: int = DEFAULT_CHUNK,
) -> np.ndarray:
    """Separable 3D blur of a float32 array: 1D passes along x, then y, then z.

    Each pass partitions the output into ``chunk``-sided blocks; taps accumulate
    in a fixed order, so the result is bit-identical for any worker count or
    chunk size.
    """
    out = np.asarray(arr, dtype=np.float32)
    for axis in range(3):
        out = _convolve_axis(out, kernel, axis, workers, chunk)
    return out


def _convolve_axis(arr: np.ndarray, kernel: GaussianKernel1D, axis: int, workers: int, chunk: int) -> np.ndarray:
    radius = kernel.radius
    weights = kernel.weights
    pad_width = [(0, 0)] * 3
    pad_width[axis] = (radius, radius)
    padded = np.pad(arr, pad_width, mode="edge")
    out = np.empty_like(arr)

    def fill(block) -> None:
        src = list(block)
        base = block[axis]
        src[axis] = slice(base.start, base.stop)
        acc = weights[0] * padded[tuple(src)]
        for t in range(1, len(weights)):
            src[axis] = slice(base.start + t, base.stop + t)
            acc += weights[t] * padded[tuple(src)]
        out[block] = acc

    run_blocks(iter_blocks(arr.shape, chunk), fill, workers)
    return out


def convolve_separable(
    v: Volume,
    kernel: GaussianKernel1D,
    workers: int = 1,
    chunk: int = DEFAULT_CHUNK,
) -> Volume:
    """Blur a volume with three separable 1D passes (replicate borders)."""
    return Volume(convolve_array(v.data, kernel, workers, chunk), v.spacing)


def subsample_half(v: Volume) -> Volume:
    """Halve every dimension; each output voxel is the mean of its 2x2x2 block."""
    nx, ny, nz = v.dims
    if min(nx, ny, nz) < 2:
        raise ParameterError(f"cannot subsample dims {v.dims}: every dim must be >= 2")
    a = v.data[: nx - nx % 2, : ny - ny % 2, : nz - nz % 2]
    acc = a[0::2, 0::2, 0::2].astype(np.float32).copy()
    for dx in range(2):
        for dy in range(2):
            for dz in range(2):
                if dx == dy == dz == 0:
                    continue
                acc += a[dx::2, dy::2, dz::2]
    acc /= 8.0
    return Volume(acc, tuple(2.0 * s for s in v.spacing))


@dataclass
class PyramidOctave:
    """Blurred volumes at geometrically increasing sigma over one grid size."""

    levels: list[Volume]
    sigmas: list[float]  # absolute sigma, base-volume voxel units


@dataclass
class GaussianPyramid:
    octaves: list[PyramidOctave]
    base_sigma: float
    kappa: float
    levels_per_octave: int
    source: Volume | None = None  # the unblurred input (patch descriptors sample it)

    @property
    def num_octaves(self) -> int:
        return len(self.octaves)

    def local_sigma(self, octave: int, level: int) -> float:
        """Sigma of a level expressed in that octave's own voxel units."""
        return self.octaves[octave].sigmas[level] / (2.0**octave)


@dataclass
class DoGOctave:
    levels: list[Volume]
    sigmas: list[float]  # absolute sigma of the finer source level


@dataclass
class DoGPyramid:
    octaves: list[DoGOctave]
    kappa: float
    levels_per_octave: int = 0

    @property
    def num_octaves(self) -> int:
        return len(self.octaves)


def _incremental_sigma(current: float, target: float) -> float:
    return math.sqrt(max(target * target - current * current, 0.0))


def build_gaussian_pyramid(
    v: Volume,
    base_sigma: float = 1.6,
    levels_per_octave: int = 6,
    num_octaves: int = 6,
    workers: int = 1,
    chunk: int = DEFAULT_CHUNK,
    min_octave_dim: int = MIN_OCTAVE_DIM,
    recorder=None,
) -> GaussianPyramid:
    """Blur/sub-sample schedule: within an octave sigma_i = base * kappa**i with
    kappa = 2**(1/(levels-3)); the next octave starts from the level at 2*base
    sub-sampled by two. Octave requests the grid cannot support are truncated.
    """
    if base_sigma <= 0:
        raise ParameterError(f"base_sigma must be > 0, got {base_sigma}")
    if levels_per_octave < 4:
        raise ParameterError(f"levels_per_octave must be >= 4, got {levels_per_octave}")
    if num_octaves < 1:
        raise ParameterError(f"num_octaves must be >= 1, got {num_octaves}")
    rec = recorder.stage if recorder is not None else (lambda *a: nullcontext())
    kappa = 2.0 ** (1.0 / (levels_per_octave - 3))
    local_sigmas = [base_sigma * kappa**i for i in range(levels_per_octave)]
    handoff = levels_per_octave - 3  # level whose sigma is exactly 2*base_sigma

    octaves: list[PyramidOctave] = []
    current = v
    for octave in range(num_octaves):
        levels: list[Volume] = []
        if octave == 0:
            # Intrinsic input blur is treated as zero: reach base_sigma directly.
            with rec("convolution", octave, 0):
                levels.append(convolve_separable(current, gaussian_kernel(local_sigmas[0]), workers, chunk))
        else:
            # The sub-sampled handoff level already sits at local sigma = base.
            levels.append(current)
        for i in range(1, levels_per_octave):
            inc = _incremental_sigma(local_sigmas[i - 1], local_sigmas[i])
            with rec("convolution", octave, i):
                levels.append(convolve_separable(levels[-1], gaussian_kernel(inc), workers, chunk))
        octaves.append(PyramidOctave(levels, [s * 2.0**octave for s in local_sigmas]))
        if octave + 1 == num_octaves:
            break
        next_dims = tuple(d // 2 for d in current.dims)
        if min(next_dims) < min_octave_dim or min(current.dims) < 2:
            break
        with rec("subsample", octave, handoff):
            current = subsample_half(levels[handoff])
    return GaussianPyramid(octaves, base_sigma, kappa, levels_per_octave, source=v)


def build_dog_pyramid(g: GaussianPyramid, recorder=None) -> DoGPyramid:
    """Adjacent-level differences, finer level minus coarser, per octave."""
    rec = recorder.stage if recorder is not None else (lambda *a: nullcontext())
    if g.levels_per_octave < 2:
        raise ParameterError("pyramid needs at least 2 levels per octave")
    octaves = []
    for o, octave in enumerate(g.octaves):
        diffs = []
        for i in range(len(octave.levels) - 1):
            with rec("dog", o, i):
                diffs.append(
                    Volume(octave.levels[i].data - octave.levels[i + 1].data, octave.levels[i].spacing)
                )
        octaves.append(DoGOctave(diffs, octave.sigmas[:-1]))
    return DoGPyramid(octaves, g.kappa, g.levels_per_octave)


def dump_pyramid(g: GaussianPyramid, directory: str | os.PathLike) -> list[str]:
    """Write every level as raw float32 (debugging aid); returns written paths."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for o, octave in enumerate(g.octaves):
        for i, (vol, sigma) in enumerate(zip(octave.levels, octave.sigmas)):
            name = f"oct{o}_lvl{i}_sigma{sigma:.4g}"
            data_path, _ = save_raw(vol, os.path.join(str(directory), name))
            written.append(data_path)
    return written
