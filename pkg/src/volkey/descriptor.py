"""Keypoint appearance descriptors.

Three kinds:
  - "siftrank": 64 rank-normalized gradient-orientation bins (2x2x2 spatial
    octants x 8 gradient-sign octants) over a reoriented 4-sigma ball.
  - "brief": n binarized intensity differences over a fixed point-pair set
    sampled inside a blurred, reoriented patch.
  - "rrief": the same differences kept real-valued and rank-ordered.

Point-pair offsets are expressed in sigma-normalized units so a single set
(per seed) serves every keypoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np

from .detect import Keypoint
from .errors import ParameterError
from .orient import OrientationFrame, _ball_offsets, keypoint_local
from .parallel import run_ranges
from .scalespace import GaussianPyramid, convolve_array, gaussian_kernel
from .volume import gradients_at, sample_trilinear_array

Kind = Literal["siftrank", "brief", "rrief"]
KINDS = ("siftrank", "brief", "rrief")

SIFT_RANK_LENGTH = 64
PAIR_SUPPORT_RADIUS = 2.0  # pair offsets live in a ball of 2 sigma-units


@dataclass(frozen=True)
class Patch:
    """Cubic resample of a pyramid level in a keypoint's orientation frame."""

    side: int
    data: np.ndarray  # (side, side, side) float32


@dataclass(frozen=True)
class PointPairSet:
    method: int
    n: int
    sigma_unit: float
    seed: int
    p1: np.ndarray  # (n, 3) offsets in sigma-normalized units
    p2: np.ndarray


@dataclass(frozen=True)
class SiftRankDescriptor:
    ranks: np.ndarray  # (64,) permutation of 0..63


@dataclass(frozen=True)
class BriefDescriptor:
    bits: np.ndarray  # (n,) uint8 in {0, 1}


@dataclass(frozen=True)
class RriefDescriptor:
    ranks: np.ndarray  # (n,) permutation of 0..n-1


@dataclass(frozen=True)
class DescriptorRecord:
    keypoint: Keypoint
    frame: OrientationFrame
    descriptor: SiftRankDescriptor | BriefDescriptor | RriefDescriptor


def rank_vector(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Stable ranks: 0 for the smallest value, ties broken by position."""
    v = np.asarray(values)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.int64)
    ranks[order] = np.arange(len(v))
    return ranks


@lru_cache(maxsize=32)
def _patch_grid(side: int) -> np.ndarray:
    """Normalized offsets in [-1, 1]^3 for a side^3 sample grid."""
    coords = np.linspace(-1.0, 1.0, side) if side > 1 else np.zeros(1)
    gx, gy, gz = np.meshgrid(coords, coords, coords, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    grid.setflags(write=False)
    return grid


def extract_patch(pyr: GaussianPyramid, kp: Keypoint, frame: OrientationFrame, side: int = 15) -> Patch:
    """Sample side^3 points spanning [-2*sigma, 2*sigma] along the frame axes.

    Points come from the unblurred source volume in base coordinates: the
    patch carries the raw signal (and its noise), which the configurable
    pre-blur then trades off.
    """
    if side < 1 or side % 2 == 0:
        raise ParameterError(f"patch side must be odd and >= 1, got {side}")
    if pyr.source is None:
        raise ParameterError("pyramid carries no source volume for patch extraction")
    center = np.asarray(kp.position, dtype=np.float64)
    offsets = _patch_grid(side) * (PAIR_SUPPORT_RADIUS * kp.sigma)
    points = center[None, :] + offsets @ frame.rotation.T
    values = sample_trilinear_array(pyr.source.data, points).astype(np.float32)
    return Patch(side, values.reshape(side, side, side))


def _redraw_outside(rng: np.random.Generator, draw, radius: float) -> np.ndarray:
    pts = draw()
    while True:
        bad = np.linalg.norm(pts, axis=1) > radius
        if not bad.any():
            return pts
        pts[bad] = draw()[bad]


@lru_cache(maxsize=1)
def _octahedron_directions() -> np.ndarray:
    """18 unit directions: octahedron vertices plus normalized edge midpoints."""
    verts = []
    for axis in range(3):
        for s in (1.0, -1.0):
            v = [0.0, 0.0, 0.0]
            v[axis] = s
            verts.append(v)
    mids = []
    for i in range(3):
        for j in range(i + 1, 3):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    v = [0.0, 0.0, 0.0]
                    v[i], v[j] = si, sj
                    mids.append([c / math.sqrt(2.0) for c in v])
    dirs = np.array(verts + mids)
    dirs.setflags(write=False)
    return dirs


def sample_point_pairs(method: int, n: int, sigma_unit: float = 1.0, seed: int = 0) -> PointPairSet:
    """Draw n 3D point pairs by one of five strategies (deterministic per seed).

    1: both uniform in the ball of radius 2*sigma_unit.
    2: both isotropic normal N(0, sigma_unit).
    3: p1 ~ N(0, sigma_unit), p2 ~ N(p1, sigma_unit).
    4: p1 at the origin, p2 ~ N(0, sigma_unit).
    5: p1 at the origin, p2 on a regular spherical grid.
    Normal draws falling outside the support ball are redrawn.
    """
    if method not in (1, 2, 3, 4, 5):
        raise ParameterError(f"point-pair method must be 1..5, got {method}")
    if n < 1:
        raise ParameterError(f"pair count must be >= 1, got {n}")
    if sigma_unit <= 0:
        raise ParameterError(f"sigma_unit must be > 0, got {sigma_unit}")
    rng = np.random.default_rng(seed)
    radius = PAIR_SUPPORT_RADIUS * sigma_unit
    zeros = np.zeros((n, 3))

    def uniform_ball() -> np.ndarray:
        def draw():
            return rng.uniform(-radius, radius, size=(n, 3))

        return _redraw_outside(rng, draw, radius)

    def normal(center: np.ndarray) -> np.ndarray:
        def draw():
            return center + rng.normal(0.0, sigma_unit, size=(n, 3))

        return _redraw_outside(rng, draw, radius)

    if method == 1:
        p1, p2 = uniform_ball(), uniform_ball()
    elif method == 2:
        p1, p2 = normal(zeros), normal(zeros)
    elif method == 3:
        p1 = normal(zeros)
        p2 = normal(p1)
    elif method == 4:
        p1, p2 = zeros, normal(zeros)
    else:
        radii = np.array([0.5, 1.0, 1.5, 2.0]) * sigma_unit
        grid = np.array([r * d for r in radii for d in _octahedron_directions()])
        idx = np.arange(n) % len(grid)
        p1, p2 = zeros, grid[idx]
    p1.setflags(write=False)
    p2.setflags(write=False)
    return PointPairSet(method, n, float(sigma_unit), int(seed), p1, p2)


def preblur_patch(p: Patch, blur_sigma: float) -> Patch:
    """Separable Gaussian blur in patch-sample units; 0 means no smoothing."""
    if blur_sigma < 0:
        raise ParameterError(f"blur_sigma must be >= 0, got {blur_sigma}")
    if blur_sigma == 0:
        return p
    return Patch(p.side, convolve_array(p.data, gaussian_kernel(blur_sigma)))


def _pair_samples(patch: Patch, pairs: PointPairSet) -> tuple[np.ndarray, np.ndarray]:
    # Offsets are sigma-normalized; the patch spans [-2, 2] sigma-units, so the
    # continuous sample index is center + offset * (side-1)/4.
    center = (patch.side - 1) / 2.0
    scale = (patch.side - 1) / (2.0 * PAIR_SUPPORT_RADIUS) / pairs.sigma_unit
    s1 = sample_trilinear_array(patch.data, center + pairs.p1 * scale)
    s2 = sample_trilinear_array(patch.data, center + pairs.p2 * scale)
    return s1, s2


def brief_descriptor(p: Patch, pairs: PointPairSet) -> BriefDescriptor:
    """Bit k is 1 exactly when sample(p1_k) - sample(p2_k) > 0 (ties give 0)."""
    s1, s2 = _pair_samples(p, pairs)
    return BriefDescriptor((s1 - s2 > 0).astype(np.uint8))


def rrief_descriptor(p: Patch, pairs: PointPairSet) -> RriefDescriptor:
    """Rank-ordered point-pair differences (0 = most negative, stable ties)."""
    s1, s2 = _pair_samples(p, pairs)
    return RriefDescriptor(rank_vector(s1 - s2))


def sift_rank_descriptor(
    pyr: GaussianPyramid,
    kp: Keypoint,
    frame: OrientationFrame,
    radius_factor: float = 4.0,
) -> SiftRankDescriptor:
    """Rank-normalized 64-bin gradient histogram over the reoriented neighborhood.

    Lattice voxels within radius_factor*sigma vote their gradient magnitude
    into a spatial sign-octant (of the reoriented offset) crossed with an
    orientation sign-octant (of the reoriented gradient).
    """
    center, sigma_local, data = keypoint_local(pyr, kp)
    offsets = _ball_offsets(int(round(radius_factor * sigma_local * 1024)))
    voxels = center[None, :] + offsets
    dims = np.array(data.shape)
    inside = np.all((voxels >= 0) & (voxels < dims[None, :]), axis=1)
    bins = np.zeros(SIFT_RANK_LENGTH, dtype=np.float64)
    if inside.any():
        voxels = voxels[inside]
        offs = offsets[inside].astype(np.float64)
        grads = gradients_at(data, voxels)
        rot_offs = offs @ frame.rotation  # R^T applied row-wise
        rot_grads = grads @ frame.rotation
        spatial = (
            (rot_offs[:, 0] > 0).astype(np.int64)
            + 2 * (rot_offs[:, 1] > 0).astype(np.int64)
            + 4 * (rot_offs[:, 2] > 0).astype(np.int64)
        )
        orient = (
            (rot_grads[:, 0] > 0).astype(np.int64)
            + 2 * (rot_grads[:, 1] > 0).astype(np.int64)
            + 4 * (rot_grads[:, 2] > 0).astype(np.int64)
        )
        mags = np.linalg.norm(rot_grads, axis=1)
        np.add.at(bins, spatial * 8 + orient, mags)
    return SiftRankDescriptor(rank_vector(bins))


def describe_all(
    pyr: GaussianPyramid,
    oriented: Sequence[tuple[Keypoint, OrientationFrame]],
    kind: Kind = "siftrank",
    pairs: PointPairSet | None = None,
    patch_side: int = 15,
    blur_sigma: float = 0.95,
    radius_factor: float = 4.0,
    workers: int = 1,
) -> tuple[list[DescriptorRecord], int]:
    """Descriptors for every (keypoint, frame) pair, in input order.

    Per-pair failures are dropped and counted rather than aborting the batch.
    """
    if kind not in KINDS:
        raise ParameterError(f"unknown descriptor kind {kind!r}")
    if kind != "siftrank" and pairs is None:
        raise ParameterError(f"descriptor kind {kind!r} needs a PointPairSet")

    results: list[DescriptorRecord | None] = [None] * len(oriented)
    failures = [0] * max(len(oriented), 1)

    def run(start: int, stop: int) -> None:
        for i in range(start, stop):
            kp, frame = oriented[i]
            try:
                if kind == "siftrank":
                    desc = sift_rank_descriptor(pyr, kp, frame, radius_factor)
                else:
                    patch = preblur_patch(extract_patch(pyr, kp, frame, patch_side), blur_sigma)
                    desc = brief_descriptor(patch, pairs) if kind == "brief" else rrief_descriptor(patch, pairs)
                results[i] = DescriptorRecord(kp, frame, desc)
            except ParameterError:
                raise
            except Exception:
                failures[i] = 1

    if oriented:
        run_ranges(len(oriented), run, workers)
    records = [r for r in results if r is not None]
    return records, sum(failures)


def descriptor_array(records: Sequence[DescriptorRecord], kind: Kind) -> np.ndarray:
    """Stack descriptors for matching: packed bits for brief, int ranks otherwise."""
    if not records:
        return np.zeros((0, 0), dtype=np.uint8 if kind == "brief" else np.int64)
    if kind == "brief":
        bits = np.stack([r.descriptor.bits for r in records])
        return np.packbits(bits, axis=1, bitorder="big")
    return np.stack([r.descriptor.ranks for r in records])


def pack_bits(bits: np.ndarray) -> bytes:
    """Pack 0/1 bits MSB-first into bytes (n=64 -> 8 bytes)."""
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="big").tobytes()


def unpack_bits(blob: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(blob, dtype=np.uint8), bitorder="big")[:n]


def pack_ranks(ranks: np.ndarray, bits_per_rank: int = 6) -> bytes:
    """Pack small non-negative ints at ``bits_per_rank`` bits each (64 ranks -> 48 bytes)."""
    r = np.asarray(ranks, dtype=np.int64)
    if r.min() < 0 or r.max() >= (1 << bits_per_rank):
        raise ParameterError(f"ranks out of range for {bits_per_rank}-bit packing")
    bitstream = ((r[:, None] >> np.arange(bits_per_rank - 1, -1, -1)[None, :]) & 1).ravel()
    return np.packbits(bitstream.astype(np.uint8), bitorder="big").tobytes()


def unpack_ranks(blob: bytes, n: int, bits_per_rank: int = 6) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), bitorder="big")[: n * bits_per_rank]
    groups = bits.reshape(n, bits_per_rank).astype(np.int64)
    return (groups << np.arange(bits_per_rank - 1, -1, -1)[None, :]).sum(axis=1)
