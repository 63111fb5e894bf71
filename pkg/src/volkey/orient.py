"""Keypoint orientation assignment from spherical gradient histograms.

Scale-space gradients around a keypoint are binned to the nearest member of a
fixed direction set (a subdivided icosahedron, 42 directions); dominant bins
become right-handed rotation frames, possibly several per keypoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .detect import Keypoint
from .errors import DataError, ParameterError
from .scalespace import GaussianPyramid
from .volume import gradients_at


@dataclass(frozen=True)
class SphericalHistogram:
    directions: np.ndarray  # (K, 3) unit vectors
    weights: np.ndarray  # (K,) non-negative


@dataclass(frozen=True)
class OrientationFrame:
    rotation: np.ndarray  # (3, 3) orthonormal, det +1; columns are the frame axes


@lru_cache(maxsize=1)
def icosphere_directions() -> np.ndarray:
    """42 unit directions: icosahedron vertices plus normalized edge midpoints."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = []
    for a in (-1.0, 1.0):
        for b in (-phi, phi):
            verts.append((0.0, a, b))
            verts.append((a, b, 0.0))
            verts.append((b, 0.0, a))
    v = np.array(verts, dtype=np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)

    # Icosahedron edges connect vertex pairs at the minimal nonzero distance.
    d2 = np.sum((v[:, None, :] - v[None, :, :]) ** 2, axis=2)
    edge_d2 = np.min(d2[d2 > 1e-9])
    mids = []
    for i in range(len(v)):
        for j in range(i + 1, len(v)):
            if abs(d2[i, j] - edge_d2) < 1e-9:
                m = v[i] + v[j]
                mids.append(m / np.linalg.norm(m))
    dirs = np.vstack([v, np.array(mids)])
    order = np.lexsort((dirs[:, 2].round(9), dirs[:, 1].round(9), dirs[:, 0].round(9)))
    dirs = dirs[order]
    dirs.setflags(write=False)
    return dirs


@lru_cache(maxsize=64)
def _ball_offsets(radius_q: int) -> np.ndarray:
    """Integer offsets within Euclidean distance radius_q/1024 of the origin."""
    radius = radius_q / 1024.0
    r = int(math.floor(radius))
    ax = np.arange(-r, r + 1)
    gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
    offsets = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    keep = np.sum(offsets * offsets, axis=1) <= radius * radius
    out = offsets[keep].astype(np.intp)
    out.setflags(write=False)
    return out


def keypoint_local(pyr: GaussianPyramid, kp: Keypoint) -> tuple[np.ndarray, float, np.ndarray]:
    """(lattice center, local sigma, level data) of a keypoint in its own octave."""
    if not (0 <= kp.octave < len(pyr.octaves)):
        raise ParameterError(f"keypoint octave {kp.octave} outside pyramid")
    octave = pyr.octaves[kp.octave]
    if not (0 <= kp.level < len(octave.levels)):
        raise ParameterError(f"keypoint level {kp.level} outside octave {kp.octave}")
    scale = 2.0**kp.octave
    offset = (scale - 1.0) / 2.0  # voxel-center shift introduced by block-mean sub-sampling
    center = np.array([round((c - offset) / scale) for c in kp.position], dtype=np.intp)
    return center, kp.sigma / scale, octave.levels[kp.level].data


def gradient_histogram(
    pyr: GaussianPyramid,
    kp: Keypoint,
    radius_factor: float = 4.0,
    directions: np.ndarray | None = None,
) -> SphericalHistogram:
    """Bin gradient vectors within radius_factor*sigma of the keypoint.

    Each voxel votes its gradient magnitude, attenuated by a Gaussian window of
    stdev radius_factor*sigma/2, into the nearest direction.
    """
    if radius_factor <= 0:
        raise ParameterError(f"radius_factor must be > 0, got {radius_factor}")
    dirs = icosphere_directions() if directions is None else np.asarray(directions, dtype=np.float64)
    center, sigma_local, data = keypoint_local(pyr, kp)
    radius = radius_factor * sigma_local
    offsets = _ball_offsets(int(round(radius * 1024)))
    voxels = center[None, :] + offsets
    dims = np.array(data.shape)
    inside = np.all((voxels >= 0) & (voxels < dims[None, :]), axis=1)
    if not inside.any():
        raise DataError("orientation neighborhood lies entirely outside the volume")
    voxels = voxels[inside]
    offs = offsets[inside].astype(np.float64)

    grads = gradients_at(data, voxels)
    mags = np.linalg.norm(grads, axis=1)
    window_sd = radius / 2.0
    window = np.exp(-np.sum(offs * offs, axis=1) / (2.0 * window_sd * window_sd))
    votes = mags * window

    weights = np.zeros(len(dirs), dtype=np.float64)
    nonzero = mags > 0
    if nonzero.any():
        nearest = np.argmax(grads[nonzero] @ dirs.T, axis=1)
        np.add.at(weights, nearest, votes[nonzero])
    return SphericalHistogram(dirs, weights)


def dominant_orientations(
    h: SphericalHistogram,
    secondary_ratio: float = 0.8,
    max_frames: int = 4,
) -> list[OrientationFrame]:
    """Frames for every direction whose weight reaches secondary_ratio * max.

    The frame's first axis is the spawning direction; the second is the
    highest-weight direction projected orthogonal to it; the third completes a
    right-handed basis. Frames come out ordered by weight (ties by bin index).
    """
    if not 0 < secondary_ratio <= 1:
        raise ParameterError(f"secondary_ratio must be in (0, 1], got {secondary_ratio}")
    if max_frames < 1:
        raise ParameterError(f"max_frames must be >= 1, got {max_frames}")
    weights = np.asarray(h.weights, dtype=np.float64)
    wmax = weights.max() if len(weights) else 0.0
    if wmax <= 0:
        return []
    by_weight = sorted(range(len(weights)), key=lambda i: (-weights[i], i))
    primaries = [i for i in by_weight if weights[i] >= secondary_ratio * wmax][:max_frames]

    frames = []
    for pi in primaries:
        axis1 = h.directions[pi]
        axis2 = None
        for si in by_weight:
            if si == pi:
                continue
            proj = h.directions[si] - np.dot(h.directions[si], axis1) * axis1
            norm = np.linalg.norm(proj)
            if norm > 1e-6:
                axis2 = proj / norm
                break
        if axis2 is None:
            continue
        axis3 = np.cross(axis1, axis2)
        rotation = np.column_stack([axis1, axis2, axis3])
        rotation.setflags(write=False)
        frames.append(OrientationFrame(rotation))
    return frames
