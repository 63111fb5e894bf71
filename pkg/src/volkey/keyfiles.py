"""Text file formats for keypoints and descriptors.

Keypoint files (``# volkey keypoints v1``) hold one line per keypoint:
``x y z sigma octave level dog_value sign`` with an optional orientation frame
appended as 9 row-major reals (one line per keypoint/frame pair).

Descriptor files (``# volkey descriptors v1 kind=<k> n=<n> seed=<s>``) repeat
the keypoint fields plus the frame, then the payload: 64 rank integers for
siftrank, hex-packed bits for brief, n rank integers for rrief.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from .descriptor import (
    BriefDescriptor,
    DescriptorRecord,
    RriefDescriptor,
    SiftRankDescriptor,
    pack_bits,
    unpack_bits,
)
from .detect import Keypoint
from .errors import FormatError, InputOutputError
from .orient import OrientationFrame

KEYPOINT_HEADER = "# volkey keypoints v1"
DESCRIPTOR_HEADER = "# volkey descriptors v1"


def _keypoint_fields(kp: Keypoint) -> str:
    return "%.9g %.9g %.9g %.9g %d %d %.9g %s" % (*kp.position, kp.sigma, kp.octave, kp.level, kp.dog_value, kp.sign)


def _frame_fields(frame: OrientationFrame) -> str:
    return " ".join("%.9g" % v for v in frame.rotation.reshape(9))


def _parse_keypoint(parts: Sequence[str]) -> Keypoint:
    if parts[7] not in ("peak", "valley"):
        raise FormatError(f"bad keypoint sign {parts[7]!r}")
    return Keypoint(
        position=(float(parts[0]), float(parts[1]), float(parts[2])),
        sigma=float(parts[3]),
        octave=int(parts[4]),
        level=int(parts[5]),
        dog_value=float(parts[6]),
        sign=parts[7],
    )


def _parse_frame(parts: Sequence[str]) -> OrientationFrame:
    return OrientationFrame(np.array([float(v) for v in parts], dtype=np.float64).reshape(3, 3))


def write_keypoints(
    path: str | os.PathLike,
    keypoints: Sequence[Keypoint] | None = None,
    oriented: Sequence[tuple[Keypoint, OrientationFrame]] | None = None,
) -> None:
    """Write bare keypoints, or one line per (keypoint, frame) pair."""
    try:
        with open(path, "w") as fh:
            fh.write(KEYPOINT_HEADER + "\n")
            if oriented is not None:
                for kp, frame in oriented:
                    fh.write(_keypoint_fields(kp) + " " + _frame_fields(frame) + "\n")
            else:
                for kp in keypoints or []:
                    fh.write(_keypoint_fields(kp) + "\n")
    except OSError as exc:
        raise InputOutputError(f"cannot write {path}: {exc}") from exc


def read_keypoints(path: str | os.PathLike) -> list[tuple[Keypoint, OrientationFrame | None]]:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].strip() != KEYPOINT_HEADER:
        raise FormatError(f"{path}: missing header {KEYPOINT_HEADER!r}")
    out: list[tuple[Keypoint, OrientationFrame | None]] = []
    for i, line in enumerate(lines[1:], 2):
        parts = line.split()
        if not parts:
            continue
        if len(parts) == 8:
            out.append((_parse_keypoint(parts), None))
        elif len(parts) == 17:
            out.append((_parse_keypoint(parts[:8]), _parse_frame(parts[8:])))
        else:
            raise FormatError(f"{path}:{i}: expected 8 or 17 fields, got {len(parts)}")
    return out


def _payload(record: DescriptorRecord) -> str:
    desc = record.descriptor
    if isinstance(desc, BriefDescriptor):
        return pack_bits(desc.bits).hex()
    return " ".join(str(int(r)) for r in desc.ranks)


def write_descriptors(path: str | os.PathLike, records: Sequence[DescriptorRecord], kind: str, n: int, seed: int) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(f"{DESCRIPTOR_HEADER} kind={kind} n={n} seed={seed}\n")
            for record in records:
                fh.write(
                    _keypoint_fields(record.keypoint)
                    + " "
                    + _frame_fields(record.frame)
                    + " "
                    + _payload(record)
                    + "\n"
                )
    except OSError as exc:
        raise InputOutputError(f"cannot write {path}: {exc}") from exc


def read_descriptors(path: str | os.PathLike) -> tuple[str, int, int, list[DescriptorRecord]]:
    """Returns (kind, n, seed, records)."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc}") from exc
    if not lines or not lines[0].startswith(DESCRIPTOR_HEADER):
        raise FormatError(f"{path}: missing header {DESCRIPTOR_HEADER!r}")
    meta = dict(
        part.split("=", 1) for part in lines[0][len(DESCRIPTOR_HEADER) :].split() if "=" in part
    )
    try:
        kind = meta["kind"]
        n = int(meta["n"])
        seed = int(meta["seed"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed descriptor header") from exc
    if kind not in ("siftrank", "brief", "rrief"):
        raise FormatError(f"{path}: unknown descriptor kind {kind!r}")

    records: list[DescriptorRecord] = []
    for i, line in enumerate(lines[1:], 2):
        parts = line.split()
        if not parts:
            continue
        expected = 18 if kind == "brief" else 17 + n
        if len(parts) != expected:
            raise FormatError(f"{path}:{i}: expected {expected} fields, got {len(parts)}")
        kp = _parse_keypoint(parts[:8])
        frame = _parse_frame(parts[8:17])
        if kind == "brief":
            bits = unpack_bits(bytes.fromhex(parts[17]), n)
            desc = BriefDescriptor(bits)
        else:
            ranks = np.array([int(v) for v in parts[17:]], dtype=np.int64)
            desc = SiftRankDescriptor(ranks) if kind == "siftrank" else RriefDescriptor(ranks)
        records.append(DescriptorRecord(kp, frame, desc))
    return kind, n, seed, records


def write_inlier_csv(path: str | os.PathLike, inliers) -> None:
    """CSV of inlier pairs: ``idx_a,idx_b,distance``."""
    try:
        with open(path, "w") as fh:
            fh.write("idx_a,idx_b,distance\n")
            for m in inliers:
                fh.write(f"{m.index_a},{m.index_b},{m.distance:.9g}\n")
    except OSError as exc:
        raise InputOutputError(f"cannot write {path}: {exc}") from exc
