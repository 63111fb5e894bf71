"""Dense 3D scalar volumes: file I/O, interpolation, and finite-difference gradients.

A :class:`Volume` stores intensities as a float32 array indexed ``data[x, y, z]``.
On disk (raw ``.f32`` files and NIfTI) the voxel sequence is x-fastest, i.e.
element ``i`` corresponds to ``x + nx * (y + ny * z)``.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, InputOutputError

Triple = tuple[float, float, float]
Dims = tuple[int, int, int]


@dataclass(frozen=True)
class Volume:
    """Immutable dense 3D scalar grid with voxel spacing metadata (mm per voxel)."""

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise FormatError(f"volume data must be 3D, got {arr.ndim}D")
        if min(arr.shape) < 1:
            raise FormatError(f"all dims must be >= 1, got {arr.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise FormatError(f"spacing components must be > 0, got {self.spacing}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> Dims:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class VoxelIndex:
    x: int
    y: int
    z: int

    def within(self, dims: Dims) -> bool:
        return 0 <= self.x < dims[0] and 0 <= self.y < dims[1] and 0 <= self.z < dims[2]


def _check_finite(arr: np.ndarray, source: str) -> None:
    if not np.isfinite(arr).all():
        raise DataError(f"{source}: non-finite voxel values")


def _from_x_fastest(flat: np.ndarray, dims: Dims) -> np.ndarray:
    nx, ny, nz = dims
    return np.ascontiguousarray(flat.reshape(nz, ny, nx).transpose(2, 1, 0))


def _to_x_fastest(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr.transpose(2, 1, 0)).ravel()


def load_raw(path: str | os.PathLike, dims: Dims, spacing: Triple = (1.0, 1.0, 1.0)) -> Volume:
    """Load little-endian float32 voxels (x-fastest) from a headerless ``.f32`` file."""
    nx, ny, nz = (int(d) for d in dims)
    expected = nx * ny * nz * 4
    try:
        size = os.path.getsize(path)
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc}") from exc
    if size != expected:
        raise FormatError(f"{path}: file is {size} bytes, dims {dims} require {expected}")
    flat = np.frombuffer(buf, dtype="<f4")
    _check_finite(flat, str(path))
    return Volume(_from_x_fastest(flat, (nx, ny, nz)), spacing)


def save_raw(volume: Volume, path: str | os.PathLike) -> tuple[str, str]:
    """Write ``<name>.f32`` plus a ``<name>.hdr.txt`` sidecar; returns both paths."""
    base = str(path)
    if base.endswith(".f32"):
        base = base[: -len(".f32")]
    data_path = base + ".f32"
    hdr_path = base + ".hdr.txt"
    try:
        with open(data_path, "wb") as fh:
            fh.write(_to_x_fastest(volume.data).astype("<f4").tobytes())
        with open(hdr_path, "w") as fh:
            fh.write("dims: %d %d %d\n" % volume.dims)
            fh.write("spacing: %.9g %.9g %.9g\n" % volume.spacing)
    except OSError as exc:
        raise InputOutputError(f"cannot write {data_path}: {exc}") from exc
    return data_path, hdr_path


def read_raw_header(path: str | os.PathLike) -> tuple[Dims, Triple]:
    """Parse a ``.hdr.txt`` sidecar into (dims, spacing)."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc}") from exc
    fields: dict[str, list[str]] = {}
    for line in lines:
        if ":" in line:
            key, _, rest = line.partition(":")
            fields[key.strip()] = rest.split()
    try:
        dims = tuple(int(v) for v in fields["dims"])
        spacing = tuple(float(v) for v in fields["spacing"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed raw header") from exc
    if len(dims) != 3 or len(spacing) != 3:
        raise FormatError(f"{path}: expected 3 dims and 3 spacing values")
    return dims, spacing  # type: ignore[return-value]


# NIfTI-1 datatype codes accepted by load_nifti_subset.
_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}


def load_nifti_subset(path: str | os.PathLike) -> Volume:
    """Load a single-frame 3D NIfTI-1 volume (uint8/int16/float32, optional gzip).

    Honors dim, datatype, pixdim, scl_slope/scl_inter and vox_offset; every
    other header field is ignored.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 352:
        raise FormatError(f"{path}: too short for a NIfTI-1 header")

    for order in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(order + "i", raw, 0)
        if sizeof_hdr == 348:
            break
    else:
        raise FormatError(f"{path}: sizeof_hdr is not 348 in either byte order")

    magic = raw[344:348]
    if magic[:3] == b"ni1":
        raise FormatError(f"{path}: detached .hdr/.img NIfTI pairs are not supported")
    if magic[:3] != b"n+1":
        raise FormatError(f"{path}: bad NIfTI magic {magic!r}")

    dim = struct.unpack_from(order + "8h", raw, 40)
    datatype, _bitpix = struct.unpack_from(order + "2h", raw, 70)
    pixdim = struct.unpack_from(order + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(order + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(order + "2f", raw, 112)

    ndim = dim[0]
    if ndim < 3 or any(d > 1 for d in dim[4 : ndim + 1]):
        raise FormatError(f"{path}: expected a single 3D frame, got dim={dim[: ndim + 1]}")
    if datatype not in _NIFTI_DTYPES:
        raise FormatError(f"{path}: unsupported NIfTI datatype code {datatype}")

    nx, ny, nz = (max(int(d), 1) for d in dim[1:4])
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(order)
    count = nx * ny * nz
    offset = int(vox_offset)
    if offset < 348 or len(raw) < offset + count * dtype.itemsize:
        raise FormatError(f"{path}: data section truncated")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).astype(np.float32)
    if scl_slope != 0.0 and (scl_slope != 1.0 or scl_inter != 0.0):
        flat = flat * scl_slope + scl_inter
    _check_finite(flat, str(path))
    spacing = tuple(float(p) if p > 0 else 1.0 for p in pixdim[1:4])
    return Volume(_from_x_fastest(flat, (nx, ny, nz)), spacing)  # type: ignore[arg-type]


def load_volume(path: str | os.PathLike, dims: Dims | None = None, spacing: Triple | None = None) -> Volume:
    """Dispatch on extension: ``.nii``/``.nii.gz`` or ``.f32`` (with sidecar header)."""
    name = str(path)
    if name.endswith((".nii", ".nii.gz")):
        return load_nifti_subset(path)
    if name.endswith(".f32"):
        if dims is None:
            hdr = name[: -len(".f32")] + ".hdr.txt"
            dims, hdr_spacing = read_raw_header(hdr)
            spacing = spacing or hdr_spacing
        return load_raw(path, dims, spacing or (1.0, 1.0, 1.0))
    raise FormatError(f"{name}: unrecognized volume format (expected .f32, .nii or .nii.gz)")


def sample_trilinear_array(data: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of ``data`` at continuous points (N, 3) in index units.

    Out-of-bounds coordinates clamp to the nearest border voxel.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    hi = np.array(data.shape, dtype=np.float64) - 1.0
    p = np.clip(pts, 0.0, hi)
    p0 = np.floor(p).astype(np.intp)
    p0 = np.minimum(p0, np.maximum(np.array(data.shape) - 2, 0))
    f = p - p0
    x0, y0, z0 = p0[:, 0], p0[:, 1], p0[:, 2]
    x1 = np.minimum(x0 + 1, data.shape[0] - 1)
    y1 = np.minimum(y0 + 1, data.shape[1] - 1)
    z1 = np.minimum(z0 + 1, data.shape[2] - 1)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    c000 = data[x0, y0, z0]
    c100 = data[x1, y0, z0]
    c010 = data[x0, y1, z0]
    c110 = data[x1, y1, z0]
    c001 = data[x0, y0, z1]
    c101 = data[x1, y0, z1]
    c011 = data[x0, y1, z1]
    c111 = data[x1, y1, z1]
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    out = c0 * (1 - fz) + c1 * fz
    return out[0] if single else out


def trilinear_sample(volume: Volume, point) -> float:
    """Interpolate one continuous point (voxel units); clamps outside the grid."""
    return float(sample_trilinear_array(volume.data, np.asarray(point, dtype=np.float64)))


def gradients_at(data: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Finite-difference gradients at integer voxel indices (N, 3).

    Central differences in the interior, one-sided at borders; units are
    intensity per voxel.
    """
    idx = np.atleast_2d(np.asarray(indices, dtype=np.intp))
    grads = np.empty((len(idx), 3), dtype=np.float64)
    for axis in range(3):
        n = data.shape[axis]
        hi = np.minimum(idx[:, axis] + 1, n - 1)
        lo = np.maximum(idx[:, axis] - 1, 0)
        denom = np.maximum(hi - lo, 1).astype(np.float64)
        up = idx.copy()
        up[:, axis] = hi
        dn = idx.copy()
        dn[:, axis] = lo
        vals_up = data[up[:, 0], up[:, 1], up[:, 2]].astype(np.float64)
        vals_dn = data[dn[:, 0], dn[:, 1], dn[:, 2]].astype(np.float64)
        grads[:, axis] = (vals_up - vals_dn) / denom
    return grads


def central_gradient(volume: Volume, idx: VoxelIndex) -> np.ndarray:
    """Gradient vector at one voxel (central differences, one-sided at borders)."""
    return gradients_at(volume.data, np.array([[idx.x, idx.y, idx.z]]))[0]
