"""Volume containers, NIfTI-1 / rawjson codecs, SUV conversion and region exclusion.

Arrays are held with shape ``(nx, ny, nz)``; on disk the payload is in
x-fastest order, i.e. ``order="F"`` when flattening.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    GeometryMismatch,
    MalformedHeader,
    NonFiniteVoxel,
    NonPositiveParams,
    RegionOutOfBounds,
    TruncatedPayload,
    UnsupportedDatatype,
)

__all__ = [
    "GridGeometry",
    "LabelVolume",
    "IntensityVolume",
    "SuvParams",
    "BoxRegion",
    "read_volume",
    "write_volume",
    "sniff_format",
    "load_label",
    "load_intensity",
    "save_volume",
    "to_suv",
    "exclude_region",
]

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352
NIFTI_MAGIC = b"n+1\0"
RAWJSON_SEP = b"\n\0"

# NIfTI datatype code -> (tag, numpy little-endian dtype, bitpix)
_NIFTI_TYPES = {
    2: ("uint8", np.dtype("<u1"), 8),
    4: ("int16", np.dtype("<i2"), 16),
    16: ("float32", np.dtype("<f4"), 32),
}
_TAG_TO_CODE = {tag: code for code, (tag, _, _) in _NIFTI_TYPES.items()}
_TAG_TO_DTYPE = {tag: dt for _, (tag, dt, _) in _NIFTI_TYPES.items()}


@dataclass(frozen=True)
class GridGeometry:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValueError("geometry needs exactly three dims and three spacings")
        if any(d < 1 for d in dims):
            raise ValueError(f"dims must be >= 1, got {dims}")
        if any(not (s > 0 and math.isfinite(s)) for s in spacing):
            raise ValueError(f"spacing must be finite and > 0, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def voxel_volume_ml(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz / 1000.0

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def check_same(self, other: GridGeometry) -> None:
        if self != other:
            raise GeometryMismatch(f"geometry mismatch: {self} vs {other}")


def _check_shape(geometry: GridGeometry, voxels: np.ndarray) -> None:
    if voxels.size != geometry.n_voxels:
        raise DimensionMismatch(f"{voxels.size} voxels for dims {geometry.dims}")
    if voxels.shape != geometry.dims:
        raise DimensionMismatch(f"array shape {voxels.shape} does not match dims {geometry.dims}")


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Binary mask on a grid. Any input value > 0.5 is foreground."""

    geometry: GridGeometry
    voxels: np.ndarray = field(repr=False)

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        vox = np.array(vox, dtype=bool) if vox.dtype == bool else vox > 0.5
        _check_shape(self.geometry, vox)
        vox.flags.writeable = False
        object.__setattr__(self, "voxels", vox)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.voxels))

    @property
    def is_empty(self) -> bool:
        return not self.voxels.any()

    @classmethod
    def empty(cls, geometry: GridGeometry) -> LabelVolume:
        return cls(geometry, np.zeros(geometry.dims, dtype=bool))


@dataclass(frozen=True, eq=False)
class IntensityVolume:
    geometry: GridGeometry
    voxels: np.ndarray = field(repr=False)

    def __post_init__(self):
        vox = np.array(self.voxels, dtype=np.float64)
        _check_shape(self.geometry, vox)
        if not np.isfinite(vox).all():
            raise NonFiniteVoxel("intensity volume contains NaN or Inf")
        vox.flags.writeable = False
        object.__setattr__(self, "voxels", vox)


@dataclass(frozen=True)
class SuvParams:
    injected_activity_mbq: float
    body_weight_g: float

    def __post_init__(self):
        if not (self.injected_activity_mbq > 0 and self.body_weight_g > 0):
            raise NonPositiveParams(
                f"injected activity and body weight must be > 0, got "
                f"{self.injected_activity_mbq}, {self.body_weight_g}"
            )


@dataclass(frozen=True)
class BoxRegion:
    """Inclusive per-axis index ranges ``((x0, x1), (y0, y1), (z0, z1))``."""

    ranges: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]

    @classmethod
    def parse(cls, text: str, dims: tuple[int, int, int] | None = None) -> BoxRegion:
        """Parse ``"x0:x1,y0:y1,z0:z1"``.

        Empty bounds mean the full axis and negative bounds count from the end
        (``z=-50:-1`` is the top 50 slices); both need ``dims``.
        """
        parts = text.split(",")
        if len(parts) != 3:
            raise ValueError(f"box needs three comma-separated ranges, got {text!r}")
        ranges = []
        for axis, part in enumerate(parts):
            lo_s, sep, hi_s = part.partition(":")
            if not sep:
                lo_s = hi_s = lo_s
            bounds = []
            for s, default in ((lo_s.strip(), 0), (hi_s.strip(), -1)):
                if s == "":
                    if dims is None:
                        raise ValueError("open-ended box ranges need the grid dims")
                    v = default
                else:
                    v = int(s)
                if v < 0:
                    if dims is None:
                        raise ValueError("negative box indices need the grid dims")
                    v += dims[axis]
                bounds.append(v)
            ranges.append(tuple(bounds))
        return cls(tuple(ranges))

    def check_within(self, geometry: GridGeometry) -> None:
        for (lo, hi), n in zip(self.ranges, geometry.dims):
            if not (0 <= lo <= hi < n):
                raise RegionOutOfBounds(f"box {self.ranges} outside dims {geometry.dims}")

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(lo, hi + 1) for lo, hi in self.ranges)


# ---------------------------------------------------------------------------
# codecs


def sniff_format(data: bytes) -> str:
    if len(data) >= NIFTI_HEADER_SIZE and data[344:348] == NIFTI_MAGIC:
        return "nifti1"
    if data[:1] == b"{":
        return "rawjson"
    raise MalformedHeader("unrecognised volume format")


def _payload_to_array(payload, dtype, dims, tag):
    n = dims[0] * dims[1] * dims[2]
    need = n * dtype.itemsize
    if len(payload) < need:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, dims imply {need}")
    arr = np.frombuffer(payload, dtype=dtype, count=n).reshape(dims, order="F")
    arr = arr.astype(dtype.newbyteorder("="))
    if tag == "float32" and not np.isfinite(arr).all():
        raise NonFiniteVoxel("float payload contains NaN or Inf")
    return arr


def _read_nifti(data: bytes):
    if len(data) < NIFTI_HEADER_SIZE:
        raise MalformedHeader(f"header needs {NIFTI_HEADER_SIZE} bytes, got {len(data)}")
    (sizeof_hdr,) = struct.unpack_from("<i", data, 0)
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        raise MalformedHeader(f"sizeof_hdr is {sizeof_hdr}, expected 348 (little-endian only)")
    if data[344:348] != NIFTI_MAGIC:
        raise MalformedHeader(f"bad magic {data[344:348]!r}")
    dim = struct.unpack_from("<8h", data, 40)
    datatype, _bitpix = struct.unpack_from("<2h", data, 70)
    pixdim = struct.unpack_from("<8f", data, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from("<3f", data, 108)
    if dim[0] != 3:
        raise MalformedHeader(f"only 3D volumes are supported, dim[0]={dim[0]}")
    dims = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in dims):
        raise MalformedHeader(f"non-positive dims {dims}")
    spacing = tuple(float(p) for p in pixdim[1:4])
    if any(not (s > 0 and math.isfinite(s)) for s in spacing):
        raise MalformedHeader(f"non-positive pixdim {spacing}")
    if datatype not in _NIFTI_TYPES:
        raise UnsupportedDatatype(f"NIfTI datatype {datatype} not supported")
    tag, dtype, _ = _NIFTI_TYPES[datatype]
    offset = int(vox_offset)
    if offset < NIFTI_HEADER_SIZE:
        raise MalformedHeader(f"vox_offset {vox_offset} inside header")
    arr = _payload_to_array(data[offset:], dtype, dims, tag)
    if scl_slope != 0 and math.isfinite(scl_slope) and (scl_slope != 1 or scl_inter != 0):
        arr = arr.astype(np.float64) * float(scl_slope) + float(scl_inter)
        if not np.isfinite(arr).all():
            raise NonFiniteVoxel("scaled values are not finite")
    return GridGeometry(dims, spacing), arr, tag


def _read_rawjson(data: bytes):
    cut = data.find(RAWJSON_SEP)
    if cut < 0:
        raise MalformedHeader("rawjson header terminator not found")
    try:
        head = json.loads(data[:cut].decode("utf-8"))
        dims = tuple(int(d) for d in head["dims"])
        spacing = tuple(float(s) for s in head["spacing_mm"])
        tag = str(head["dtype"])
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"bad rawjson header: {exc}") from None
    if tag not in _TAG_TO_DTYPE:
        raise UnsupportedDatatype(f"rawjson dtype {tag!r} not supported")
    try:
        geometry = GridGeometry(dims, spacing)
    except ValueError as exc:
        raise MalformedHeader(str(exc)) from None
    arr = _payload_to_array(data[cut + len(RAWJSON_SEP):], _TAG_TO_DTYPE[tag], dims, tag)
    return geometry, arr, tag


def read_volume(data: bytes, format: str | None = None):
    """Decode a volume. Returns ``(geometry, voxels, dtype_tag)``."""
    if not data:
        raise MalformedHeader("empty input")
    if format is None:
        format = sniff_format(data)
    if format == "nifti1":
        return _read_nifti(data)
    if format == "rawjson":
        return _read_rawjson(data)
    raise ValueError(f"unknown volume format {format!r}")


def _storage_tag(voxels: np.ndarray) -> str:
    if voxels.dtype == bool or voxels.dtype == np.uint8:
        return "uint8"
    if voxels.dtype == np.int16:
        return "int16"
    if np.issubdtype(voxels.dtype, np.floating):
        return "float32"
    if np.issubdtype(voxels.dtype, np.integer):
        if voxels.size and voxels.min() >= 0 and voxels.max() <= 255:
            return "uint8"
        if voxels.size == 0 or (voxels.min() >= -32768 and voxels.max() <= 32767):
            return "int16"
    raise UnsupportedDatatype(f"cannot store dtype {voxels.dtype}")


def _nifti_header(geometry: GridGeometry, tag: str) -> bytes:
    hdr = bytearray(NIFTI_VOX_OFFSET)
    code = _TAG_TO_CODE[tag]
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *geometry.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, code, _NIFTI_TYPES[code][2])
    struct.pack_into("<8f", hdr, 76, 1.0, *geometry.spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<3f", hdr, 108, float(NIFTI_VOX_OFFSET), 0.0, 0.0)
    hdr[123] = 2  # xyzt_units: mm
    hdr[344:348] = NIFTI_MAGIC
    return bytes(hdr)


def write_volume(geometry: GridGeometry, voxels, format: str = "nifti1") -> bytes:
    """Encode a volume. Floating data is stored as float32, masks as uint8."""
    voxels = np.asarray(voxels)
    if voxels.size != geometry.n_voxels:
        raise DimensionMismatch(f"{voxels.size} voxels for dims {geometry.dims}")
    voxels = voxels.reshape(geometry.dims, order="F") if voxels.ndim != 3 else voxels
    if voxels.shape != geometry.dims:
        raise DimensionMismatch(f"array shape {voxels.shape} does not match dims {geometry.dims}")
    # pixdim is float32 on disk, so nifti1 round trips are exact only for
    # float32-representable spacings; rawjson keeps full precision
    tag = _storage_tag(voxels)
    payload = np.asarray(voxels, dtype=_TAG_TO_DTYPE[tag]).tobytes(order="F")
    if format == "nifti1":
        return _nifti_header(geometry, tag) + payload
    if format == "rawjson":
        head = json.dumps(
            {"dims": list(geometry.dims), "spacing_mm": list(geometry.spacing), "dtype": tag},
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        return head + RAWJSON_SEP + payload
    raise ValueError(f"unknown volume format {format!r}")


def _format_for_path(path: Path) -> str:
    return "rawjson" if path.suffix in (".raw", ".rawjson", ".rj") else "nifti1"


def load_label(path) -> LabelVolume:
    geometry, arr, _ = read_volume(Path(path).read_bytes())
    return LabelVolume(geometry, arr)


def load_intensity(path) -> IntensityVolume:
    geometry, arr, _ = read_volume(Path(path).read_bytes())
    return IntensityVolume(geometry, arr)


def save_volume(path, volume: LabelVolume | IntensityVolume, format: str | None = None) -> None:
    path = Path(path)
    voxels = volume.voxels
    if isinstance(volume, IntensityVolume):
        voxels = voxels.astype(np.float32)
    path.write_bytes(write_volume(volume.geometry, voxels, format or _format_for_path(path)))


# ---------------------------------------------------------------------------
# transforms


def to_suv(raw: IntensityVolume, params: SuvParams) -> IntensityVolume:
    """Activity concentration (MBq/mL) to SUV: ``c / (A_inj / W)``."""
    if not (params.injected_activity_mbq > 0 and params.body_weight_g > 0):
        raise NonPositiveParams("SUV parameters must be > 0")
    if (raw.voxels < 0).any():
        raise ValueError("activity concentrations must be >= 0")
    return IntensityVolume(raw.geometry, raw.voxels / (params.injected_activity_mbq / params.body_weight_g))


def exclude_region(mask: LabelVolume, region: BoxRegion) -> LabelVolume:
    """Clear every voxel inside ``region``.

    Meant for prediction masks; the reference is left alone when reproducing
    region-removal ablations.
    """
    region.check_within(mask.geometry)
    out = mask.voxels.copy()
    out[region.slices()] = False
    return LabelVolume(mask.geometry, out)
