"""Minimal NIfTI-1 reader/writer for the pipeline's needs.

Supports single-file little-endian NIfTI-1 (.nii, .nii.gz) with uint8, int16
or float32 data. The 348-byte header is kept as an opaque blob; only dims,
datatype, pixdim, vox_offset and the scaling pair are interpreted. Header
extensions are skipped on read (vox_offset is honored) and never written.
Orientation fields pass through untouched; the pipeline is voxel-space only.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volumes import Mask3D, Volume3D

HEADER_SIZE = 348
DATA_OFFSET = 352  # header + 4-byte empty extension flag

DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16

_DTYPES = {
    DT_UINT8: (np.dtype("<u1"), 8),
    DT_INT16: (np.dtype("<i2"), 16),
    DT_FLOAT32: (np.dtype("<f4"), 32),
}
_CODE_FOR = {"uint8": DT_UINT8, "int16": DT_INT16, "float32": DT_FLOAT32}


@dataclass
class NiftiHeaderView:
    """Interpreted header fields plus the raw 348-byte blob for pass-through."""

    dims: tuple[int, int, int]
    datatype: int
    spacing: tuple[float, float, float]
    scl_slope: float
    scl_inter: float
    vox_offset: int
    raw: bytes


def _read_bytes(path: Path) -> bytes:
    blob = path.read_bytes()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def _parse_header(blob: bytes, path) -> NiftiHeaderView:
    if len(blob) < HEADER_SIZE:
        raise ValueError(f"{path}: truncated file, header shorter than {HEADER_SIZE} bytes")
    raw = blob[:HEADER_SIZE]
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        if struct.unpack_from(">i", raw, 0)[0] == HEADER_SIZE:
            raise ValueError(f"{path}: big-endian NIfTI is not supported")
        raise ValueError(f"{path}: not a NIfTI-1 file (sizeof_hdr={sizeof_hdr})")
    magic = raw[344:348]
    if magic == b"ni1\x00":
        raise ValueError(f"{path}: two-file (.hdr/.img) NIfTI is not supported")
    if magic != b"n+1\x00":
        raise ValueError(f"{path}: not a single-file NIfTI-1 (magic={magic!r})")
    dim = struct.unpack_from("<8h", raw, 40)
    if dim[0] < 3 or any(d > 1 for d in dim[4 : dim[0] + 1]):
        raise ValueError(f"{path}: only 3D single-frame volumes are supported (dim={dim})")
    dims = (int(dim[1]), int(dim[2]), int(dim[3]))
    if min(dims) < 1:
        raise ValueError(f"{path}: non-positive dimensions {dims}")
    (datatype,) = struct.unpack_from("<h", raw, 70)
    if datatype not in _DTYPES:
        raise ValueError(
            f"{path}: unsupported datatype code {datatype}; "
            f"supported: uint8 (2), int16 (4), float32 (16)"
        )
    pixdim = struct.unpack_from("<8f", raw, 76)
    spacing = tuple(float(p) if p > 0 else 1.0 for p in pixdim[1:4])
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    slope, inter = struct.unpack_from("<2f", raw, 112)
    return NiftiHeaderView(
        dims=dims,
        datatype=datatype,
        spacing=spacing,
        scl_slope=float(slope),
        scl_inter=float(inter),
        vox_offset=int(vox_offset) if vox_offset >= HEADER_SIZE else DATA_OFFSET,
        raw=raw,
    )


def _read_array(path) -> tuple[np.ndarray, NiftiHeaderView]:
    path = Path(path)
    blob = _read_bytes(path)
    view = _parse_header(blob, path)
    dtype, _ = _DTYPES[view.datatype]
    count = view.dims[0] * view.dims[1] * view.dims[2]
    end = view.vox_offset + count * dtype.itemsize
    if len(blob) < end:
        raise ValueError(f"{path}: truncated file, expected {end} bytes, got {len(blob)}")
    flat = np.frombuffer(blob, dtype=dtype, count=count, offset=view.vox_offset)
    data = flat.reshape(view.dims, order="F")
    return data, view


def read_nifti(path, expect_dims: tuple[int, int, int] | None = None) -> tuple[Volume3D, NiftiHeaderView]:
    """Read a scalar volume, applying scl_slope/scl_inter when slope is usable."""
    data, view = _read_array(path)
    if expect_dims is not None and view.dims != tuple(expect_dims):
        raise ValueError(f"{path}: dims {view.dims} do not match expected {tuple(expect_dims)}")
    values = data.astype(np.float64)
    # slope 0 and NaN both mean "no scaling stored"
    if view.scl_slope != 0.0 and not np.isnan(view.scl_slope):
        values = values * view.scl_slope + view.scl_inter
    return Volume3D(values, view.spacing), view


def read_label_volume(
    path,
    allowed_labels=(0, 1, 2, 4),
    expect_dims: tuple[int, int, int] | None = None,
) -> tuple[Volume3D, NiftiHeaderView]:
    """Read an integer label map, verifying the declared label set."""
    vol, view = read_nifti(path, expect_dims)
    if view.datatype == DT_FLOAT32 and not np.all(vol.data == np.round(vol.data)):
        raise ValueError(f"{path}: label map contains non-integer values")
    present = set(np.unique(vol.data).astype(int))
    extra = present - set(int(v) for v in allowed_labels)
    if extra:
        raise ValueError(
            f"{path}: label values {sorted(extra)} outside declared set {sorted(allowed_labels)}"
        )
    return vol, view


def read_mask(
    path,
    expect_dims: tuple[int, int, int] | None = None,
    allowed_labels=(0, 1),
) -> tuple[Mask3D, NiftiHeaderView]:
    """Read a binary mask (foreground = nonzero label)."""
    vol, view = read_label_volume(path, allowed_labels, expect_dims)
    return Mask3D(vol.data != 0, vol.spacing), view


def _build_header(
    dims: tuple[int, int, int],
    spacing: tuple[float, float, float],
    datatype: int,
    template: NiftiHeaderView | None,
) -> bytes:
    if template is not None:
        header = bytearray(template.raw)
    else:
        header = bytearray(HEADER_SIZE)
        struct.pack_into("<i", header, 0, HEADER_SIZE)
        header[38] = ord("r")  # regular
        struct.pack_into("<f", header, 76, 1.0)  # qfac
    struct.pack_into("<8h", header, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, datatype)
    struct.pack_into("<h", header, 72, _DTYPES[datatype][1])
    struct.pack_into("<3f", header, 80, *spacing)
    struct.pack_into("<f", header, 108, float(DATA_OFFSET))
    struct.pack_into("<2f", header, 112, 1.0, 0.0)  # data written unscaled
    header[344:348] = b"n+1\x00"
    return bytes(header)


def write_nifti(
    vol,
    path,
    header_template: NiftiHeaderView | None = None,
    dtype: str | None = None,
) -> None:
    """Write a volume or mask; masks and label maps go out as uint8.

    float32 round-trips losslessly. Integer dtypes require integral values in
    range. A header template must match the volume's dims; its uninterpreted
    fields are carried over verbatim.
    """
    path = Path(path)
    if header_template is not None and header_template.dims != vol.dims:
        raise ValueError(
            f"header template dims {header_template.dims} incompatible with volume {vol.dims}"
        )
    if dtype is None:
        dtype = "uint8" if isinstance(vol, Mask3D) else "float32"
    if dtype not in _CODE_FOR:
        raise ValueError(f"unsupported output dtype {dtype!r}; choose from {sorted(_CODE_FOR)}")
    code = _CODE_FOR[dtype]
    np_dtype = _DTYPES[code][0]

    if isinstance(vol, Mask3D):
        data = vol.data.astype(np_dtype)
    else:
        values = vol.data
        if code != DT_FLOAT32:
            info = np.iinfo(np_dtype)
            if not np.all(values == np.round(values)):
                raise ValueError(f"cannot write non-integer values as {dtype}")
            if values.min() < info.min or values.max() > info.max:
                raise ValueError(f"values out of range for {dtype}")
        data = values.astype(np_dtype)

    header = _build_header(vol.dims, vol.spacing, code, header_template)
    payload = header + b"\x00\x00\x00\x00" + data.tobytes(order="F")
    if path.suffix == ".gz":
        # mtime pinned so identical volumes produce identical bytes
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)
