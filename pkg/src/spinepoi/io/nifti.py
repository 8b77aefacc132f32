"""Minimal NIfTI-1 single-file reader/writer for integer label volumes.

Only what a label map needs: both endiannesses, optional gzip, the
sform > qform > pixdim-diagonal affine precedence, and strict rejection of
anything that is not integer-valued. The world convention of NIfTI is RAS.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from ..errors import NotALabelMap, ParseError
from ..grid import AffineFrame, Convention, LabelVolume
from ..labels import LabelDictionary, default_dictionary

__all__ = ["read_label_volume", "write_label_volume", "compose_instance_volume"]

_HDR_SIZE = 348

# field -> (byte offset, struct format)
_OFF_DIM = 40
_OFF_DATATYPE = 70
_OFF_BITPIX = 72
_OFF_PIXDIM = 76
_OFF_VOX_OFFSET = 108
_OFF_SCL_SLOPE = 112
_OFF_SCL_INTER = 116
_OFF_QFORM_CODE = 252
_OFF_SFORM_CODE = 254
_OFF_QUATERN = 256
_OFF_QOFFSET = 268
_OFF_SROW = 280
_OFF_MAGIC = 344

_DTYPES = {
    2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64,
    256: np.int8, 512: np.uint16, 768: np.uint32, 1024: np.int64, 1280: np.uint64,
}
_BITPIX = {2: 8, 4: 16, 8: 32, 16: 32, 64: 64, 256: 8, 512: 16, 768: 32,
           1024: 64, 1280: 64}


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _quaternion_affine(hdr: bytes, endian: str) -> np.ndarray:
    b, c, d = struct.unpack_from(endian + "3f", hdr, _OFF_QUATERN)
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a2, 0.0))
    rot = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ])
    pixdim = struct.unpack_from(endian + "8f", hdr, _OFF_PIXDIM)
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    scale = np.array(pixdim[1:4], dtype=float)
    rot = rot * scale
    rot[:, 2] *= qfac
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = struct.unpack_from(endian + "3f", hdr, _OFF_QOFFSET)
    return m


def read_label_volume(path) -> LabelVolume:
    """Read a NIfTI-1 (.nii / .nii.gz) integer label volume in RAS world."""
    path = Path(path)
    with _open_maybe_gzip(path) as fh:
        hdr = fh.read(_HDR_SIZE)
        if len(hdr) < _HDR_SIZE:
            raise ParseError(f"{path}: truncated header ({len(hdr)} bytes)", byte_offset=0)
        endian = "<"
        (sizeof_hdr,) = struct.unpack_from("<i", hdr, 0)
        if sizeof_hdr != _HDR_SIZE:
            (sizeof_hdr,) = struct.unpack_from(">i", hdr, 0)
            if sizeof_hdr != _HDR_SIZE:
                raise ParseError(f"{path}: sizeof_hdr is not 348", byte_offset=0)
            endian = ">"
        magic = hdr[_OFF_MAGIC:_OFF_MAGIC + 4]
        if magic == b"ni1\x00":
            raise ParseError(f"{path}: two-file NIfTI (.hdr/.img) is unsupported",
                             byte_offset=_OFF_MAGIC)
        if magic != b"n+1\x00":
            raise ParseError(f"{path}: bad magic {magic!r}", byte_offset=_OFF_MAGIC)

        dim = struct.unpack_from(endian + "8h", hdr, _OFF_DIM)
        ndim = dim[0]
        if not 1 <= ndim <= 7:
            raise ParseError(f"{path}: dim[0]={ndim} out of range", byte_offset=_OFF_DIM)
        if ndim < 3:
            raise ParseError(f"{path}: volume must have 3 spatial dims", byte_offset=_OFF_DIM)
        shape = tuple(max(int(dim[i]), 1) for i in range(1, 4))
        if any(int(dim[i]) > 1 for i in range(4, ndim + 1)):
            raise NotALabelMap(f"{path}: non-singleton dimension beyond the "
                               "three spatial ones")
        if min(shape) < 1:
            raise ParseError(f"{path}: non-positive spatial dim {shape}",
                             byte_offset=_OFF_DIM)

        (datatype,) = struct.unpack_from(endian + "h", hdr, _OFF_DATATYPE)
        np_dtype = _DTYPES.get(datatype)
        if np_dtype is None:
            raise NotALabelMap(f"{path}: datatype code {datatype} is not a "
                               "numeric scalar type")

        slope, inter = struct.unpack_from(endian + "2f", hdr, _OFF_SCL_SLOPE)
        if slope not in (0.0, 1.0) or inter != 0.0:
            raise NotALabelMap(f"{path}: scaled data (slope={slope}, inter={inter}) "
                               "cannot be a label map")

        (vox_offset,) = struct.unpack_from(endian + "f", hdr, _OFF_VOX_OFFSET)
        vox_offset = int(vox_offset) if vox_offset else _HDR_SIZE + 4
        if vox_offset < _HDR_SIZE:
            raise ParseError(f"{path}: vox_offset {vox_offset} below header size",
                             byte_offset=_OFF_VOX_OFFSET)

        qform_code, sform_code = struct.unpack_from(endian + "2h", hdr, _OFF_QFORM_CODE)
        if sform_code > 0:
            m = np.eye(4)
            m[0] = struct.unpack_from(endian + "4f", hdr, _OFF_SROW)
            m[1] = struct.unpack_from(endian + "4f", hdr, _OFF_SROW + 16)
            m[2] = struct.unpack_from(endian + "4f", hdr, _OFF_SROW + 32)
        elif qform_code > 0:
            m = _quaternion_affine(hdr, endian)
        else:
            pixdim = struct.unpack_from(endian + "8f", hdr, _OFF_PIXDIM)
            m = np.eye(4)
            m[:3, :3] = np.diag([abs(p) or 1.0 for p in pixdim[1:4]])

        fh.read(vox_offset - _HDR_SIZE)
        count = int(np.prod(shape))
        raw = fh.read(count * np.dtype(np_dtype).itemsize)
        if len(raw) < count * np.dtype(np_dtype).itemsize:
            raise ParseError(f"{path}: payload shorter than dim product",
                             byte_offset=vox_offset)
        data = np.frombuffer(raw, dtype=np_dtype)
        if endian == ">":
            data = data.byteswap().view(data.dtype.newbyteorder("="))
        data = data.reshape(shape, order="F")

    if np.issubdtype(data.dtype, np.floating):
        rounded = np.rint(data)
        if not np.array_equal(rounded, data):
            raise NotALabelMap(f"{path}: floating-point payload with non-integral values")
        data = rounded
    if data.min() < 0:
        raise NotALabelMap(f"{path}: negative values cannot be labels")
    out_dtype = np.uint16 if data.max() <= np.iinfo(np.uint16).max else np.uint32
    labels = np.ascontiguousarray(data.astype(out_dtype))

    frame = AffineFrame(m, Convention.RAS)
    return LabelVolume(labels=labels, frame=frame)


def write_label_volume(vol: LabelVolume, path) -> None:
    """Write a label volume as single-file NIfTI-1 (gzip when path ends .gz).

    gzip streams carry mtime 0 so identical volumes produce identical bytes.
    """
    path = Path(path)
    labels = vol.labels
    if labels.max() <= np.iinfo(np.uint16).max:
        datatype, data = 512, labels.astype(np.uint16)
    else:
        datatype, data = 768, labels.astype(np.uint32)

    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, _OFF_DIM, 3, *labels.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, _OFF_DATATYPE, datatype)
    struct.pack_into("<h", hdr, _OFF_BITPIX, _BITPIX[datatype])
    spacing = vol.frame.spacing
    struct.pack_into("<8f", hdr, _OFF_PIXDIM, 1.0, *spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, _OFF_VOX_OFFSET, float(_HDR_SIZE + 4))
    struct.pack_into("<2f", hdr, _OFF_SCL_SLOPE, 1.0, 0.0)
    struct.pack_into("<2h", hdr, _OFF_QFORM_CODE, 0, 1)
    m = vol.frame.matrix
    struct.pack_into("<4f", hdr, _OFF_SROW, *m[0])
    struct.pack_into("<4f", hdr, _OFF_SROW + 16, *m[1])
    struct.pack_into("<4f", hdr, _OFF_SROW + 32, *m[2])
    hdr[_OFF_MAGIC:_OFF_MAGIC + 4] = b"n+1\x00"

    payload = bytes(hdr) + b"\x00\x00\x00\x00" + data.tobytes(order="F")
    if path.suffix == ".gz":
        with open(path, "wb") as raw:
            with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
                fh.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)


def compose_instance_volume(subregions: LabelVolume, instances: LabelVolume,
                            dictionary: LabelDictionary | None = None) -> LabelVolume:
    """Merge a shared-subregion-code volume with a per-vertebra instance map
    into one block-coded volume (code = instance * stride + subregion)."""
    dictionary = dictionary or default_dictionary()
    if subregions.labels.shape != instances.labels.shape:
        raise NotALabelMap("subregion and instance volumes have different shapes")
    if not np.allclose(subregions.frame.matrix, instances.frame.matrix, atol=1e-6):
        raise NotALabelMap("subregion and instance volumes have different affines")
    stride = dictionary.block_stride
    known = np.isin(subregions.labels,
                    np.array(sorted(dictionary.subregion_codes.values()),
                             dtype=subregions.labels.dtype))
    both = known & (instances.labels > 0)
    merged = np.zeros(subregions.labels.shape, dtype=np.uint32)
    merged[both] = (instances.labels[both].astype(np.uint32) * stride
                    + subregions.labels[both].astype(np.uint32))
    if merged.max() <= np.iinfo(np.uint16).max:
        merged = merged.astype(np.uint16)
    return LabelVolume(labels=merged, frame=subregions.frame)
