"""Minimal NIfTI-1 single-file reader/writer.

Supported subset (documented in docs/nifti-subset.md): 3D volumes,
datatype codes {2: uint8, 4: int16, 16: float32, 64: float64}, spacing
from pixdim[1..3], either byte order on read. qform/sform orientation is
ignored; axis order is as stored (x fastest). The writer always emits
little-endian single-file ".nii" (magic "n+1\\0", vox_offset 352), with
optional gzip wrapping chosen by a ".gz" suffix. Gzip output uses mtime=0
so regenerated files are byte-identical.
"""

import gzip
import os

import numpy as np

from .exceptions import (
    BadMagicError,
    CorruptHeaderError,
    LossyWriteError,
    ShortReadError,
    UnsupportedDatatypeError,
)
from .volume import Mask, Volume

HEADER_SIZE = 348
DATA_OFFSET = 352

# full NIfTI-1 header layout; offsets are fixed by the published format
_HDR_FIELDS = [
    ("sizeof_hdr", "i4"), ("data_type", "S10"), ("db_name", "S18"),
    ("extents", "i4"), ("session_error", "i2"), ("regular", "S1"),
    ("dim_info", "u1"), ("dim", "i2", (8,)),
    ("intent_p1", "f4"), ("intent_p2", "f4"), ("intent_p3", "f4"),
    ("intent_code", "i2"), ("datatype", "i2"), ("bitpix", "i2"),
    ("slice_start", "i2"), ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"), ("scl_slope", "f4"), ("scl_inter", "f4"),
    ("slice_end", "i2"), ("slice_code", "u1"), ("xyzt_units", "u1"),
    ("cal_max", "f4"), ("cal_min", "f4"), ("slice_duration", "f4"),
    ("toffset", "f4"), ("glmax", "i4"), ("glmin", "i4"),
    ("descrip", "S80"), ("aux_file", "S24"),
    ("qform_code", "i2"), ("sform_code", "i2"),
    ("quatern_b", "f4"), ("quatern_c", "f4"), ("quatern_d", "f4"),
    ("qoffset_x", "f4"), ("qoffset_y", "f4"), ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)), ("srow_y", "f4", (4,)), ("srow_z", "f4", (4,)),
    ("intent_name", "S16"), ("magic", "S4"),
]

DTYPES = {2: np.dtype(np.uint8), 4: np.dtype(np.int16),
          16: np.dtype(np.float32), 64: np.dtype(np.float64)}
_CODES = {v: k for k, v in DTYPES.items()}
_MAGICS = (b"n+1\x00", b"ni1\x00")


def _header_dtype(byte_order="<"):
    dt = np.dtype(_HDR_FIELDS)
    assert dt.itemsize == HEADER_SIZE
    return dt.newbyteorder(byte_order)


class NiftiHeader:
    """Parsed subset of the 348-byte NIfTI-1 header."""

    def __init__(self, dim, datatype_code, pixdim, vox_offset=DATA_OFFSET,
                 scl_slope=1.0, scl_inter=0.0, magic=b"n+1\x00", byte_order="<"):
        self.sizeof_hdr = HEADER_SIZE
        self.dim = tuple(int(d) for d in dim)
        self.datatype_code = int(datatype_code)
        self.bitpix = DTYPES[self.datatype_code].itemsize * 8
        self.pixdim = tuple(float(p) for p in pixdim)
        self.vox_offset = float(vox_offset)
        self.scl_slope = float(scl_slope)
        self.scl_inter = float(scl_inter)
        self.magic = bytes(magic)
        self.byte_order = byte_order

    @property
    def extents(self):
        return self.dim[1], self.dim[2], self.dim[3]

    @property
    def spacing(self):
        return self.pixdim[1], self.pixdim[2], self.pixdim[3]

    def __eq__(self, other):
        return isinstance(other, NiftiHeader) and all(
            getattr(self, f) == getattr(other, f)
            for f in ("dim", "datatype_code", "bitpix", "pixdim", "vox_offset",
                      "scl_slope", "scl_inter", "magic"))

    def __repr__(self):
        return (f"NiftiHeader(dim={self.dim}, datatype={self.datatype_code}, "
                f"pixdim={self.pixdim}, order='{self.byte_order}')")


def parse_header(block):
    """Parse and validate the first 348 bytes of a NIfTI-1 file."""
    if len(block) < HEADER_SIZE:
        raise CorruptHeaderError(f"header block is {len(block)} bytes, need {HEADER_SIZE}")
    block = bytes(block[:HEADER_SIZE])

    byte_order = None
    for order in ("<", ">"):
        size = np.frombuffer(block, dtype=np.dtype("i4").newbyteorder(order), count=1)[0]
        if size == HEADER_SIZE:
            byte_order = order
            break
    if byte_order is None:
        raise CorruptHeaderError("sizeof_hdr is not 348 under either byte order")

    raw = np.frombuffer(block, dtype=_header_dtype(byte_order), count=1)[0]
    magic = bytes(raw["magic"])
    if magic not in _MAGICS:
        raise BadMagicError(f"magic {magic!r} is not a NIfTI-1 signature")
    code = int(raw["datatype"])
    if code not in DTYPES:
        raise UnsupportedDatatypeError(f"datatype code {code} not in supported set {sorted(DTYPES)}")
    if int(raw["bitpix"]) != DTYPES[code].itemsize * 8:
        raise CorruptHeaderError(f"bitpix {raw['bitpix']} inconsistent with datatype {code}")

    dim = tuple(int(d) for d in raw["dim"])
    rank = dim[0]
    if rank < 3 or rank > 7:
        raise CorruptHeaderError(f"need a 3D volume, got dim[0]={rank}")
    if rank > 3 and any(d != 1 for d in dim[4:rank + 1]):
        raise CorruptHeaderError(f"trailing extents must be 1 for dim={dim}")
    if any(d < 1 for d in dim[1:4]):
        raise CorruptHeaderError(f"non-positive extents in dim={dim}")

    pixdim = tuple(float(p) for p in raw["pixdim"])
    if any(p <= 0 for p in pixdim[1:4]):
        raise CorruptHeaderError(f"non-positive spacing in pixdim={pixdim[1:4]}")

    return NiftiHeader(dim=dim, datatype_code=code, pixdim=pixdim,
                       vox_offset=float(raw["vox_offset"]),
                       scl_slope=float(raw["scl_slope"]),
                       scl_inter=float(raw["scl_inter"]),
                       magic=magic, byte_order=byte_order)


def _read_bytes(path):
    with open(path, "rb") as f:
        prefix = f.read(2)
        f.seek(0)
        if prefix == b"\x1f\x8b":
            with gzip.open(f) as gz:
                return gz.read()
        return f.read()


def read_volume(path):
    """Read a .nii / .nii.gz file into a Volume (intensity scaling applied)."""
    blob = _read_bytes(path)
    hdr = parse_header(blob[:HEADER_SIZE])

    nx, ny, nz = hdr.extents
    dtype = DTYPES[hdr.datatype_code].newbyteorder(hdr.byte_order)
    offset = int(hdr.vox_offset)
    nbytes = nx * ny * nz * dtype.itemsize
    if len(blob) < offset + nbytes:
        raise ShortReadError(
            f"{path}: data block has {max(0, len(blob) - offset)} bytes, expected {nbytes}")

    raw = np.frombuffer(blob, dtype=dtype, count=nx * ny * nz, offset=offset)
    arr = raw.reshape((nx, ny, nz), order="F")
    if hdr.scl_slope != 0.0 and not (hdr.scl_slope == 1.0 and hdr.scl_inter == 0.0):
        arr = arr.astype(np.float64) * hdr.scl_slope + hdr.scl_inter
    elif hdr.byte_order != "<":
        arr = arr.astype(dtype.newbyteorder("<"))
    return Volume(arr, hdr.spacing)


def read_mask(path, threshold=0.5):
    """Read a stored tracing; any supported datatype is accepted and binarized."""
    v = read_volume(path)
    return Mask((v.data >= threshold).astype(np.uint8), v.spacing)


def _build_header(extents, spacing, code):
    hdr = np.zeros((), dtype=_header_dtype("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, extents[0], extents[1], extents[2], 1, 1, 1, 1]
    hdr["datatype"] = code
    hdr["bitpix"] = DTYPES[code].itemsize * 8
    hdr["pixdim"] = [1.0, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0]
    hdr["vox_offset"] = DATA_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # mm
    hdr["magic"] = b"n+1\x00"
    return hdr.tobytes()


def write_volume(v, path, datatype=16, quantize=False):
    """Write a Volume as little-endian single-file NIfTI-1.

    Integer datatypes refuse values that are not exactly representable
    unless quantize=True, which rounds and clips instead.
    """
    code = int(datatype)
    if code not in DTYPES:
        raise UnsupportedDatatypeError(f"datatype code {code} not in supported set {sorted(DTYPES)}")
    dtype = DTYPES[code]
    data = np.asarray(v.data)

    if dtype.kind in "ui":
        info = np.iinfo(dtype)
        rounded = np.rint(data)
        lossless = bool(np.array_equal(data, rounded)
                        and data.min() >= info.min and data.max() <= info.max)
        if not lossless and not quantize:
            raise LossyWriteError(
                f"values not representable as {dtype.name}; pass quantize=True to round and clip")
        data = np.clip(rounded, info.min, info.max)
    out = np.asfortranarray(data.astype(dtype.newbyteorder("<"), copy=False))

    payload = (_build_header(v.extents, v.spacing, code)
               + b"\x00\x00\x00\x00"
               + out.tobytes(order="F"))
    if str(path).endswith(".gz"):
        with open(path, "wb") as f:
            with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as gz:
                gz.write(payload)
    else:
        with open(path, "wb") as f:
            f.write(payload)


def write_mask(m, path):
    """Write a binary Mask as uint8 NIfTI."""
    write_volume(Volume(m.data, m.spacing), path, datatype=2)


def sibling_path(path, suffix):
    """foo.nii.gz -> foo<suffix>.nii.gz, keeping the directory and compression."""
    base = os.path.basename(str(path))
    for ext in (".nii.gz", ".nii"):
        if base.endswith(ext):
            return os.path.join(os.path.dirname(str(path)), base[:-len(ext)] + suffix + ext)
    root, ext = os.path.splitext(str(path))
    return root + suffix + ext
