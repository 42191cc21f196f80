"""Byte-level layout constants shared by storage accounting and serializers.

All integers are little-endian. A distilled-archive section is::

    u8   kind          0 = raw, 1 = hosvd, 2 = svd
    u8   precision     0 = fp32, 1 = fp16
    u8   order         n
    u8   reserved      always 0
    u32  class_id
    u32  dims[n]
    u32  ranks[n]      hosvd only
    u32  rank          svd only
    ...  payload       raw: tensor; hosvd: core then factors 1..n;
                       svd: U (m x r), singular values (r), V (cols x r)
    u32  crc32         over every preceding byte of the section

Matrices and tensors in a payload are row-major.
"""

import struct

import numpy as np

KIND_RAW = 0
KIND_HOSVD = 1
KIND_SVD = 2

PRECISIONS = {"fp32": (0, np.dtype("<f4")), "fp16": (1, np.dtype("<f2"))}
PRECISION_BY_CODE = {code: (name, dt) for name, (code, dt) in PRECISIONS.items()}

SECTION_PREFIX = struct.Struct("<BBBBI")
U32 = struct.Struct("<I")
CRC_BYTES = 4


def element_size(precision):
    try:
        return PRECISIONS[precision][1].itemsize
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}; expected fp32 or fp16") from None


def section_header_bytes(kind, order):
    """Non-payload bytes in a section: prefix, shape fields and checksum."""
    fixed = SECTION_PREFIX.size + 4 * order + CRC_BYTES
    if kind == KIND_HOSVD:
        return fixed + 4 * order
    if kind == KIND_SVD:
        return fixed + 4
    return fixed


# Tensor archive ("LVTA"):
#
#     4s   magic "LVTA"
#     u32  version
#     u32  tensor count
#     then per tensor:
#     u16  name length, then UTF-8 name
#     u8   dtype        0 = fp32, 1 = fp16, 2 = int8 affine
#     u8   order n
#     u32  dims[n]
#     f32  scale        int8 affine only
#     i8   zero_point   int8 affine only
#     u64  payload length in bytes
#     ...  payload (row-major)
#     u32  crc32 over every preceding byte of the record
TENSOR_ARCHIVE_MAGIC = b"LVTA"
TENSOR_ARCHIVE_VERSION = 1
TENSOR_ARCHIVE_HEADER = struct.Struct("<4sII")
DTYPE_FP32 = 0
DTYPE_FP16 = 1
DTYPE_INT8_AFFINE = 2
TENSOR_DTYPES = {
    DTYPE_FP32: np.dtype("<f4"),
    DTYPE_FP16: np.dtype("<f2"),
    DTYPE_INT8_AFFINE: np.dtype("i1"),
}
AFFINE_META = struct.Struct("<fb")
PAYLOAD_LEN = struct.Struct("<Q")


def tensor_record_bytes(name, dtype, shape):
    size = 1
    for d in shape:
        size *= int(d)
    meta = AFFINE_META.size if dtype == DTYPE_INT8_AFFINE else 0
    return (
        2 + len(name.encode("utf-8")) + 2 + 4 * len(shape) + meta
        + PAYLOAD_LEN.size + TENSOR_DTYPES[dtype].itemsize * size + CRC_BYTES
    )
