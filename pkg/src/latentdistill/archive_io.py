"""Binary containers: latent datasets, tensor archives and distilled archives.

Every format is little-endian with no padding, so file sizes follow exactly
from shapes, dtypes and the manifest. Layouts:

Latent dataset (``.lvdd``)::

    4s   magic "LVDD"
    u32  version (1)
    u32  class count
    u32  item count
    u8   order n
    u32  extents[n]
    per item:  u32 id length, UTF-8 id, u32 class id, f32 payload[prod(extents)]
    trailer:   u32 name count, then per name: u32 class id, u32 length, UTF-8 name

Distilled archive (``.dar``)::

    4s   magic "LVDA"
    u32  version (1)
    u32  manifest length, then UTF-8 JSON manifest (sorted keys, compact)
    u64  budget_bytes
    u64  model_bytes
    u64  total_bytes      size of this file
    u8   within_budget    total_bytes + model_bytes <= budget_bytes
    u32  section count
    u32  crc32 of every preceding header byte
    sections in manifest order, laid out as documented in ``layout``

Tensor archive (``.lvta``): see ``layout``.
"""

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import layout
from .errors import (
    BadMagicError,
    CorruptionError,
    IntegrityError,
    LengthMismatchError,
    ShapeError,
    TruncatedFileError,
    UnknownDtypeError,
    VersionMismatchError,
)
from .hosvd import HosvdFactorization, RawBlock, SvdFactorization, storage_bytes
from .quantize import AFFINE_INT8, FP16, QuantizedTensor

DATASET_MAGIC = b"LVDD"
DATASET_VERSION = 1
DISTILLED_MAGIC = b"LVDA"
DISTILLED_VERSION = 1

_DATASET_HEAD = struct.Struct("<4sIIIB")
_DISTILLED_HEAD = struct.Struct("<4sII")
_ACCOUNTING = struct.Struct("<QQQBI")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")

MB = 1 << 20


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n):
        if n < 0 or self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st):
        return st.unpack(self.take(st.size))

    def array(self, dtype, count):
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype, count=count)

    def at_end(self):
        return self.pos == len(self.buf)


def _check_magic(found, expected):
    if bytes(found) != expected:
        raise BadMagicError(f"expected magic {expected!r}, found {bytes(found)!r}")


def _check_version(found, expected):
    if found != expected:
        raise VersionMismatchError(f"unsupported version {found}, expected {expected}")


# ---------------------------------------------------------------- datasets


@dataclass(eq=False)
class LatentDataset:
    """Labelled latents sharing one shape; ``latents`` has shape ``(N, *latent_shape)``."""

    item_ids: list
    class_ids: np.ndarray
    latents: np.ndarray
    num_classes: int
    class_names: dict | None = None

    def __post_init__(self):
        self.item_ids = [str(i) for i in self.item_ids]
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
        self.latents = np.asarray(self.latents, dtype=np.float32)
        n = len(self.item_ids)
        if self.class_ids.size != n or self.latents.shape[0] != n:
            raise ShapeError("item ids, class ids and latents disagree on item count")
        if self.latents.ndim < 2:
            raise ShapeError("latents must have shape (items, *latent_shape)")
        if len(set(self.item_ids)) != n:
            raise ShapeError("item ids must be unique")
        if n and (self.class_ids.min() < 0 or self.class_ids.max() >= self.num_classes):
            raise ShapeError(f"class ids must lie in [0, {self.num_classes})")

    @property
    def latent_shape(self):
        return tuple(self.latents.shape[1:])

    def __len__(self):
        return len(self.item_ids)

    def class_indices(self, class_id):
        return np.flatnonzero(self.class_ids == class_id)

    def __eq__(self, other):
        if not isinstance(other, LatentDataset):
            return NotImplemented
        return (
            self.item_ids == other.item_ids
            and self.num_classes == other.num_classes
            and (self.class_names or {}) == (other.class_names or {})
            and self.latent_shape == other.latent_shape
            and np.array_equal(self.class_ids, other.class_ids)
            and np.array_equal(self.latents, other.latents)
        )


def latent_dataset_bytes(ds):
    per_item = 8 + 4 * int(np.prod(ds.latent_shape))
    names = sum(8 + len(v.encode("utf-8")) for v in (ds.class_names or {}).values())
    return (
        _DATASET_HEAD.size + 4 * len(ds.latent_shape)
        + sum(per_item + len(i.encode("utf-8")) for i in ds.item_ids)
        + 4 + names
    )


def encode_latent_dataset(ds):
    shape = ds.latent_shape
    out = bytearray(_DATASET_HEAD.pack(DATASET_MAGIC, DATASET_VERSION, ds.num_classes, len(ds), len(shape)))
    out += struct.pack(f"<{len(shape)}I", *shape)
    payload = ds.latents.astype("<f4", copy=False).reshape(len(ds), int(np.prod(shape)))
    for item_id, cls, row in zip(ds.item_ids, ds.class_ids, payload):
        raw = item_id.encode("utf-8")
        out += _U32.pack(len(raw)) + raw + _U32.pack(int(cls))
        out += row.tobytes()
    names = ds.class_names or {}
    out += _U32.pack(len(names))
    for cls in sorted(names):
        raw = names[cls].encode("utf-8")
        out += struct.pack("<II", int(cls), len(raw)) + raw
    return bytes(out)


def decode_latent_dataset(buf):
    r = _Reader(buf)
    magic, version, num_classes, count, order = r.unpack(_DATASET_HEAD)
    _check_magic(magic, DATASET_MAGIC)
    _check_version(version, DATASET_VERSION)
    if order == 0:
        raise ShapeError("latent order must be >= 1")
    shape = tuple(r.unpack(struct.Struct(f"<{order}I")))
    size = int(np.prod(shape))
    ids, classes = [], np.empty(count, dtype=np.int64)
    latents = np.empty((count, size), dtype=np.float32)
    for i in range(count):
        (n,) = r.unpack(_U32)
        ids.append(bytes(r.take(n)).decode("utf-8"))
        (classes[i],) = r.unpack(_U32)
        latents[i] = r.array("<f4", size)
    (n_names,) = r.unpack(_U32)
    names = {}
    for _ in range(n_names):
        cls, n = r.unpack(struct.Struct("<II"))
        names[cls] = bytes(r.take(n)).decode("utf-8")
    if not r.at_end():
        raise LengthMismatchError("trailing bytes after latent dataset")
    return LatentDataset(ids, classes, latents.reshape((count,) + shape), num_classes, names or None)


def write_latent_dataset(ds, path):
    with open(path, "wb") as fh:
        fh.write(encode_latent_dataset(ds))


def read_latent_dataset(path):
    with open(path, "rb") as fh:
        return decode_latent_dataset(fh.read())


# ---------------------------------------------------------- tensor archives


@dataclass
class TensorArchive:
    """Named tensors: fp32 ``ndarray`` values or :class:`QuantizedTensor` values."""

    tensors: dict = field(default_factory=dict)


def _tensor_dtype_code(value):
    if isinstance(value, QuantizedTensor):
        return layout.DTYPE_INT8_AFFINE if value.scheme == AFFINE_INT8 else layout.DTYPE_FP16
    return layout.DTYPE_FP32


def tensor_archive_bytes(archive):
    return layout.TENSOR_ARCHIVE_HEADER.size + sum(
        layout.tensor_record_bytes(name, _tensor_dtype_code(v), np.shape(v.payload if isinstance(v, QuantizedTensor) else v))
        for name, v in archive.tensors.items()
    )


def encode_tensor_archive(archive):
    out = bytearray(
        layout.TENSOR_ARCHIVE_HEADER.pack(
            layout.TENSOR_ARCHIVE_MAGIC, layout.TENSOR_ARCHIVE_VERSION, len(archive.tensors)
        )
    )
    for name, value in archive.tensors.items():
        code = _tensor_dtype_code(value)
        data = value.payload if isinstance(value, QuantizedTensor) else value
        data = np.asarray(data, dtype=layout.TENSOR_DTYPES[code])
        raw = name.encode("utf-8")
        rec = bytearray(_U16.pack(len(raw)) + raw)
        rec += struct.pack("<BB", code, data.ndim)
        rec += struct.pack(f"<{data.ndim}I", *data.shape)
        if code == layout.DTYPE_INT8_AFFINE:
            rec += layout.AFFINE_META.pack(value.scale, value.zero_point)
        rec += layout.PAYLOAD_LEN.pack(data.nbytes) + data.tobytes(order="C")
        rec += _U32.pack(zlib.crc32(rec))
        out += rec
    return bytes(out)


def decode_tensor_archive(buf):
    r = _Reader(buf)
    magic, version, count = r.unpack(layout.TENSOR_ARCHIVE_HEADER)
    _check_magic(magic, layout.TENSOR_ARCHIVE_MAGIC)
    _check_version(version, layout.TENSOR_ARCHIVE_VERSION)
    tensors = {}
    for _ in range(count):
        start = r.pos
        (n,) = r.unpack(_U16)
        name = bytes(r.take(n)).decode("utf-8")
        code, order = r.unpack(struct.Struct("<BB"))
        if code not in layout.TENSOR_DTYPES:
            raise UnknownDtypeError(f"tensor {name!r} has unknown dtype code {code}")
        shape = tuple(r.unpack(struct.Struct(f"<{order}I")))
        if code == layout.DTYPE_INT8_AFFINE:
            scale, zero_point = r.unpack(layout.AFFINE_META)
        (length,) = r.unpack(layout.PAYLOAD_LEN)
        dtype = layout.TENSOR_DTYPES[code]
        if length != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise LengthMismatchError(f"tensor {name!r} declares {length} payload bytes for shape {shape}")
        data = r.array(dtype, length // dtype.itemsize).reshape(shape)
        (crc,) = r.unpack(_U32)
        if zlib.crc32(r.buf[start:r.pos - 4]) != crc:
            raise IntegrityError(f"checksum mismatch in tensor {name!r}")
        if name in tensors:
            raise CorruptionError(f"duplicate tensor name {name!r}")
        if code == layout.DTYPE_FP32:
            tensors[name] = data.astype(np.float32)
        elif code == layout.DTYPE_FP16:
            tensors[name] = QuantizedTensor(data.astype(np.float16), FP16)
        else:
            tensors[name] = QuantizedTensor(data.astype(np.int8), AFFINE_INT8, float(scale), int(zero_point))
    if not r.at_end():
        raise LengthMismatchError("trailing bytes after tensor archive")
    return TensorArchive(tensors)


def write_tensor_archive(archive, path):
    with open(path, "wb") as fh:
        fh.write(encode_tensor_archive(archive))


def read_tensor_archive(path):
    with open(path, "rb") as fh:
        return decode_tensor_archive(fh.read())


# -------------------------------------------------------- distilled archive


def _kind_of(block):
    if isinstance(block, HosvdFactorization):
        return layout.KIND_HOSVD
    if isinstance(block, SvdFactorization):
        return layout.KIND_SVD
    if isinstance(block, RawBlock):
        return layout.KIND_RAW
    raise TypeError(f"cannot serialize {type(block).__name__}")


KIND_NAMES = {layout.KIND_RAW: "raw", layout.KIND_HOSVD: "hosvd", layout.KIND_SVD: "svd"}


def encode_section(class_id, block, precision="fp32"):
    code, dtype = layout.PRECISIONS[precision]
    kind = _kind_of(block)
    shape = tuple(block.original_shape)
    out = bytearray(layout.SECTION_PREFIX.pack(kind, code, len(shape), 0, class_id))
    out += struct.pack(f"<{len(shape)}I", *shape)

    def put(a):
        out.extend(np.ascontiguousarray(a, dtype=dtype).tobytes())

    if kind == layout.KIND_HOSVD:
        out += struct.pack(f"<{len(shape)}I", *block.ranks)
        put(block.core)
        for u in block.factors:
            put(u)
    elif kind == layout.KIND_SVD:
        out += _U32.pack(block.rank)
        put(block.u)
        put(block.singular_values)
        put(block.v)
    else:
        put(block.data)
    out += _U32.pack(zlib.crc32(out))
    return bytes(out)


def decode_section(buf, ratio=None):
    """Parse one section; returns ``(class_id, precision, block)``."""
    buf = memoryview(buf)
    if len(buf) < layout.SECTION_PREFIX.size + layout.CRC_BYTES:
        raise TruncatedFileError("section too short")
    (crc,) = _U32.unpack(buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise IntegrityError("section checksum mismatch")
    r = _Reader(buf[:-4])
    kind, code, order, _, class_id = r.unpack(layout.SECTION_PREFIX)
    if code not in layout.PRECISION_BY_CODE:
        raise UnknownDtypeError(f"unknown precision code {code}")
    precision, dtype = layout.PRECISION_BY_CODE[code]
    shape = tuple(r.unpack(struct.Struct(f"<{order}I")))

    def get(*dims):
        return r.array(dtype, int(np.prod(dims, dtype=np.int64))).astype(np.float64).reshape(dims)

    if kind == layout.KIND_HOSVD:
        ranks = tuple(r.unpack(struct.Struct(f"<{order}I")))
        core = get(*ranks)
        factors = tuple(get(d, k) for d, k in zip(shape, ranks))
        block = HosvdFactorization(core, factors, shape, ratio)
    elif kind == layout.KIND_SVD:
        (rank,) = r.unpack(_U32)
        cols = int(np.prod(shape[1:], dtype=np.int64))
        block = SvdFactorization(get(shape[0], rank), get(rank), get(cols, rank), shape)
    elif kind == layout.KIND_RAW:
        block = RawBlock(get(*shape))
    else:
        raise CorruptionError(f"unknown section kind {kind}")
    if not r.at_end():
        raise LengthMismatchError("section has trailing bytes")
    return class_id, precision, block


@dataclass
class ClassSection:
    class_id: int
    item_ids: tuple
    block: object
    log_prob: float | None = None
    warning: str | None = None

    @property
    def kind(self):
        return KIND_NAMES[_kind_of(self.block)]


@dataclass
class DistilledArchive:
    config: dict
    sections: list
    latent_shape: tuple
    budget_bytes: int
    model_bytes: int
    precision: str = "fp32"

    def manifest(self):
        return {
            "config": self.config,
            "latent_shape": list(self.latent_shape),
            "precision": self.precision,
            "classes": [
                {
                    "class_id": s.class_id,
                    "item_ids": list(s.item_ids),
                    "m": len(s.item_ids),
                    "kind": s.kind,
                    "section_bytes": self.section_bytes(s),
                    "log_prob": s.log_prob,
                    "warning": s.warning,
                }
                for s in self.sections
            ],
        }

    def section_bytes(self, s):
        return storage_bytes(s.block, self.precision)

    @property
    def header_bytes(self):
        return _DISTILLED_HEAD.size + len(_manifest_json(self.manifest())) + _ACCOUNTING.size + 4

    @property
    def data_bytes(self):
        return sum(self.section_bytes(s) for s in self.sections)

    @property
    def total_bytes(self):
        return self.header_bytes + self.data_bytes

    @property
    def within_budget(self):
        return self.total_bytes + self.model_bytes <= self.budget_bytes


def _manifest_json(manifest):
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_distilled(archive):
    manifest = _manifest_json(archive.manifest())
    head = bytearray(_DISTILLED_HEAD.pack(DISTILLED_MAGIC, DISTILLED_VERSION, len(manifest)))
    head += manifest
    head += _ACCOUNTING.pack(
        archive.budget_bytes, archive.model_bytes, archive.total_bytes,
        int(archive.within_budget), len(archive.sections),
    )
    head += _U32.pack(zlib.crc32(head))
    out = bytearray(head)
    for s in archive.sections:
        out += encode_section(s.class_id, s.block, archive.precision)
    if len(out) != archive.total_bytes:
        raise CorruptionError(f"encoded {len(out)} bytes but accounted {archive.total_bytes}")
    return bytes(out)


def decode_distilled(buf):
    r = _Reader(buf)
    magic, version, manifest_len = r.unpack(_DISTILLED_HEAD)
    _check_magic(magic, DISTILLED_MAGIC)
    _check_version(version, DISTILLED_VERSION)
    manifest_raw = bytes(r.take(manifest_len))
    budget, model, total, within, count = r.unpack(_ACCOUNTING)
    (crc,) = r.unpack(_U32)
    if zlib.crc32(r.buf[:r.pos - 4]) != crc:
        raise IntegrityError("header checksum mismatch")
    try:
        manifest = json.loads(manifest_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unreadable manifest: {exc}") from exc
    entries = manifest["classes"]
    if len(entries) != count:
        raise IntegrityError("section count disagrees with manifest")
    precision = manifest["precision"]
    ratio = manifest["config"].get("ratio")
    sections = []
    for entry in entries:
        cid, sec_precision, block = decode_section(r.take(entry["section_bytes"]), ratio)
        if cid != entry["class_id"] or sec_precision != precision:
            raise IntegrityError(f"section for class {entry['class_id']} disagrees with manifest")
        if KIND_NAMES[_kind_of(block)] != entry["kind"]:
            raise IntegrityError(f"section kind for class {cid} disagrees with manifest")
        sections.append(
            ClassSection(cid, tuple(entry["item_ids"]), block, entry.get("log_prob"), entry.get("warning"))
        )
    if not r.at_end():
        raise LengthMismatchError("trailing bytes after last section")
    archive = DistilledArchive(
        manifest["config"], sections, tuple(manifest["latent_shape"]), budget, model, precision
    )
    if archive.total_bytes != total or total != len(r.buf):
        raise IntegrityError(
            f"accounting mismatch: stored total {total}, recomputed {archive.total_bytes}, file {len(r.buf)}"
        )
    if bool(within) != archive.within_budget:
        raise IntegrityError("stored within_budget flag disagrees with accounting")
    return archive


def write_distilled(archive, path):
    data = encode_distilled(archive)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_distilled(path):
    with open(path, "rb") as fh:
        return decode_distilled(fh.read())
