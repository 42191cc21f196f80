import hashlib
import struct
import zlib

import numpy as np
import pytest

from latentdistill.archive_io import (
    MB,
    ClassSection,
    DistilledArchive,
    LatentDataset,
    TensorArchive,
    decode_distilled,
    decode_latent_dataset,
    decode_tensor_archive,
    encode_distilled,
    encode_latent_dataset,
    encode_tensor_archive,
    latent_dataset_bytes,
    read_distilled,
    read_latent_dataset,
    read_tensor_archive,
    tensor_archive_bytes,
    write_distilled,
    write_latent_dataset,
    write_tensor_archive,
)
from latentdistill.errors import (
    BadMagicError,
    FormatError,
    IntegrityError,
    LengthMismatchError,
    ShapeError,
    TruncatedFileError,
    UnknownDtypeError,
    VersionMismatchError,
)
from latentdistill.hosvd import RawBlock, hosvd_decompose, storage_bytes, svd_compress
from latentdistill.quantize import AFFINE_INT8, FP16, QuantizedTensor, quantize_affine


def make_dataset(rng, n, shape=(2, 3), num_classes=3, names=None):
    return LatentDataset(
        [f"item-{i}" for i in range(n)],
        rng.integers(0, num_classes, n),
        rng.standard_normal((n,) + shape).astype(np.float32),
        num_classes,
        names,
    )


def make_archive(rng, classes=2, shape=(2, 3, 4), budget=10 * MB, model=0):
    sections = []
    for c in range(classes):
        z = rng.standard_normal((3,) + shape)
        sections.append(ClassSection(c, tuple(f"c{c}-{j}" for j in range(3)), hosvd_decompose(z, 0.75), -1.5))
    return DistilledArchive({"ratio": 0.75, "seed": 0}, sections, shape, budget, model)


# --------------------------------------------------------------- datasets


def test_empty_dataset_round_trip():
    ds = LatentDataset([], [], np.zeros((0, 2, 2), np.float32), 1)
    assert decode_latent_dataset(encode_latent_dataset(ds)) == ds


def test_single_item_exact_size():
    ds = LatentDataset(["a"], [0], np.ones((1, 2, 2), np.float32), 1)
    header = 4 + 4 + 4 + 4 + 1 + 2 * 4
    record = 4 + 1 + 4 + 4 * 4
    trailer = 4
    data = encode_latent_dataset(ds)
    assert len(data) == header + record + trailer == latent_dataset_bytes(ds)


def test_thousand_items_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    ds = make_dataset(rng, 1000, (3, 4, 5), names={0: "walk", 2: "ünïcode"})
    path = tmp_path / "d.lvdd"
    write_latent_dataset(ds, path)
    first = hashlib.sha256(path.read_bytes()).hexdigest()
    back = read_latent_dataset(path)
    assert back == ds
    write_latent_dataset(back, tmp_path / "again.lvdd")
    assert hashlib.sha256((tmp_path / "again.lvdd").read_bytes()).hexdigest() == first
    assert path.stat().st_size == latent_dataset_bytes(ds)


def test_dataset_errors_are_distinct():
    data = bytearray(encode_latent_dataset(make_dataset(np.random.default_rng(1), 4)))
    with pytest.raises(BadMagicError):
        decode_latent_dataset(b"XXXX" + bytes(data[4:]))
    with pytest.raises(TruncatedFileError):
        decode_latent_dataset(bytes(data[:-7]))
    bumped = bytearray(data)
    bumped[4:8] = struct.pack("<I", 99)
    with pytest.raises(VersionMismatchError):
        decode_latent_dataset(bytes(bumped))
    with pytest.raises(LengthMismatchError):
        decode_latent_dataset(bytes(data) + b"\0")
    codes = {BadMagicError.code, TruncatedFileError.code, VersionMismatchError.code}
    assert len(codes) == 3


def test_dataset_validation():
    with pytest.raises(ShapeError):
        LatentDataset(["a", "a"], [0, 0], np.zeros((2, 3)), 1)
    with pytest.raises(ShapeError):
        LatentDataset(["a"], [1], np.zeros((1, 3)), 1)
    with pytest.raises(ShapeError):
        LatentDataset(["a", "b"], [0], np.zeros((2, 3)), 1)


# --------------------------------------------------------- tensor archives


def test_tensor_archive_round_trip_all_dtypes(tmp_path):
    rng = np.random.default_rng(2)
    half = rng.standard_normal((3, 4)).astype(np.float16)
    arch = TensorArchive({
        "w": rng.standard_normal((5, 6)).astype(np.float32),
        "h": QuantizedTensor(half, FP16),
        "q": quantize_affine(rng.standard_normal((7, 2))),
        "scalar": np.float32(3.5) * np.ones((), np.float32),
    })
    path = tmp_path / "t.lvta"
    write_tensor_archive(arch, path)
    assert path.stat().st_size == tensor_archive_bytes(arch)
    back = read_tensor_archive(path)
    assert list(back.tensors) == list(arch.tensors)
    assert np.array_equal(back.tensors["w"], arch.tensors["w"])
    assert back.tensors["h"].payload.view(np.uint16).tolist() == half.view(np.uint16).tolist()
    q, q2 = arch.tensors["q"], back.tensors["q"]
    assert q2.scheme == AFFINE_INT8 and np.array_equal(q.payload, q2.payload)
    assert (q.scale, q.zero_point) == (q2.scale, q2.zero_point)
    assert back.tensors["scalar"].shape == ()


def test_tensor_archive_errors():
    arch = TensorArchive({"a": np.ones((2, 2), np.float32)})
    data = bytearray(encode_tensor_archive(arch))
    start = 12  # magic, version, count
    dtype_at = start + 2 + 1
    bad = bytearray(data)
    bad[dtype_at] = 9
    with pytest.raises(UnknownDtypeError):
        decode_tensor_archive(bytes(bad))
    bad = bytearray(data)
    len_at = start + 2 + 1 + 2 + 8
    bad[len_at:len_at + 8] = struct.pack("<Q", 12)
    with pytest.raises(LengthMismatchError):
        decode_tensor_archive(bytes(bad))
    bad = bytearray(data)
    bad[-6] ^= 0x01
    with pytest.raises(IntegrityError):
        decode_tensor_archive(bytes(bad))
    with pytest.raises(BadMagicError):
        decode_tensor_archive(b"NOPE" + bytes(data[4:]))


# -------------------------------------------------------- distilled archive


def test_single_class_file_size(tmp_path):
    rng = np.random.default_rng(3)
    arch = make_archive(rng, classes=1)
    size = write_distilled(arch, tmp_path / "a.dar")
    assert size == (tmp_path / "a.dar").stat().st_size == arch.total_bytes
    assert size == arch.header_bytes + storage_bytes(arch.sections[0].block)


def test_distilled_round_trip_bit_exact():
    rng = np.random.default_rng(4)
    arch = make_archive(rng, classes=3)
    arch.sections.append(ClassSection(3, ("raw-0",), RawBlock(rng.standard_normal((1, 2, 3, 4))), None, "small class"))
    arch.sections.append(ClassSection(4, ("s-0", "s-1"), svd_compress(rng.standard_normal((2, 2, 3, 4)), 1)))
    data = encode_distilled(arch)
    back = decode_distilled(data)
    assert encode_distilled(back) == data
    assert back.manifest() == arch.manifest()
    for a, b in zip(arch.sections, back.sections):
        assert a.item_ids == b.item_ids and a.kind == b.kind
    f, g = arch.sections[0].block, back.sections[0].block
    assert np.array_equal(g.core, f.core.astype(np.float32))


def test_fp16_archive_round_trip():
    rng = np.random.default_rng(5)
    arch = make_archive(rng)
    arch.precision = "fp16"
    data = encode_distilled(arch)
    assert len(data) == arch.total_bytes
    assert decode_distilled(data).precision == "fp16"


def test_budget_example_107mb():
    # about 27 MB of data sections plus an 80 MB decoder against a 115 MB budget
    n = (27 * MB - 300) // 4
    arch = DistilledArchive({}, [ClassSection(0, ("x",), RawBlock(np.zeros((1, n))))], (n,), 115 * MB, 80 * MB)
    assert abs(arch.total_bytes - 27 * MB) < 1024
    assert arch.within_budget
    assert abs((arch.total_bytes + arch.model_bytes) / MB - 107) < 0.01
    assert len(encode_distilled(arch)) == arch.total_bytes


def test_within_budget_flag():
    arch = make_archive(np.random.default_rng(6))
    arch.budget_bytes = arch.total_bytes + arch.model_bytes
    assert arch.within_budget
    arch.budget_bytes -= 1
    assert not arch.within_budget
    assert decode_distilled(encode_distilled(arch)).within_budget is False


def test_tampering_any_section_byte_detected():
    rng = np.random.default_rng(7)
    arch = make_archive(rng, classes=3)
    data = encode_distilled(arch)
    start = arch.header_bytes
    for pos in rng.integers(start, len(data), 200):
        bad = bytearray(data)
        bad[pos] ^= 1 << int(rng.integers(0, 8))
        with pytest.raises(IntegrityError):
            decode_distilled(bytes(bad))


def test_tampering_header_never_silent():
    rng = np.random.default_rng(8)
    arch = make_archive(rng)
    data = encode_distilled(arch)
    for pos in range(arch.header_bytes):
        bad = bytearray(data)
        bad[pos] ^= 0x10
        with pytest.raises(FormatError):
            decode_distilled(bytes(bad))


def test_accounting_mismatch_is_integrity_error():
    arch = make_archive(np.random.default_rng(9))
    data = bytearray(encode_distilled(arch))
    # rewrite the stored total and re-seal the header checksum
    (mlen,) = struct.unpack_from("<I", data, 8)
    acc = 12 + mlen
    struct.pack_into("<Q", data, acc + 16, len(data) + 1)
    head_end = acc + 29
    struct.pack_into("<I", data, head_end, zlib.crc32(bytes(data[:head_end])))
    with pytest.raises(IntegrityError):
        decode_distilled(bytes(data))


def test_distilled_truncation_and_magic(tmp_path):
    data = encode_distilled(make_archive(np.random.default_rng(10)))
    with pytest.raises(TruncatedFileError):
        decode_distilled(data[:-10])
    with pytest.raises(BadMagicError):
        decode_distilled(b"LVDD" + data[4:])
    path = tmp_path / "x.dar"
    path.write_bytes(data)
    assert read_distilled(path).total_bytes == len(data)
