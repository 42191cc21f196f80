"""Post-training quantization of tensor archives.

Two-stage policy: rank-2 (fully connected / matmul) weights go to
per-tensor affine INT8, everything else goes to FP16.

Affine INT8 uses min/max calibration over a range widened to contain 0::

    scale      = (max - min) / 255          (float32, see affine_params)
    zero_point = round(-128 - min / scale)  (clamped to [-128, 127])
    q          = clamp(round(x / scale) + zero_point, -128, 127)

Keeping the scale float32-representable makes ``scale * (q - zero_point)``
exact in float64, so re-quantizing a dequantized tensor reproduces the
payload, scale and zero point bit for bit. Dynamic activation quantization
is the same ``quantize_affine`` call applied to an input at run time.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from . import layout
from .errors import CorruptionError, NumericInputError

AFFINE_INT8 = "affine_int8"
FP16 = "fp16"
QMIN, QMAX = -128, 127
FP16_MAX = float(np.finfo(np.float16).max)


@dataclass(frozen=True)
class QuantizedTensor:
    payload: np.ndarray
    scheme: str
    scale: float = 1.0
    zero_point: int = 0

    @property
    def original_shape(self):
        return tuple(self.payload.shape)


@dataclass(frozen=True)
class QuantPolicy:
    fc_scheme: str = AFFINE_INT8
    other_scheme: str = FP16
    fc_name_pattern: str | None = None

    @classmethod
    def parse(cls, name, fc_name_pattern=None):
        if name != "fc-int8-rest-fp16":
            raise ValueError(f"unknown quantization policy {name!r}")
        return cls(fc_name_pattern=fc_name_pattern)

    def scheme_for(self, name, shape):
        if self.fc_name_pattern is not None:
            is_fc = re.search(self.fc_name_pattern, name) is not None
        else:
            is_fc = len(shape) == 2
        return self.fc_scheme if is_fc else self.other_scheme


def _finite(t):
    x = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericInputError("tensor has non-finite entries")
    return x


_F32_TINY = float(np.finfo(np.float32).tiny)
_SCALE_ULPS = 4
# extra error beyond half a step tolerated to land on the end codes
END_SLACK = 1e-7


def _zero_point(lo, scale):
    return int(np.clip(np.rint(QMIN - lo / scale), QMIN, QMAX))


def _end_error(value, code, scale, zero_point):
    q = np.clip(np.rint(value / scale) + zero_point, QMIN, QMAX)
    return abs(value - scale * (q - zero_point)) if q == code else np.inf


def affine_params(x):
    """Scale and zero point for ``x`` over its range widened to contain 0.

    The scale is the smallest float32 >= (max - min) / 255, which keeps every
    element within half a step. If that scale leaves ``min`` or ``max`` short
    of the end codes -128 and 127, nearby float32 scales are tried and the
    first that reaches both end codes within half a step plus ``END_SLACK``
    wins. Reaching both end codes is what makes requantizing a dequantized
    tensor reproduce the same scale, zero point and payload.
    """
    lo = min(float(x.min()), 0.0)
    hi = max(float(x.max()), 0.0)
    if hi == lo:
        return 1.0, 0
    exact = (hi - lo) / (QMAX - QMIN)
    base = np.float32(exact)
    if not np.isfinite(base):
        raise NumericInputError(f"value range [{lo}, {hi}] has no usable int8 scale")
    if float(base) < _F32_TINY:
        # below float32 resolution everything rounds to zero anyway
        return 1.0, 0
    if float(base) < exact:
        base = np.nextafter(base, np.float32(np.inf))
    up, down = [base], [base]
    for _ in range(_SCALE_ULPS):
        up.append(np.nextafter(up[-1], np.float32(np.inf)))
        down.append(np.nextafter(down[-1], np.float32(0)))
    for scale in map(float, up + down[1:]):
        zero_point = _zero_point(lo, scale)
        limit = scale / 2 + END_SLACK
        if _end_error(lo, QMIN, scale, zero_point) <= limit and _end_error(hi, QMAX, scale, zero_point) <= limit:
            return scale, zero_point
    return float(base), _zero_point(lo, float(base))


def quantize_affine(t):
    x = _finite(t)
    scale, zero_point = affine_params(x)
    q = np.clip(np.rint(x / scale) + zero_point, QMIN, QMAX).astype(np.int8)
    return QuantizedTensor(q, AFFINE_INT8, scale, zero_point)


def quantize_fp16(t):
    """Round-to-nearest-even half precision; overflow saturates at +-65504."""
    x = _finite(t)
    return QuantizedTensor(np.clip(x, -FP16_MAX, FP16_MAX).astype(np.float16), FP16)


def quantize(t, scheme):
    if scheme == AFFINE_INT8:
        return quantize_affine(t)
    if scheme == FP16:
        return quantize_fp16(t)
    raise ValueError(f"unknown scheme {scheme!r}")


def dequantize(q):
    if q.scheme == AFFINE_INT8:
        if q.payload.dtype != np.int8:
            raise CorruptionError("affine payload must be int8")
        if not (np.isfinite(q.scale) and q.scale > 0) or not QMIN <= q.zero_point <= QMAX:
            raise CorruptionError(f"bad affine metadata scale={q.scale} zero_point={q.zero_point}")
        return q.scale * (q.payload.astype(np.float64) - q.zero_point)
    if q.scheme == FP16:
        if q.payload.dtype != np.float16:
            raise CorruptionError("fp16 payload must be float16")
        return q.payload.astype(np.float64)
    raise CorruptionError(f"unknown scheme {q.scheme!r}")


@dataclass
class TensorQuantRecord:
    name: str
    scheme: str
    shape: tuple
    fp32_payload_bytes: int
    payload_bytes: int
    fp32_record_bytes: int
    record_bytes: int

    @property
    def payload_ratio(self):
        return self.fp32_payload_bytes / self.payload_bytes


@dataclass
class QuantReport:
    tensors: list = field(default_factory=list)

    @property
    def fp32_payload_bytes(self):
        return sum(r.fp32_payload_bytes for r in self.tensors)

    @property
    def payload_bytes(self):
        return sum(r.payload_bytes for r in self.tensors)

    @property
    def fp32_file_bytes(self):
        return layout.TENSOR_ARCHIVE_HEADER.size + sum(r.fp32_record_bytes for r in self.tensors)

    @property
    def file_bytes(self):
        return layout.TENSOR_ARCHIVE_HEADER.size + sum(r.record_bytes for r in self.tensors)

    @property
    def payload_ratio(self):
        return self.fp32_payload_bytes / self.payload_bytes

    @property
    def total_ratio(self):
        return self.fp32_file_bytes / self.file_bytes

    def as_dict(self):
        return {
            "tensors": [
                {
                    "name": r.name,
                    "scheme": r.scheme,
                    "shape": list(r.shape),
                    "fp32_payload_bytes": r.fp32_payload_bytes,
                    "payload_bytes": r.payload_bytes,
                    "payload_ratio": r.payload_ratio,
                    "fp32_record_bytes": r.fp32_record_bytes,
                    "record_bytes": r.record_bytes,
                }
                for r in self.tensors
            ],
            "fp32_payload_bytes": self.fp32_payload_bytes,
            "payload_bytes": self.payload_bytes,
            "fp32_file_bytes": self.fp32_file_bytes,
            "file_bytes": self.file_bytes,
            "payload_ratio": self.payload_ratio,
            "total_ratio": self.total_ratio,
        }


def archive_quantize(archive, policy=QuantPolicy()):
    """Quantize every fp32 tensor of ``archive`` according to ``policy``.

    Returns ``(quantized_archive, report)``. Byte counts in the report are
    the exact sizes ``write_tensor_archive`` produces.
    """
    from .archive_io import TensorArchive

    if not archive.tensors:
        raise ValueError("archive is empty")
    out = {}
    report = QuantReport()
    for name, value in archive.tensors.items():
        x = value if not isinstance(value, QuantizedTensor) else dequantize(value)
        x = np.asarray(x)
        scheme = policy.scheme_for(name, x.shape)
        q = quantize(x, scheme)
        out[name] = q
        dtype = layout.DTYPE_INT8_AFFINE if scheme == AFFINE_INT8 else layout.DTYPE_FP16
        report.tensors.append(
            TensorQuantRecord(
                name=name,
                scheme=scheme,
                shape=tuple(x.shape),
                fp32_payload_bytes=4 * x.size,
                payload_bytes=q.payload.nbytes,
                fp32_record_bytes=layout.tensor_record_bytes(name, layout.DTYPE_FP32, x.shape),
                record_bytes=layout.tensor_record_bytes(name, dtype, x.shape),
            )
        )
    return TensorArchive(out), report
