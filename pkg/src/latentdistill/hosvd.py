"""Truncated HOSVD, the flattened truncated-SVD baseline and storage costs."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import layout
from .errors import CorruptionError, NumericInputError, ShapeError
from .linalg import svd
from .tensor_core import as_tensor, mode_product, unfold

DEFAULT_RATIO = 0.75


@dataclass(frozen=True)
class HosvdFactorization:
    core: np.ndarray
    factors: tuple
    original_shape: tuple
    ratio: float
    mode_singular_values: tuple = field(default=(), repr=False, compare=False)

    @property
    def ranks(self):
        return tuple(self.core.shape)


@dataclass(frozen=True)
class SvdFactorization:
    """Truncated SVD of the tensor flattened to (instances, everything else)."""

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray
    original_shape: tuple

    @property
    def rank(self):
        return self.singular_values.size


@dataclass(frozen=True)
class RawBlock:
    """Uncompressed fallback for tensors that factorize worse than raw."""

    data: np.ndarray

    @property
    def original_shape(self):
        return tuple(self.data.shape)


def _round_half_up(x):
    return math.floor(x + 0.5)


def mode_ranks(shape, ratio, full_rank_modes=()):
    """Per-mode retained ranks ``clamp(round(ratio * d), 1, d)``."""
    _check_ratio(ratio)
    return tuple(
        d if k in full_rank_modes else min(max(_round_half_up(ratio * d), 1), d)
        for k, d in enumerate(shape)
    )


def _check_ratio(ratio):
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"rank compression ratio must lie in (0, 1], got {ratio}")


def hosvd_decompose(z, ratio=DEFAULT_RATIO, full_rank_modes=()):
    """Truncated higher-order SVD.

    Each factor holds the leading left singular vectors of the corresponding
    unfolding of ``z`` (not of a partially projected tensor), and the core is
    ``z`` multiplied along every mode by the transposed factors.

    Parameters
    ----------
    z : array_like
        Tensor of order >= 2.
    ratio : float
        Rank compression ratio in (0, 1].
    full_rank_modes : iterable of int
        Modes that are never truncated.
    """
    z = as_tensor(z)
    if z.ndim < 2:
        raise ShapeError("HOSVD needs a tensor of order >= 2")
    if not np.all(np.isfinite(z)):
        raise NumericInputError("tensor has non-finite entries")
    ranks = mode_ranks(z.shape, ratio, tuple(full_rank_modes))
    factors = []
    spectra = []
    for k, r in enumerate(ranks):
        res = svd(unfold(z, k))
        factors.append(np.ascontiguousarray(res.u[:, :r]))
        spectra.append(res.singular_values)
    core = z
    for k, u in enumerate(factors):
        core = mode_product(core, u.T, k)
    return HosvdFactorization(core, tuple(factors), tuple(z.shape), float(ratio), tuple(spectra))


def hosvd_reconstruct(f):
    core = np.asarray(f.core, dtype=np.float64)
    if len(f.factors) != core.ndim or len(f.original_shape) != core.ndim:
        raise CorruptionError("factor count does not match core order")
    out = core
    for k, u in enumerate(f.factors):
        if u.shape != (f.original_shape[k], core.shape[k]):
            raise CorruptionError(
                f"factor {k} has shape {u.shape}, expected {(f.original_shape[k], core.shape[k])}"
            )
        out = mode_product(out, u, k)
    return out


def svd_compress(z, rank):
    """Rank-``rank`` SVD of ``z`` with mode 0 as rows and the rest flattened."""
    z = as_tensor(z)
    if z.ndim < 2:
        raise ShapeError("need at least two modes to flatten")
    x = z.reshape(z.shape[0], -1)
    rank = int(rank)
    if not 1 <= rank <= min(x.shape):
        raise ValueError(f"rank must lie in [1, {min(x.shape)}], got {rank}")
    res = svd(x)
    return SvdFactorization(
        np.ascontiguousarray(res.u[:, :rank]),
        res.singular_values[:rank].copy(),
        np.ascontiguousarray(res.v[:, :rank]),
        tuple(z.shape),
    )


def svd_reconstruct(f):
    return ((f.u * f.singular_values) @ f.v.T).reshape(f.original_shape)


def reconstruct(f):
    if isinstance(f, HosvdFactorization):
        return hosvd_reconstruct(f)
    if isinstance(f, SvdFactorization):
        return svd_reconstruct(f)
    return np.asarray(f.data, dtype=np.float64)


def hosvd_storage_bytes(shape, ranks, precision="fp32"):
    elems = math.prod(ranks) + sum(d * r for d, r in zip(shape, ranks))
    return layout.element_size(precision) * elems + layout.section_header_bytes(
        layout.KIND_HOSVD, len(shape)
    )


def svd_storage_bytes(shape, rank, precision="fp32"):
    m = shape[0]
    cols = math.prod(shape[1:])
    return layout.element_size(precision) * (m * rank + rank + cols * rank) + (
        layout.section_header_bytes(layout.KIND_SVD, len(shape))
    )


def raw_storage_bytes(shape, precision="fp32"):
    return layout.element_size(precision) * math.prod(shape) + layout.section_header_bytes(
        layout.KIND_RAW, len(shape)
    )


def storage_bytes(f, precision="fp32"):
    """Exact serialized size in bytes of a factorization's archive section."""
    if isinstance(f, HosvdFactorization):
        return hosvd_storage_bytes(f.original_shape, f.ranks, precision)
    if isinstance(f, SvdFactorization):
        return svd_storage_bytes(f.original_shape, f.rank, precision)
    if isinstance(f, RawBlock):
        return raw_storage_bytes(f.original_shape, precision)
    raise TypeError(f"cannot size {type(f).__name__}")


def matched_svd_rank(shape, target_bytes, precision="fp32"):
    """Smallest SVD rank whose section is at least ``target_bytes`` (capped at full rank)."""
    max_rank = min(shape[0], math.prod(shape[1:]))
    for r in range(1, max_rank + 1):
        if svd_storage_bytes(shape, r, precision) >= target_bytes:
            return r
    return max_rank


def discarded_energy_bound(f):
    """Sum over modes of the squared singular values dropped by truncation."""
    return float(
        sum(np.sum(s[r:] ** 2) for s, r in zip(f.mode_singular_values, f.ranks))
    )
