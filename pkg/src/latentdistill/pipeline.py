"""End-to-end distillation: per-class DPP selection, HOSVD, budgeted packing."""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .archive_io import (
    MB,
    ClassSection,
    DistilledArchive,
    LatentDataset,
    decode_distilled,
    encode_distilled,
)
from .dpp import (
    EXACT_KDPP,
    GREEDY_MAP,
    greedy_map,
    median_heuristic_sigma,
    rbf_kernel,
    sample_kdpp,
    subset_log_prob,
)
from .errors import DistillError, InfeasibleBudgetError
from .hosvd import (
    DEFAULT_RATIO,
    HosvdFactorization,
    RawBlock,
    hosvd_decompose,
    hosvd_storage_bytes,
    mode_ranks,
    raw_storage_bytes,
    reconstruct,
)
from .synth import class_rng

log = logging.getLogger(__name__)

METHODS = {"kdpp": EXACT_KDPP, "greedy": GREEDY_MAP, EXACT_KDPP: EXACT_KDPP, GREEDY_MAP: GREEDY_MAP}

# widest JSON repr of a float64, used to bound manifest size before selection
_WIDEST_FLOAT = -2.2250738585072014e-308


class IdMismatchError(DistillError, ValueError):
    pass


@dataclass(frozen=True)
class DistillConfig:
    budget_bytes: int
    model_bytes: int = 0
    ratio: float = DEFAULT_RATIO
    selection_method: str = EXACT_KDPP
    sigma: float | None = None
    master_seed: int = 0
    instances_per_class: int | None = None
    precision: str = "fp32"
    standardize: bool = False
    truncate_instance_mode: bool = True
    workers: int = field(default=1, compare=False)

    def __post_init__(self):
        if self.selection_method not in METHODS:
            raise ValueError(f"unknown selection method {self.selection_method!r}")
        object.__setattr__(self, "selection_method", METHODS[self.selection_method])
        if not self.budget_bytes > self.model_bytes >= 0:
            raise ValueError("need budget_bytes > model_bytes >= 0")
        if not 0 < self.ratio <= 1:
            raise ValueError(f"ratio must lie in (0, 1], got {self.ratio}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.instances_per_class is not None and self.instances_per_class < 1:
            raise ValueError("instances_per_class must be >= 1")
        if self.precision not in ("fp32", "fp16"):
            raise ValueError(f"unknown precision {self.precision!r}")

    def snapshot(self):
        snap = asdict(self)
        snap.pop("workers")
        return snap


@dataclass(frozen=True)
class _ClassPlan:
    class_id: int
    indices: np.ndarray
    m: int
    kind: str
    warning: str | None


def _block_kind(shape, cfg):
    ranks = mode_ranks(shape, cfg.ratio, () if cfg.truncate_instance_mode else (0,))
    if hosvd_storage_bytes(shape, ranks, cfg.precision) > raw_storage_bytes(shape, cfg.precision):
        return "raw", ranks
    return "hosvd", ranks


def _plan(ds, cfg, m):
    plans = []
    for c in range(ds.num_classes):
        idx = ds.class_indices(c)
        if idx.size == 0:
            continue
        m_c = min(m, idx.size)
        warning = None
        if m_c < m:
            warning = f"class {c} has {idx.size} items < requested {m}; taking all"
        kind, _ = _block_kind((m_c,) + ds.latent_shape, cfg)
        plans.append(_ClassPlan(c, idx, m_c, kind, warning))
    return plans


def _placeholder_block(shape, kind, cfg):
    zero = np.zeros(1)
    if kind == "raw":
        return RawBlock(np.broadcast_to(zero, shape))
    _, ranks = _block_kind(shape, cfg)
    return HosvdFactorization(
        np.broadcast_to(zero, ranks),
        tuple(np.broadcast_to(zero, (d, r)) for d, r in zip(shape, ranks)),
        shape,
        cfg.ratio,
    )


def _archive_config(ds, cfg):
    snap = cfg.snapshot()
    snap["num_classes"] = ds.num_classes
    if ds.class_names:
        snap["class_names"] = {str(k): v for k, v in sorted(ds.class_names.items())}
    return snap


def planned_total_bytes(ds, cfg, m):
    """Upper bound on the archive size for ``m`` instances per class.

    Exact for the sections; the manifest is sized with each class's longest
    item ids and the widest possible log-probability, so the archive that is
    actually written can only be smaller or equal.
    """
    sections = []
    for p in _plan(ds, cfg, m):
        ids = sorted((ds.item_ids[i] for i in p.indices), key=lambda s: -len(json.dumps(s)))
        block = _placeholder_block((p.m,) + ds.latent_shape, p.kind, cfg)
        sections.append(ClassSection(p.class_id, tuple(ids[:p.m]), block, _WIDEST_FLOAT, p.warning))
    archive = DistilledArchive(
        _archive_config(ds, cfg), sections, ds.latent_shape, cfg.budget_bytes, cfg.model_bytes, cfg.precision
    )
    return archive.total_bytes


def choose_instances_per_class(ds, cfg):
    """Largest uniform ``m`` whose archive plus model fits in the budget."""
    populations = [ds.class_indices(c).size for c in range(ds.num_classes)]
    hi = max(populations)
    allowance = cfg.budget_bytes - cfg.model_bytes
    smallest = planned_total_bytes(ds, cfg, 1)
    if smallest > allowance:
        need = smallest + cfg.model_bytes
        raise InfeasibleBudgetError(
            f"budget {cfg.budget_bytes} B is below the minimal feasible budget {need} B "
            f"({need / MB:.3f} MB) for one instance per class",
            minimal_budget_bytes=need,
        )
    lo = 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if planned_total_bytes(ds, cfg, mid) <= allowance:
            lo = mid
        else:
            hi = mid - 1
    return lo


def _select(ds, plan, cfg):
    if plan.m == plan.indices.size and plan.m < 2:
        return plan.indices, None
    feats = ds.latents[plan.indices].reshape(plan.indices.size, -1).astype(np.float64)
    if cfg.standardize:
        std = feats.std(axis=0)
        std[std == 0] = 1.0
        feats = (feats - feats.mean(axis=0)) / std
    sigma = cfg.sigma if cfg.sigma is not None else median_heuristic_sigma(feats)
    kernel = rbf_kernel(feats, sigma)
    if plan.m == plan.indices.size:
        local = tuple(range(plan.m))
    elif cfg.selection_method == EXACT_KDPP:
        local = sample_kdpp(kernel, plan.m, class_rng(cfg.master_seed, plan.class_id)).indices
    else:
        local = greedy_map(kernel, plan.m).indices
    return plan.indices[list(local)], float(subset_log_prob(kernel, local))


def _distill_class(ds, plan, cfg):
    chosen, log_prob = _select(ds, plan, cfg)
    stack = ds.latents[chosen].astype(np.float64)
    if plan.kind == "raw":
        block = RawBlock(stack)
    else:
        block = hosvd_decompose(stack, cfg.ratio, () if cfg.truncate_instance_mode else (0,))
    if plan.warning:
        log.warning(plan.warning)
    return ClassSection(plan.class_id, tuple(ds.item_ids[i] for i in chosen), block, log_prob, plan.warning)


def distill(ds, cfg):
    """Select, compress and pack ``ds`` into a :class:`DistilledArchive`.

    Raises :class:`InfeasibleBudgetError` when even the planned archive does
    not fit; a returned archive always satisfies its budget.
    """
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    if cfg.instances_per_class is None:
        m = choose_instances_per_class(ds, cfg)
    else:
        m = cfg.instances_per_class
        bound = planned_total_bytes(ds, cfg, m)
        if bound + cfg.model_bytes > cfg.budget_bytes:
            need = planned_total_bytes(ds, cfg, 1) + cfg.model_bytes
            raise InfeasibleBudgetError(
                f"{m} instances per class need up to {bound + cfg.model_bytes} B, "
                f"budget is {cfg.budget_bytes} B; minimal feasible budget is {need} B",
                minimal_budget_bytes=need,
            )
    plans = _plan(ds, cfg, m)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            sections = list(pool.map(lambda p: _distill_class(ds, p, cfg), plans))
    else:
        sections = [_distill_class(ds, p, cfg) for p in plans]
    archive = DistilledArchive(
        _archive_config(ds, cfg), sections, ds.latent_shape, cfg.budget_bytes, cfg.model_bytes, cfg.precision
    )
    if not archive.within_budget:
        raise InfeasibleBudgetError(f"archive of {archive.total_bytes} B exceeds budget")
    return archive


def decode(archive):
    """Reconstruct every stored instance as a :class:`LatentDataset`."""
    ids, classes, parts = [], [], []
    for s in archive.sections:
        recon = reconstruct(s.block)
        if recon.shape != (len(s.item_ids),) + tuple(archive.latent_shape):
            raise IdMismatchError(f"class {s.class_id} reconstructs to {recon.shape}")
        ids.extend(s.item_ids)
        classes.extend([s.class_id] * len(s.item_ids))
        parts.append(recon)
    latents = np.concatenate(parts) if parts else np.zeros((0,) + tuple(archive.latent_shape))
    names = archive.config.get("class_names")
    return LatentDataset(
        ids,
        np.array(classes, dtype=np.int64),
        latents,
        archive.config.get("num_classes", max(classes, default=-1) + 1),
        {int(k): v for k, v in names.items()} if names else None,
    )


@dataclass
class ClassMetrics:
    class_id: int
    m: int
    mse: float
    rel_error: float
    log_prob: float | None = None


@dataclass
class MetricsReport:
    classes: list
    mse: float
    rel_error: float
    items: int
    total_bytes: int | None = None
    raw_fp32_bytes: int = 0

    @property
    def compression_ratio(self):
        if not self.total_bytes:
            return None
        return self.raw_fp32_bytes / self.total_bytes

    def as_dict(self):
        return {
            "items": self.items,
            "mse": self.mse,
            "rel_error": self.rel_error,
            "total_bytes": self.total_bytes,
            "raw_fp32_bytes": self.raw_fp32_bytes,
            "compression_ratio": self.compression_ratio,
            "classes": [asdict(c) for c in self.classes],
        }


def evaluate(original, decoded, archive=None):
    """Compare decoded latents with the originals they were distilled from."""
    where = {item: i for i, item in enumerate(original.item_ids)}
    missing = [i for i in decoded.item_ids if i not in where]
    if missing:
        raise IdMismatchError(f"{len(missing)} decoded ids not in original, e.g. {missing[0]!r}")
    if decoded.latent_shape != original.latent_shape:
        raise IdMismatchError("latent shapes differ")
    log_probs = {}
    if archive is not None:
        log_probs = {s.class_id: s.log_prob for s in archive.sections}
    rows = []
    sq_total = ref_total = 0.0
    for c in np.unique(decoded.class_ids):
        dec_idx = np.flatnonzero(decoded.class_ids == c)
        orig_idx = [where[decoded.item_ids[i]] for i in dec_idx]
        x = original.latents[orig_idx].astype(np.float64)
        diff = decoded.latents[dec_idx].astype(np.float64) - x
        sq = float(np.sum(diff * diff))
        ref = float(np.sum(x * x))
        sq_total += sq
        ref_total += ref
        rows.append(
            ClassMetrics(int(c), int(dec_idx.size), sq / diff.size, math.sqrt(sq / ref) if ref else 0.0,
                         log_probs.get(int(c)))
        )
    n_elem = len(decoded) * int(np.prod(decoded.latent_shape))
    return MetricsReport(
        classes=rows,
        mse=sq_total / n_elem if n_elem else 0.0,
        rel_error=math.sqrt(sq_total / ref_total) if ref_total else 0.0,
        items=len(decoded),
        total_bytes=archive.total_bytes if archive is not None else None,
        raw_fp32_bytes=4 * n_elem,
    )


@dataclass
class SweepRow:
    ratio: float
    bytes: int
    mse: float
    rel_error: float
    m: int


def sweep(ds, ratios, cfg):
    """Distill ``ds`` once per ratio; selection is shared because it is seed-determined."""
    rows = []
    for r in ratios:
        run_cfg = DistillConfig(**{**asdict(cfg), "ratio": float(r)})
        archive = decode_distilled(encode_distilled(distill(ds, run_cfg)))
        report = evaluate(ds, decode(archive), archive)
        m = max(len(s.item_ids) for s in archive.sections)
        rows.append(SweepRow(float(r), archive.total_bytes, report.mse, report.rel_error, m))
    return rows
