"""Determinantal point process selection over a similarity kernel.

Covers RBF kernel construction, exact subset log-probabilities under the
L-ensemble ``P(S) = det(L_S) / det(L + I)``, exact fixed-size (k-DPP)
sampling and deterministic greedy MAP selection.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import (
    DefinitenessError,
    DegenerateBandwidthError,
    InfeasibleSizeError,
    PSDViolationError,
    ShapeError,
)
from .linalg import logdet_psd, sym_eig

EXACT_KDPP = "exact_kdpp"
GREEDY_MAP = "greedy_map"

# eigenvalues in [-PSD_TOL * n, 0) are clamped to zero before sampling
PSD_TOL = 1e-9
# relative conditional-variance floor below which a greedy gain counts as -inf
GREEDY_FLOOR = 1e-12


@dataclass
class SimilarityKernel:
    l: np.ndarray
    sigma: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.l = np.asarray(self.l, dtype=np.float64)
        if self.l.ndim != 2 or self.l.shape[0] != self.l.shape[1]:
            raise ShapeError(f"kernel must be square, got shape {self.l.shape}")

    @property
    def n(self):
        return self.l.shape[0]

    def log_normalizer(self):
        """``log det(L + I)``."""
        if "log_norm" not in self._cache:
            self._cache["log_norm"] = logdet_psd(self.l + np.eye(self.n))
        return self._cache["log_norm"]

    def spectrum(self):
        """Clamped eigenvalues (ascending), eigenvectors and numerical rank."""
        if "spectrum" not in self._cache:
            eig = sym_eig(self.l)
            lam = eig.eigenvalues.copy()
            if lam[0] < -PSD_TOL * self.n:
                raise PSDViolationError(
                    f"kernel has eigenvalue {lam[0]:.3e}, below -{PSD_TOL}*n"
                )
            lam[lam < 0] = 0.0
            tol = lam[-1] * self.n * np.finfo(np.float64).eps
            lam[lam <= tol] = 0.0
            rank = int(np.count_nonzero(lam))
            self._cache["spectrum"] = (lam, eig.eigenvectors, rank)
        return self._cache["spectrum"]


@dataclass(frozen=True)
class Selection:
    indices: tuple
    method: str
    log_prob: float | None = None
    order: tuple = ()

    def __len__(self):
        return len(self.indices)


def _as_kernel(kernel):
    if isinstance(kernel, SimilarityKernel):
        return kernel
    return SimilarityKernel(kernel)


def _as_points(points):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ShapeError("points must be a sequence of equal-length vectors")
    if pts.shape[0] == 0:
        raise ShapeError("point set is empty")
    return pts


def rbf_kernel(points, sigma):
    """``L_ij = exp(-||z_i - z_j||^2 / (2 sigma^2))`` over the rows of ``points``."""
    try:
        pts = _as_points(points)
    except ValueError as exc:
        raise ShapeError(f"points have mismatched dimensions: {exc}") from exc
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    sq = squareform(pdist(pts, "sqeuclidean")) if pts.shape[0] > 1 else np.zeros((1, 1))
    return SimilarityKernel(np.exp(-sq / (2.0 * sigma * sigma)), float(sigma))


def median_heuristic_sigma(points):
    """Median of all pairwise Euclidean distances."""
    pts = _as_points(points)
    if pts.shape[0] < 2:
        raise DegenerateBandwidthError("median heuristic needs at least two points")
    sigma = float(np.median(pdist(pts, "euclidean")))
    if not sigma > 0:
        raise DegenerateBandwidthError("points are (mostly) identical; median distance is 0")
    return sigma


def _check_indices(indices, n):
    idx = [int(i) for i in indices]
    if len(set(idx)) != len(idx):
        raise ValueError(f"indices are not unique: {idx}")
    if any(i < 0 or i >= n for i in idx):
        raise IndexError(f"indices out of range [0, {n}): {idx}")
    return sorted(idx)


def subset_log_prob(kernel, indices):
    """``log det(L_S) - log det(L + I)``; ``-inf`` when ``L_S`` is singular."""
    k = _as_kernel(kernel)
    idx = _check_indices(indices, k.n)
    if not idx:
        return -k.log_normalizer()
    try:
        logdet = logdet_psd(k.l[np.ix_(idx, idx)])
    except DefinitenessError:
        return -np.inf
    return logdet - k.log_normalizer()


def _log_esp_table(lam, size):
    """``log e_l(lam_1..lam_n)`` for ``l <= size`` over every prefix ``n``."""
    n = lam.size
    with np.errstate(divide="ignore"):
        loglam = np.log(lam)
    table = np.full((size + 1, n + 1), -np.inf)
    table[0, :] = 0.0
    for j in range(1, n + 1):
        table[1:, j] = np.logaddexp(table[1:, j - 1], loglam[j - 1] + table[:-1, j - 1])
    return loglam, table


def _sample_projection(vectors, rng):
    """Sequentially sample one item per column of an orthonormal basis."""
    v = vectors.copy()
    chosen = []
    while v.shape[1] > 0:
        cdf = np.cumsum(np.einsum("ij,ij->i", v, v))
        i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        i = min(i, v.shape[0] - 1)
        chosen.append(i)
        if v.shape[1] == 1:
            break
        j = int(np.argmax(np.abs(v[i])))
        pivot = v[:, j]
        v = v - np.outer(pivot / pivot[i], v[i])
        v = np.delete(v, j, axis=1)
        if v.shape[1] == 1:
            v = v / np.linalg.norm(v)
        else:
            v, _ = np.linalg.qr(v)
    return chosen


def sample_kdpp(kernel, size, rng):
    """Draw an exact sample of the k-DPP with ``k = size``.

    Eigenvectors are chosen with probabilities given by elementary symmetric
    polynomials of the spectrum, then items are drawn one by one from the
    resulting projection DPP.

    Parameters
    ----------
    kernel : SimilarityKernel or array_like
    size : int
    rng : numpy.random.Generator or int
        Seeded random source; an int is used as a seed.
    """
    k = _as_kernel(kernel)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    size = int(size)
    if size < 0:
        raise InfeasibleSizeError(f"size must be non-negative, got {size}")
    if size == 0:
        return Selection((), EXACT_KDPP)
    lam, vecs, rank = k.spectrum()
    if size > rank:
        raise InfeasibleSizeError(f"size {size} exceeds kernel rank {rank}")

    cache_key = ("esp", size)
    if cache_key not in k._cache:
        loglam, table = _log_esp_table(lam, size)
        k._cache[cache_key] = (loglam.tolist(), table.tolist())
    loglam, table = k._cache[cache_key]

    picked = []
    remaining = size
    for j in range(lam.size, 0, -1):
        if remaining == 0:
            break
        log_p = loglam[j - 1] + table[remaining - 1][j - 1] - table[remaining][j]
        p = math.exp(log_p) if log_p > -np.inf else 0.0
        if rng.random() < p:
            picked.append(j - 1)
            remaining -= 1
    if remaining:
        raise InfeasibleSizeError(f"could not select {size} eigenvectors")

    items = _sample_projection(vecs[:, picked[::-1]], rng)
    return Selection(tuple(sorted(items)), EXACT_KDPP, order=tuple(items))


def greedy_map(kernel, size):
    """Greedy maximisation of ``log det(L_S)`` with incremental Cholesky updates.

    Each step adds the item with the largest conditional variance given the
    items already chosen; ties go to the lowest index. Items whose
    conditional variance falls below ``GREEDY_FLOOR * max(diag(L))`` have a
    gain of ``-inf`` and are only taken once nothing else is left.
    """
    k = _as_kernel(kernel)
    n = k.n
    size = int(size)
    if not 1 <= size <= n:
        raise InfeasibleSizeError(f"size must be in [1, {n}], got {size}")
    l = k.l
    cond_var = np.diag(l).copy()
    floor = GREEDY_FLOOR * max(float(cond_var.max()), 0.0)
    rows = np.zeros((size, n))
    available = np.ones(n, dtype=bool)
    chosen = []
    for t in range(size):
        gains = np.where(available & (cond_var > floor), cond_var, -np.inf)
        if np.isneginf(gains.max()):
            j = int(np.flatnonzero(available)[0])
        else:
            j = int(np.argmax(gains))
        chosen.append(j)
        available[j] = False
        if cond_var[j] > floor:
            e = (l[j] - rows[:t, j] @ rows[:t]) / np.sqrt(cond_var[j])
            rows[t] = e
            cond_var = cond_var - e * e
    return Selection(tuple(sorted(chosen)), GREEDY_MAP, order=tuple(chosen))
