"""Lloyd's K-means with k-means++ seeding.

Used directly as the per-level quantizer of the residual K-means cascade
and as the warm start for the Gaussian-mixture fitter.  Empty clusters
are reseeded to the sample farthest from its current centroid, which
keeps every code in use on the training data and prevents codebook
collapse.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .core import Codebook, EmbeddingMatrix, as_f64_matrix, nearest_codes
from .errors import InputError

log = logging.getLogger(__name__)

# Denominator guard for relative-change convergence tests.
REL_EPS = 1e-30


@dataclass(frozen=True)
class FitConfig:
    """Shared iteration budget and convergence settings for all fitters."""

    max_iters: int = 30
    tol: float = 1e-6
    seed: int = 0
    reseed_empty: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise InputError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise InputError(f"tol must be > 0, got {self.tol}")
        if self.seed < 0:
            raise InputError(f"seed must be a non-negative integer, got {self.seed}")


@dataclass(frozen=True)
class KmeansLevel:
    """One fitted K-means level: centroids, final cluster sizes, inertia history."""

    centroids: Codebook
    counts: np.ndarray
    inertia_trace: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        object.__setattr__(self, "inertia_trace", np.asarray(self.inertia_trace, dtype=np.float64))
        if self.counts.shape != (self.centroids.k,):
            raise InputError("counts length must equal codebook size")
        if np.any(self.counts < 0):
            raise InputError("counts must be non-negative")

    @property
    def k(self):
        return self.centroids.k

    @property
    def d(self):
        return self.centroids.d

    @property
    def iterations(self):
        return len(self.inertia_trace)


def _data_array(data):
    if isinstance(data, EmbeddingMatrix):
        return data.data
    return as_f64_matrix(data)


def kmeanspp_init(data, k, seed):
    """Choose k centers by D^2-weighted sequential sampling.

    Greedy flavor, as in the common library implementations: each pick
    draws a handful of candidates from the D^2 distribution and keeps the
    one that lowers the total potential the most, which all but removes
    the classic failure of leaving a far cluster without a center.
    Deterministic given the seed: draws come from a PCG64 stream and the
    weighted picks are inverse-CDF on uniforms, so every platform
    reproduces the same centers.
    """
    x = _data_array(data)
    n = x.shape[0]
    if k > n:
        raise InputError(f"k={k} exceeds sample count n={n}")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    rng = np.random.Generator(np.random.PCG64(seed))
    n_cand = 2 + int(np.log(k))
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(0, n)
    # Running min squared distance to the chosen set.
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            u = rng.random(n_cand) * total
            cand = np.searchsorted(np.cumsum(d2), u, side="right")
            np.minimum(cand, n - 1, out=cand)
            best_d2 = None
            best_pot = np.inf
            idx = int(cand[0])
            for c in cand:
                nd2 = np.minimum(d2, np.sum((x - x[int(c)]) ** 2, axis=1))
                pot = nd2.sum()
                if pot < best_pot:
                    best_pot = pot
                    best_d2 = nd2
                    idx = int(c)
            d2 = best_d2
        else:
            # All remaining points coincide with chosen centers.
            idx = int(rng.integers(0, n))
            np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1), out=d2)
        chosen[i] = idx
    return Codebook(x[chosen].copy())


def _assign_with_reseed(x, centroids, reseed_empty, threads):
    """Assign rows to centroids; reseed empty clusters until none remain.

    Reseeding moves the lowest-index empty centroid onto the sample
    farthest from its assigned centroid, then re-assigns.  Each round
    strictly reduces total inertia, so the loop terminates; a zero
    maximum distance means the data cannot fill more clusters and the
    remaining empties are left as-is.
    """
    k = centroids.shape[0]
    labels, dmin2 = nearest_codes(x, centroids, threads=threads)
    if not reseed_empty:
        return labels, dmin2, centroids
    guard = 8 * k
    while guard > 0:
        counts = np.bincount(labels, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size == 0:
            break
        far = int(np.argmax(dmin2))
        if dmin2[far] <= 0.0:
            break
        centroids = centroids.copy()
        centroids[empties[0]] = x[far]
        labels, dmin2 = nearest_codes(x, centroids, threads=threads)
        guard -= 1
    return labels, dmin2, centroids


def kmeans_fit(data, k, cfg, threads=1):
    """Fit one K-means level by exact Lloyd iterations.

    Alternates nearest-centroid assignment and centroid means until the
    relative inertia change drops below cfg.tol or cfg.max_iters is
    reached.  The returned centroids are exactly the ones used for the
    final recorded assignment, so counts, inertia, and later encodes all
    agree.
    """
    x = _data_array(data)
    n = x.shape[0]
    if k > n:
        raise InputError(f"k={k} exceeds sample count n={n}")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")

    centroids = kmeanspp_init(x, k, cfg.seed).vectors.copy()
    trace = []
    labels = None
    for it in range(cfg.max_iters):
        labels, dmin2, centroids = _assign_with_reseed(x, centroids, cfg.reseed_empty, threads)
        inertia = float(dmin2.sum())
        trace.append(inertia)
        if it > 0:
            prev = trace[-2]
            if abs(prev - inertia) / max(prev, REL_EPS) < cfg.tol:
                break
        if it == cfg.max_iters - 1:
            break
        # M-step: per-cluster means; clusters left empty keep their centroid.
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        counts = np.bincount(labels, minlength=k)
        nonzero = counts > 0
        centroids = centroids.copy()
        centroids[nonzero] = sums[nonzero] / counts[nonzero, None]
    log.debug("kmeans: k=%d converged after %d iterations (inertia %.6g)", k, len(trace), trace[-1])

    counts = np.bincount(labels, minlength=k)
    cb = Codebook(centroids)
    cb.warn_if_degenerate()
    return KmeansLevel(cb, counts, np.asarray(trace))
