"""Multi-level residual quantization cascade.

Levels are fit sequentially: level 1 on the raw embeddings, each later
level on the residuals the previous level left behind.  Residual
propagation is hard: every sample subtracts the single mean vector of
its selected code, the same rule inference uses, so training and
encoding walk identical paths.  Reconstruction sums the selected mean
from every level; quality is the root mean squared distance between the
originals and those sums.
"""

import logging
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import Codebook, EmbeddingMatrix, as_f64_matrix, as_f64_vector, nearest_codes
from .errors import FitError, InputError
from .gmm import GmmLevel, em_fit, log_densities
from .kmeans import FitConfig, KmeansLevel, kmeans_fit

log = logging.getLogger(__name__)


class Method(str, Enum):
    RQ_GMM = "rq-gmm"
    RQ_KMEANS = "rq-kmeans"
    FLAT_VQ = "flat-vq"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class LevelFitReport:
    """Snapshot of one level's fit: iteration count, wall time, and the
    cumulative training RMSE once this level is in place.

    ``objective`` is the fitter's own final criterion value: inertia for
    K-means levels, total log-likelihood for mixture levels.
    """

    level_index: int
    iterations: int
    wall_time_s: float
    rmse: float
    objective: float


@dataclass(frozen=True)
class RqModel:
    """A fitted cascade: L level records of one quantizer type.

    ``levels`` entries are all GmmLevel or all KmeansLevel; mixing
    quantizer types across levels is not supported.
    """

    levels: tuple
    method: Method
    dim: int
    k_per_level: int
    fit_report: tuple
    config: FitConfig = None

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "fit_report", tuple(self.fit_report))
        if self.config is not None and not isinstance(self.config, FitConfig):
            raise InputError(f"config must be a FitConfig, got {type(self.config).__name__}")
        if len(self.levels) < 1:
            raise InputError("a model needs at least one level")
        if self.method is Method.FLAT_VQ and len(self.levels) != 1:
            raise InputError("flat-vq models have exactly one level")
        want = GmmLevel if self.method is Method.RQ_GMM else KmeansLevel
        for li, level in enumerate(self.levels):
            if not isinstance(level, want):
                raise InputError(
                    f"level {li + 1} is {type(level).__name__}, expected {want.__name__} "
                    f"for method {self.method}"
                )
            if level.k != self.k_per_level:
                raise InputError(f"level {li + 1} has k={level.k}, expected {self.k_per_level}")
            if level.d != self.dim:
                raise InputError(f"level {li + 1} has d={level.d}, expected {self.dim}")

    @property
    def n_levels(self):
        return len(self.levels)

    def level_means(self, li):
        """Mean vectors of level li as a (K, D) array."""
        level = self.levels[li]
        if isinstance(level, GmmLevel):
            return level.means
        return level.centroids.vectors

    @property
    def codebooks(self):
        return [Codebook(self.level_means(li)) for li in range(self.n_levels)]


@dataclass(frozen=True)
class SemanticId:
    """The discrete code sequence for one embedding, one code per level."""

    codes: tuple

    def __post_init__(self):
        converted = []
        for c in self.codes:
            i = int(c)
            if i != c:
                raise InputError(f"codes must be integers, got {c!r}")
            converted.append(i)
        codes = tuple(converted)
        object.__setattr__(self, "codes", codes)
        if len(codes) < 1:
            raise InputError("a semantic ID needs at least one code")
        if any(c < 0 for c in codes):
            raise InputError(f"codes must be non-negative, got {codes}")

    def __len__(self):
        return len(self.codes)

    def __iter__(self):
        return iter(self.codes)


@dataclass(frozen=True)
class QualityReport:
    """Reconstruction RMSE plus per-level codebook usage statistics."""

    rmse: float
    utilization_per_level: np.ndarray
    code_histogram_per_level: np.ndarray
    n_samples: int

    def __post_init__(self):
        util = np.asarray(self.utilization_per_level, dtype=np.float64)
        hist = np.asarray(self.code_histogram_per_level, dtype=np.int64)
        object.__setattr__(self, "utilization_per_level", util)
        object.__setattr__(self, "code_histogram_per_level", hist)
        if self.rmse < 0:
            raise InputError(f"rmse must be >= 0, got {self.rmse}")
        if hist.ndim != 2 or hist.shape[0] != util.shape[0]:
            raise InputError("histogram must be (L, K) with one row per utilization entry")
        if np.any(hist.sum(axis=1) != self.n_samples):
            raise InputError("each level's histogram must sum to n_samples")
        expected = np.count_nonzero(hist, axis=1) / hist.shape[1]
        if not np.allclose(util, expected, rtol=0, atol=1e-12):
            raise InputError("utilization must equal nonzero histogram bins / K")


def _as_matrix(data):
    if isinstance(data, EmbeddingMatrix):
        return data.data
    return as_f64_matrix(data)


def _rmse_of(residual):
    """Root mean squared norm of the rows; the shared quality formula."""
    n = residual.shape[0]
    return float(np.sqrt(np.sum(residual * residual) / n))


def _assign_level(residual, level, threads):
    """Code index per row under one fitted level.

    K-means levels pick the nearest centroid; mixture levels pick the
    maximum-posterior component, which weighs dimensions by the learned
    variances instead of treating them equally.
    """
    if isinstance(level, GmmLevel):
        logdens = log_densities(
            residual, level.means, level.variances, level.weights, threads=threads
        )
        return np.argmax(logdens, axis=1)
    idx, _ = nearest_codes(residual, level.centroids.vectors, threads=threads)
    return idx


def _fit_one_level(residual, method, k, cfg, threads):
    if method is Method.RQ_GMM:
        level = em_fit(residual, k, cfg, threads=threads)
        return level, float(level.loglik_trace[-1]), level.iterations
    level = kmeans_fit(residual, k, cfg, threads=threads)
    return level, float(level.inertia_trace[-1]), level.iterations


def fit(data, method, levels, k, cfg=None, threads=1):
    """Fit an L-level cascade and return the model.

    Each level is fit on the residuals of the previous ones; after a
    level is fit, residuals advance by subtracting the selected mean
    (hard assignment, the same rule encode uses).
    """
    x = _as_matrix(data)
    method = Method(method)
    cfg = cfg if cfg is not None else FitConfig()
    n, d = x.shape
    if levels < 1:
        raise InputError(f"levels must be >= 1, got {levels}")
    if method is Method.FLAT_VQ and levels != 1:
        raise InputError("flat-vq fits exactly one level; use rq-kmeans for deeper cascades")
    if k > n:
        raise InputError(f"k={k} exceeds sample count n={n}")

    residual = x.copy()
    fitted = []
    reports = []
    for li in range(levels):
        t0 = time.perf_counter()
        try:
            level, objective, iters = _fit_one_level(residual, method, k, cfg, threads)
        except FitError as e:
            raise FitError(f"level {li + 1}/{levels}: {e}") from e
        wall = time.perf_counter() - t0
        codes = _assign_level(residual, level, threads)
        means = level.means if isinstance(level, GmmLevel) else level.centroids.vectors
        residual -= means[codes]
        rmse = _rmse_of(residual)
        reports.append(LevelFitReport(li, iters, wall, rmse, objective))
        fitted.append(level)
        log.info(
            "fit level %d/%d (%s): %d iterations, rmse %.6g, %.2fs",
            li + 1, levels, method, iters, rmse, wall,
        )
    return RqModel(tuple(fitted), method, d, k, tuple(reports), cfg)


def encode_batch(data, model, threads=1):
    """Code indices for every row, shape (N, L), dtype int64."""
    x = _as_matrix(data)
    if x.shape[1] != model.dim:
        raise InputError(f"dimension mismatch: data has d={x.shape[1]}, model d={model.dim}")
    residual = x.copy()
    codes = np.empty((x.shape[0], model.n_levels), dtype=np.int64)
    for li, level in enumerate(model.levels):
        idx = _assign_level(residual, level, threads)
        codes[:, li] = idx
        residual -= model.level_means(li)[idx]
    return codes


def encode(x, model):
    """The semantic ID of one embedding: per-level code choices."""
    values = as_f64_vector(x, "embedding")
    codes = encode_batch(values[None, :], model)
    return SemanticId(tuple(int(c) for c in codes[0]))


def reconstruct(sid, model):
    """Sum of the selected mean vectors across levels."""
    codes = list(sid.codes) if isinstance(sid, SemanticId) else [int(c) for c in sid]
    if len(codes) != model.n_levels:
        raise InputError(f"ID has {len(codes)} codes, model has {model.n_levels} levels")
    out = np.zeros(model.dim, dtype=np.float64)
    for li, c in enumerate(codes):
        if not 0 <= c < model.k_per_level:
            raise InputError(f"code {c} at level {li + 1} out of range [0, {model.k_per_level})")
        out += model.level_means(li)[c]
    return out


def evaluate(data, model, threads=1):
    """Quality of the model on data: RMSE, per-level utilization, histograms.

    The error is accumulated through the same residual chain encoding
    walks, so the reported RMSE matches the convergence traces exactly.
    """
    x = _as_matrix(data)
    if x.shape[1] != model.dim:
        raise InputError(f"dimension mismatch: data has d={x.shape[1]}, model d={model.dim}")
    n = x.shape[0]
    k = model.k_per_level
    residual = x.copy()
    hist = np.zeros((model.n_levels, k), dtype=np.int64)
    for li, level in enumerate(model.levels):
        idx = _assign_level(residual, level, threads)
        hist[li] = np.bincount(idx, minlength=k)
        residual -= model.level_means(li)[idx]
    util = np.count_nonzero(hist, axis=1) / k
    return QualityReport(_rmse_of(residual), util, hist, n)


def convergence_trace(data, method, levels, k, cfg=None, threads=1):
    """Cumulative training RMSE after every fitting iteration of every level.

    Returns (traces, model): one float array per level, plus the model
    those traces describe.  The final value of the last level's trace
    equals evaluate(data, model).rmse.
    """
    x = _as_matrix(data)
    method = Method(method)
    cfg = cfg if cfg is not None else FitConfig()
    n, d = x.shape
    if levels < 1:
        raise InputError(f"levels must be >= 1, got {levels}")
    if method is Method.FLAT_VQ and levels != 1:
        raise InputError("flat-vq fits exactly one level; use rq-kmeans for deeper cascades")
    if k > n:
        raise InputError(f"k={k} exceeds sample count n={n}")

    residual = x.copy()
    fitted = []
    reports = []
    traces = []
    for li in range(levels):
        t0 = time.perf_counter()
        if method is Method.RQ_GMM:
            series = []

            def record(means, variances, weights, _r=residual, _series=series):
                logdens = log_densities(_r, means, variances, weights, threads=threads)
                idx = np.argmax(logdens, axis=1)
                _series.append(_rmse_of(_r - means[idx]))

            try:
                level = em_fit(residual, k, cfg, threads=threads, iter_cb=record)
            except FitError as e:
                raise FitError(f"level {li + 1}/{levels}: {e}") from e
            objective, iters = float(level.loglik_trace[-1]), level.iterations
            trace = np.asarray(series)
        else:
            try:
                level = kmeans_fit(residual, k, cfg, threads=threads)
            except FitError as e:
                raise FitError(f"level {li + 1}/{levels}: {e}") from e
            objective, iters = float(level.inertia_trace[-1]), level.iterations
            trace = np.sqrt(level.inertia_trace / n)
        wall = time.perf_counter() - t0
        codes = _assign_level(residual, level, threads)
        means = level.means if isinstance(level, GmmLevel) else level.centroids.vectors
        residual -= means[codes]
        traces.append(trace)
        reports.append(LevelFitReport(li, iters, wall, _rmse_of(residual), objective))
        fitted.append(level)
    model = RqModel(tuple(fitted), method, d, k, tuple(reports), cfg)
    return traces, model
