"""Diagonal-covariance Gaussian mixture fitting via EM on one residual level.

Each code vector carries a full Gaussian: mean, per-dimension variance,
and a mixing weight, so assignment can weight dimensions by how spread
out each cluster actually is instead of treating all directions equally.
Everything evaluates in log space: with hundreds of dimensions a direct
product of per-dimension densities underflows to zero long before the
posterior ratios become meaningless, so unnormalized densities are never
exponentiated.  Soft posteriors drive parameter learning; code selection
is the hard argmax of the posterior.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .core import Codebook, EmbeddingMatrix, as_f64_matrix, as_f64_vector
from .errors import FitError, InputError, InternalError
from .kmeans import REL_EPS, kmeans_fit
from .core import nearest_codes
from ._parallel import run_chunks

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))

# A component whose effective sample count falls below this fraction of N
# is considered starved and gets reseeded.
STARVATION_FRACTION = 1e-6
MAX_RESEEDS_PER_COMPONENT = 3

# Variance floor coefficients: relative to the per-dimension data variance,
# with an absolute fallback for dimensions that carry no spread at all.
VAR_FLOOR_REL = 1e-6
VAR_FLOOR_ABS = 1e-12


@dataclass(frozen=True)
class GmmLevel:
    """One fitted mixture level: K means, K diagonal variances, K weights.

    ``loglik_trace`` holds the total data log-likelihood measured at the
    start of each EM iteration (before that iteration's parameter
    update); it is non-decreasing apart from the documented reseeding
    edge case.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    loglik_trace: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", as_f64_matrix(self.means, "means"))
        object.__setattr__(self, "variances", as_f64_matrix(self.variances, "variances"))
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "loglik_trace", np.asarray(self.loglik_trace, dtype=np.float64))
        if self.variances.shape != self.means.shape:
            raise InputError("variances shape must match means shape")
        if w.shape != (self.means.shape[0],):
            raise InputError("weights length must equal component count")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InputError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InputError(f"weights must sum to 1 within 1e-9, got {w.sum()!r}")
        if np.any(self.variances <= 0):
            raise InputError("variances must be strictly positive")

    @property
    def k(self):
        return self.means.shape[0]

    @property
    def d(self):
        return self.means.shape[1]

    @property
    def iterations(self):
        return len(self.loglik_trace)

    @property
    def codebook(self):
        return Codebook(self.means)


@dataclass(frozen=True)
class Responsibilities:
    """Posterior component probabilities for one residual; sums to one."""

    gamma: np.ndarray

    def __post_init__(self):
        g = as_f64_vector(self.gamma, "responsibilities")
        object.__setattr__(self, "gamma", g)
        if np.any(g < 0) or np.any(g > 1):
            raise InputError("responsibilities must lie in [0, 1]")
        if abs(g.sum() - 1.0) > 1e-9:
            raise InputError(f"responsibilities must sum to 1 within 1e-9, got {g.sum()!r}")

    @property
    def k(self):
        return self.gamma.shape[0]


def logsumexp(a, axis=None):
    """log(sum(exp(a))) without overflow; rows of all -inf stay -inf."""
    m = np.max(a, axis=axis, keepdims=True)
    shifted = a - np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True)) + np.where(
            np.isfinite(m), m, -np.inf
        )
    return out if axis is None else np.squeeze(out, axis=axis)


def _log_weights(weights):
    with np.errstate(divide="ignore"):
        return np.where(weights > 0, np.log(np.maximum(weights, np.finfo(np.float64).tiny)), -np.inf)


def _log_density_consts(means, variances, weights):
    """Per-component additive constant: log pi_k - 0.5 * sum_j log(2 pi sigma_kj^2)."""
    return _log_weights(weights) - 0.5 * np.sum(LOG_2PI + np.log(variances), axis=1)


def log_densities(rows, means, variances, weights, threads=1):
    """Weighted log density of every row under every component, shape (N, K).

    Entry (i, k) is log pi_k + log N(x_i | mu_k, diag sigma_k^2), computed
    fully in log space.  The quadratic term uses direct squared
    differences so it agrees with a per-row scan to float64 precision.
    """
    n, d = rows.shape
    k = means.shape[0]
    consts = _log_density_consts(means, variances, weights)
    inv_var = 1.0 / variances
    out = np.empty((n, k), dtype=np.float64)

    def kernel(start, stop):
        diff = rows[start:stop, None, :] - means[None, :, :]
        np.square(diff, out=diff)
        quad = np.einsum("nkd,kd->nk", diff, inv_var)
        out[start:stop] = consts[None, :] - 0.5 * quad

    run_chunks(kernel, n, kd=k * d, threads=threads)
    return out


def log_density(x, level, k):
    """Weighted log density of one residual under component k."""
    values = x.values if hasattr(x, "values") else as_f64_vector(x, "residual")
    if not 0 <= k < level.k:
        raise InputError(f"component index {k} out of range [0, {level.k})")
    if values.shape[0] != level.d:
        raise InputError(f"dimension mismatch: residual d={values.shape[0]}, level d={level.d}")
    row = log_densities(values[None, :], level.means, level.variances, level.weights)
    return float(row[0, k])


def _normalize_log_rows(logdens):
    """Responsibilities from log densities; raises if a row has no support."""
    norm = logsumexp(logdens, axis=1)
    if not np.all(np.isfinite(norm)):
        raise InternalError("all mixture components have zero density for some sample")
    return np.exp(logdens - norm[:, None]), norm


def responsibilities(x, level):
    """Posterior probability of each component for one residual."""
    values = x.values if hasattr(x, "values") else as_f64_vector(x, "residual")
    if values.shape[0] != level.d:
        raise InputError(f"dimension mismatch: residual d={values.shape[0]}, level d={level.d}")
    logdens = log_densities(values[None, :], level.means, level.variances, level.weights)
    gamma, _ = _normalize_log_rows(logdens)
    return Responsibilities(gamma[0])


def map_assign(gamma):
    """Index of the most probable component; ties break toward the lowest index."""
    g = gamma.gamma if isinstance(gamma, Responsibilities) else np.asarray(gamma)
    return int(np.argmax(g))


def map_assign_batch(rows, level, threads=1):
    """Most probable component per row (argmax of the posterior)."""
    logdens = log_densities(rows, level.means, level.variances, level.weights, threads=threads)
    return np.argmax(logdens, axis=1)


def _init_from_kmeans(x, k, cfg, threads):
    """Warm-start parameters: K-means centroids, within-cluster variances,
    cluster proportions."""
    km = kmeans_fit(x, k, cfg, threads=threads)
    centroids = km.centroids.vectors
    labels, _ = nearest_codes(x, centroids, threads=threads)
    counts = np.bincount(labels, minlength=k)

    sq = np.zeros((k, x.shape[1]), dtype=np.float64)
    dev = x - centroids[labels]
    np.add.at(sq, labels, dev * dev)
    variances = np.empty_like(sq)
    nonzero = counts > 0
    variances[nonzero] = sq[nonzero] / counts[nonzero, None]
    global_var = x.var(axis=0)
    variances[~nonzero] = global_var
    weights = counts / x.shape[0]
    return centroids.copy(), variances, weights, km


def em_fit(data, k, cfg, threads=1, iter_cb=None, init=None):
    """Fit a diagonal-covariance mixture by EM, warm-started from K-means.

    The E-step computes posteriors in log space; the M-step re-estimates
    weights, means, and per-dimension variances from those posteriors,
    flooring variances so no component can collapse onto a point.
    Components whose effective count starves are reseeded onto the worst
    explained sample (at most MAX_RESEEDS_PER_COMPONENT times each).

    ``iter_cb``, when given, is called with (means, variances, weights)
    once per EM iteration, after that iteration's parameter update (the
    final converged iteration updates nothing and reports the parameters
    unchanged); used to trace reconstruction quality.
    ``init`` replaces the K-means warm start with an explicit (means,
    variances, weights) triple; meant for controlled experiments.
    """
    x = data.data if isinstance(data, EmbeddingMatrix) else as_f64_matrix(data)
    n, d = x.shape
    if k > n:
        raise InputError(f"k={k} exceeds sample count n={n}")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")

    global_var = x.var(axis=0)
    var_floor = np.maximum(VAR_FLOOR_REL * global_var, VAR_FLOOR_ABS)

    if init is not None:
        means, variances, weights = init
        means = as_f64_matrix(means, "initial means").copy()
        variances = as_f64_matrix(variances, "initial variances").copy()
        weights = np.asarray(weights, dtype=np.float64).copy()
        if means.shape != (k, d) or variances.shape != (k, d) or weights.shape != (k,):
            raise InputError("init shapes must be (k, d), (k, d), and (k,)")
        if np.any(variances <= 0) or np.any(weights < 0) or weights.sum() <= 0:
            raise InputError("init variances must be positive and weights non-negative")
        weights = weights / weights.sum()
    else:
        means, variances, weights, _ = _init_from_kmeans(x, k, cfg, threads)
    variances = np.maximum(variances, var_floor)

    reseeds_left = np.full(k, MAX_RESEEDS_PER_COMPONENT, dtype=np.int64)
    trace = []
    prev_ll = None
    for it in range(cfg.max_iters):
        logdens = log_densities(x, means, variances, weights, threads=threads)
        gamma, rowlik = _normalize_log_rows(logdens)
        ll = float(rowlik.sum())
        trace.append(ll)

        effective = gamma.sum(axis=0)
        starved = np.flatnonzero(effective < STARVATION_FRACTION * n)
        healthy = np.flatnonzero(effective >= STARVATION_FRACTION * n)
        # A fit only counts as converged once every component carries mass;
        # otherwise a reseed is still pending and the likelihood will move.
        if (
            starved.size == 0
            and prev_ll is not None
            and abs(ll - prev_ll) / max(abs(prev_ll), REL_EPS) < cfg.tol
        ):
            # The confirming pass is still an iteration; report it so per
            # iteration traces line up with the trace length.
            if iter_cb is not None:
                iter_cb(means, variances, weights)
            break
        prev_ll = ll

        # M-step over healthy components.
        new_means = means.copy()
        new_vars = variances.copy()
        new_weights = weights.copy()
        eff_safe = np.maximum(effective, np.finfo(np.float64).tiny)
        new_means[healthy] = (gamma[:, healthy].T @ x) / eff_safe[healthy, None]
        for comp in healthy:
            dev = x - new_means[comp]
            np.square(dev, out=dev)
            new_vars[comp] = (gamma[:, comp] @ dev) / eff_safe[comp]
        new_weights[healthy] = effective[healthy] / n

        if starved.size:
            # Worst-explained samples, one per starved component.
            order = np.argsort(rowlik, kind="stable")
            for j, comp in enumerate(starved):
                if reseeds_left[comp] == 0:
                    raise FitError(
                        f"component {comp} starved after "
                        f"{MAX_RESEEDS_PER_COMPONENT} reseeds (effective count "
                        f"{effective[comp]:.3g} of n={n})"
                    )
                reseeds_left[comp] -= 1
                new_means[comp] = x[order[j % n]]
                new_vars[comp] = np.maximum(global_var, var_floor)
                new_weights[comp] = 1.0 / k
            log.debug("gmm: reseeded components %s at iteration %d", starved.tolist(), it)

        means = new_means
        variances = np.maximum(new_vars, var_floor)
        weights = new_weights / new_weights.sum()
        if iter_cb is not None:
            iter_cb(means, variances, weights)

    log.debug("gmm: k=%d finished after %d EM iterations (loglik %.6g)", k, len(trace), trace[-1])
    Codebook(means).warn_if_degenerate()
    return GmmLevel(means, variances, weights, np.asarray(trace))
