"""Multi-seed method comparison on synthetic suites.

Every (method, seed) cell draws the same data for a given seed, fits a
cascade, and evaluates it; the report keeps every cell (failures are
recorded, not dropped) plus per-method medians and win counts, so one
run yields the whole quality table for a suite.
"""

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import FitError, InputError
from .kmeans import FitConfig
from .pipeline import Method, evaluate, fit
from .synth import generate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CellResult:
    """One (method, seed) run: its quality report, or why it failed."""

    method: Method
    seed: int
    quality: object
    iterations_per_level: tuple
    wall_time_s: float
    error: str = ""

    @property
    def failed(self):
        return self.quality is None


@dataclass(frozen=True)
class MethodSummary:
    """Aggregates over one method's non-failed cells."""

    method: Method
    median_rmse: float
    median_utilization: np.ndarray
    rmse_wins: int
    utilization_wins: int
    mean_iterations: float
    total_wall_time_s: float
    n_failed: int


@dataclass(frozen=True)
class ComparisonReport:
    spec: object
    methods: tuple
    seeds: tuple
    levels: int
    k: int
    cells: tuple
    summaries: tuple

    def cell(self, method, seed):
        method = Method(method)
        for c in self.cells:
            if c.method is method and c.seed == seed:
                return c
        raise InputError(f"no cell for method={method} seed={seed}")


def match_labels(pred, true, k):
    """Best label permutation and its accuracy, Hungarian on the confusion matrix.

    Returns (mapping, accuracy) where mapping[p] is the true label
    assigned to predicted label p.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise InputError("label arrays must have identical shape")
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (pred, true), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    mapping = np.empty(k, dtype=np.int64)
    mapping[rows] = cols
    accuracy = confusion[rows, cols].sum() / pred.shape[0]
    return mapping, float(accuracy)


def _run_cell(x, method, seed, levels, k, cfg, threads):
    t0 = time.perf_counter()
    try:
        model = fit(x, method, levels, k, cfg, threads=threads)
        quality = evaluate(x, model, threads=threads)
        iters = tuple(r.iterations for r in model.fit_report)
        return CellResult(method, seed, quality, iters, time.perf_counter() - t0)
    except FitError as e:
        log.warning("cell (%s, seed=%d) failed: %s", method, seed, e)
        return CellResult(method, seed, None, (), time.perf_counter() - t0, error=str(e))


def _wins(by_method, seeds, better):
    """Per-method count of seeds where the method's value is best (ties shared)."""
    wins = {m: 0 for m in by_method}
    for si in range(len(seeds)):
        values = {m: v[si] for m, v in by_method.items() if v[si] is not None}
        if not values:
            continue
        best = min(values.values()) if better == "low" else max(values.values())
        for m, v in values.items():
            if v == best:
                wins[m] += 1
    return wins


def compare(spec, methods, levels, k, seeds, cfg=None, threads=1):
    """Fit and evaluate every method on every seed's dataset.

    The seed overrides both the data draw and the fit seed, so all
    methods see identical data at a given seed.  Individual fit
    failures are kept as failed cells and the run continues.
    """
    methods = tuple(Method(m) for m in methods)
    seeds = tuple(int(s) for s in seeds)
    cfg = cfg if cfg is not None else FitConfig()
    if not methods:
        raise InputError("at least one method is required")
    if not seeds:
        raise InputError("at least one seed is required")

    cells = []
    for seed in seeds:
        x, _ = generate(dataclasses.replace(spec, seed=seed))
        run_cfg = dataclasses.replace(cfg, seed=seed)
        for method in methods:
            cells.append(_run_cell(x, method, seed, levels, k, run_cfg, threads))

    by_key = {(c.method, c.seed): c for c in cells}
    rmse_by = {}
    util_by = {}
    for m in methods:
        rmse_by[m] = []
        util_by[m] = []
        for s in seeds:
            q = by_key[(m, s)].quality
            rmse_by[m].append(q.rmse if q is not None else None)
            util_by[m].append(
                float(np.mean(q.utilization_per_level)) if q is not None else None
            )
    rmse_wins = _wins(rmse_by, seeds, better="low")
    util_wins = _wins(util_by, seeds, better="high")

    summaries = []
    for m in methods:
        ok = [c for c in cells if c.method is m and not c.failed]
        failed = sum(1 for c in cells if c.method is m and c.failed)
        if ok:
            median_rmse = float(np.median([c.quality.rmse for c in ok]))
            median_util = np.median([c.quality.utilization_per_level for c in ok], axis=0)
            mean_iters = float(np.mean([sum(c.iterations_per_level) for c in ok]))
        else:
            median_rmse = float("nan")
            median_util = np.full(levels, np.nan)
            mean_iters = float("nan")
        summaries.append(
            MethodSummary(
                m,
                median_rmse,
                median_util,
                rmse_wins[m],
                util_wins[m],
                mean_iters,
                sum(c.wall_time_s for c in cells if c.method is m),
                failed,
            )
        )
    return ComparisonReport(spec, methods, seeds, levels, k, tuple(cells), tuple(summaries))
