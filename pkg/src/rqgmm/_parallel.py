"""Deterministic chunked execution over sample rows.

Every batch computation in this package walks a fixed row-chunk grid.
Worker threads only decide *who* executes a chunk, never how results are
combined: per-row outputs go to disjoint slices of preallocated arrays,
and partial reductions are stored per chunk and folded in chunk order
afterwards.  Results are therefore bitwise identical for any thread
count, which the model/ID file determinism contract relies on.
"""

from concurrent.futures import ThreadPoolExecutor

# Fixed grid: must not depend on the thread count.
CHUNK_ROWS = 4096

# Soft cap on the (rows, K, D) scratch a distance/density kernel may
# materialize per chunk, in float64 elements.
SCRATCH_ELEMS = 8_000_000


def chunk_grid(n_rows, kd=1):
    """Yield (start, stop) row ranges of the fixed chunk grid.

    ``kd`` is the per-row scratch width (K*D for pairwise kernels); large
    widths shrink the chunk so scratch stays bounded.  The grid depends
    only on (n_rows, kd).
    """
    rows = min(CHUNK_ROWS, max(1, SCRATCH_ELEMS // max(1, kd)))
    for start in range(0, n_rows, rows):
        yield start, min(start + rows, n_rows)


def run_chunks(fn, n_rows, kd=1, threads=1):
    """Run ``fn(start, stop)`` over the chunk grid; return results in grid order."""
    spans = list(chunk_grid(n_rows, kd))
    if threads <= 1 or len(spans) <= 1:
        return [fn(start, stop) for start, stop in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, start, stop) for start, stop in spans]
        return [f.result() for f in futures]
