"""In-process binding over contiguous numeric buffers.

Embedding pipelines that already hold their vectors in memory should
not have to round-trip through files to use the quantizer.  This module
exposes fit, encode_batch, evaluate, save, and load directly over numpy
buffers, with a strict input contract: C-contiguous float32 or float64
matrices only.  A non-contiguous view or an integer array is rejected
with an explicit error instead of being copied behind the caller's
back, so the cost of every call stays predictable.

The binding adds no arithmetic of its own; results are bit-identical to
the core's, and a model fitted here writes the same file bytes as the
command-line path given the same data and seed.
"""

import numpy as np

import rqgmm

__version__ = "0.1.0"

__all__ = ["BoundModel", "encode_batch", "evaluate", "fit", "load", "save"]

_ACCEPTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _checked_buffer(buffer):
    """Enforce the binding's input contract without copying.

    Shape and finiteness problems are left to the core so callers see
    its messages; this gate only rejects what the core would otherwise
    silently convert.
    """
    arr = np.asarray(buffer)
    if arr.dtype not in _ACCEPTED_DTYPES:
        raise TypeError(
            f"buffer dtype must be float32 or float64, got {arr.dtype}; "
            "integer and other dtypes are not converted"
        )
    if not arr.flags["C_CONTIGUOUS"]:
        raise TypeError(
            "buffer must be C-contiguous; pass numpy.ascontiguousarray(buffer) "
            "if a copy is acceptable"
        )
    return arr


class BoundModel:
    """Opaque handle to an immutable fitted cascade.

    Shareable across threads for encode_batch and evaluate.  Results
    already returned stay valid after the handle is released.
    """

    __slots__ = ("_model",)

    def __init__(self, model):
        if not isinstance(model, rqgmm.RqModel):
            raise TypeError(f"expected a fitted model, got {type(model).__name__}")
        self._model = model

    @property
    def method(self):
        return str(self._model.method)

    @property
    def L(self):
        return self._model.n_levels

    @property
    def K(self):
        return self._model.k_per_level

    @property
    def D(self):
        return self._model.dim

    def __repr__(self):
        return f"BoundModel(method={self.method!r}, L={self.L}, K={self.K}, D={self.D})"


def fit(buffer, method, levels, k, max_iters=30, tol=1e-6, seed=0):
    """Fit a residual cascade on an N x D buffer and return its handle."""
    cfg = rqgmm.FitConfig(max_iters=max_iters, tol=tol, seed=seed)
    return BoundModel(rqgmm.fit(_checked_buffer(buffer), method, levels, k, cfg))


def encode_batch(model, buffer):
    """Codes for every row of an M x D buffer, as an M x L integer matrix."""
    return rqgmm.encode_batch(_checked_buffer(buffer), model._model)


def evaluate(model, buffer):
    """Reconstruction quality of the model on a buffer: RMSE, per-level
    utilization, code histograms."""
    return rqgmm.evaluate(_checked_buffer(buffer), model._model)


def save(model, path):
    """Write the model file; byte-identical to the command-line writer."""
    rqgmm.write_model(model._model, path)


def load(path):
    return BoundModel(rqgmm.read_model(path))
