"""Bit-exact file formats: embedding matrices, trained models, ID tables.

Binary files open with one JSON header line (fixed field order, compact
separators) followed by little-endian payload blocks, so the same
in-memory value always serializes to identical bytes.  Text tables are
tab-delimited UTF-8 with newline terminators and no quoting; item keys
containing either delimiter are rejected when writing.
"""

import json

import numpy as np

from .core import Codebook, EmbeddingMatrix
from .errors import DataFormatError, InputError
from .gmm import GmmLevel
from .kmeans import FitConfig, KmeansLevel
from .pipeline import LevelFitReport, Method, RqModel

EMB_MAGIC = "RQEMB"
MODEL_MAGIC = "RQMDL"
FORMAT_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _header_bytes(fields):
    # Compact separators and insertion order keep the byte layout fixed.
    return (json.dumps(fields, separators=(",", ":")) + "\n").encode("utf-8")


def _read_header(f, path, magic):
    line = f.readline()
    if not line.endswith(b"\n"):
        raise DataFormatError("missing or unterminated header line", path=path, offset=0)
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"header is not valid JSON: {e}", path=path, offset=0) from e
    if not isinstance(header, dict) or header.get("magic") != magic:
        raise DataFormatError(
            f"bad magic: expected {magic!r}, got {header.get('magic')!r}"
            if isinstance(header, dict)
            else "header is not a JSON object",
            path=path,
            offset=0,
        )
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"unsupported {magic} version {version!r} (supported: {FORMAT_VERSION})",
            path=path,
            offset=0,
        )
    return header, len(line)


def _header_int(header, key, path, minimum=1):
    value = header.get(key)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise DataFormatError(f"header field {key!r} must be an integer >= {minimum}, "
                              f"got {value!r}", path=path, offset=0)
    return value


def _read_block(f, count, path, offset, what):
    raw = f.read(count * 8)
    if len(raw) != count * 8:
        raise DataFormatError(
            f"{what} truncated: expected {count * 8} bytes, got {len(raw)}",
            path=path,
            offset=offset,
        )
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def write_embeddings(matrix, path, ids=None, dtype="f64"):
    """Write an embedding matrix; optionally one item key per row.

    ``dtype`` selects the payload precision; "f32" narrows lossily.
    """
    x = matrix.data if isinstance(matrix, EmbeddingMatrix) else EmbeddingMatrix(matrix).data
    if dtype not in _DTYPES:
        raise InputError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    n, d = x.shape
    if ids is not None:
        ids = [str(key) for key in ids]
        if len(ids) != n:
            raise InputError(f"ids count {len(ids)} does not match row count {n}")
        for key in ids:
            if "\t" in key or "\n" in key:
                raise InputError(f"item key contains a delimiter character: {key!r}")
    header = {
        "magic": EMB_MAGIC,
        "version": FORMAT_VERSION,
        "n": n,
        "d": d,
        "dtype": dtype,
        "row_major": True,
    }
    with open(path, "wb") as f:
        f.write(_header_bytes(header))
        f.write(np.ascontiguousarray(x, dtype=_DTYPES[dtype]).tobytes())
        if ids is not None:
            f.write("".join(key + "\n" for key in ids).encode("utf-8"))


def read_embeddings(path):
    """Read an embedding file; returns (EmbeddingMatrix, ids or None)."""
    with open(path, "rb") as f:
        header, offset = _read_header(f, path, EMB_MAGIC)
        n = _header_int(header, "n", path)
        d = _header_int(header, "d", path)
        dtype = header.get("dtype")
        if dtype not in _DTYPES:
            raise DataFormatError(f"unknown dtype {dtype!r}", path=path, offset=0)
        if header.get("row_major") is not True:
            raise DataFormatError("only row_major payloads are supported", path=path, offset=0)
        np_dtype = _DTYPES[dtype]
        expected = n * d * np_dtype.itemsize
        raw = f.read(expected)
        if len(raw) != expected:
            raise DataFormatError(
                f"payload size mismatch: expected {expected} bytes for n={n} d={d} "
                f"dtype={dtype}, got {len(raw)}",
                path=path,
                offset=offset,
            )
        x = np.frombuffer(raw, dtype=np_dtype).astype(np.float64).reshape(n, d)
        bad = ~np.isfinite(x)
        if np.any(bad):
            row = int(np.argwhere(bad)[0][0])
            raise DataFormatError(
                f"non-finite value in payload at row {row}",
                path=path,
                offset=offset + row * d * np_dtype.itemsize,
            )
        trailer = f.read()
    ids = None
    if trailer:
        if not trailer.endswith(b"\n"):
            raise DataFormatError("id section is not newline-terminated",
                                  path=path, offset=offset + expected)
        try:
            ids = trailer.decode("utf-8").split("\n")[:-1]
        except UnicodeDecodeError as e:
            raise DataFormatError(f"id section is not valid UTF-8: {e}",
                                  path=path, offset=offset + expected) from None
        if len(ids) != n:
            raise DataFormatError(
                f"id count {len(ids)} does not match row count {n}",
                path=path,
                offset=offset + expected,
            )
    return EmbeddingMatrix(x), ids


def write_model(model, path):
    """Serialize a fitted model; byte layout is fully deterministic.

    Wall-clock timings are never written, so refitting with the same
    seed yields an identical file.
    """
    if model.config is None:
        raise InputError("model has no fit config attached; cannot serialize fit metadata")
    header = {
        "magic": MODEL_MAGIC,
        "version": FORMAT_VERSION,
        "method": model.method.value,
        "levels": model.n_levels,
        "k": model.k_per_level,
        "d": model.dim,
        "fit": {
            "seed": model.config.seed,
            "tol": model.config.tol,
            "max_iters": model.config.max_iters,
            "reseed_empty": model.config.reseed_empty,
            "iterations": [r.iterations for r in model.fit_report],
            "train_rmse": [r.rmse for r in model.fit_report],
            "objective": [r.objective for r in model.fit_report],
        },
    }
    with open(path, "wb") as f:
        f.write(_header_bytes(header))
        for level in model.levels:
            if isinstance(level, GmmLevel):
                f.write(np.ascontiguousarray(level.means, dtype="<f8").tobytes())
                f.write(np.ascontiguousarray(level.variances, dtype="<f8").tobytes())
                f.write(np.ascontiguousarray(level.weights, dtype="<f8").tobytes())
            else:
                f.write(
                    np.ascontiguousarray(level.centroids.vectors, dtype="<f8").tobytes()
                )


def read_model(path):
    """Read a model file back into an RqModel.

    Per-sample fitting state is not persisted: loaded K-means levels
    carry zero counts and empty traces, but encode and reconstruct
    behave identically to the original model.
    """
    with open(path, "rb") as f:
        header, offset = _read_header(f, path, MODEL_MAGIC)
        try:
            method = Method(header.get("method"))
        except ValueError:
            raise DataFormatError(f"unknown method {header.get('method')!r}",
                                  path=path, offset=0) from None
        levels = _header_int(header, "levels", path)
        k = _header_int(header, "k", path)
        d = _header_int(header, "d", path)
        fit_meta = header.get("fit")
        if not isinstance(fit_meta, dict):
            raise DataFormatError("header field 'fit' must be an object", path=path, offset=0)
        try:
            cfg = FitConfig(
                max_iters=fit_meta["max_iters"],
                tol=fit_meta["tol"],
                seed=fit_meta["seed"],
                reseed_empty=fit_meta["reseed_empty"],
            )
            iterations = [int(v) for v in fit_meta["iterations"]]
            train_rmse = [float(v) for v in fit_meta["train_rmse"]]
            objective = [float(v) for v in fit_meta["objective"]]
        except (KeyError, TypeError, ValueError, InputError) as e:
            raise DataFormatError(f"invalid fit metadata: {e}", path=path, offset=0) from e
        if not len(iterations) == len(train_rmse) == len(objective) == levels:
            raise DataFormatError("fit metadata lists must have one entry per level",
                                  path=path, offset=0)

        level_records = []
        for li in range(levels):
            means = _read_block(f, k * d, path, offset, f"level {li + 1} means block")
            means = means.reshape(k, d)
            offset += k * d * 8
            if method is Method.RQ_GMM:
                variances = _read_block(
                    f, k * d, path, offset, f"level {li + 1} variances block"
                ).reshape(k, d)
                offset += k * d * 8
                weights = _read_block(f, k, path, offset, f"level {li + 1} weights block")
                offset += k * 8
                try:
                    record = GmmLevel(means, variances, weights, np.empty(0))
                except InputError as e:
                    raise DataFormatError(f"level {li + 1} parameters invalid: {e}",
                                          path=path, offset=offset) from e
            else:
                try:
                    record = KmeansLevel(
                        Codebook(means), np.zeros(k, dtype=np.int64), np.empty(0)
                    )
                except InputError as e:
                    raise DataFormatError(f"level {li + 1} parameters invalid: {e}",
                                          path=path, offset=offset) from e
            level_records.append(record)
        if f.read(1):
            raise DataFormatError("trailing bytes after final level block",
                                  path=path, offset=offset)

    reports = tuple(
        LevelFitReport(li, iterations[li], 0.0, train_rmse[li], objective[li])
        for li in range(levels)
    )
    try:
        return RqModel(tuple(level_records), method, d, k, reports, cfg)
    except InputError as e:
        raise DataFormatError(f"inconsistent model file: {e}", path=path, offset=0) from e


def _check_key(key, where):
    if "\t" in key or "\n" in key:
        raise InputError(f"{where} contains a delimiter character: {key!r}")
    return key


def write_id_table(keys, codes, path):
    """Write one row per item: key, then its per-level codes."""
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise InputError(f"codes must be a 2-D array, got ndim={codes.ndim}")
    if not np.issubdtype(codes.dtype, np.integer):
        raise InputError(f"codes must be integers, got dtype {codes.dtype}")
    if np.any(codes < 0):
        raise InputError("codes must be non-negative")
    keys = [_check_key(str(key), "item key") for key in keys]
    if len(keys) != codes.shape[0]:
        raise InputError(f"key count {len(keys)} does not match code rows {codes.shape[0]}")
    with open(path, "wb") as f:
        for key, row in zip(keys, codes):
            line = key + "\t" + "\t".join(str(int(c)) for c in row) + "\n"
            f.write(line.encode("utf-8"))


def read_id_table(path):
    """Read an ID table; returns (keys, codes) with codes shaped (N, L)."""
    keys = []
    rows = []
    offset = 0
    width = None
    with open(path, "rb") as f:
        for lineno, raw in enumerate(f, start=1):
            if not raw.endswith(b"\n"):
                raise DataFormatError(f"line {lineno} is not newline-terminated",
                                      path=path, offset=offset)
            try:
                parts = raw[:-1].decode("utf-8").split("\t")
            except UnicodeDecodeError as e:
                raise DataFormatError(f"line {lineno} is not valid UTF-8: {e}",
                                      path=path, offset=offset) from None
            if len(parts) < 2:
                raise DataFormatError(f"line {lineno} has no code columns",
                                      path=path, offset=offset)
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise DataFormatError(
                    f"line {lineno} has {len(parts) - 1} codes, expected {width - 1}",
                    path=path,
                    offset=offset,
                )
            try:
                row = [int(p) for p in parts[1:]]
            except ValueError:
                raise DataFormatError(f"line {lineno} has a non-integer code",
                                      path=path, offset=offset) from None
            if any(c < 0 for c in row):
                raise DataFormatError(f"line {lineno} has a negative code",
                                      path=path, offset=offset)
            keys.append(parts[0])
            rows.append(row)
            offset += len(raw)
    if not rows:
        raise DataFormatError("ID table is empty", path=path, offset=0)
    return keys, np.asarray(rows, dtype=np.int64)


def export_features(id_table_path, base_path, out_path, missing="fail"):
    """Left-join semantic-ID columns onto a keyed feature table.

    Every base row is kept and gains L code columns.  Base keys absent
    from the ID table either fail the export (default) or are filled
    with -1 codes under missing="fill".
    """
    if missing not in ("fail", "fill"):
        raise InputError(f"missing policy must be 'fail' or 'fill', got {missing!r}")
    keys, codes = read_id_table(id_table_path)
    n_levels = codes.shape[1]
    by_key = {}
    for i, key in enumerate(keys):
        if key in by_key:
            raise DataFormatError(f"duplicate item key {key!r} in ID table",
                                  path=id_table_path)
        by_key[key] = i

    offset = 0
    with open(base_path, "rb") as f, open(out_path, "wb") as out:
        for lineno, raw in enumerate(f, start=1):
            if not raw.endswith(b"\n"):
                raise DataFormatError(f"line {lineno} is not newline-terminated",
                                      path=base_path, offset=offset)
            try:
                line = raw[:-1].decode("utf-8")
            except UnicodeDecodeError as e:
                raise DataFormatError(f"line {lineno} is not valid UTF-8: {e}",
                                      path=base_path, offset=offset) from None
            key = line.split("\t", 1)[0]
            if key == "":
                raise DataFormatError(f"line {lineno} has an empty item key",
                                      path=base_path, offset=offset)
            idx = by_key.get(key)
            if idx is None:
                if missing == "fail":
                    raise DataFormatError(
                        f"item key {key!r} at line {lineno} has no semantic ID",
                        path=base_path,
                        offset=offset,
                    )
                row = ["-1"] * n_levels
            else:
                row = [str(int(c)) for c in codes[idx]]
            out.write((line + "\t" + "\t".join(row) + "\n").encode("utf-8"))
            offset += len(raw)
