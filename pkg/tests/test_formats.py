"""File formats: byte layouts verified by hand-parsing, round trips
verified bitwise, and the documented failure modes for damaged files."""

import dataclasses
import json
import struct

import numpy as np
import pytest

from rqgmm.errors import DataFormatError, InputError
from rqgmm.formats import (
    export_features,
    read_embeddings,
    read_id_table,
    read_model,
    write_embeddings,
    write_id_table,
    write_model,
)
from rqgmm.kmeans import FitConfig
from rqgmm.pipeline import encode_batch, fit


def emb_header_bytes(n, d, dtype="f64", **overrides):
    fields = {"magic": "RQEMB", "version": 1, "n": n, "d": d,
              "dtype": dtype, "row_major": True}
    fields.update(overrides)
    return (json.dumps(fields, separators=(",", ":")) + "\n").encode("utf-8")


def sample_matrix(seed=0, n=20, d=4):
    rng = np.random.default_rng(seed)
    return rng.uniform(-3, 3, size=(n, d))


def small_model(method="rq-kmeans", levels=2, seed=0):
    x = sample_matrix(seed=seed, n=120, d=5)
    return x, fit(x, method, levels=levels, k=4, cfg=FitConfig(seed=seed, max_iters=8))


class TestEmbeddingsFormat:
    def test_byte_layout_parsed_by_hand(self, tmp_path):
        """Oracle: pull the file apart with json and frombuffer only."""
        x = sample_matrix()
        path = tmp_path / "e.rqemb"
        write_embeddings(x, path)
        raw = path.read_bytes()
        nl = raw.index(b"\n")
        assert raw[: nl + 1] == emb_header_bytes(20, 4)
        payload = np.frombuffer(raw[nl + 1:], dtype="<f8").reshape(20, 4)
        np.testing.assert_array_equal(payload, x)
        assert len(raw) == nl + 1 + 20 * 4 * 8

    def test_round_trip_bitwise(self, tmp_path):
        x = sample_matrix(seed=1)
        path = tmp_path / "e.rqemb"
        write_embeddings(x, path)
        out, ids = read_embeddings(path)
        assert np.array_equal(out.data, x)
        assert ids is None

    def test_ids_round_trip(self, tmp_path):
        x = sample_matrix(seed=2, n=3)
        keys = ["item-1", "ítem-2", "x"]
        path = tmp_path / "e.rqemb"
        write_embeddings(x, path, ids=keys)
        out, ids = read_embeddings(path)
        assert ids == keys
        assert np.array_equal(out.data, x)

    def test_f32_narrows_and_reads_back(self, tmp_path):
        x = sample_matrix(seed=3)
        path = tmp_path / "e.rqemb"
        write_embeddings(x, path, dtype="f32")
        out, _ = read_embeddings(path)
        np.testing.assert_array_equal(out.data, x.astype(np.float32).astype(np.float64))

    def test_write_is_deterministic(self, tmp_path):
        x = sample_matrix(seed=4)
        a, b = tmp_path / "a", tmp_path / "b"
        write_embeddings(x, a, ids=[str(i) for i in range(20)])
        write_embeddings(x, b, ids=[str(i) for i in range(20)])
        assert a.read_bytes() == b.read_bytes()

    def test_id_count_mismatch_rejected_at_write(self, tmp_path):
        with pytest.raises(InputError):
            write_embeddings(sample_matrix(), tmp_path / "e", ids=["only-one"])

    def test_id_with_delimiter_rejected_at_write(self, tmp_path):
        x = sample_matrix(n=1)
        with pytest.raises(InputError):
            write_embeddings(x, tmp_path / "e", ids=["a\tb"])
        with pytest.raises(InputError):
            write_embeddings(x, tmp_path / "e", ids=["a\nb"])

    def test_unknown_dtype_rejected(self, tmp_path):
        with pytest.raises(InputError):
            write_embeddings(sample_matrix(), tmp_path / "e", dtype="f16")

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "e.rqemb"
        write_embeddings(sample_matrix(), path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DataFormatError, match="payload size mismatch") as err:
            read_embeddings(path)
        assert err.value.offset == len(emb_header_bytes(20, 4))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "e.rqemb"
        path.write_bytes(emb_header_bytes(1, 1, magic="NOPE") + b"\x00" * 8)
        with pytest.raises(DataFormatError, match="bad magic"):
            read_embeddings(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "e.rqemb"
        path.write_bytes(emb_header_bytes(1, 1, version=2) + b"\x00" * 8)
        with pytest.raises(DataFormatError, match="version"):
            read_embeddings(path)

    def test_unterminated_header(self, tmp_path):
        path = tmp_path / "e.rqemb"
        path.write_bytes(b'{"magic":"RQEMB"')
        with pytest.raises(DataFormatError, match="unterminated"):
            read_embeddings(path)

    def test_header_not_json(self, tmp_path):
        path = tmp_path / "e.rqemb"
        path.write_bytes(b"not json at all\n")
        with pytest.raises(DataFormatError, match="not valid JSON"):
            read_embeddings(path)

    def test_non_finite_payload_names_row(self, tmp_path):
        x = np.array([[0.0, 1.0], [np.nan, 2.0], [3.0, 4.0]])
        header = emb_header_bytes(3, 2)
        path = tmp_path / "e.rqemb"
        path.write_bytes(header + np.ascontiguousarray(x, dtype="<f8").tobytes())
        with pytest.raises(DataFormatError, match="row 1") as err:
            read_embeddings(path)
        assert err.value.offset == len(header) + 1 * 2 * 8

    def test_id_count_mismatch_in_file(self, tmp_path):
        x = sample_matrix(n=3, d=2)
        header = emb_header_bytes(3, 2)
        path = tmp_path / "e.rqemb"
        path.write_bytes(header + np.ascontiguousarray(x, dtype="<f8").tobytes()
                         + b"a\nb\n")
        with pytest.raises(DataFormatError, match="id count 2"):
            read_embeddings(path)

    def test_id_section_must_be_utf8(self, tmp_path):
        x = sample_matrix(n=1, d=2)
        header = emb_header_bytes(1, 2)
        path = tmp_path / "e.rqemb"
        path.write_bytes(header + np.ascontiguousarray(x, dtype="<f8").tobytes()
                         + b"\xff\xfe\n")
        with pytest.raises(DataFormatError, match="UTF-8"):
            read_embeddings(path)


class TestModelFormat:
    @pytest.mark.parametrize("method", ["rq-gmm", "rq-kmeans"])
    def test_round_trip_encodes_identically(self, tmp_path, method):
        x, model = small_model(method=method)
        path = tmp_path / "m.rqmdl"
        write_model(model, path)
        loaded = read_model(path)
        assert loaded.method is model.method
        assert (loaded.dim, loaded.k_per_level, loaded.n_levels) == (5, 4, 2)
        assert np.array_equal(encode_batch(x, loaded), encode_batch(x, model))
        for li in range(2):
            assert np.array_equal(loaded.level_means(li), model.level_means(li))

    def test_gmm_parameters_round_trip_bitwise(self, tmp_path):
        _, model = small_model(method="rq-gmm")
        path = tmp_path / "m.rqmdl"
        write_model(model, path)
        loaded = read_model(path)
        for got, want in zip(loaded.levels, model.levels):
            assert np.array_equal(got.variances, want.variances)
            assert np.array_equal(got.weights, want.weights)

    def test_fit_metadata_round_trips(self, tmp_path):
        _, model = small_model()
        path = tmp_path / "m.rqmdl"
        write_model(model, path)
        loaded = read_model(path)
        assert loaded.config.seed == model.config.seed
        assert loaded.config.tol == model.config.tol
        assert loaded.config.max_iters == model.config.max_iters
        for got, want in zip(loaded.fit_report, model.fit_report):
            assert got.iterations == want.iterations
            assert got.rmse == want.rmse
            assert got.objective == want.objective
            assert got.wall_time_s == 0.0

    def test_rewrite_is_byte_identical(self, tmp_path):
        """Timing fields are excluded, so load then save reproduces the
        file exactly."""
        _, model = small_model(method="rq-gmm")
        first, second = tmp_path / "a", tmp_path / "b"
        write_model(model, first)
        write_model(read_model(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_header_layout_parsed_by_hand(self, tmp_path):
        _, model = small_model(method="rq-kmeans")
        path = tmp_path / "m.rqmdl"
        write_model(model, path)
        raw = path.read_bytes()
        nl = raw.index(b"\n")
        header = json.loads(raw[:nl])
        assert header["magic"] == "RQMDL"
        assert header["version"] == 1
        assert header["method"] == "rq-kmeans"
        assert (header["levels"], header["k"], header["d"]) == (2, 4, 5)
        assert set(header["fit"]) == {"seed", "tol", "max_iters", "reseed_empty",
                                      "iterations", "train_rmse", "objective"}
        payload = raw[nl + 1:]
        assert len(payload) == 2 * 4 * 5 * 8
        level0 = np.frombuffer(payload[: 4 * 5 * 8], dtype="<f8").reshape(4, 5)
        np.testing.assert_array_equal(level0, model.level_means(0))

    def test_model_without_config_rejected(self, tmp_path):
        _, model = small_model()
        bare = dataclasses.replace(model, config=None)
        with pytest.raises(InputError):
            write_model(bare, tmp_path / "m.rqmdl")

    def test_truncated_level_block_names_level(self, tmp_path):
        _, model = small_model(method="rq-kmeans")
        path = tmp_path / "m.rqmdl"
        write_model(model, path)
        raw = path.read_bytes()
        nl = raw.index(b"\n")
        path.write_bytes(raw[: nl + 1 + 4 * 5 * 8 + 4])
        with pytest.raises(DataFormatError, match="level 2 means block"):
            read_model(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        _, model = small_model()
        path = tmp_path / "m.rqmdl"
        write_model(model, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(DataFormatError, match="trailing bytes"):
            read_model(path)

    def test_unknown_method_rejected(self, tmp_path):
        _, model = small_model()
        path = tmp_path / "m.rqmdl"
        write_model(model, path)
        raw = path.read_bytes()
        nl = raw.index(b"\n")
        header = json.loads(raw[:nl])
        header["method"] = "pq"
        patched = (json.dumps(header, separators=(",", ":")) + "\n").encode() + raw[nl + 1:]
        path.write_bytes(patched)
        with pytest.raises(DataFormatError, match="unknown method"):
            read_model(path)

    def test_missing_fit_field_rejected(self, tmp_path):
        _, model = small_model()
        path = tmp_path / "m.rqmdl"
        write_model(model, path)
        raw = path.read_bytes()
        nl = raw.index(b"\n")
        header = json.loads(raw[:nl])
        del header["fit"]["tol"]
        patched = (json.dumps(header, separators=(",", ":")) + "\n").encode() + raw[nl + 1:]
        path.write_bytes(patched)
        with pytest.raises(DataFormatError, match="invalid fit metadata"):
            read_model(path)

    def test_invalid_level_parameters_rejected(self, tmp_path):
        """A negative variance in the payload fails validation on load."""
        _, model = small_model(method="rq-gmm")
        path = tmp_path / "m.rqmdl"
        write_model(model, path)
        raw = bytearray(path.read_bytes())
        nl = raw.index(b"\n")
        var_block = nl + 1 + 4 * 5 * 8
        raw[var_block: var_block + 8] = struct.pack("<d", -1.0)
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="level 1 parameters invalid"):
            read_model(path)


class TestIdTable:
    def test_round_trip(self, tmp_path):
        keys = ["doc-1", "döc-2", "doc 3"]
        codes = np.array([[0, 5], [7, 1], [2, 2]])
        path = tmp_path / "t.tsv"
        write_id_table(keys, codes, path)
        got_keys, got_codes = read_id_table(path)
        assert got_keys == keys
        assert got_codes.dtype == np.int64
        np.testing.assert_array_equal(got_codes, codes)

    def test_exact_bytes(self, tmp_path):
        path = tmp_path / "t.tsv"
        write_id_table(["a", "b"], np.array([[1, 2], [3, 4]]), path)
        assert path.read_bytes() == b"a\t1\t2\nb\t3\t4\n"

    def test_delimiter_keys_rejected(self, tmp_path):
        with pytest.raises(InputError):
            write_id_table(["a\tb"], np.array([[0]]), tmp_path / "t")
        with pytest.raises(InputError):
            write_id_table(["a\nb"], np.array([[0]]), tmp_path / "t")

    def test_bad_codes_rejected_at_write(self, tmp_path):
        with pytest.raises(InputError):
            write_id_table(["a"], np.array([0, 1]), tmp_path / "t")
        with pytest.raises(InputError):
            write_id_table(["a"], np.array([[0.5]]), tmp_path / "t")
        with pytest.raises(InputError):
            write_id_table(["a"], np.array([[-1]]), tmp_path / "t")

    def test_inconsistent_width_names_line(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_bytes(b"a\t1\t2\nb\t3\n")
        with pytest.raises(DataFormatError, match="line 2"):
            read_id_table(path)

    def test_non_integer_code_names_line(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_bytes(b"a\t1\nb\tx\n")
        with pytest.raises(DataFormatError, match="line 2.*non-integer"):
            read_id_table(path)

    def test_negative_code_in_file_rejected(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_bytes(b"a\t-3\n")
        with pytest.raises(DataFormatError, match="negative"):
            read_id_table(path)

    def test_line_without_codes_rejected(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_bytes(b"a\n")
        with pytest.raises(DataFormatError, match="no code columns"):
            read_id_table(path)

    def test_missing_final_newline_rejected(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_bytes(b"a\t1\nb\t2")
        with pytest.raises(DataFormatError, match="newline-terminated"):
            read_id_table(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_bytes(b"")
        with pytest.raises(DataFormatError, match="empty"):
            read_id_table(path)


class TestExportFeatures:
    def _table(self, tmp_path):
        path = tmp_path / "ids.tsv"
        write_id_table(["k1", "k2"], np.array([[0, 1], [2, 3]]), path)
        return path

    def test_join_appends_code_columns(self, tmp_path):
        base = tmp_path / "base.tsv"
        base.write_bytes(b"k1\tfeat-a\nk2\tfeat-b\n")
        out = tmp_path / "out.tsv"
        export_features(self._table(tmp_path), base, out)
        assert out.read_bytes() == b"k1\tfeat-a\t0\t1\nk2\tfeat-b\t2\t3\n"

    def test_base_row_order_and_columns_preserved(self, tmp_path):
        base = tmp_path / "base.tsv"
        base.write_bytes(b"k2\ta\tb\tc\nk1\n")
        out = tmp_path / "out.tsv"
        export_features(self._table(tmp_path), base, out)
        assert out.read_bytes() == b"k2\ta\tb\tc\t2\t3\nk1\t0\t1\n"

    def test_missing_key_fails_by_default(self, tmp_path):
        base = tmp_path / "base.tsv"
        base.write_bytes(b"k1\tx\nk9\ty\n")
        with pytest.raises(DataFormatError, match="'k9' at line 2"):
            export_features(self._table(tmp_path), base, tmp_path / "out.tsv")

    def test_missing_key_fill_policy(self, tmp_path):
        base = tmp_path / "base.tsv"
        base.write_bytes(b"k1\tx\nk9\ty\n")
        out = tmp_path / "out.tsv"
        export_features(self._table(tmp_path), base, out, missing="fill")
        assert out.read_bytes() == b"k1\tx\t0\t1\nk9\ty\t-1\t-1\n"

    def test_duplicate_table_keys_rejected(self, tmp_path):
        table = tmp_path / "ids.tsv"
        table.write_bytes(b"k1\t0\nk1\t1\n")
        base = tmp_path / "base.tsv"
        base.write_bytes(b"k1\tx\n")
        with pytest.raises(DataFormatError, match="duplicate"):
            export_features(table, base, tmp_path / "out.tsv")

    def test_unknown_policy_rejected(self, tmp_path):
        with pytest.raises(InputError):
            export_features(self._table(tmp_path), tmp_path / "b", tmp_path / "o",
                            missing="skip")

    def test_empty_base_key_rejected(self, tmp_path):
        base = tmp_path / "base.tsv"
        base.write_bytes(b"\tx\n")
        with pytest.raises(DataFormatError, match="empty item key"):
            export_features(self._table(tmp_path), base, tmp_path / "out.tsv")
