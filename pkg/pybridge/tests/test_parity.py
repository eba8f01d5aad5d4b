"""Cross-interface equivalence: the binding against the command line.

A model fitted through the binding must write the same file bytes as
the rqgmm CLI fitting the same data with the same settings, and the
codes it assigns must form the same ID table.
"""

import numpy as np
import pytest
from rqgmm.cli import main
from rqgmm.formats import read_embeddings, write_id_table

import pybridge

LEVELS = 2
K = 8


@pytest.mark.parametrize("method", ["rq-gmm", "rq-kmeans"])
def test_binding_matches_cli_bytes(tmp_path, method):
    emb = tmp_path / "data.rqemb"
    cli_model = tmp_path / "cli.rqmdl"
    cli_ids = tmp_path / "cli_ids.tsv"
    assert main(["synth", "--seed", "0", "--out", str(emb)]) == 0
    assert main(["fit", "--embeddings", str(emb), "--model-out", str(cli_model),
                 "--method", method, "--levels", str(LEVELS), "--k", str(K),
                 "--seed", "0"]) == 0
    assert main(["encode", "--embeddings", str(emb), "--model", str(cli_model),
                 "--out", str(cli_ids)]) == 0

    x, ids = read_embeddings(emb)
    assert ids is None
    model = pybridge.fit(x.data, method, LEVELS, K, seed=0)
    bound_model = tmp_path / "bound.rqmdl"
    pybridge.save(model, bound_model)
    assert bound_model.read_bytes() == cli_model.read_bytes()

    codes = pybridge.encode_batch(model, x.data)
    bound_ids = tmp_path / "bound_ids.tsv"
    write_id_table([str(i) for i in range(x.n)], codes, bound_ids)
    assert bound_ids.read_bytes() == cli_ids.read_bytes()


def test_loaded_cli_model_encodes_identically(tmp_path):
    """Loading the CLI's model file through the binding gives the same
    codes as the binding's own fit."""
    emb = tmp_path / "data.rqemb"
    cli_model = tmp_path / "cli.rqmdl"
    assert main(["synth", "--seed", "1", "--out", str(emb)]) == 0
    assert main(["fit", "--embeddings", str(emb), "--model-out", str(cli_model),
                 "--method", "rq-gmm", "--levels", str(LEVELS), "--k", str(K),
                 "--seed", "1"]) == 0
    x, _ = read_embeddings(emb)
    own = pybridge.fit(x.data, "rq-gmm", LEVELS, K, seed=1)
    loaded = pybridge.load(cli_model)
    assert loaded.method == "rq-gmm"
    assert (loaded.L, loaded.K, loaded.D) == (LEVELS, K, x.data.shape[1])
    assert np.array_equal(pybridge.encode_batch(loaded, x.data),
                          pybridge.encode_batch(own, x.data))
