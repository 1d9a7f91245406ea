import json

import numpy as np
import pytest

from emsca.cli import load_corpus, main
from emsca.dataset import load_dataset
from emsca.mlp import load

SMALL = ["--hidden", "24", "--epochs", "2"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--preset", "desk", "--windows", "20", "--out", str(root / "corpus"),
                 "--seed", "7"]) == 0
    assert main(["featurize", "--corpus", str(root / "corpus"), "--out", str(root / "feats")]) == 0
    return root


def _manifest(path):
    return json.loads((path / "run_manifest.json").read_text())


def test_synth_layout(corpus_dir):
    c = corpus_dir / "corpus"
    assert len(list((c / "traces").glob("*.cfile"))) == 3 * 10 * 3
    m = _manifest(c)
    assert m["command"] == "synth" and m["seed"] == 7 and m["args"]["windows"] == 20
    assert "manifest.json" in m["outputs"]


def test_featurize_matches_trace_corpus(corpus_dir):
    a = load_corpus(str(corpus_dir / "corpus"))
    b = load_corpus(str(corpus_dir / "feats"))
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].features.tobytes() == b[k].features.tobytes()
        assert (b[k].provenance[:, 0] == k[0]).all() and (b[k].provenance[:, 1] == k[1]).all()


def test_train_reproducible(corpus_dir, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--corpus", str(corpus_dir / "feats"), "--device", "iphone13-II",
                     "--out", str(out), "--seed", "3", *SMALL]) == 0
        outs.append(out)
    for f in ("model.emnn", "train_report.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    assert "wall_time_seconds" in _manifest(outs[0])["timings"]
    assert load(outs[0] / "model.emnn").layer_dims == [2048, 24, 10]


def test_evaluate_and_transfer(corpus_dir, tmp_path):
    feats = str(corpus_dir / "feats")
    assert main(["train", "--corpus", feats, "--device", "iphone13-I", "--out",
                 str(tmp_path / "m"), *SMALL]) == 0
    model = str(tmp_path / "m" / "model.emnn")
    assert main(["evaluate", "--model", model, "--corpus", feats, "--device", "iphone13-III",
                 "--out", str(tmp_path / "ev")]) == 0
    rep = json.loads((tmp_path / "ev" / "eval_report.json").read_text())
    assert np.array(rep["confusion"]).sum() == 40
    assert main(["evaluate", "--model", model, "--dataset",
                 str(corpus_dir / "feats" / "iphone13-I__s1.emds"), "--out",
                 str(tmp_path / "ev2")]) == 0
    rep = json.loads((tmp_path / "ev2" / "eval_report.json").read_text())
    assert np.array(rep["confusion"]).sum() == 200
    assert main(["transfer", "--model", model, "--corpus", feats, "--device", "iphone13-III",
                 "--epochs", "2", "--out", str(tmp_path / "tr"),
                 "--baseline-manifest", str(tmp_path / "m" / "run_manifest.json")]) == 0
    doc = json.loads((tmp_path / "tr" / "transfer_report.json").read_text())
    assert doc["freeze"] == "output_only" and doc["train"]["trainable_params"] == 250
    assert "time_ratio" in _manifest(tmp_path / "tr")["timings"]
    tuned = load(tmp_path / "tr" / "model.emnn")
    orig = load(model)
    assert np.array_equal(tuned.weights[0], orig.weights[0])


def test_cross_matrix_file(corpus_dir, tmp_path):
    out = tmp_path / "res" / "matrix.json"
    assert main(["cross", "--corpus", str(corpus_dir / "feats"), "--out", str(out),
                 "--jobs", "2", *SMALL]) == 0
    doc = json.loads(out.read_text())
    assert doc["ids"] == ["iphone13-I", "iphone13-II", "iphone13-III"]
    table = out.with_suffix(".txt").read_text()
    assert table.count("Direct") == 3 and table.count("Transfer") == 3
    assert _manifest(out.parent)["command"] == "cross"


def test_sessions_pca_discriminate(corpus_dir, tmp_path):
    feats = str(corpus_dir / "feats")
    assert main(["sessions", "--corpus", feats, "--device", "iphone13-I",
                 "--out", str(tmp_path / "s"), *SMALL]) == 0
    doc = json.loads((tmp_path / "s" / "matrix.json").read_text())
    assert doc["kind"] == "session" and doc["ids"] == ["s0", "s1", "s2"]
    assert main(["pca", "--corpus", feats, "--out", str(tmp_path / "p")]) == 0
    lines = (tmp_path / "p" / "projection.csv").read_text().splitlines()
    assert lines[0] == "x,y,z,device_id" and len(lines) == 61
    assert main(["discriminate", "--corpus", feats, "--out", str(tmp_path / "d"), *SMALL]) == 0
    rep = json.loads((tmp_path / "d" / "discriminator_report.json").read_text())
    assert rep["test"]["class_names"] == ["iphone13-I", "iphone13-II", "iphone13-III"]


def test_exit_codes(corpus_dir, tmp_path, capsys):
    assert main(["bogus"]) == 1
    assert main(["train", "--corpus", "x", "--device", "a", "--out", str(tmp_path),
                 "--nope"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["evaluate", "--model", "m", "--out", str(tmp_path)]) == 1
    assert main(["train", "--corpus", str(tmp_path / "missing"), "--device", "a",
                 "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.emnn"
    bad.write_bytes(b"EMNN garbage")
    assert main(["evaluate", "--model", str(bad), "--corpus", str(corpus_dir / "feats"),
                 "--device", "iphone13-I", "--out", str(tmp_path / "o2")]) == 2
    assert main(["train", "--corpus", str(corpus_dir / "feats"), "--device", "iphone13-I",
                 "--out", str(tmp_path / "o3"), "--optimizer", "sgd", "--lr", "1e9",
                 *SMALL]) == 3
    assert main(["train", "--corpus", str(corpus_dir / "feats"), "--device", "nobody",
                 "--out", str(tmp_path / "o4")]) == 1


def test_featurized_dataset_readable(corpus_dir):
    ds = load_dataset(corpus_dir / "feats" / "iphone13-II__s2.emds")
    assert ds.n_rows == 200 and ds.width == 2048 and ds.n_classes == 10
