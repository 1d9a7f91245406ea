import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emsca.dataset import load_dataset, save_dataset
from emsca.errors import ArgumentError, ContractError, ShapeError
from emsca.evaluation import (CrossMatrix, confusion_report, cross_matrix, device_dataset,
                              device_discriminator, evaluate, fit_pca, project,
                              reconstruction_error, session_matrix, write_projection_csv)
from emsca.mlp import TrainConfig, layer_param_counts, load, new_model, save
from emsca.synth import SessionDrift, gen_corpus
from emsca.dataset import SplitSpec, split

from conftest import SMALL_HIDDEN, SMALL_WINDOWS, make_dataset
from oracles import power_iteration_pca

CFG = TrainConfig(epochs=8, seed=0)


def _const_model(width, k, cls):
    m = new_model([width, k])
    m.weights[0][:] = 0
    m.biases[0][:] = 0
    m.biases[0][cls] = 1
    return m


def test_constant_predictor():
    ds = make_dataset(7, 10, width=8)
    rep = evaluate(_const_model(8, 10, 3), ds)
    assert rep.accuracy == pytest.approx(0.1)
    assert rep.confusion[:, 3].sum() == 70
    assert rep.per_class_recall[3] == 1.0 and rep.per_class_recall[0] == 0.0


def test_perfect_predictor():
    y = np.repeat(np.arange(4), 5)
    rep = confusion_report(y, y, list("abcd"))
    assert rep.accuracy == 1.0
    assert np.array_equal(rep.confusion, np.diag([5] * 4))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.data())
def test_confusion_invariants(k, data):
    n = data.draw(st.integers(1, 80))
    y = np.array(data.draw(st.lists(st.integers(0, k - 1), min_size=n, max_size=n)))
    p = np.array(data.draw(st.lists(st.integers(0, k - 1), min_size=n, max_size=n)))
    rep = confusion_report(y, p, [str(i) for i in range(k)])
    assert rep.confusion.sum() == n
    assert rep.accuracy == pytest.approx(np.trace(rep.confusion) / n)
    assert rep.confusion.sum(axis=1).tolist() == np.bincount(y, minlength=k).tolist()


def test_evaluate_errors():
    with pytest.raises(ShapeError):
        evaluate(new_model([4, 3]), make_dataset(3, 3, width=8))
    with pytest.raises(ContractError):
        evaluate(new_model([8, 4]), make_dataset(3, 3, width=8))


def test_same_device_accuracy(small_splits):
    from emsca.mlp import fit
    tr, te = small_splits[("iphone13-III", "s0")]
    m = new_model([2048, *SMALL_HIDDEN, 10], seed=0)
    fit(m, tr, None, CFG)
    assert evaluate(m, te).accuracy >= 0.95


@pytest.fixture(scope="module")
def device_matrix(small_splits):
    corpus = {d: small_splits[(d, "s0")] for d in ("iphone13-I", "iphone13-II", "iphone13-III")}
    return corpus, cross_matrix(corpus, CFG, hidden=SMALL_HIDDEN)


def test_cross_matrix_pattern(device_matrix):
    _, cm = device_matrix
    assert np.all(np.diag(cm.direct) >= 0.95)
    assert np.all(np.isnan(np.diag(cm.transfer)))
    for i, j in cm.off_diagonal():
        # absolute thresholds are pinned at full scale by the acceptance suite
        assert cm.direct[i, j] <= 0.6
        assert cm.transfer[i, j] >= cm.direct[i, j] + 0.2


def test_cross_matrix_serialization(device_matrix):
    _, cm = device_matrix
    back = CrossMatrix.from_dict(cm.to_dict())
    assert np.array_equal(back.direct, cm.direct)
    assert np.array_equal(np.isnan(back.transfer), np.isnan(cm.transfer))
    lines = cm.to_table().splitlines()
    assert lines[0].split("|")[2:] and "iphone13-III" in lines[0]
    direct_rows = [ln for ln in lines if "| Direct" in ln]
    transfer_rows = [ln for ln in lines if "| Transfer" in ln]
    assert len(direct_rows) == len(transfer_rows) == 3
    assert transfer_rows[0].split("|")[2].strip() == "-"


def test_direct_cells_reproducible_from_files(device_matrix, tmp_path):
    corpus, cm = device_matrix
    for i, m in enumerate(cm.ids):
        save(cm.models[m], tmp_path / f"{m}.emnn")
        model = load(tmp_path / f"{m}.emnn")
        for j, d in enumerate(cm.ids):
            save_dataset(corpus[d][1], tmp_path / f"{d}.emds")
            assert evaluate(model, load_dataset(tmp_path / f"{d}.emds")).accuracy == cm.direct[i, j]


def test_jobs_do_not_change_results(small_splits):
    corpus = {d: small_splits[(d, "s0")] for d in ("iphone13-I", "iphone13-II")}
    cfg = TrainConfig(epochs=2, seed=1)
    a = cross_matrix(corpus, cfg, hidden=(16,), jobs=1)
    b = cross_matrix(corpus, cfg, hidden=(16,), jobs=3)
    assert np.array_equal(a.direct, b.direct)
    assert np.array_equal(np.nan_to_num(a.transfer), np.nan_to_num(b.transfer))


def test_cross_matrix_contracts(small_splits):
    one = {"a": small_splits[("iphone13-I", "s0")]}
    with pytest.raises(ContractError):
        cross_matrix(one, CFG)
    tr, te = small_splits[("iphone13-I", "s0")]
    odd = make_dataset(5, 10, width=2048)
    with pytest.raises(ContractError):
        cross_matrix({"a": (tr, te), "b": (odd, odd)}, CFG)


def test_session_matrix_with_drift(small_splits):
    sessions = {s: small_splits[("iphone13-I", s)] for s in ("s0", "s1", "s2")}
    sm = session_matrix(sessions, CFG, hidden=SMALL_HIDDEN)
    assert sm.kind == "session"
    cells = sm.off_diagonal()
    gaps = [sm.transfer[i, j] - sm.direct[i, j] for i, j in cells]
    assert min(gaps) > 0
    assert np.mean(gaps) >= 0.2
    assert np.mean([sm.direct[i, j] for i, j in cells]) <= 0.6


def test_session_matrix_zero_drift(desk_cfg):
    same = [SessionDrift(f"z{i}") for i in range(3)]
    corpus = gen_corpus(desk_cfg.devices[:1], desk_cfg.activities, same, SMALL_WINDOWS,
                        desk_cfg.stft, seed=5)
    sessions = {s: split(ds, SplitSpec(seed=0)) for (_, s), ds in corpus.items()}
    sm = session_matrix(sessions, CFG, hidden=SMALL_HIDDEN)
    for i, j in sm.off_diagonal():
        assert abs(sm.direct[i, j] - sm.direct[j, j]) <= 0.05


def test_session_matrix_rejects_mixed_devices(small_splits):
    with pytest.raises(ContractError):
        session_matrix({"a": small_splits[("iphone13-I", "s0")],
                        "b": small_splits[("iphone13-II", "s0")]}, CFG)


# --- PCA ---

def test_pca_rank_one():
    t = np.linspace(-3, 5, 50)[:, None]
    pts = t * np.array([[1.0, -2.0, 0.5]]) + np.array([4.0, 1.0, -1.0])
    pca = fit_pca(pts, 3)
    total = pts.var(axis=0, ddof=1).sum()
    assert pca.explained_variance[0] == pytest.approx(total, rel=1e-9)
    assert np.all(pca.explained_variance[1:] <= 1e-9)


def test_pca_mean_projects_to_origin(rng):
    x = rng.standard_normal((40, 6))
    pca = fit_pca(x, 3)
    assert np.allclose(project(pca, x.mean(axis=0)[None]), 0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 12), st.integers(1, 3))
def test_pca_orthonormal_and_sorted(seed, width, k):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((30, width)) @ rng.standard_normal((width, width))
    pca = fit_pca(x, k)
    assert np.allclose(pca.components @ pca.components.T, np.eye(k), atol=1e-6)
    assert np.all(np.diff(pca.explained_variance) <= 1e-12)
    assert np.all(pca.explained_variance >= 0)


def test_pca_matches_power_iteration(rng):
    x = rng.standard_normal((200, 10)) * np.linspace(5, 0.5, 10)
    pca = fit_pca(x, 3)
    vals, vecs = power_iteration_pca(x, 3)
    assert np.allclose(pca.explained_variance, vals, rtol=1e-6)
    assert np.allclose(np.abs(np.sum(pca.components * vecs, axis=1)), 1.0, atol=1e-6)


def test_pca_reconstruction_non_increasing(rng):
    x = rng.standard_normal((60, 8)) @ rng.standard_normal((8, 8))
    errs = [reconstruction_error(fit_pca(x, k), x) for k in range(1, 9)]
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-9


def test_pca_errors(rng):
    with pytest.raises(ArgumentError):
        fit_pca(rng.standard_normal((10, 3)), 4)
    with pytest.raises(ArgumentError):
        fit_pca(rng.standard_normal((10, 3)), 0)


def test_projection_csv(tmp_path, rng):
    coords = rng.standard_normal((4, 3))
    write_projection_csv(coords, ["a", "a", "b", "c"], tmp_path / "p.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["x", "y", "z", "device_id"]
    assert [r[3] for r in rows[1:]] == ["a", "a", "b", "c"]
    assert float(rows[1][0]) == pytest.approx(coords[0, 0])


def test_idle_devices_separate_in_pca(small_corpus):
    idle = device_dataset({d: ds for (d, s), ds in small_corpus.items() if s == "s0"}, "idle")
    coords = project(fit_pca(idle.features, 3), idle.features)
    centroids = np.array([coords[idle.labels == c].mean(0) for c in range(3)])
    spread = max(coords[idle.labels == c].std(0).max() for c in range(3))
    gaps = [np.linalg.norm(centroids[a] - centroids[b]) for a in range(3) for b in range(a + 1, 3)]
    assert min(gaps) > 3 * spread


# --- device discriminator ---

def test_discriminator_idle(small_corpus):
    sets = {d: ds for (d, s), ds in small_corpus.items() if s == "s0"}
    rep = device_discriminator(sets, CFG, hidden=SMALL_HIDDEN, activity="idle")
    assert rep.class_names == ["iphone13-I", "iphone13-II", "iphone13-III"]
    assert rep.accuracy >= 0.99


def test_discriminator_final_layer():
    assert layer_param_counts([2048, 1400, 800, 500, 200, 100, 3])[-1] == 303


def test_zero_weight_two_devices():
    a, b = make_dataset(10, 1, width=8, seed=0), make_dataset(10, 1, width=8, seed=1)
    ds = device_dataset({"A": a, "B": b})
    m = new_model([8, 4, 2])
    for w in m.weights:
        w[:] = 0
    assert evaluate(m, ds).accuracy == 0.5


def test_discriminator_needs_two_devices():
    with pytest.raises(ArgumentError):
        device_discriminator({"A": make_dataset(10, 1, width=8)})


def test_discriminator_requires_shared_activity():
    a = make_dataset(10, 1, width=8)
    b = make_dataset(10, 1, width=8)
    b.class_names = ["other"]
    with pytest.raises(ContractError):
        device_dataset({"A": a, "B": b})
