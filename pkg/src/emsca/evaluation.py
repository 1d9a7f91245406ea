"""Accuracy reports, cross-device/session matrices, PCA and device discrimination."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import SplitSpec, split
from .errors import ArgumentError, ContractError, ShapeError
from .mlp import DEFAULT_HIDDEN, MlpModel, TrainConfig, TrainReport, fit, new_model, predict
from .spectral import SpectralDataset
from .transfer import FreezeSpec, transfer_fit


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    per_class_recall: np.ndarray
    class_names: list[str]

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "total": self.total,
            "class_names": self.class_names,
            "confusion": self.confusion.tolist(),
            "per_class_recall": [None if np.isnan(r) else float(r) for r in self.per_class_recall],
        }

    def to_table(self) -> str:
        w = max(len(c) for c in self.class_names)
        cell = max(6, len(str(int(self.confusion.max(initial=0)))) + 1)
        lines = [" " * w + " |" + "".join(f"{i:>{cell}d}" for i in range(len(self.class_names)))]
        for i, name in enumerate(self.class_names):
            lines.append(f"{name:<{w}} |" + "".join(f"{v:>{cell}d}" for v in self.confusion[i]))
        lines.append(f"accuracy = {self.accuracy:.4f} over {self.total} rows")
        return "\n".join(lines)


def confusion_report(y_true, y_pred, class_names) -> EvalReport:
    k = len(class_names)
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    total = conf.sum()
    acc = float(np.trace(conf) / total) if total else 0.0
    support = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, np.diag(conf) / support, np.nan)
    return EvalReport(acc, conf, recall, list(class_names))


def evaluate(model: MlpModel, test: SpectralDataset) -> EvalReport:
    if test.width != model.n_inputs:
        raise ShapeError(f"dataset width {test.width} != model input width {model.n_inputs}")
    if test.n_classes != model.n_outputs or (
            model.class_names and model.class_names != test.class_names):
        raise ContractError(f"model classes {model.class_names or model.n_outputs} "
                            f"incompatible with dataset classes {test.class_names}")
    return confusion_report(test.labels, predict(model, test), test.class_names)


# --- cross matrices ------------------------------------------------------------

@dataclass
class CrossMatrix:
    """Accuracy grid; ``direct[i, j]`` is model ``ids[i]`` scored on dataset ``ids[j]``.

    ``transfer[i, j]`` is model ``i`` after transfer on ``j``'s train split;
    the diagonal is NaN there.
    """

    ids: list[str]
    direct: np.ndarray
    transfer: np.ndarray
    kind: str = "device"
    freeze: str = "output_only"
    train_reports: dict[str, TrainReport] = field(default_factory=dict, repr=False)
    transfer_reports: dict[tuple[str, str], TrainReport] = field(default_factory=dict, repr=False)
    models: dict[str, MlpModel] = field(default_factory=dict, repr=False)

    def off_diagonal(self):
        n = len(self.ids)
        return [(i, j) for i in range(n) for j in range(n) if i != j]

    def to_dict(self) -> dict:
        cells = []
        for i, m in enumerate(self.ids):
            for j, d in enumerate(self.ids):
                t = self.transfer[i, j]
                cells.append({"model": m, "dataset": d,
                              "direct_accuracy": float(self.direct[i, j]),
                              "transfer_accuracy": None if np.isnan(t) else float(t)})
        return {"kind": self.kind, "freeze": self.freeze, "ids": self.ids, "cells": cells}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CrossMatrix":
        ids = list(d["ids"])
        n = len(ids)
        direct = np.full((n, n), np.nan)
        transfer = np.full((n, n), np.nan)
        for c in d["cells"]:
            i, j = ids.index(c["model"]), ids.index(c["dataset"])
            direct[i, j] = c["direct_accuracy"]
            if c["transfer_accuracy"] is not None:
                transfer[i, j] = c["transfer_accuracy"]
        return cls(ids, direct, transfer, d.get("kind", "device"), d.get("freeze", "output_only"))

    def to_table(self) -> str:
        """Dataset rows with Direct/Transfer sub-rows against model columns."""
        label = f"{self.kind.capitalize()} (dataset)"
        w0 = max(len(label), *(len(i) for i in self.ids))
        wc = max(8, *(len(i) for i in self.ids))
        head = f"{label:<{w0}} | {'Mode':<8} | " + " | ".join(f"{m:>{wc}}" for m in self.ids)
        rule = "-" * len(head)
        lines = [head, rule]
        for j, d in enumerate(self.ids):
            direct = " | ".join(f"{self.direct[i, j]:>{wc}.4f}" for i in range(len(self.ids)))
            trans = " | ".join(
                f"{'-':>{wc}}" if np.isnan(self.transfer[i, j]) else f"{self.transfer[i, j]:>{wc}.4f}"
                for i in range(len(self.ids)))
            lines.append(f"{d:<{w0}} | {'Direct':<8} | {direct}")
            lines.append(f"{'':<{w0}} | {'Transfer':<8} | {trans}")
            lines.append(rule)
        return "\n".join(lines)


def _check_corpus(corpus: dict) -> tuple[list[str], list[str], int]:
    ids = list(corpus)
    if len(ids) < 2:
        raise ContractError(f"a cross matrix needs at least 2 datasets, got {len(ids)}")
    names = corpus[ids[0]][0].class_names
    width = corpus[ids[0]][0].width
    for key, (tr, te) in corpus.items():
        for ds in (tr, te):
            if ds.class_names != names:
                raise ContractError(f"{key}: class set {ds.class_names} differs from {names}")
            if ds.width != width:
                raise ContractError(f"{key}: width {ds.width} differs from {width}")
    return ids, names, width


def cross_matrix(corpus: dict[str, tuple[SpectralDataset, SpectralDataset]],
                 config: TrainConfig | None = None, freeze: FreezeSpec | None = None,
                 hidden=DEFAULT_HIDDEN, models: dict[str, MlpModel] | None = None,
                 jobs: int = 1, kind: str = "device") -> CrossMatrix:
    """Train one model per entry, then fill direct and transfer cells.

    ``corpus`` maps an id to its ``(train, test)`` pair. Models given in
    ``models`` are reused instead of trained. Cells are independent, so
    ``jobs > 1`` runs them on a thread pool with identical results.
    """
    config = config or TrainConfig()
    freeze = freeze or FreezeSpec()
    ids, names, width = _check_corpus(corpus)
    models = dict(models or {})
    reports: dict[str, TrainReport] = {}

    def train_one(key):
        m = new_model([width, *hidden, len(names)], seed=config.seed, class_names=names)
        return key, m, fit(m, corpus[key][0], None, config)

    todo = [k for k in ids if k not in models]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for key, m, rep in pool.map(train_one, todo):
            models[key] = m
            reports[key] = rep

        n = len(ids)
        direct = np.empty((n, n))
        transfer = np.full((n, n), np.nan)
        for i, m in enumerate(ids):
            for j, d in enumerate(ids):
                direct[i, j] = evaluate(models[m], corpus[d][1]).accuracy

        def transfer_one(cell):
            i, j = cell
            tm, rep = transfer_fit(models[ids[i]], corpus[ids[j]][0], None, freeze, config)
            return cell, evaluate(tm, corpus[ids[j]][1]).accuracy, rep

        t_reports = {}
        cells = [(i, j) for i in range(n) for j in range(n) if i != j]
        for (i, j), acc, rep in pool.map(transfer_one, cells):
            transfer[i, j] = acc
            t_reports[(ids[i], ids[j])] = rep
    return CrossMatrix(ids, direct, transfer, kind, freeze.describe(), reports, t_reports, models)


def session_matrix(sessions: dict[str, tuple[SpectralDataset, SpectralDataset]],
                   config: TrainConfig | None = None, freeze: FreezeSpec | None = None,
                   hidden=DEFAULT_HIDDEN, models=None, jobs: int = 1) -> CrossMatrix:
    """Cross matrix over capture sessions of a single device."""
    if len(sessions) < 2:
        raise ContractError(f"a session matrix needs at least 2 sessions, got {len(sessions)}")
    devices = set()
    for tr, te in sessions.values():
        devices.update(d for d in tr.provenance[:, 0] if d)
        devices.update(d for d in te.provenance[:, 0] if d)
    if len(devices) > 1:
        raise ContractError(f"session matrix mixes devices {sorted(devices)}")
    return cross_matrix(sessions, config, freeze, hidden, models, jobs, kind="session")


# --- PCA -------------------------------------------------------------------------

@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]


def fit_pca(rows, k: int = 3) -> PcaModel:
    """Top-``k`` principal axes from the eigendecomposition of the sample covariance."""
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"rows must be 2-D, got shape {x.shape}")
    if k < 1 or k > x.shape[1]:
        raise ArgumentError(f"k must be in [1, {x.shape[1]}], got {k}")
    if x.shape[0] < k:
        raise ArgumentError(f"need at least k={k} rows, got {x.shape[0]}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / max(x.shape[0] - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    comps = vecs[:, order].T
    # sign convention: largest-magnitude loading positive
    flip = np.sign(comps[np.arange(k), np.abs(comps).argmax(axis=1)])
    comps = comps * flip[:, None]
    return PcaModel(mean, comps, np.clip(vals[order], 0.0, None))


def project(pca: PcaModel, rows) -> np.ndarray:
    x = np.asarray(rows, dtype=np.float64)
    if x.shape[-1] != pca.mean.shape[0]:
        raise ShapeError(f"rows have width {x.shape[-1]}, PCA expects {pca.mean.shape[0]}")
    return (x - pca.mean) @ pca.components.T


def reconstruction_error(pca: PcaModel, rows) -> float:
    x = np.asarray(rows, dtype=np.float64)
    rec = project(pca, x) @ pca.components + pca.mean
    return float(((x - rec) ** 2).sum(axis=1).mean())


def write_projection_csv(coords: np.ndarray, device_ids, path: str | os.PathLike) -> None:
    cols = ["x", "y", "z"] if coords.shape[1] == 3 else [f"pc{i + 1}" for i in range(coords.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols + ["device_id"])
        for row, dev in zip(coords, device_ids):
            w.writerow([f"{v:.9g}" for v in row] + [dev])


# --- device discrimination ---------------------------------------------------------

def device_dataset(sets: dict[str, SpectralDataset], activity: str | None = None) -> SpectralDataset:
    """Relabel rows by device: class ``i`` is ``list(sets)[i]``.

    With ``activity`` set, only that activity's rows are taken from each set;
    otherwise every set must hold a single, shared activity.
    """
    if len(sets) < 2:
        raise ArgumentError(f"need at least 2 devices, got {len(sets)}")
    feats, labels, prov, acts = [], [], [], set()
    for d, (dev, ds) in enumerate(sets.items()):
        if activity is not None:
            if activity not in ds.class_names:
                raise ContractError(f"{dev}: no rows for activity {activity!r}")
            ds = ds.subset(np.flatnonzero(ds.labels == ds.class_names.index(activity)))
        present = {ds.class_names[c] for c in np.unique(ds.labels)}
        acts |= present
        feats.append(ds.features)
        labels.append(np.full(ds.n_rows, d, dtype=np.int64))
        prov.append(ds.provenance)
    if len(acts) != 1:
        raise ContractError(f"device sets must share one activity, found {sorted(acts)}")
    first = next(iter(sets.values()))
    return SpectralDataset(np.concatenate(feats), np.concatenate(labels), list(sets),
                           np.concatenate(prov), first.config)


def train_device_discriminator(sets: dict[str, SpectralDataset], config: TrainConfig | None = None,
                               split_spec: SplitSpec | None = None, hidden=DEFAULT_HIDDEN,
                               activity: str | None = None):
    config = config or TrainConfig()
    ds = device_dataset(sets, activity)
    train, test = split(ds, split_spec or SplitSpec(seed=config.seed))
    model = new_model([ds.width, *hidden, ds.n_classes], seed=config.seed,
                      class_names=ds.class_names)
    report = fit(model, train, None, config)
    return model, report, evaluate(model, test)


def device_discriminator(sets: dict[str, SpectralDataset], config: TrainConfig | None = None,
                         split_spec: SplitSpec | None = None, hidden=DEFAULT_HIDDEN,
                         activity: str | None = None) -> EvalReport:
    """Held-out report of an MLP trained to tell devices apart from one activity."""
    return train_device_discriminator(sets, config, split_spec, hidden, activity)[2]
