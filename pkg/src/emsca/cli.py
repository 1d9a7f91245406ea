"""Command-line entry point: ``emsca <subcommand> ...``.

Every run writes ``run_manifest.json`` next to its outputs. Model and report
files carry no timestamps or timings, so reruns with the same seed are
byte-identical; wall-clock data lives only in the manifest.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import SplitSpec, assemble, load_dataset, save_dataset, split
from .errors import ArgumentError, DataError, EmscaError
from .evaluation import (cross_matrix, device_dataset, evaluate, fit_pca, project,
                         reconstruction_error, session_matrix, train_device_discriminator,
                         write_projection_csv)
from .mlp import DEFAULT_HIDDEN, TrainConfig, count_params, fit, load, new_model, save
from .spectral import StftConfig, stft_featurize
from .synth import builtin_config, load_synth_config, write_corpus
from .trace_io import load_manifest, read_entry
from .transfer import FreezeSpec, transfer_fit

MANIFEST_NAME = "run_manifest.json"
INDEX_NAME = "datasets.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(out: str) -> tuple[Path, Path | None]:
    """``--out`` is a directory, or a ``.json`` file whose parent gets the manifest."""
    p = Path(out)
    if p.suffix == ".json":
        return p.parent, p
    return p, None


# --- corpus loading ---

def _featurize_manifest(root: Path, stft: StftConfig | None) -> dict:
    if stft is None:
        cfg_path = root / "synth_config.json"
        stft = load_synth_config(cfg_path).stft if cfg_path.exists() else StftConfig()
    groups: dict[tuple[str, str], list] = {}
    for entry in load_manifest(root / "manifest.json"):
        ds = stft_featurize(read_entry(entry, root), stft)
        groups.setdefault((entry.meta.device_id, entry.meta.session_id), []).append(
            (ds, entry.meta.activity_label))
    return {key: assemble(parts) for key, parts in groups.items()}


def _load_index(root: Path) -> dict:
    doc = json.loads((root / INDEX_NAME).read_text(encoding="utf-8"))
    stft = StftConfig.from_dict(doc.get("stft", {}))
    corpus = {}
    for item in doc["datasets"]:
        ds = load_dataset(root / item["file"], stft)
        ds.provenance[:, 0] = item["device_id"]
        ds.provenance[:, 1] = item["session_id"]
        corpus[(item["device_id"], item["session_id"])] = ds
    return corpus


def load_corpus(path: str, stft: StftConfig | None = None) -> dict:
    """Corpus keyed by ``(device_id, session_id)`` from a trace or feature directory."""
    root = Path(path)
    if (root / INDEX_NAME).exists():
        return _load_index(root)
    if (root / "manifest.json").exists():
        return _featurize_manifest(root, stft)
    raise DataError(f"{root}: neither {INDEX_NAME} nor manifest.json found")


def _sessions(corpus) -> list[str]:
    return list(dict.fromkeys(s for _, s in corpus))


def _pick(corpus, device: str, session: str | None):
    session = session or _sessions(corpus)[0]
    if (device, session) not in corpus:
        raise ArgumentError(f"corpus has no data for device {device!r}, session {session!r}")
    return corpus[(device, session)], session


# --- argument helpers ---

def _hidden(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in text.split(",") if t)
    except ValueError as exc:
        raise ArgumentError(f"--hidden expects comma-separated integers, got {text!r}") from exc
    if any(d < 1 for d in dims):
        raise ArgumentError("--hidden sizes must be positive")
    return dims


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, optimizer=args.optimizer,
                       learning_rate=args.lr, seed=args.seed)


def _split(ds, args):
    return split(ds, SplitSpec(test_fraction=args.test_fraction, seed=args.seed))


# --- subcommands; each returns (outputs, extra manifest fields) ---

def cmd_synth(args):
    cfg = load_synth_config(args.config) if args.config else builtin_config(args.preset)
    out = Path(args.out)
    entries = write_corpus(cfg, out, seed=args.seed, windows_per_activity=args.windows)
    print(f"wrote {len(entries)} traces to {out}")
    return out, ["manifest.json", "synth_config.json"] + [e.file for e in entries], {}


def cmd_featurize(args):
    stft = StftConfig(args.fft_size, args.hop) if args.fft_size else None
    corpus = load_corpus(args.corpus, stft)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = []
    for (dev, sess), ds in corpus.items():
        name = f"{dev}__{sess}.emds"
        save_dataset(ds, out / name)
        items.append({"file": name, "device_id": dev, "session_id": sess,
                      "n_rows": ds.n_rows, "n_classes": ds.n_classes})
        stft = ds.config
    _write_json(out / INDEX_NAME, {"stft": stft.to_dict(), "datasets": items})
    print(f"wrote {len(items)} datasets to {out}")
    return out, [INDEX_NAME] + [i["file"] for i in items], {}


def cmd_train(args):
    corpus = load_corpus(args.corpus)
    ds, session = _pick(corpus, args.device, args.session)
    train, test = _split(ds, args)
    model = new_model([ds.width, *args.hidden, ds.n_classes], seed=args.seed,
                      class_names=ds.class_names)
    report = fit(model, train, None, _train_config(args))
    ev = evaluate(model, test)
    out = Path(args.out)
    save(model, out / "model.emnn")
    _write_json(out / "train_report.json", {
        "device_id": args.device, "session_id": session,
        "train": report.to_dict(include_timing=False), "test": ev.to_dict()})
    print(f"{args.device}/{session}: test accuracy {ev.accuracy:.4f}")
    return out, ["model.emnn", "train_report.json"], {"wall_time_seconds": report.wall_time_seconds}


def cmd_evaluate(args):
    model = load(args.model)
    if args.dataset:
        test, target = load_dataset(args.dataset), {"dataset": args.dataset}
    else:
        ds, session = _pick(load_corpus(args.corpus), args.device, args.session)
        test = ds if args.all_rows else _split(ds, args)[1]
        target = {"device_id": args.device, "session_id": session}
    ev = evaluate(model, test)
    out = Path(args.out)
    _write_json(out / "eval_report.json", {**target, **ev.to_dict()})
    print(ev.to_table())
    return out, ["eval_report.json"], {}


def cmd_transfer(args):
    model = load(args.model)
    ds, session = _pick(load_corpus(args.corpus), args.device, args.session)
    train, test = _split(ds, args)
    spec = FreezeSpec.parse(args.freeze, reinit=args.reinit)
    tuned, report = transfer_fit(model, train, None, spec, _train_config(args))
    ev = evaluate(tuned, test)
    direct = evaluate(model, test) if model.class_names == ds.class_names else None
    out = Path(args.out)
    save(tuned, out / "model.emnn")
    doc = {"device_id": args.device, "session_id": session, "freeze": spec.describe(),
           "train": report.to_dict(include_timing=False), "test": ev.to_dict(),
           "direct_accuracy": None if direct is None else direct.accuracy}
    _write_json(out / "transfer_report.json", doc)
    extra = {"wall_time_seconds": report.wall_time_seconds}
    if args.baseline_manifest:
        base = json.loads(Path(args.baseline_manifest).read_text(encoding="utf-8"))
        extra["baseline_wall_time_seconds"] = base["timings"]["wall_time_seconds"]
        extra["time_ratio"] = report.wall_time_seconds / base["timings"]["wall_time_seconds"]
    trainable, total = count_params(tuned)
    print(f"{args.device}/{session}: transfer accuracy {ev.accuracy:.4f} "
          f"({trainable:,} trainable of {total:,})")
    return out, ["model.emnn", "transfer_report.json"], extra


def _write_matrix(cm, args):
    out_dir, file = _out_dir(args.out)
    file = file or out_dir / "matrix.json"
    _write_json(file, cm.to_dict())
    file.with_suffix(".txt").write_text(cm.to_table() + "\n", encoding="utf-8")
    print(cm.to_table())
    timings = {"train": {k: r.wall_time_seconds for k, r in cm.train_reports.items()},
               "transfer": {f"{a}->{b}": r.wall_time_seconds
                            for (a, b), r in cm.transfer_reports.items()}}
    return out_dir, [file.name, file.with_suffix(".txt").name], timings


def cmd_cross(args):
    corpus = load_corpus(args.corpus)
    session = args.session or _sessions(corpus)[0]
    pairs = {d: _split(ds, args) for (d, s), ds in corpus.items() if s == session}
    cm = cross_matrix(pairs, _train_config(args), FreezeSpec.parse(args.freeze),
                      hidden=args.hidden, jobs=args.jobs)
    return _write_matrix(cm, args)


def cmd_sessions(args):
    corpus = load_corpus(args.corpus)
    sessions = {s: _split(ds, args) for (d, s), ds in corpus.items() if d == args.device}
    if not sessions:
        raise ArgumentError(f"corpus has no data for device {args.device!r}")
    cm = session_matrix(sessions, _train_config(args), FreezeSpec.parse(args.freeze),
                        hidden=args.hidden, jobs=args.jobs)
    return _write_matrix(cm, args)


def _activity_sets(args):
    corpus = load_corpus(args.corpus)
    session = args.session or _sessions(corpus)[0]
    return {d: ds for (d, s), ds in corpus.items() if s == session}, session


def cmd_pca(args):
    sets, session = _activity_sets(args)
    ds = device_dataset(sets, args.activity)
    pca = fit_pca(ds.features, args.components)
    coords = project(pca, ds.features)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_projection_csv(coords, [ds.class_names[c] for c in ds.labels], out / "projection.csv")
    _write_json(out / "pca.json", {
        "activity": args.activity, "session_id": session, "components": args.components,
        "explained_variance": pca.explained_variance.tolist(),
        "reconstruction_error": reconstruction_error(pca, ds.features)})
    print("explained variance:", np.array2string(pca.explained_variance, precision=4))
    return out, ["projection.csv", "pca.json"], {}


def cmd_discriminate(args):
    sets, session = _activity_sets(args)
    model, report, ev = train_device_discriminator(
        sets, _train_config(args), hidden=args.hidden, activity=args.activity,
        split_spec=SplitSpec(test_fraction=args.test_fraction, seed=args.seed))
    out = Path(args.out)
    save(model, out / "model.emnn")
    _write_json(out / "discriminator_report.json", {
        "activity": args.activity, "session_id": session,
        "train": report.to_dict(include_timing=False), "test": ev.to_dict()})
    print(ev.to_table())
    return out, ["model.emnn", "discriminator_report.json"], {
        "wall_time_seconds": report.wall_time_seconds}


# --- parser ---

def _add_training(p, hidden=True):
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=float, default=None, help="learning rate (optimizer default)")
    p.add_argument("--test-fraction", type=float, default=0.2)
    if hidden:
        p.add_argument("--hidden", type=_hidden, default=DEFAULT_HIDDEN,
                       help="comma-separated hidden layer sizes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emsca", description="EM side-channel classification experiments")
    parser.add_argument("--version", action="version", version=f"emsca {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_text, out_help="output directory"):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help=out_help)
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate a synthetic trace corpus")
    p.add_argument("--config", help="synth config JSON (overrides --preset)")
    p.add_argument("--preset", choices=("desk", "nrf52"), default="desk")
    p.add_argument("--windows", type=int, default=None, help="STFT windows per activity")

    p = command("featurize", cmd_featurize, "turn a trace corpus into feature datasets")
    p.add_argument("--corpus", required=True)
    p.add_argument("--fft-size", type=int, default=None)
    p.add_argument("--hop", type=int, default=None)

    p = command("train", cmd_train, "train one per-device model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--device", required=True)
    p.add_argument("--session", default=None)
    _add_training(p)

    p = command("evaluate", cmd_evaluate, "score a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", help="EMDS file; scored in full")
    p.add_argument("--corpus")
    p.add_argument("--device")
    p.add_argument("--session", default=None)
    p.add_argument("--all-rows", action="store_true", help="score every row, not the test split")
    p.add_argument("--test-fraction", type=float, default=0.2)

    p = command("transfer", cmd_transfer, "retrain part of a saved model on new data")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--device", required=True)
    p.add_argument("--session", default=None)
    p.add_argument("--freeze", default="output_only")
    p.add_argument("--reinit", action="store_true", help="re-initialize trainable layers")
    p.add_argument("--baseline-manifest", help="run manifest of the full training run")
    _add_training(p, hidden=False)

    for name, func, text in (("cross", cmd_cross, "device x device accuracy matrix"),
                             ("sessions", cmd_sessions, "session x session accuracy matrix")):
        p = command(name, func, text, out_help="output directory or .json file")
        p.add_argument("--corpus", required=True)
        if name == "cross":
            p.add_argument("--session", default=None)
        else:
            p.add_argument("--device", required=True)
        p.add_argument("--freeze", default="output_only")
        p.add_argument("--jobs", type=int, default=1)
        _add_training(p)

    p = command("pca", cmd_pca, "PCA projection of one activity across devices")
    p.add_argument("--corpus", required=True)
    p.add_argument("--activity", default="idle")
    p.add_argument("--session", default=None)
    p.add_argument("--components", type=int, default=3)

    p = command("discriminate", cmd_discriminate, "train a device classifier on one activity")
    p.add_argument("--corpus", required=True)
    p.add_argument("--activity", default="idle")
    p.add_argument("--session", default=None)
    _add_training(p)
    return parser


def _validate(args) -> None:
    if args.command == "evaluate" and not args.dataset and not (args.corpus and args.device):
        raise ArgumentError("evaluate needs --dataset, or --corpus with --device")
    if getattr(args, "jobs", 1) < 1:
        raise ArgumentError("--jobs must be >= 1")


def _manifest_args(args) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v)
            for k, v in vars(args).items() if k != "func"}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        _validate(args)
        out_dir, _ = _out_dir(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        out, outputs, timings = args.func(args)
    except ArgumentError as exc:
        print(f"emsca {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except EmscaError as exc:
        print(f"emsca {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"emsca {args.command}: {exc}", file=sys.stderr)
        return 2
    _write_json(Path(out) / MANIFEST_NAME, {
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "args": _manifest_args(args),
        "seed": args.seed,
        "version": __version__,
        "inputs": {k: getattr(args, k) for k in ("corpus", "model", "dataset", "config",
                                                 "baseline_manifest")
                   if getattr(args, k, None)},
        "outputs": outputs,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "timings": {"total_seconds": time.perf_counter() - t0, **timings},
    })
    return 0


if __name__ == "__main__":
    sys.exit(main())
