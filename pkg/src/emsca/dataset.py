"""Dataset assembly, stratified splitting, standardization and EMDS files."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConflictError, DataError, FormatError, ShapeError
from .spectral import SpectralDataset, StftConfig

STD_FLOOR = 1e-8

EMDS_MAGIC = b"EMDS"
EMDS_VERSION = 1


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean)
        self.std = np.maximum(np.asarray(self.std), STD_FLOOR).astype(self.mean.dtype)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeError("scaler mean and std must be equal-length vectors")

    @property
    def width(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def identity(cls, width: int, dtype=np.float32) -> "Scaler":
        return cls(np.zeros(width, dtype=dtype), np.ones(width, dtype=dtype))

    def astype(self, dtype) -> "Scaler":
        return Scaler(self.mean.astype(dtype), self.std.astype(dtype))

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[-1] != self.width:
            raise ShapeError(f"scaler width {self.width} does not match data width {x.shape[-1]}")
        return (x - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z)
        if z.shape[-1] != self.width:
            raise ShapeError(f"scaler width {self.width} does not match data width {z.shape[-1]}")
        return z * self.std + self.mean


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ArgumentError(f"test_fraction must be in (0, 1), got {self.test_fraction}")


def assemble(per_activity: list[tuple[SpectralDataset, str]]) -> SpectralDataset:
    """Concatenate per-activity datasets; class order follows first appearance."""
    if not per_activity:
        raise ArgumentError("nothing to assemble")
    first = per_activity[0][0]
    names: list[str] = []
    feats, labels, prov = [], [], []
    for ds, label in per_activity:
        if ds.width != first.width:
            raise ShapeError(f"activity {label!r} has width {ds.width}, expected {first.width}")
        if ds.config != first.config:
            raise ShapeError(f"activity {label!r} was featurized with a different StftConfig")
        if label in names:
            raise ConflictError(f"duplicate activity label {label!r}")
        names.append(label)
        feats.append(ds.features)
        labels.append(np.full(ds.n_rows, len(names) - 1, dtype=np.int64))
        prov.append(ds.provenance)
    return SpectralDataset(np.concatenate(feats), np.concatenate(labels), names,
                           np.concatenate(prov), first.config)


def concat(datasets: list[SpectralDataset]) -> SpectralDataset:
    """Stack datasets that already share one class list."""
    base = datasets[0]
    for ds in datasets[1:]:
        if ds.class_names != base.class_names:
            raise ConflictError("cannot concatenate datasets with different class lists")
        if ds.width != base.width:
            raise ShapeError("cannot concatenate datasets of different widths")
    return SpectralDataset(np.concatenate([d.features for d in datasets]),
                           np.concatenate([d.labels for d in datasets]),
                           list(base.class_names),
                           np.concatenate([d.provenance for d in datasets]), base.config)


def split_indices(labels: np.ndarray, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.seed)
    if not spec.stratified:
        perm = rng.permutation(len(labels))
        n_test = int(round(spec.test_fraction * len(labels)))
        return np.sort(perm[n_test:]), np.sort(perm[:n_test])
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise DataError(f"class {c} has {len(idx)} row(s); stratified split needs 2")
        n_test = int(round(spec.test_fraction * len(idx)))
        n_test = min(max(n_test, 1), len(idx) - 1)
        perm = rng.permutation(idx)
        test.append(perm[:n_test])
        train.append(perm[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(ds: SpectralDataset, spec: SplitSpec | None = None
          ) -> tuple[SpectralDataset, SpectralDataset]:
    tr, te = split_indices(ds.labels, spec or SplitSpec())
    return ds.subset(tr), ds.subset(te)


def fit_scaler(train: SpectralDataset | np.ndarray) -> Scaler:
    x = train.features if isinstance(train, SpectralDataset) else np.asarray(train)
    if x.shape[0] == 0:
        raise DataError("cannot fit a scaler on zero rows")
    x = x.astype(np.float64, copy=False)
    return Scaler(x.mean(axis=0), x.std(axis=0))


def apply_scaler(ds: SpectralDataset, scaler: Scaler) -> SpectralDataset:
    return ds.with_features(scaler.transform(ds.features))


def invert_scaler(ds: SpectralDataset, scaler: Scaler) -> SpectralDataset:
    return ds.with_features(scaler.inverse(ds.features))


# --- EMDS binary container -------------------------------------------------

def _pack_names(names: list[str]) -> bytes:
    out = bytearray()
    for name in names:
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
    return bytes(out)


class _Reader:
    """Bounds-checked cursor that reports offsets on truncation."""

    def __init__(self, buf: bytes, what: str):
        self.buf, self.pos, self.what = buf, 0, what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"{self.what}: truncated at offset {self.pos} "
                f"(needed {n} bytes, {len(self.buf) - self.pos} left)"
            )
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt)

    def names(self, count: int) -> list[str]:
        out = []
        for _ in range(count):
            (n,) = self.unpack("<I")
            at = self.pos
            try:
                out.append(self.take(n).decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise FormatError(f"{self.what}: bad UTF-8 name at offset {at}") from exc
        return out

    def finish(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes "
                              f"at offset {self.pos}")


def dataset_to_bytes(ds: SpectralDataset) -> bytes:
    header = EMDS_MAGIC + struct.pack("<IQQI", EMDS_VERSION, ds.n_rows, ds.width, ds.n_classes)
    return b"".join([
        header,
        _pack_names(ds.class_names),
        ds.labels.astype("<u4").tobytes(),
        np.ascontiguousarray(ds.features, dtype="<f4").tobytes(),
    ])


def dataset_from_bytes(buf: bytes, config: StftConfig | None = None,
                       what: str = "dataset") -> SpectralDataset:
    r = _Reader(buf, what)
    if r.take(4) != EMDS_MAGIC:
        raise FormatError(f"{what}: bad magic at offset 0")
    version, n_rows, width, n_classes = r.unpack("<IQQI")
    if version != EMDS_VERSION:
        raise FormatError(f"{what}: unsupported version {version} at offset 4")
    names = r.names(n_classes)
    labels = r.array("<u4", n_rows).astype(np.int64)
    feats = r.array("<f4", n_rows * width).reshape(n_rows, width).astype(np.float32)
    r.finish()
    if n_rows and labels.max() >= n_classes:
        raise FormatError(f"{what}: label {labels.max()} >= n_classes {n_classes}")
    return SpectralDataset(feats, labels, names, None, config or StftConfig(fft_size=_pow2(width)))


def _pow2(width: int) -> int:
    return width if width > 0 and width & (width - 1) == 0 else 2048


def save_dataset(ds: SpectralDataset, path: str | os.PathLike) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def load_dataset(path: str | os.PathLike, config: StftConfig | None = None) -> SpectralDataset:
    path = Path(path)
    return dataset_from_bytes(path.read_bytes(), config, what=str(path))
