"""Short-time Fourier transform features for IQ traces.

Each STFT frame becomes one feature row: the (log-)magnitude of an
unnormalized ``fft_size``-point DFT, bins kept in natural order
(DC first, negative frequencies in the upper half).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .errors import ArgumentError, InsufficientDataError, ShapeError
from .trace_io import IqTrace

LOG_FLOOR = 1e-12
_CHUNK_ROWS = 2048


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 2048
    hop: int | None = None
    window_fn: Literal["rectangular", "hann"] = "hann"
    scale: Literal["magnitude", "log_magnitude"] = "log_magnitude"

    def __post_init__(self):
        n = self.fft_size
        if n < 1 or n & (n - 1):
            raise ArgumentError(f"fft_size must be a power of two, got {n}")
        if self.hop is None:
            object.__setattr__(self, "hop", max(1, n // 2))
        if not 1 <= self.hop <= n:
            raise ArgumentError(f"hop must be in [1, {n}], got {self.hop}")
        if self.window_fn not in ("rectangular", "hann"):
            raise ArgumentError(f"unknown window_fn {self.window_fn!r}")
        if self.scale not in ("magnitude", "log_magnitude"):
            raise ArgumentError(f"unknown scale {self.scale!r}")

    def to_dict(self) -> dict:
        return {"fft_size": self.fft_size, "hop": self.hop,
                "window_fn": self.window_fn, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "StftConfig":
        return cls(**{k: d[k] for k in ("fft_size", "hop", "window_fn", "scale") if k in d})


@dataclass
class SpectralDataset:
    """Labeled feature rows.

    ``provenance`` is an ``(n_rows, 2)`` string array of (device_id, session_id).
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    provenance: np.ndarray = None
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.class_names = [str(c) for c in self.class_names]
        n = self.features.shape[0]
        if self.labels.shape[0] != n:
            raise ShapeError(f"{n} feature rows but {self.labels.shape[0]} labels")
        if len(set(self.class_names)) != len(self.class_names):
            raise ArgumentError(f"duplicate class names in {self.class_names}")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ArgumentError("label outside [0, n_classes)")
        if self.provenance is None:
            self.provenance = np.full((n, 2), "", dtype=object)
        self.provenance = np.asarray(self.provenance, dtype=object).reshape(n, 2)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return self.n_rows

    def subset(self, idx) -> "SpectralDataset":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)
        return SpectralDataset(self.features[idx], self.labels[idx], list(self.class_names),
                               self.provenance[idx], self.config)

    def with_features(self, features: np.ndarray) -> "SpectralDataset":
        return replace(self, features=features, labels=self.labels.copy(),
                       class_names=list(self.class_names), provenance=self.provenance.copy())


def window_count(n_samples: int, fft_size: int, hop: int) -> int:
    if n_samples < fft_size:
        return 0
    return (n_samples - fft_size) // hop + 1


def window_coefficients(config: StftConfig) -> np.ndarray:
    n = config.fft_size
    if config.window_fn == "rectangular":
        return np.ones(n)
    # periodic Hann, the usual choice for spectral analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitudes(samples: np.ndarray, config: StftConfig) -> np.ndarray:
    """Scaled STFT magnitudes, one row per frame, as float32."""
    samples = np.asarray(samples)
    n_rows = window_count(len(samples), config.fft_size, config.hop)
    if n_rows == 0:
        raise InsufficientDataError(
            f"trace has {len(samples)} samples, fewer than fft_size={config.fft_size}"
        )
    frames = np.lib.stride_tricks.sliding_window_view(samples, config.fft_size)[:: config.hop]
    win = window_coefficients(config)
    out = np.empty((n_rows, config.fft_size), dtype=np.float32)
    for start in range(0, n_rows, _CHUNK_ROWS):
        block = frames[start:start + _CHUNK_ROWS].astype(np.complex128) * win
        mag = np.abs(np.fft.fft(block, axis=1))
        if config.scale == "log_magnitude":
            mag = np.log(np.maximum(mag, LOG_FLOOR))
        out[start:start + len(block)] = mag
    return out


def stft_featurize(trace: IqTrace, config: StftConfig | None = None) -> SpectralDataset:
    """Featurize a whole trace into a single-class dataset labeled with its activity."""
    config = config or StftConfig()
    feats = stft_magnitudes(trace.samples, config)
    prov = np.empty((len(feats), 2), dtype=object)
    prov[:, 0] = trace.meta.device_id
    prov[:, 1] = trace.meta.session_id
    return SpectralDataset(feats, np.zeros(len(feats), dtype=np.int64),
                           [trace.meta.activity_label], prov, config)


def take_windows(ds: SpectralDataset, n: int, strategy: str = "head",
                 seed: int = 0) -> SpectralDataset:
    """Keep ``min(n, rows)`` rows.

    ``head`` keeps the first rows, ``uniform_stride`` keeps evenly spaced ones.
    Both are deterministic; ``seed`` is accepted for interface symmetry.
    """
    if n <= 0:
        raise ArgumentError(f"n must be positive, got {n}")
    if ds.n_rows == 0:
        raise InsufficientDataError("dataset has no rows")
    rows = ds.n_rows
    k = min(n, rows)
    if strategy == "head":
        idx = np.arange(k)
    elif strategy == "uniform_stride":
        idx = (np.arange(k) * rows) // k
    else:
        raise ArgumentError(f"unknown window strategy {strategy!r}")
    return ds.subset(idx)
