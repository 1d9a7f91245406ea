"""Raw IQ recordings in GNU Radio ``.cfile`` layout plus JSON manifests.

A ``.cfile`` is headerless: interleaved little-endian float32 pairs (I, Q),
eight bytes per complex sample. Everything else about a capture lives in a
manifest sidecar.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConflictError, FormatError, SchemaError

_SAMPLE_DTYPE = np.dtype("<c8")  # two LE float32, I then Q

DEFAULT_RF_GAIN_DB = 14.0
DEFAULT_IF_GAIN_DB = 40.0
DEFAULT_BB_GAIN_DB = 18.0


@dataclass(frozen=True)
class CaptureMeta:
    device_id: str
    activity_label: str
    session_id: str = "s0"
    rf_gain_db: float = DEFAULT_RF_GAIN_DB
    if_gain_db: float = DEFAULT_IF_GAIN_DB
    bb_gain_db: float = DEFAULT_BB_GAIN_DB

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.device_id, self.activity_label, self.session_id)


@dataclass
class IqTrace:
    samples: np.ndarray
    sample_rate_hz: float
    center_frequency_hz: float
    meta: CaptureMeta = field(default_factory=lambda: CaptureMeta("unknown", "unknown"))

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not self.center_frequency_hz > 0:
            raise ValueError(
                f"center_frequency_hz must be positive, got {self.center_frequency_hz}"
            )
        self.samples = np.asarray(self.samples, dtype=np.complex64)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class ManifestEntry:
    file: str
    meta: CaptureMeta
    sample_rate_hz: float
    center_frequency_hz: float

    def to_dict(self) -> dict:
        d = {"file": self.file}
        d.update(asdict(self.meta))
        d["sample_rate_hz"] = self.sample_rate_hz
        d["center_frequency_hz"] = self.center_frequency_hz
        return d


def read_cfile(
    path: str | os.PathLike,
    meta: CaptureMeta,
    sample_rate_hz: float,
    center_frequency_hz: float,
) -> IqTrace:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read trace {path}: {exc}") from exc
    if len(raw) % _SAMPLE_DTYPE.itemsize:
        raise FormatError(
            f"{path}: {len(raw)} bytes is not a multiple of "
            f"{_SAMPLE_DTYPE.itemsize} (truncated complex sample)"
        )
    samples = np.frombuffer(raw, dtype=_SAMPLE_DTYPE).astype(np.complex64)
    return IqTrace(samples, sample_rate_hz, center_frequency_hz, meta)


def write_cfile(trace: IqTrace, path: str | os.PathLike) -> None:
    path = Path(path)
    data = np.ascontiguousarray(trace.samples, dtype=_SAMPLE_DTYPE)
    try:
        path.write_bytes(data.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write trace {path}: {exc}") from exc


def read_entry(entry: ManifestEntry, root: str | os.PathLike = ".") -> IqTrace:
    return read_cfile(
        Path(root) / entry.file, entry.meta, entry.sample_rate_hz, entry.center_frequency_hz
    )


_REQUIRED = ("file", "device_id", "activity_label", "session_id",
             "sample_rate_hz", "center_frequency_hz")


def _parse_entry(i: int, raw: dict) -> ManifestEntry:
    if not isinstance(raw, dict):
        raise SchemaError(f"manifest entry {i} is not an object")
    for name in _REQUIRED:
        if name not in raw:
            raise SchemaError(f"manifest entry {i} is missing field '{name}'")
    try:
        meta = CaptureMeta(
            device_id=str(raw["device_id"]),
            activity_label=str(raw["activity_label"]),
            session_id=str(raw["session_id"]),
            rf_gain_db=float(raw.get("rf_gain_db", DEFAULT_RF_GAIN_DB)),
            if_gain_db=float(raw.get("if_gain_db", DEFAULT_IF_GAIN_DB)),
            bb_gain_db=float(raw.get("bb_gain_db", DEFAULT_BB_GAIN_DB)),
        )
        rate = float(raw["sample_rate_hz"])
        center = float(raw["center_frequency_hz"])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"manifest entry {i}: {exc}") from exc
    if rate <= 0 or center <= 0:
        raise SchemaError(f"manifest entry {i}: rates must be positive")
    return ManifestEntry(str(raw["file"]), meta, rate, center)


def parse_manifest(doc) -> list[ManifestEntry]:
    """Validate an already-decoded manifest document.

    Accepts either a bare list of entries or ``{"traces": [...]}``.
    """
    if isinstance(doc, dict):
        if "traces" not in doc:
            raise SchemaError("manifest is missing field 'traces'")
        doc = doc["traces"]
    if not isinstance(doc, list):
        raise SchemaError("manifest must be a list of trace entries")
    entries = [_parse_entry(i, raw) for i, raw in enumerate(doc)]
    seen: dict[tuple[str, str, str], int] = {}
    for i, e in enumerate(entries):
        if e.meta.key in seen:
            raise ConflictError(
                f"manifest entries {seen[e.meta.key]} and {i} share "
                f"(device, activity, session) = {e.meta.key}"
            )
        seen[e.meta.key] = i
    return entries


def load_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    return parse_manifest(doc)


def save_manifest(entries: Iterable[ManifestEntry], path: str | os.PathLike) -> None:
    doc = {"traces": [e.to_dict() for e in entries]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
