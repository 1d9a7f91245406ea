"""Deterministic synthetic EM traces standing in for SDR captures.

Signal model, per (device, activity, session)::

    x(t) = s * IQ( a(t) * sum_k g_k exp(j(2 pi (f_c + h_k) t + phi_k)) ) + n(t)

* ``h_k`` are eight fixed harmonic slots spread across the band and ``g_k``
  the device's harmonic response,
* ``f_c`` is the device carrier offset plus the session's extra offset,
* ``a(t) = 1 + sum_i d_i cos(2 pi f_i t + psi_i)`` carries the activity's AM tones,
* ``IQ`` applies gain/phase imbalance to the quadrature rail,
* ``s`` is the session amplitude scale and ``n`` white complex Gaussian noise.

Activities are told apart by their sideband spacing; devices and sessions
by where the whole comb sits and how it is shaped.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import assemble
from .errors import ArgumentError, SchemaError
from .spectral import SpectralDataset, StftConfig, stft_featurize, take_windows
from .trace_io import CaptureMeta, IqTrace, ManifestEntry, save_manifest, write_cfile

N_HARMONICS = 8
DEFAULT_SIM_RATE_HZ = 1e6
DEFAULT_HARMONIC_SPACING_HZ = 100e3


@dataclass(frozen=True)
class DeviceProfile:
    device_id: str
    clock_hz: float
    carrier_offset_hz: float
    harmonic_gains: tuple[float, ...]
    iq_gain_ratio: float = 1.0
    iq_phase_skew_rad: float = 0.0
    noise_floor_db: float = -20.0

    def __post_init__(self):
        object.__setattr__(self, "harmonic_gains", tuple(float(g) for g in self.harmonic_gains))
        if len(self.harmonic_gains) != N_HARMONICS:
            raise ArgumentError(f"{self.device_id}: need {N_HARMONICS} harmonic gains")
        if min(self.harmonic_gains) <= 0:
            raise ArgumentError(f"{self.device_id}: harmonic gains must be positive")
        if not 0.8 <= self.iq_gain_ratio <= 1.2:
            raise ArgumentError(f"{self.device_id}: iq gain ratio outside [0.8, 1.2]")
        if self.clock_hz <= 0:
            raise ArgumentError(f"{self.device_id}: clock_hz must be positive")


@dataclass(frozen=True)
class ActivitySignature:
    activity_label: str
    tone_offsets_hz: tuple[float, ...]
    tone_depths: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "tone_offsets_hz", tuple(float(f) for f in self.tone_offsets_hz))
        object.__setattr__(self, "tone_depths", tuple(float(d) for d in self.tone_depths))
        if len(self.tone_offsets_hz) != len(self.tone_depths):
            raise ArgumentError(f"{self.activity_label}: tone offsets and depths differ in length")
        if any(not 0 < d <= 1 for d in self.tone_depths):
            raise ArgumentError(f"{self.activity_label}: tone depths must lie in (0, 1]")


@dataclass(frozen=True)
class SessionDrift:
    session_id: str = "s0"
    amplitude_scale: float = 1.0
    extra_offset_hz: float = 0.0
    snr_delta_db: float = 0.0

    def __post_init__(self):
        if self.amplitude_scale <= 0:
            raise ArgumentError(f"{self.session_id}: amplitude_scale must be positive")


@dataclass
class SynthConfig:
    devices: list[DeviceProfile]
    activities: list[ActivitySignature]
    sessions: list[SessionDrift] = field(default_factory=lambda: [SessionDrift()])
    sim_rate_hz: float = DEFAULT_SIM_RATE_HZ
    harmonic_spacing_hz: float = DEFAULT_HARMONIC_SPACING_HZ
    windows_per_activity: int = 2000
    stft: StftConfig = field(default_factory=StftConfig)
    version: str = "1"

    def __post_init__(self):
        tones: dict[float, str] = {}
        for a in self.activities:
            for f in a.tone_offsets_hz:
                if f in tones:
                    raise ArgumentError(f"tone {f} Hz shared by {tones[f]!r} and {a.activity_label!r}")
                tones[f] = a.activity_label

    def device(self, device_id: str) -> DeviceProfile:
        for d in self.devices:
            if d.device_id == device_id:
                return d
        raise ArgumentError(f"unknown device {device_id!r}")

    def session(self, session_id: str) -> SessionDrift:
        for s in self.sessions:
            if s.session_id == session_id:
                return s
        raise ArgumentError(f"unknown session {session_id!r}")

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "sim_rate_hz": self.sim_rate_hz,
            "harmonic_spacing_hz": self.harmonic_spacing_hz,
            "windows_per_activity": self.windows_per_activity,
            "stft": self.stft.to_dict(),
            "devices": [asdict(d) for d in self.devices],
            "activities": [asdict(a) for a in self.activities],
            "sessions": [asdict(s) for s in self.sessions],
        }


def parse_synth_config(doc: dict) -> SynthConfig:
    try:
        return SynthConfig(
            devices=[DeviceProfile(**d) for d in doc["devices"]],
            activities=[ActivitySignature(**a) for a in doc["activities"]],
            sessions=[SessionDrift(**s) for s in doc.get("sessions", [{}])],
            sim_rate_hz=float(doc.get("sim_rate_hz", DEFAULT_SIM_RATE_HZ)),
            harmonic_spacing_hz=float(doc.get("harmonic_spacing_hz", DEFAULT_HARMONIC_SPACING_HZ)),
            windows_per_activity=int(doc.get("windows_per_activity", 2000)),
            stft=StftConfig.from_dict(doc.get("stft", {})),
            version=str(doc.get("version", "1")),
        )
    except KeyError as exc:
        raise SchemaError(f"synth config is missing field {exc}") from exc
    except TypeError as exc:
        raise SchemaError(f"synth config: {exc}") from exc


def load_synth_config(path: str | os.PathLike) -> SynthConfig:
    return parse_synth_config(json.loads(Path(path).read_text(encoding="utf-8")))


def builtin_config(name: str = "desk") -> SynthConfig:
    """Shipped generator presets: ``desk`` (iPhone-like) and ``nrf52``."""
    fname = {"desk": "desk_v1.json", "nrf52": "nrf52_v1.json"}.get(name)
    if fname is None:
        raise ArgumentError(f"unknown builtin config {name!r}")
    text = resources.files("emsca.data").joinpath(fname).read_text(encoding="utf-8")
    return parse_synth_config(json.loads(text))


def trace_seed(master_seed: int, *parts: str) -> int:
    """Stable 64-bit seed from the master seed and a key tuple."""
    h = hashlib.sha256(repr((int(master_seed),) + tuple(parts)).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def _phasor(freq_hz: float, n: int, rate: float, phase: float) -> np.ndarray:
    # reduce cycles modulo 1 in float64 before the exponential
    cycles = np.mod(freq_hz / rate * np.arange(n, dtype=np.float64), 1.0)
    return np.exp(1j * (2.0 * np.pi * cycles + phase))


def gen_trace(profile: DeviceProfile, sig: ActivitySignature, drift: SessionDrift | None = None,
              duration_s: float = 0.1, sim_rate_hz: float = DEFAULT_SIM_RATE_HZ, seed: int = 0,
              harmonic_spacing_hz: float = DEFAULT_HARMONIC_SPACING_HZ) -> IqTrace:
    drift = drift or SessionDrift()
    if duration_s <= 0:
        raise ArgumentError(f"duration_s must be positive, got {duration_s}")
    if sim_rate_hz <= 0:
        raise ArgumentError(f"sim_rate_hz must be positive, got {sim_rate_hz}")
    n = int(round(duration_s * sim_rate_hz))
    if n < 1:
        raise ArgumentError("duration shorter than one sample")
    rng = np.random.default_rng(
        trace_seed(seed, profile.device_id, sig.activity_label, drift.session_id))

    t_cycles = np.arange(n, dtype=np.float64) / sim_rate_hz
    envelope = np.ones(n)
    for f, d in zip(sig.tone_offsets_hz, sig.tone_depths):
        envelope += d * np.cos(2.0 * np.pi * np.mod(f * t_cycles, 1.0) + rng.uniform(0, 2 * np.pi))

    f_c = profile.carrier_offset_hz + drift.extra_offset_hz
    comb = np.zeros(n, dtype=np.complex128)
    for k, g in enumerate(profile.harmonic_gains):
        h = (k - (N_HARMONICS - 1) / 2.0) * harmonic_spacing_hz
        comb += g * _phasor(f_c + h, n, sim_rate_hz, rng.uniform(0, 2 * np.pi))
    x = envelope * comb

    # quadrature rail picks up gain error and leakage from the in-phase rail
    i_rail, q_rail = x.real, x.imag
    eps, phi = profile.iq_gain_ratio, profile.iq_phase_skew_rad
    q_rail = eps * (np.cos(phi) * q_rail + np.sin(phi) * i_rail)
    x = drift.amplitude_scale * (i_rail + 1j * q_rail)

    noise_power = 10.0 ** ((profile.noise_floor_db - drift.snr_delta_db) / 10.0)
    noise = rng.standard_normal((n, 2)) * np.sqrt(noise_power / 2.0)
    x = x + (noise[:, 0] + 1j * noise[:, 1])

    meta = CaptureMeta(profile.device_id, sig.activity_label, drift.session_id)
    return IqTrace(x.astype(np.complex64), sim_rate_hz, profile.clock_hz, meta)


def samples_for_windows(windows: int, stft: StftConfig) -> int:
    return (windows - 1) * stft.hop + stft.fft_size


def gen_corpus(devices, activities, sessions, windows_per_activity: int,
               stft: StftConfig | None = None, seed: int = 0,
               sim_rate_hz: float = DEFAULT_SIM_RATE_HZ,
               harmonic_spacing_hz: float = DEFAULT_HARMONIC_SPACING_HZ
               ) -> dict[tuple[str, str], SpectralDataset]:
    """Featurized corpus keyed by ``(device_id, session_id)``."""
    stft = stft or StftConfig()
    if not devices or not activities or not sessions:
        raise ArgumentError("devices, activities and sessions must be non-empty")
    if windows_per_activity < 1:
        raise ArgumentError("windows_per_activity must be >= 1")
    n = samples_for_windows(windows_per_activity, stft)
    corpus = {}
    for dev in devices:
        for sess in sessions:
            parts = []
            for act in activities:
                tr = gen_trace(dev, act, sess, n / sim_rate_hz, sim_rate_hz, seed,
                               harmonic_spacing_hz)
                ds = take_windows(stft_featurize(tr, stft), windows_per_activity, "head")
                parts.append((ds, act.activity_label))
            corpus[(dev.device_id, sess.session_id)] = assemble(parts)
    return corpus


def corpus_from_config(cfg: SynthConfig, seed: int = 0, devices=None, sessions=None,
                       windows_per_activity: int | None = None):
    devs = cfg.devices if devices is None else [cfg.device(d) for d in devices]
    sess = cfg.sessions if sessions is None else [cfg.session(s) for s in sessions]
    return gen_corpus(devs, cfg.activities, sess,
                      windows_per_activity or cfg.windows_per_activity,
                      cfg.stft, seed, cfg.sim_rate_hz, cfg.harmonic_spacing_hz)


def write_corpus(cfg: SynthConfig, out_dir: str | os.PathLike, seed: int = 0,
                 windows_per_activity: int | None = None) -> list[ManifestEntry]:
    """Generate every trace of ``cfg`` as ``.cfile`` files plus ``manifest.json``."""
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    n = samples_for_windows(windows_per_activity or cfg.windows_per_activity, cfg.stft)
    entries = []
    for dev in cfg.devices:
        for sess in cfg.sessions:
            for act in cfg.activities:
                tr = gen_trace(dev, act, sess, n / cfg.sim_rate_hz, cfg.sim_rate_hz, seed,
                               cfg.harmonic_spacing_hz)
                rel = f"traces/{dev.device_id}__{sess.session_id}__{act.activity_label}.cfile"
                write_cfile(tr, out / rel)
                entries.append(ManifestEntry(rel, tr.meta, tr.sample_rate_hz,
                                             tr.center_frequency_hz))
    save_manifest(entries, out / "manifest.json")
    (out / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n",
                                           encoding="utf-8")
    return entries
