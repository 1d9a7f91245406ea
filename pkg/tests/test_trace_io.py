import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emsca.errors import ConflictError, FormatError, SchemaError
from emsca.trace_io import (CaptureMeta, IqTrace, load_manifest, read_cfile, save_manifest,
                            ManifestEntry, write_cfile)

META = CaptureMeta("dev", "idle", "s0")


def test_single_sample_file(tmp_path):
    p = tmp_path / "one.cfile"
    p.write_bytes(struct.pack("<ff", 1.0, -0.5))
    tr = read_cfile(p, META, 20e6, 3.23e9)
    assert len(tr) == 1
    assert tr.samples[0] == np.complex64(1.0 - 0.5j)


def test_empty_file_is_valid(tmp_path):
    p = tmp_path / "empty.cfile"
    p.write_bytes(b"")
    assert len(read_cfile(p, META, 1e6, 1e9)) == 0


def test_truncated_file_rejected(tmp_path):
    p = tmp_path / "bad.cfile"
    p.write_bytes(b"\x00" * 12)
    with pytest.raises(FormatError):
        read_cfile(p, META, 1e6, 1e9)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        read_cfile(tmp_path / "nope.cfile", META, 1e6, 1e9)


def test_write_sizes(tmp_path):
    write_cfile(IqTrace(np.array([1 + 2j, 3 - 4j]), 1e6, 1e9, META), tmp_path / "a.cfile")
    assert (tmp_path / "a.cfile").stat().st_size == 16
    write_cfile(IqTrace(np.zeros(0), 1e6, 1e9, META), tmp_path / "b.cfile")
    assert (tmp_path / "b.cfile").stat().st_size == 0


def test_rates_must_be_positive():
    with pytest.raises(ValueError):
        IqTrace(np.zeros(4), 0.0, 1e9, META)
    with pytest.raises(ValueError):
        IqTrace(np.zeros(4), 1e6, -1.0, META)


def test_default_gains():
    m = CaptureMeta("d", "a", "s")
    assert (m.rf_gain_db, m.if_gain_db, m.bb_gain_db) == (14.0, 40.0, 18.0)


@settings(max_examples=40, deadline=None)
@given(st.binary(max_size=256).map(lambda b: b[: len(b) - len(b) % 8]))
def test_read_write_byte_identity(tmp_path_factory, raw):
    d = tmp_path_factory.mktemp("rt")
    src, dst = d / "src.cfile", d / "dst.cfile"
    src.write_bytes(raw)
    tr = read_cfile(src, META, 1e6, 1e9)
    assert len(tr) == len(raw) // 8
    write_cfile(tr, dst)
    assert dst.read_bytes() == raw


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(width=32, allow_nan=False), st.floats(width=32, allow_nan=False)),
                max_size=64))
def test_write_read_value_identity(tmp_path_factory, pairs):
    d = tmp_path_factory.mktemp("wr")
    samples = np.array([complex(i, q) for i, q in pairs], dtype=np.complex64)
    write_cfile(IqTrace(samples, 1e6, 1e9, META), d / "x.cfile")
    back = read_cfile(d / "x.cfile", META, 1e6, 1e9).samples
    assert back.tobytes() == samples.tobytes()


IPHONE_ACTS = ["calendar-app", "camera-photo", "camera-video", "email-app", "gallery-app",
               "home-screen", "idle", "phone-app", "sms-app", "web-browser-app"]
NRF_ACTS = ["blinky", "blinky_freertos", "blinky_rtc_freertos", "blinky_systick",
            "led_softblink", "BLINK_new", "IDLE_new", "Matrix_multiplication_new"]


def _entries(device, acts, rate=20e6, center=3.23e9):
    return [{"file": f"{device}_{a}.cfile", "device_id": device, "activity_label": a,
             "session_id": "s0", "sample_rate_hz": rate, "center_frequency_hz": center,
             "rf_gain_db": 14, "if_gain_db": 40, "bb_gain_db": 18} for a in acts]


@pytest.mark.parametrize("device,acts", [("iphone13-I", IPHONE_ACTS), ("nordic-1", NRF_ACTS)])
def test_manifest_counts(tmp_path, device, acts):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(_entries(device, acts)))
    entries = load_manifest(p)
    assert len(entries) == len(acts)
    assert [e.meta.activity_label for e in entries] == acts


def test_manifest_duplicate_key(tmp_path):
    doc = _entries("d", ["idle", "idle"])
    doc[1]["file"] = "other.cfile"
    p = tmp_path / "m.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ConflictError):
        load_manifest(p)


def test_manifest_missing_field_named(tmp_path):
    doc = _entries("d", ["idle"])
    del doc[0]["session_id"]
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"traces": doc}))
    with pytest.raises(SchemaError, match="session_id"):
        load_manifest(p)


def test_manifest_roundtrip(tmp_path):
    entries = [ManifestEntry("a.cfile", CaptureMeta("d", "idle", "s1", 10, 20, 30), 1e6, 2.4e9)]
    save_manifest(entries, tmp_path / "m.json")
    assert load_manifest(tmp_path / "m.json") == entries
