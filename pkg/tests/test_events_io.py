"""Event file formats: exact round trips, layout, and corruption checks."""

import numpy as np
import pytest

from trionsim.core import DeviceParams, NoiseModel
from trionsim.events_io import (
    MAGIC,
    compat_digest,
    ensure_compatible,
    read_events,
    read_events_binary,
    read_events_csv,
    write_events,
    write_events_binary,
    write_events_csv,
)
from trionsim.montecarlo import ProtocolConfig, run


def _device(**kw):
    base = dict(g_e=2.09, g_h=0.362, t1_s=300e-12, p_mem=0.865, b_x_t=0.15,
                noise=NoiseModel.quiet())
    base.update(kw)
    return DeviceParams(**base)


@pytest.fixture(scope="module")
def stream():
    return run(_device(), ProtocolConfig.lifetime(2000, rng_seed=11))


def _assert_streams_equal(a, b):
    assert np.array_equal(a.events, b.events)
    assert a.device.to_dict() == b.device.to_dict()
    assert a.config.to_dict() == b.config.to_dict()
    assert a.diagnostics == b.diagnostics
    assert a.content_digest == b.content_digest


def test_binary_round_trip_exact(tmp_path, stream):
    path = tmp_path / "events.bin"
    write_events_binary(path, stream)
    _assert_streams_equal(read_events_binary(path), stream)


def test_csv_round_trip_exact(tmp_path, stream):
    path = tmp_path / "events.csv"
    write_events_csv(path, stream)
    _assert_streams_equal(read_events_csv(path), stream)


def test_read_events_detects_format(tmp_path, stream):
    write_events(tmp_path / "a.bin", stream, fmt="binary")
    write_events(tmp_path / "a.csv", stream, fmt="csv")
    _assert_streams_equal(read_events(tmp_path / "a.bin"), stream)
    _assert_streams_equal(read_events(tmp_path / "a.csv"), stream)
    with pytest.raises(ValueError):
        write_events(tmp_path / "a.xyz", stream, fmt="xyz")


def test_binary_payload_layout(tmp_path, stream):
    # magic line, one JSON header line, then packed 14-byte records:
    # u32 shot, u8 channel, u8 projection, f64 time, all little endian
    path = tmp_path / "events.bin"
    write_events_binary(path, stream)
    blob = path.read_bytes()
    assert blob.startswith(MAGIC)
    payload = blob[blob.index(b"\n", len(MAGIC)) + 1:]
    assert len(payload) == 14 * len(stream)
    records = np.frombuffer(
        payload,
        dtype=[("shot", "<u4"), ("channel", "u1"), ("projection", "u1"),
               ("time", "<f8")],
    )
    assert np.array_equal(records["shot"], stream.events["shot"])
    assert np.array_equal(records["channel"], stream.events["channel"])
    assert np.array_equal(records["projection"], stream.events["projection"])
    assert np.array_equal(records["time"], stream.events["time"])


def test_corrupt_payload_rejected(tmp_path, stream):
    path = tmp_path / "events.bin"
    write_events_binary(path, stream)
    blob = bytearray(path.read_bytes())
    blob[-3] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="content digest mismatch"):
        read_events(path)


def test_truncated_payload_rejected(tmp_path, stream):
    path = tmp_path / "events.bin"
    write_events_binary(path, stream)
    blob = path.read_bytes()
    path.write_bytes(blob[:-14])
    with pytest.raises(ValueError, match="truncated event block"):
        read_events(path)


def test_foreign_file_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_text("not,an,event,file\n1,2,3,4\n")
    with pytest.raises(ValueError, match="not an event stream file"):
        read_events(path)
    with pytest.raises(ValueError, match="not an event stream file"):
        read_events_binary(path)


def test_compat_digest_ignores_run_only_fields():
    dev = _device()
    base = ProtocolConfig.pulsed(10_000, rng_seed=1, pulse_delay_s=1.0e-9)
    retake = ProtocolConfig.pulsed(50_000, rng_seed=99, pulse_delay_s=4.2e-9)
    assert compat_digest(dev, base) == compat_digest(dev, retake)

    other_field = ProtocolConfig.pulsed(10_000, rng_seed=1,
                                        pulse_delay_s=1.0e-9,
                                        rep_period_s=25e-9)
    assert compat_digest(dev, base) != compat_digest(dev, other_field)
    assert compat_digest(_device(g_e=2.10), base) != compat_digest(dev, base)


def test_ensure_compatible(tmp_path):
    dev = _device()
    a = run(dev, ProtocolConfig.pulsed(2000, rng_seed=3, pulse_delay_s=1e-9))
    b = run(dev, ProtocolConfig.pulsed(2000, rng_seed=4, pulse_delay_s=2e-9))
    assert ensure_compatible([a, b]) == compat_digest(dev, a.config)

    c = run(_device(g_h=0.35),
            ProtocolConfig.pulsed(2000, rng_seed=3, pulse_delay_s=1e-9))
    with pytest.raises(ValueError, match="mismatched device/config"):
        ensure_compatible([a, c])


def test_empty_stream_round_trips(tmp_path):
    # detection_efficiency cannot be zero, so make a legal stream and
    # empty it by hand; digests are recomputed from the event array
    full = run(_device(), ProtocolConfig.lifetime(100, rng_seed=5))
    empty = type(full)(events=full.events[:0].copy(), device=full.device,
                       config=full.config, diagnostics=full.diagnostics)
    for fmt, name in (("binary", "e.bin"), ("csv", "e.csv")):
        path = tmp_path / name
        write_events(path, empty, fmt=fmt)
        back = read_events(path)
        assert len(back) == 0
        assert back.content_digest == empty.content_digest
