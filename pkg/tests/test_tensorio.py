import io

import numpy as np
import pytest

from physmaster import tensorio


def test_round_trip_all_dtypes(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "floats": rng.random((3, 4, 5)).astype(np.float32),
        "bytes": rng.integers(0, 255, size=(7,), dtype=np.uint8),
        "flags": rng.random((2, 6)) > 0.5,
    }
    path = tmp_path / "t.pmt"
    offsets = tensorio.write_tensor_file(path, tensors)
    loaded = tensorio.read_tensor_file(path, offsets)
    for name, arr in tensors.items():
        assert loaded[name].dtype == arr.dtype
        np.testing.assert_array_equal(loaded[name], arr)
    # frames payload is bit-exact
    assert loaded["floats"].tobytes() == tensors["floats"].tobytes()


def test_header_layout():
    buf = io.BytesIO()
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    tensorio.write_record(buf, arr)
    raw = buf.getvalue()
    assert raw[:4] == b"PMT1"
    assert raw[4] == 0  # f32 dtype code
    assert raw[5] == 2  # ndim
    assert int.from_bytes(raw[6:10], "little") == 2
    assert int.from_bytes(raw[10:14], "little") == 3
    assert len(raw) == 32 + 6 * 4


def test_records_are_seekable_by_offset():
    buf = io.BytesIO()
    a = np.ones((2, 2), dtype=np.float32)
    b = np.zeros((3,), dtype=np.uint8)
    off_a = tensorio.write_record(buf, a)
    off_b = tensorio.write_record(buf, b)
    np.testing.assert_array_equal(tensorio.read_record(buf, off_b), b)
    np.testing.assert_array_equal(tensorio.read_record(buf, off_a), a)


def test_rejects_unsupported_dtype_and_bad_magic():
    buf = io.BytesIO()
    with pytest.raises(TypeError):
        tensorio.write_record(buf, np.zeros(3, dtype=np.float64))
    bad = io.BytesIO(b"NOPE" + b"\x00" * 60)
    with pytest.raises(ValueError):
        tensorio.read_record(bad, 0)


def test_truncated_payload_is_detected():
    buf = io.BytesIO()
    tensorio.write_record(buf, np.ones(10, dtype=np.float32))
    clipped = io.BytesIO(buf.getvalue()[:-8])
    with pytest.raises(ValueError):
        tensorio.read_record(clipped, 0)
