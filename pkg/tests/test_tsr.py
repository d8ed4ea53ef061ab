"""Binary tensor format: exact layout, roundtrips, and the error taxonomy."""

import struct

import numpy as np
import pytest

from featsim.errors import TsrBadMagic, TsrError, TsrExtentOverflow, TsrTruncated
from featsim.tsr import read_tsr, write_pgm, write_tsr


def test_exact_bytes_of_2x2_float32(tmp_path):
    path = tmp_path / "t.tsr"
    arr = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    write_tsr(arr, path)
    raw = path.read_bytes()
    # magic(4) + dtype tag(1) + ndim(1) + two u32 extents(8) + 4 floats(16)
    assert len(raw) == 30
    assert raw[:4] == b"TSR1"
    assert raw[4] == 0
    assert raw[5] == 2
    assert struct.unpack("<II", raw[6:14]) == (2, 2)
    assert raw[14:] == arr.tobytes()


def test_roundtrip_float32_and_uint8(tmp_path):
    rng = np.random.default_rng(0)
    for arr in (rng.random((3, 4, 5)).astype(np.float32),
                rng.integers(0, 255, (7,), dtype=np.uint8),
                np.zeros((1, 1), dtype=np.float32),
                rng.integers(0, 4, (16, 16), dtype=np.uint8)):
        path = tmp_path / "r.tsr"
        write_tsr(arr, path)
        back = read_tsr(path)
        assert back.dtype == arr.dtype
        assert back.shape == arr.shape
        np.testing.assert_array_equal(back, arr)


def test_non_contiguous_and_list_inputs(tmp_path):
    arr = np.arange(12, dtype=np.float32).reshape(3, 4)[:, ::2]
    path = tmp_path / "nc.tsr"
    write_tsr(arr, path)
    np.testing.assert_array_equal(read_tsr(path), arr)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(TsrError):
        write_tsr(np.ones(3, dtype=np.int32), tmp_path / "bad.tsr")


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.tsr"
    path.write_bytes(b"NOPE" + bytes(10))
    with pytest.raises(TsrBadMagic):
        read_tsr(path)


def test_truncated_header_and_payload(tmp_path):
    good = tmp_path / "good.tsr"
    write_tsr(np.ones((2, 2), dtype=np.float32), good)
    raw = good.read_bytes()
    for cut in (2, 5, 6, 10, 14, 29):
        bad = tmp_path / f"cut{cut}.tsr"
        bad.write_bytes(raw[:cut])
        with pytest.raises((TsrTruncated, TsrBadMagic)):
            read_tsr(bad)
    # cuts inside the magic must specifically report bad magic or truncation;
    # a cut payload must specifically report truncation
    bad = tmp_path / "pay.tsr"
    bad.write_bytes(raw[:20])
    with pytest.raises(TsrTruncated):
        read_tsr(bad)


def test_trailing_bytes_rejected(tmp_path):
    good = tmp_path / "good.tsr"
    write_tsr(np.ones((2, 2), dtype=np.float32), good)
    bad = tmp_path / "trail.tsr"
    bad.write_bytes(good.read_bytes() + b"\x00")
    with pytest.raises(TsrError):
        read_tsr(bad)


def test_extent_overflow(tmp_path):
    # header claims 2^16 * 2^16 * 2^8 elements = 2^40, past the 1<<31 cap
    path = tmp_path / "huge.tsr"
    path.write_bytes(b"TSR1" + bytes([0, 3]) + struct.pack("<III", 1 << 16, 1 << 16, 1 << 8))
    with pytest.raises(TsrExtentOverflow):
        read_tsr(path)


def test_zero_extent_rejected(tmp_path):
    path = tmp_path / "zero.tsr"
    path.write_bytes(b"TSR1" + bytes([0, 2]) + struct.pack("<II", 0, 4))
    with pytest.raises(TsrError):
        read_tsr(path)


def test_unknown_dtype_tag_rejected(tmp_path):
    path = tmp_path / "tag.tsr"
    path.write_bytes(b"TSR1" + bytes([9, 1]) + struct.pack("<I", 2) + bytes(8))
    with pytest.raises(TsrError):
        read_tsr(path)


def test_error_types_are_distinct_and_catchable_as_tsr_error():
    assert issubclass(TsrBadMagic, TsrError)
    assert issubclass(TsrTruncated, TsrError)
    assert issubclass(TsrExtentOverflow, TsrError)
    assert TsrBadMagic is not TsrTruncated


def test_pgm_output(tmp_path):
    img = np.linspace(0.0, 1.0, 16, dtype=np.float32).reshape(1, 4, 4)
    path = tmp_path / "img.pgm"
    write_pgm(img, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n4 4\n255\n")
    pixels = raw.split(b"255\n", 1)[1]
    assert len(pixels) == 16
    assert pixels[0] == 0 and pixels[-1] == 255
    # 2D input accepted too
    write_pgm(img[0], tmp_path / "img2.pgm")
    assert (tmp_path / "img2.pgm").read_bytes() == raw
