import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from deltaflow import tensorio
from deltaflow.errors import CodecError


@given(arrays(np.float32, array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5),
              elements=st.floats(-1e6, 1e6, allow_nan=False, width=32)))
@settings(max_examples=40)
def test_grid_roundtrip_is_exact_in_float32(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("dfvt") / "grid.dfvt"
    tensorio.write_grid(path, data.astype(np.float64))
    back = tensorio.read_grid(path)
    np.testing.assert_array_equal(back, data.astype(np.float64))
    assert back.shape == data.shape


def test_grid_header_layout(tmp_path):
    path = tmp_path / "g.dfvt"
    tensorio.write_grid(path, np.arange(6, dtype=np.float64).reshape(2, 3))
    raw = path.read_bytes()
    assert raw[:4] == b"DFVT"
    assert raw[4:6] == (1).to_bytes(2, "little")      # version
    assert raw[6] == 1                                 # dtype code: float32 LE
    assert raw[7] == 2                                 # ndim
    assert int.from_bytes(raw[8:12], "little") == 2
    assert int.from_bytes(raw[12:16], "little") == 3
    assert len(raw) == 16 + 6 * 4


def test_grid_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.dfvt"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CodecError):
        tensorio.read_grid(path)
    good = tmp_path / "good.dfvt"
    tensorio.write_grid(good, np.zeros((2, 2)))
    truncated = tmp_path / "trunc.dfvt"
    truncated.write_bytes(good.read_bytes()[:-4])
    with pytest.raises(CodecError):
        tensorio.read_grid(truncated)


def test_pgm_roundtrip_and_scaling(tmp_path):
    frame = np.array([[0.0, 1.0], [0.5, 0.25]])
    path = tmp_path / "f.pgm"
    tensorio.write_pgm(path, frame)
    back = tensorio.read_pgm(path)
    # round-half-up: 0.5*255+0.5 -> 128
    np.testing.assert_array_equal(np.round(back * 255), [[0, 255], [128, 64]])


def test_mask_pgm_threshold(tmp_path):
    frame = np.array([[0.0, 0.501], [0.499, 1.0]])
    path = tmp_path / "m.pgm"
    tensorio.write_pgm(path, frame)
    mask = tensorio.read_mask_pgm(path)
    np.testing.assert_array_equal(mask, [[False, True], [False, True]])


def test_ppm_roundtrip(tmp_path):
    frame = np.zeros((2, 2, 3))
    frame[0, 0] = [1.0, 0.5, 0.0]
    path = tmp_path / "f.ppm"
    tensorio.write_ppm(path, frame)
    raw = path.read_bytes()
    assert raw.startswith(b"P6")
