import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from zsvad.errors import DataError
from zsvad.masks import decode_rle, decode_video_rle, encode_rle, encode_video_rle, resize_nearest
from zsvad.tensor_io import (load_frames, read_matrix, read_pnm, read_raw_video, read_tensor, sidecar_path,
                             write_matrix, write_pnm, write_raw_video, write_tensor)


def test_rle_known_layout():
    m = np.array([[0, 1], [1, 1]])
    # column-major: 0, 1, 1, 1
    assert encode_rle(m) == {"size": [2, 2], "counts": [1, 3]}
    assert encode_rle(np.ones((1, 2)))["counts"] == [0, 2]
    assert encode_rle(np.zeros((2, 3)))["counts"] == [6]


@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.integers(0, 1)))
def test_rle_round_trip(m):
    np.testing.assert_array_equal(decode_rle(encode_rle(m)), m)


def test_rle_rejects_bad_counts():
    with pytest.raises(DataError):
        decode_rle({"size": [2, 2], "counts": [1, 2]})
    with pytest.raises(DataError):
        decode_rle({"counts": [4]})
    with pytest.raises(DataError):
        decode_video_rle([])


def test_video_rle_round_trip():
    masks = np.random.default_rng(0).integers(0, 2, size=(3, 4, 6)).astype(np.uint8)
    np.testing.assert_array_equal(decode_video_rle(encode_video_rle(masks)), masks)


def test_resize_nearest():
    lab = np.arange(4).reshape(2, 2)
    np.testing.assert_array_equal(resize_nearest(lab, (4, 4)),
                                  [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])
    np.testing.assert_array_equal(resize_nearest(resize_nearest(lab, (4, 4)), (2, 2)), lab)


def test_matrix_round_trip_and_header(tmp_path):
    m = np.random.default_rng(1).normal(size=(5, 3))
    p = tmp_path / "m.bin"
    write_matrix(p, m)
    raw = p.read_bytes()
    assert int.from_bytes(raw[:8], "little") == 5 and int.from_bytes(raw[8:16], "little") == 3
    assert len(raw) == 16 + 15 * 8
    np.testing.assert_array_equal(read_matrix(p), m)


def test_matrix_rejects_truncation(tmp_path):
    p = tmp_path / "m.bin"
    write_matrix(p, np.ones((2, 2)))
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(DataError):
        read_matrix(p)


def test_tensor_sidecar(tmp_path):
    a = np.random.default_rng(2).normal(size=(2, 3, 4))
    p = tmp_path / "t.bin"
    write_tensor(p, a, {"note": "x"})
    side = json.loads(sidecar_path(p).read_text())
    assert side["shape"] == [2, 3, 4] and side["note"] == "x"
    np.testing.assert_array_equal(read_tensor(p), a)


def test_pnm_and_raw_video(tmp_path):
    r = np.random.default_rng(3)
    gray = r.integers(0, 256, size=(5, 7)).astype(np.uint8)
    write_pnm(tmp_path / "a.pgm", gray / 255.0)
    np.testing.assert_allclose(read_pnm(tmp_path / "a.pgm")[0], gray / 255.0)
    rgb = r.random((3, 4, 6))
    write_pnm(tmp_path / "b.ppm", rgb)
    assert read_pnm(tmp_path / "b.ppm").shape == (3, 4, 6)

    video = r.random((2, 1, 4, 4))
    write_raw_video(tmp_path / "v.vid", video)
    back = read_raw_video(tmp_path / "v.vid")
    assert back.shape == (2, 1, 4, 4)
    np.testing.assert_allclose(back, np.round(video * 255) / 255)
    np.testing.assert_array_equal(load_frames(tmp_path / "v.vid"), back)

    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    for t in range(3):
        write_pnm(frames_dir / f"{t:03d}.pgm", gray / 255.0)
    assert load_frames(frames_dir).shape == (3, 1, 5, 7)
