import numpy as np
import pytest

from avasr.video import (
    AvtFormatError,
    TubeletConfig,
    VideoClip,
    extract_tubelets,
    read_avt,
    resample_nearest,
    tubelet_window,
    write_avt,
)


def clip_of(t, h=128, w=128, c=1, fps=100.0 / 3.0, fill=0.0):
    return VideoClip(np.full((t, h, w, c), fill), fps=fps)


def test_resample_30fps_one_second():
    frames = np.zeros((30, 8, 8, 1))
    frames[:, 0, 0, 0] = np.arange(30)
    out = resample_nearest(VideoClip(frames, fps=30.0))
    assert out.num_frames == 33
    assert out.frames[10, 0, 0, 0] == 9  # round(10*30/33.33)


def test_resample_identity_at_target_rate():
    rng = np.random.default_rng(0)
    clip = VideoClip(rng.uniform(size=(7, 8, 8, 1)), fps=100.0 / 3.0)
    out = resample_nearest(clip)
    np.testing.assert_array_equal(out.frames, clip.frames)


def test_resample_copies_source_frames_verbatim():
    rng = np.random.default_rng(1)
    frames = rng.uniform(size=(100, 4, 4, 1))
    out = resample_nearest(VideoClip(frames, fps=25.0))
    assert out.num_frames == 133
    source_rows = {f.tobytes() for f in frames}
    for f in out.frames:
        assert f.tobytes() in source_rows


def test_resample_empty_clip():
    with pytest.raises(ValueError, match="empty"):
        resample_nearest(VideoClip(np.zeros((0, 8, 8, 1)), fps=25.0))


def test_tubelet_flat_shape_defaults():
    batch = extract_tubelets(clip_of(12))
    assert batch.flat.shape == (12, 16, 8192)


def test_constant_clip_gives_identical_tubelets():
    batch = extract_tubelets(clip_of(10, fill=0.7))
    first = batch.flat[0, 0]
    assert np.all(batch.flat == first)


def test_single_white_pixel_bookkeeping():
    frames = np.zeros((12, 128, 128, 1))
    frames[5, 0, 40, 0] = 1.0
    batch = extract_tubelets(VideoClip(frames))
    nonzero_t, nonzero_n, _ = np.nonzero(batch.flat)
    assert set(nonzero_n) == {1}  # col 40 -> patch column 1, patch row 0
    expected_t = {t for t in range(12) if 5 in tubelet_window(t, 8, 12)}
    assert set(nonzero_t) == expected_t
    assert expected_t == set(range(2, 10))


def test_flatten_index_order():
    # value encodes (row, col, frame): channel-last flattening means the
    # flat index is ((h*Pw + w)*depth + d) for C == 1
    t_len, size = 8, 64
    cfg = TubeletConfig(patch_w=size, patch_h=size, depth=8)
    frames = np.zeros((t_len, size, size, 1))
    frames[3, 2, 5, 0] = 1.0
    batch = extract_tubelets(VideoClip(frames), cfg)
    # at output t=4 the window is [0, 8), so frame 3 sits at depth slot 3
    flat_idx = (2 * size + 5) * 8 + 3
    assert batch.flat[4, 0, flat_idx] == 1.0


def test_tubelets_preserve_value_multiset():
    rng = np.random.default_rng(2)
    frames = rng.uniform(size=(9, 64, 64, 1))
    clip = VideoClip(frames)
    batch = extract_tubelets(clip, TubeletConfig(patch_w=32, patch_h=32, depth=4))
    for t in range(9):
        window = tubelet_window(t, 4, 9)
        expected = np.sort(frames[window].reshape(-1))
        np.testing.assert_array_equal(np.sort(batch.flat[t].reshape(-1)), expected)


def test_indivisible_patch_size_raises():
    with pytest.raises(ValueError, match="not divisible"):
        extract_tubelets(clip_of(4, h=100, w=100))


def test_channel_validation():
    with pytest.raises(ValueError, match="channels"):
        VideoClip(np.zeros((2, 8, 8, 2)))


def test_avt_roundtrip_f64(tmp_path):
    rng = np.random.default_rng(3)
    arr = rng.uniform(size=(3, 4, 5, 1))
    path = tmp_path / "clip.avt"
    write_avt(path, arr)
    np.testing.assert_array_equal(read_avt(path), arr)


def test_avt_roundtrip_u8(tmp_path):
    arr = np.arange(2 * 4 * 4 * 1).reshape(2, 4, 4, 1) / 31.0
    path = tmp_path / "clip8.avt"
    write_avt(path, arr, dtype=0)
    back = read_avt(path)
    np.testing.assert_allclose(back, arr, atol=0.5 / 255)


def test_avt_bad_magic(tmp_path):
    path = tmp_path / "bad.avt"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(AvtFormatError, match="magic"):
        read_avt(path)


def test_avt_truncated_payload(tmp_path):
    import struct

    path = tmp_path / "short.avt"
    path.write_bytes(b"AVT1" + struct.pack("<5I", 2, 4, 4, 1, 0) + b"\x00" * 3)
    with pytest.raises(AvtFormatError, match="payload"):
        read_avt(path)
