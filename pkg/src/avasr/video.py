"""Video preprocessing: frame-rate synchronization and tubelet extraction.

Clips are (T, H, W, C) arrays of values in [0, 1].  The mouth-crop pipeline
delivers 128x128 frames which are resampled to the acoustic frame rate
(100/3 Hz) and cut into 3D patches ("tubelets") for the transformer
front-end.  Raw clips travel in the AVT1 container: magic bytes, five
little-endian u32 header fields (T, H, W, C, dtype) and a row-major payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

TARGET_FPS = 100.0 / 3.0
FRAME_SIZE = 128

AVT_MAGIC = b"AVT1"
AVT_DTYPE_U8 = 0
AVT_DTYPE_F64 = 1


class AvtFormatError(ValueError):
    """Raised for malformed AVT1 containers."""


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, H, W, C) float64 in [0, 1]
    fps: float = TARGET_FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4:
            raise ValueError(f"expected (T, H, W, C) frames, got shape {self.frames.shape}")
        if self.frames.shape[3] not in (1, 3):
            raise ValueError(f"expected 1 or 3 channels, got {self.frames.shape[3]}")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def channels(self):
        return self.frames.shape[3]


@dataclass
class TubeletConfig:
    patch_w: int = 32
    patch_h: int = 32
    depth: int = 8  # temporal extent in frames

    def n_patches(self, height, width):
        if height % self.patch_h or width % self.patch_w:
            raise ValueError(
                f"frame size {height}x{width} not divisible by patch {self.patch_h}x{self.patch_w}"
            )
        return (height // self.patch_h) * (width // self.patch_w)

    def flat_dim(self, channels):
        return self.patch_w * self.patch_h * self.depth * channels


@dataclass
class TubeletBatch:
    flat: np.ndarray  # (T, N, patch_w*patch_h*depth*C)
    config: TubeletConfig = field(default_factory=TubeletConfig)
    channels: int = 1

    def __post_init__(self):
        expected = self.config.flat_dim(self.channels)
        if self.flat.shape[-1] != expected:
            raise ValueError(
                f"flat dim {self.flat.shape[-1]} does not equal "
                f"patch_w*patch_h*depth*C = {expected}"
            )


def resample_nearest(clip: VideoClip, target_hz: float = TARGET_FPS) -> VideoClip:
    """Resample to ``target_hz`` by copying nearest source frames.

    Output frame t is source frame round(t * fps / target_hz) (half-up),
    clamped to the last source frame; no pixel values are interpolated.
    """
    t_src = clip.num_frames
    if t_src == 0:
        raise ValueError("cannot resample an empty clip")
    t_out = int(np.floor(t_src * target_hz / clip.fps))
    idx = np.floor(np.arange(t_out) * clip.fps / target_hz + 0.5).astype(np.int64)
    idx = np.minimum(idx, t_src - 1)
    return VideoClip(clip.frames[idx], fps=target_hz)


def tubelet_window(t, depth, num_frames):
    """Frame indices of the temporal window centered at output step ``t``.

    The window is [t - depth/2, t + depth/2) with edge-replication clamping.
    """
    lo = t - depth // 2
    return np.clip(np.arange(lo, lo + depth), 0, num_frames - 1)


def temporal_windows(num_frames, depth):
    """(T, depth) matrix of clamped window indices, one row per output step."""
    lo = np.arange(num_frames) - depth // 2
    return np.clip(lo[:, None] + np.arange(depth)[None, :], 0, num_frames - 1)


@dataclass
class PatchFrames:
    """Per-frame spatial patches plus the temporal window index map.

    Carries the same information as a TubeletBatch without replicating each
    frame ``depth`` times; the front-end folds the depth axis inside its
    (linear) embedding instead.
    """

    patches: np.ndarray  # (T, N, patch_h*patch_w, C)
    windows: np.ndarray  # (T, depth)
    config: TubeletConfig
    channels: int


def extract_patch_frames(clip: VideoClip, cfg: TubeletConfig | None = None) -> PatchFrames:
    """Compact equivalent of :func:`extract_tubelets` for the transformer
    front-end's fast path."""
    cfg = cfg or TubeletConfig()
    t_len, height, width, channels = clip.frames.shape
    if t_len == 0:
        raise ValueError("cannot extract patches from an empty clip")
    n = cfg.n_patches(height, width)
    hp, wp = height // cfg.patch_h, width // cfg.patch_w
    patches = np.ascontiguousarray(
        clip.frames.reshape(t_len, hp, cfg.patch_h, wp, cfg.patch_w, channels)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(t_len, n, cfg.patch_h * cfg.patch_w, channels)
    )
    return PatchFrames(patches, temporal_windows(t_len, cfg.depth), cfg, channels)


def extract_tubelets(clip: VideoClip, cfg: TubeletConfig | None = None) -> TubeletBatch:
    """Cut a clip into flattened tubelets, one row of N patches per frame.

    Each output timestep takes the ``depth``-frame window centered on it
    (edges replicate), splits every frame into N spatial patches in row-major
    patch order, and flattens each tubelet in (height, width, depth, channel)
    index order.  Pure re-indexing; no values are altered.
    """
    cfg = cfg or TubeletConfig()
    t_len, height, width, channels = clip.frames.shape
    if t_len == 0:
        raise ValueError("cannot extract tubelets from an empty clip")
    pf = extract_patch_frames(clip, cfg)
    n = cfg.n_patches(height, width)
    # interleave the depth axis between (h, w) and channel
    flat = np.empty((t_len, n, cfg.patch_h * cfg.patch_w, cfg.depth, channels))
    for d in range(cfg.depth):
        flat[:, :, :, d, :] = pf.patches[pf.windows[:, d]]
    return TubeletBatch(flat.reshape(t_len, n, cfg.flat_dim(channels)), cfg, channels)


def write_avt(path, array: np.ndarray, dtype: int = AVT_DTYPE_F64):
    """Write a (T, H, W, C) array as an AVT1 container."""
    array = np.asarray(array)
    if array.ndim != 4:
        raise AvtFormatError(f"AVT payload must be 4-d, got shape {array.shape}")
    header = AVT_MAGIC + struct.pack("<5I", *array.shape, dtype)
    if dtype == AVT_DTYPE_U8:
        payload = np.clip(np.round(array * 255.0), 0, 255).astype(np.uint8).tobytes()
    elif dtype == AVT_DTYPE_F64:
        payload = array.astype("<f8").tobytes()
    else:
        raise AvtFormatError(f"unknown AVT dtype code {dtype}")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_avt(path) -> np.ndarray:
    """Read an AVT1 container back into a float64 (T, H, W, C) array.

    u8 payloads are rescaled to [0, 1]; f64 payloads pass through.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != AVT_MAGIC:
        raise AvtFormatError(f"{path}: bad magic {blob[:4]!r}, expected {AVT_MAGIC!r}")
    if len(blob) < 24:
        raise AvtFormatError(f"{path}: truncated header")
    t, h, w, c, dtype = struct.unpack("<5I", blob[4:24])
    count = t * h * w * c
    if dtype == AVT_DTYPE_U8:
        expected = 24 + count
        if len(blob) != expected:
            raise AvtFormatError(f"{path}: payload is {len(blob) - 24} bytes, expected {count}")
        data = np.frombuffer(blob, dtype=np.uint8, offset=24).astype(np.float64) / 255.0
    elif dtype == AVT_DTYPE_F64:
        expected = 24 + 8 * count
        if len(blob) != expected:
            raise AvtFormatError(f"{path}: payload is {len(blob) - 24} bytes, expected {8 * count}")
        data = np.frombuffer(blob, dtype="<f8", offset=24).astype(np.float64)
    else:
        raise AvtFormatError(f"{path}: unknown dtype code {dtype}")
    return data.reshape(t, h, w, c)
