"""Synthetic audio-visual dataset with a transcript recoverable by rule.

Each transcript character owns an 8-frame video span: a 32x32 block lights up
at the 4x4 grid position given by the character's index bucket (index mod 16),
at one of two brightness levels giving the bucket remainder, so the encoding
is injective and the tubelet geometry carries the whole signal.  The audio
track plays one sine tone per character at a character-specific frequency.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, Waveform, read_wav, write_wav
from .transducer import encode_text
from .video import TARGET_FPS, VideoClip, read_avt, write_avt

FRAMES_PER_CHAR = 8
SAMPLES_PER_CHAR = 3840  # 8 frames at 100/3 Hz
AUDIO_TAIL_PAD = 240  # keeps stacked audio rows == video frames
GRID = 4
BLOCK = 32
BRIGHT_LEVELS = (255, 140)  # u8 values for bucket remainder 0 / 1
TONE_BASE_HZ = 300.0
TONE_STEP_HZ = 110.0
SYNTH_ALPHABET = "abcdefghijklmnopqrstuvwxyz "


@dataclass
class SyntheticAvExample:
    video: VideoClip
    audio: Waveform
    transcript: str

    @property
    def labels(self):
        return encode_text(self.transcript)


def _char_code(ch):
    """(grid position, brightness level) for a character; injective."""
    idx = encode_text(ch)[0] - 1
    return idx % (GRID * GRID), idx // (GRID * GRID)


def _random_transcript(rng, length):
    chars = list(SYNTH_ALPHABET)
    while True:
        text = "".join(rng.choice(chars) for _ in range(length))
        if text.strip() != text or "  " in text or not text.strip():
            continue
        return text


def render_video(transcript, channels=1):
    """One 8-frame span per character; block position/brightness encode it."""
    t_len = FRAMES_PER_CHAR * len(transcript)
    frames = np.zeros((t_len, GRID * BLOCK, GRID * BLOCK, channels))
    for i, ch in enumerate(transcript):
        bucket, level = _char_code(ch)
        row, col = divmod(bucket, GRID)
        value = BRIGHT_LEVELS[level] / 255.0
        span = slice(i * FRAMES_PER_CHAR, (i + 1) * FRAMES_PER_CHAR)
        frames[span, row * BLOCK : (row + 1) * BLOCK, col * BLOCK : (col + 1) * BLOCK, :] = value
    return VideoClip(frames, fps=TARGET_FPS)


def render_audio(transcript):
    """One sine tone per character, plus the tail pad that aligns stacked
    feature rows with the video frame count."""
    idx = np.array([encode_text(ch)[0] - 1 for ch in transcript])
    t = np.arange(SAMPLES_PER_CHAR) / SAMPLE_RATE
    tones = [0.25 * np.sin(2.0 * np.pi * (TONE_BASE_HZ + TONE_STEP_HZ * i) * t) for i in idx]
    return Waveform(np.concatenate(tones + [np.zeros(AUDIO_TAIL_PAD)]))


def gen_synthetic(seed, n_examples, transcript_len_range=(3, 6), channels=1):
    """Deterministic dataset: same seed, same bytes."""
    if n_examples < 1:
        raise ValueError("need at least one example")
    lo, hi = transcript_len_range
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(n_examples):
        length = int(rng.integers(lo, hi + 1))
        text = _random_transcript(rng, length)
        examples.append(SyntheticAvExample(render_video(text, channels), render_audio(text), text))
    return examples


def rule_based_decode(clip: VideoClip) -> str:
    """Invert the renderer: read block position and brightness per span."""
    t_len = clip.num_frames
    chars = []
    threshold = 0.5 * (BRIGHT_LEVELS[0] + BRIGHT_LEVELS[1]) / 255.0
    for start in range(0, t_len - FRAMES_PER_CHAR + 1, FRAMES_PER_CHAR):
        mean_frame = clip.frames[start : start + FRAMES_PER_CHAR, :, :, 0].mean(axis=0)
        blocks = mean_frame.reshape(GRID, BLOCK, GRID, BLOCK).mean(axis=(1, 3))
        bucket = int(np.argmax(blocks))
        level = 0 if blocks.reshape(-1)[bucket] > threshold else 1
        idx = level * GRID * GRID + bucket
        chars.append(SYNTH_ALPHABET[idx] if idx < len(SYNTH_ALPHABET) else "'")
    return "".join(chars)


def save_dataset(directory, examples, seed=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, ex in enumerate(examples):
        write_avt(directory / f"{i:04d}.avt", ex.video.frames, dtype=0)
        write_wav(directory / f"{i:04d}.wav", ex.audio)
        (directory / f"{i:04d}.txt").write_text(ex.transcript + "\n")
    manifest = {"n": len(examples), "seed": seed, "channels": examples[0].video.channels}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_dataset(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    examples = []
    for i in range(manifest["n"]):
        frames = read_avt(directory / f"{i:04d}.avt")
        audio = read_wav(directory / f"{i:04d}.wav")
        text = (directory / f"{i:04d}.txt").read_text().rstrip("\n")
        examples.append(SyntheticAvExample(VideoClip(frames, fps=TARGET_FPS), audio, text))
    return examples
