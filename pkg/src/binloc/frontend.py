"""Waveform-to-spectrogram frontend.

Converts 500 ms / 16 kHz binaural recordings into a pair of 129x61
magnitude spectrograms: Tukey-windowed frames of 256 samples, hop 128,
one-sided 256-point FFT. Optional log(1+m) compression and joint-ear
standardization prepare the pair for training.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .util import config_hash

__all__ = [
    "Waveform",
    "FrontendConfig",
    "FrontendError",
    "tukey_window",
    "stft_magnitude",
    "binaural_spectrogram",
    "save_spectrogram_cache",
    "load_spectrogram_cache",
    "CANONICAL",
]


class FrontendError(ValueError):
    """Bad waveform or frontend parameters."""


@dataclass(frozen=True)
class Waveform:
    """PCM audio: ``samples`` is (channels, n), amplitudes dimensionless."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[0] not in (1, 2):
            raise FrontendError(
                f"waveform must be 1 or 2 channels, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise FrontendError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", arr)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class FrontendConfig:
    """STFT geometry plus post-processing switches.

    The default 256/128/256 geometry maps an 8000-sample input to exactly
    129 frequency bins by 61 frames.
    """

    window_length: int = 256
    hop: int = 128
    nfft: int = 256
    tukey_shape: float = 0.25
    log_compress: bool = True
    standardize: bool = True

    @property
    def n_bins(self) -> int:
        return self.nfft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.window_length) // self.hop + 1

    def key_values(self) -> dict:
        return {
            "window_length": self.window_length,
            "hop": self.hop,
            "nfft": self.nfft,
            "tukey_shape": self.tukey_shape,
            "log_compress": self.log_compress,
            "standardize": self.standardize,
        }

    def hash(self) -> str:
        return config_hash(self.key_values())


CANONICAL = FrontendConfig()


def tukey_window(length: int, shape: float) -> np.ndarray:
    """Tapered-cosine window; shape 0 is rectangular, shape 1 is Hann."""
    if length < 2:
        raise FrontendError(f"window length must be >= 2, got {length}")
    if not 0.0 <= shape <= 1.0:
        raise FrontendError(f"tukey shape must be in [0, 1], got {shape}")
    if shape == 0.0:
        return np.ones(length)
    n = np.arange(length)
    edge = shape * (length - 1) / 2.0
    w = np.ones(length)
    lo = n < edge
    hi = n > (length - 1) - edge
    w[lo] = 0.5 * (1 + np.cos(np.pi * (n[lo] / edge - 1)))
    w[hi] = 0.5 * (1 + np.cos(np.pi * ((n[hi] - (length - 1)) / edge + 1)))
    return w


def stft_magnitude(channel: np.ndarray, cfg: FrontendConfig = CANONICAL) -> np.ndarray:
    """One-sided FFT magnitude grid, shape (n_bins, n_frames)."""
    x = np.asarray(channel, dtype=np.float64).reshape(-1)
    if x.size < cfg.window_length:
        raise FrontendError(
            f"waveform of {x.size} samples is shorter than one "
            f"{cfg.window_length}-sample window")
    n_frames = cfg.n_frames(x.size)
    window = tukey_window(cfg.window_length, cfg.tukey_shape)
    idx = np.arange(cfg.window_length)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * window
    spec = np.abs(np.fft.rfft(frames, n=cfg.nfft, axis=1))
    return spec.T.astype(np.float32)


def binaural_spectrogram(wave: Waveform, cfg: FrontendConfig = CANONICAL
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Per-ear magnitude spectrograms for a stereo waveform.

    Log compression is applied per element; standardization removes the
    joint mean/scale of the pair so interaural level differences survive.
    """
    if wave.channels != 2:
        raise FrontendError(f"need a 2-channel waveform, got {wave.channels}")
    left = stft_magnitude(wave.samples[0], cfg)
    right = stft_magnitude(wave.samples[1], cfg)
    if cfg.log_compress:
        left = np.log1p(left)
        right = np.log1p(right)
    if cfg.standardize:
        both = np.stack([left, right])
        mean = both.mean(dtype=np.float64)
        std = both.std(dtype=np.float64)
        if std < 1e-12:
            std = 1.0
        left = ((left - mean) / std).astype(np.float32)
        right = ((right - mean) / std).astype(np.float32)
    return left, right


# ---------------------------------------------------------------------------
# spectrogram cache file: manifest + row-major float32 payload

_CACHE_MAGIC = b"BLSPEC1\n"


def save_spectrogram_cache(path, entries: dict[str, tuple[np.ndarray, np.ndarray]],
                           cfg: FrontendConfig) -> None:
    """Write named (left, right) spectrogram pairs tagged with the config hash."""
    import json

    manifest = {"config_hash": cfg.hash(), "entries": {}}
    offset = 0
    blobs = []
    for name, (left, right) in entries.items():
        pair = np.stack([left, right]).astype("<f4")
        manifest["entries"][name] = {"shape": list(pair.shape), "offset": offset}
        blobs.append(pair)
        offset += pair.size
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob.tobytes())


def load_spectrogram_cache(path, cfg: FrontendConfig
                           ) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Read a cache written by ``save_spectrogram_cache``.

    Raises ``FrontendError`` when the stored config hash does not match.
    """
    import json

    with open(path, "rb") as fh:
        if fh.read(len(_CACHE_MAGIC)) != _CACHE_MAGIC:
            raise FrontendError(f"{path}: not a spectrogram cache")
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        payload = np.frombuffer(fh.read(), dtype="<f4")
    if manifest["config_hash"] != cfg.hash():
        raise FrontendError(
            f"{path}: cache was generated under config {manifest['config_hash']}, "
            f"current config is {cfg.hash()}")
    out = {}
    for name, entry in manifest["entries"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        pair = payload[entry["offset"]:entry["offset"] + count].reshape(shape)
        out[name] = (pair[0].copy(), pair[1].copy())
    return out
