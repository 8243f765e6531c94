"""Chunking and magnitude/phase STFT features for multichannel audio."""

from dataclasses import dataclass
from typing import List

import numpy as np


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 44100
    chunk_seconds: float = 0.5
    fft_size: int = 2048
    frame_ms: float = 40.0
    hop_ms: float = 20.0
    bins: int = 1024  # kept bins 1..bins (DC dropped)

    def __post_init__(self):
        if self.frame_ms <= 0 or self.hop_ms <= 0:
            raise ValueError("frame and hop lengths must be positive")
        if self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        if self.fft_size < self.frame_samples:
            raise ValueError(f"fft_size {self.fft_size} shorter than frame ({self.frame_samples} samples)")
        if not 1 <= self.bins <= self.fft_size // 2:
            raise ValueError(f"bins must lie in [1, {self.fft_size // 2}]")

    @property
    def chunk_samples(self) -> int:
        return int(round(self.chunk_seconds * self.sample_rate))

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    @property
    def frames_per_chunk(self) -> int:
        return int(round(self.chunk_seconds * 1000.0 / self.hop_ms))

    def frame_centers(self, chunk_index: int) -> np.ndarray:
        """Absolute label time (s) of every frame in a chunk.

        Frame k owns the hop-length slot starting at ``k * hop``; its label
        time is the middle of that slot, so the K slots tile the chunk.
        """
        k = np.arange(self.frames_per_chunk)
        samples = chunk_index * self.chunk_samples + (k + 0.5) * self.hop_samples
        return samples / self.sample_rate


@dataclass
class WaveChunk:
    samples: np.ndarray  # C x N
    sample_rate: int
    chunk_index: int


@dataclass
class FeatureChunk:
    values: np.ndarray  # K x L x 2C, magnitudes then phases
    frame_times: np.ndarray  # K


def hamming(n: int) -> np.ndarray:
    """Symmetric Hamming window of length ``n``."""
    if n < 2:
        raise ValueError("Hamming window needs at least 2 points")
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 FFT along the last axis (length must be a power of two)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    out = x[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        size *= 2
    return out


def dft(x: np.ndarray) -> np.ndarray:
    """Direct O(N^2) DFT along the last axis; reference for :func:`fft`."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    return x @ np.exp(-2j * np.pi * np.outer(k, k) / n)


def chunk(waveform: np.ndarray, sample_rate: int, chunk_seconds: float = 0.5) -> List[WaveChunk]:
    """Split ``C x T`` audio into non-overlapping chunks, zero-padding the last one."""
    waveform = np.atleast_2d(np.asarray(waveform, dtype=np.float64))
    c, t = waveform.shape
    if c == 0:
        raise ValueError("waveform has zero channels")
    if t < 1:
        raise ValueError("waveform is empty")
    n = int(round(chunk_seconds * sample_rate))
    count = -(-t // n)
    padded = np.zeros((c, count * n))
    padded[:, :t] = waveform
    return [WaveChunk(padded[:, i * n:(i + 1) * n], sample_rate, i) for i in range(count)]


def stft_features(wave: WaveChunk, config: FeatureConfig) -> FeatureChunk:
    """K x L x 2C magnitude/phase tensor for one chunk.

    One frame starts every hop; frames running past the chunk end read zeros.
    """
    if wave.sample_rate != config.sample_rate:
        raise ValueError(f"sample rate {wave.sample_rate} does not match config {config.sample_rate}")
    c, n = wave.samples.shape
    k, flen, hop = config.frames_per_chunk, config.frame_samples, config.hop_samples
    padded = np.zeros((c, (k - 1) * hop + flen))
    m = min(n, padded.shape[1])
    padded[:, :m] = wave.samples[:, :m]
    starts = np.arange(k) * hop
    frames = padded[:, starts[:, None] + np.arange(flen)]  # C x K x flen
    buf = np.zeros((c, k, config.fft_size))
    buf[..., :flen] = frames * hamming(flen)
    spec = fft(buf)[..., 1:config.bins + 1]  # C x K x L
    mag = np.abs(spec)
    phase = np.angle(spec)
    phase[phase <= -np.pi] = np.pi  # keep phases in (-pi, pi]
    phase[mag == 0.0] = 0.0
    values = np.concatenate([mag, phase], axis=0).transpose(1, 2, 0)
    return FeatureChunk(values=values, frame_times=config.frame_centers(wave.chunk_index))


def extract(waveform: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """Features for every chunk of a file: ``n_chunks x K x L x 2C``."""
    chunks = chunk(waveform, config.sample_rate, config.chunk_seconds)
    return np.stack([stft_features(w, config).values for w in chunks])
