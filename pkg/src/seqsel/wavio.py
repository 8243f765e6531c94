"""Multichannel RIFF WAV input/output."""

from pathlib import Path
from typing import Tuple, Union

import numpy as np
from scipy.io import wavfile


def read_wav(path: Union[str, Path]) -> Tuple[np.ndarray, int]:
    """Return ``(C x T float64 samples in [-1, 1], sample_rate)``.

    Accepts 16-bit PCM and 32-bit IEEE float files.
    """
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype} (need int16 or float32)")
    if samples.ndim == 1:
        samples = samples[:, None]
    return samples.T.copy(), int(rate)


def write_wav(path: Union[str, Path], samples: np.ndarray, sample_rate: int, pcm16: bool = False) -> None:
    """Write ``C x T`` samples as 32-bit float (default) or 16-bit PCM."""
    samples = np.atleast_2d(samples)
    if pcm16:
        data = np.clip(np.round(samples.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = samples.T.astype(np.float32)
    wavfile.write(str(path), int(sample_rate), data)
