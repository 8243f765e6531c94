"""Tests for chunking, the FFT and magnitude/phase features."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seqsel.features import (
    FeatureConfig,
    WaveChunk,
    chunk,
    dft,
    extract,
    fft,
    hamming,
    stft_features,
)

SMALL = FeatureConfig(sample_rate=4000, fft_size=256, bins=64)


class TestHamming:
    def test_closed_form_endpoint(self):
        assert hamming(9)[0] == pytest.approx(0.08, abs=1e-15)

    def test_center_of_odd_window(self):
        assert hamming(9)[4] == pytest.approx(1.0, abs=1e-15)

    def test_symmetry(self):
        w = hamming(1764)
        np.testing.assert_allclose(w, w[::-1], atol=1e-15)

    def test_too_short(self):
        with pytest.raises(ValueError):
            hamming(1)


class TestFFT:
    @pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 32, 64])
    def test_matches_direct_dft(self, n):
        rng = np.random.default_rng(n)
        x = rng.normal(size=(3, n)) + 1j * rng.normal(size=(3, n))
        np.testing.assert_allclose(fft(x), dft(x), atol=1e-10 * n)

    def test_dft_definition_by_loop(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=8)
        loop = [sum(x[t] * np.exp(-2j * np.pi * k * t / 8) for t in range(8)) for k in range(8)]
        np.testing.assert_allclose(dft(x), loop, atol=1e-12)

    def test_non_power_of_two(self):
        with pytest.raises(ValueError):
            fft(np.zeros(12))

    def test_parseval(self):
        rng = np.random.default_rng(1)
        frame = rng.normal(size=1764) * hamming(1764)
        buf = np.zeros(2048)
        buf[:1764] = frame
        spec = fft(buf)
        assert np.sum(frame ** 2) == pytest.approx(np.sum(np.abs(spec) ** 2) / 2048, rel=1e-9)


class TestChunk:
    def test_thirty_seconds_gives_sixty_chunks(self):
        assert len(chunk(np.zeros((1, 30 * 44100)), 44100)) == 60

    def test_partial_chunk_zero_padded(self):
        rate = 1000
        x = np.ones((2, 750))
        parts = chunk(x, rate)
        assert len(parts) == 2
        np.testing.assert_array_equal(parts[1].samples[:, 250:], 0.0)
        np.testing.assert_array_equal(parts[1].samples[:, :250], 1.0)

    @given(st.integers(1, 3), st.integers(1, 2500))
    def test_round_trip(self, c, t):
        x = np.arange(c * t, dtype=np.float64).reshape(c, t)
        parts = chunk(x, 1000)
        assert len(parts) == -(-t // 500)
        np.testing.assert_array_equal(np.concatenate([p.samples for p in parts], axis=1)[:, :t], x)
        assert [p.chunk_index for p in parts] == list(range(len(parts)))

    def test_zero_channels(self):
        with pytest.raises(ValueError):
            chunk(np.zeros((0, 10)), 1000)


class TestConfig:
    def test_full_size_dimensions(self):
        cfg = FeatureConfig()
        assert (cfg.frames_per_chunk, cfg.bins, cfg.frame_samples, cfg.hop_samples) == (25, 1024, 1764, 882)

    def test_rejects_non_positive_hop(self):
        with pytest.raises(ValueError):
            FeatureConfig(hop_ms=0)

    def test_rejects_short_fft(self):
        with pytest.raises(ValueError):
            FeatureConfig(fft_size=1024)

    def test_frame_centers(self):
        cfg = FeatureConfig()
        t = cfg.frame_centers(2)
        assert t[0] == pytest.approx((2 * 22050 + 441) / 44100)
        np.testing.assert_allclose(np.diff(t), 0.02)
        assert t[-1] < 1.5


class TestSTFTFeatures:
    def test_full_size_shape(self):
        rng = np.random.default_rng(2)
        feats = stft_features(WaveChunk(rng.normal(size=(4, 22050)), 44100, 0), FeatureConfig())
        assert feats.values.shape == (25, 1024, 8)
        assert feats.frame_times.shape == (25,)

    def test_zero_chunk(self):
        out = stft_features(WaveChunk(np.zeros((2, SMALL.chunk_samples)), SMALL.sample_rate, 0), SMALL).values
        np.testing.assert_array_equal(out, 0.0)

    def test_sinusoid_peak_at_bin(self):
        b = 10
        t = np.arange(SMALL.chunk_samples) / SMALL.sample_rate
        x = np.sin(2 * np.pi * b * SMALL.sample_rate / SMALL.fft_size * t)[None]
        mag = stft_features(WaveChunk(x, SMALL.sample_rate, 0), SMALL).values[0, :, 0]
        # column j holds bin j + 1
        assert np.argmax(mag) == b - 1
        # direct DFT of the first windowed frame
        frame = np.zeros(SMALL.fft_size)
        frame[: SMALL.frame_samples] = x[0, : SMALL.frame_samples] * hamming(SMALL.frame_samples)
        np.testing.assert_allclose(mag, np.abs(dft(frame))[1 : SMALL.bins + 1], atol=1e-9)

    def test_last_frame_reads_zeros_past_end(self):
        x = np.ones((1, SMALL.chunk_samples))
        vals = stft_features(WaveChunk(x, SMALL.sample_rate, 0), SMALL).values
        frame = np.zeros(SMALL.fft_size)
        k = SMALL.frames_per_chunk - 1
        n_in = SMALL.chunk_samples - k * SMALL.hop_samples
        frame[:n_in] = hamming(SMALL.frame_samples)[:n_in]
        np.testing.assert_allclose(vals[k, :, 0], np.abs(dft(frame))[1 : SMALL.bins + 1], atol=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float64, (3, 2000), elements=st.floats(-1, 1)))
    def test_ranges_and_finiteness(self, x):
        vals = stft_features(WaveChunk(x, SMALL.sample_rate, 0), SMALL).values
        mag, phase = vals[..., :3], vals[..., 3:]
        assert np.all(np.isfinite(vals))
        assert np.all(mag >= 0)
        assert np.all(phase > -np.pi) and np.all(phase <= np.pi)

    def test_channel_permutation(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(3, 2000))
        perm = [2, 0, 1]
        a = stft_features(WaveChunk(x, 4000, 0), SMALL).values
        b = stft_features(WaveChunk(x[perm], 4000, 0), SMALL).values
        np.testing.assert_array_equal(b[..., :3], a[..., perm])
        np.testing.assert_array_equal(b[..., 3:], a[..., [3 + p for p in perm]])

    def test_sample_rate_mismatch(self):
        with pytest.raises(ValueError):
            stft_features(WaveChunk(np.zeros((1, 2000)), 8000, 0), SMALL)

    def test_extract_stacks_chunks(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 5000))
        out = extract(x, SMALL)
        assert out.shape == (3, 25, 64, 4)
        np.testing.assert_array_equal(out, extract(x, SMALL))
