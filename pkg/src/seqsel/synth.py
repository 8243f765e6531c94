"""Synthetic first-order Ambisonics scenes with ground-truth event tracks."""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import fftconvolve

LABEL_HEADER = ("event", "slot", "onset_s", "offset_s", "azimuth_deg", "elevation_deg")
PEAK = 0.9
FADE_SECONDS = 0.005


class SceneError(ValueError):
    """The requested scene cannot be generated (over-dense spec)."""


@dataclass
class SceneSpec:
    duration: float = 30.0
    max_overlap: int = 1
    reverb: Optional[float] = None  # decay time in seconds, None for anechoic
    seed: int = 0
    event_count: Tuple[int, int] = (4, 12)
    event_seconds: Tuple[float, float] = (0.5, 3.0)
    sample_rate: int = 44100
    el_max: float = 60.0
    max_sources: int = 4
    max_freq_hz: Optional[float] = None
    retries: int = 200

    def __post_init__(self):
        if self.max_overlap not in (1, 2, 3):
            raise ValueError("max_overlap must be 1, 2 or 3")
        if self.max_overlap > self.max_sources:
            raise ValueError("max_overlap cannot exceed the number of source slots")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.reverb is not None and self.reverb <= 0:
            raise ValueError("reverb decay time must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass
class SoundEvent:
    onset: float
    offset: float
    azimuth: float  # degrees, [-180, 180)
    elevation: float  # degrees
    source_signal: np.ndarray = field(repr=False)
    slot: int = 0

    def __post_init__(self):
        if self.offset <= self.onset:
            raise ValueError("event offset must follow onset")


@dataclass(frozen=True)
class LabelRow:
    event: int
    slot: int
    onset_s: float
    offset_s: float
    azimuth_deg: float
    elevation_deg: float


def scene_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, file-index, ...)``."""
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def max_concurrency(intervals: Sequence[Tuple[float, float]]) -> int:
    """Largest number of half-open ``[onset, offset)`` intervals active at once."""
    # sweep: at equal times an offset (-1) sorts before an onset (+1)
    points = sorted([(a, 1) for a, _ in intervals] + [(b, -1) for _, b in intervals])
    best = cur = 0
    for _, step in points:
        cur += step
        best = max(best, cur)
    return best


def _fade(sig: np.ndarray, rate: int) -> np.ndarray:
    n = min(int(FADE_SECONDS * rate), len(sig) // 2)
    if n > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / n)
        sig[:n] *= ramp
        sig[-n:] *= ramp[::-1]
    return sig


def prototype_signal(n: int, rate: int, rng: np.random.Generator, max_freq: Optional[float] = None) -> np.ndarray:
    """Draw one source waveform from the parametric bank, peak-scaled to [0.25, 1]."""
    fmax = max_freq if max_freq is not None else 0.45 * rate
    fmin = min(50.0, 0.1 * fmax)
    t = np.arange(n) / rate
    kind = rng.integers(3)
    if kind == 0:  # band-limited noise burst
        lo = rng.uniform(fmin, 0.6 * fmax)
        hi = rng.uniform(lo + 0.2 * (fmax - lo), fmax)
        spec = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, 1.0 / rate)
        spec[(freqs < lo) | (freqs > hi)] = 0.0
        sig = np.fft.irfft(spec, n)
    elif kind == 1:  # harmonic tone complex
        f0 = rng.uniform(fmin, 0.25 * fmax)
        sig = np.zeros(n)
        h = 1
        while h * f0 < fmax and h <= 12:
            sig += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h
            h += 1
    else:  # linear chirp
        f1, f2 = rng.uniform(fmin, fmax, size=2)
        dur = max(n / rate, 1.0 / rate)
        sig = np.sin(2 * np.pi * (f1 * t + 0.5 * (f2 - f1) / dur * t * t))
    sig = _fade(sig, rate)
    peak = np.max(np.abs(sig))
    if peak > 0:
        sig = sig / peak
    return sig * rng.uniform(0.25, 1.0)


def _assign_slots(events: List[SoundEvent], n_slots: int) -> None:
    for i, ev in enumerate(events):
        busy = {
            other.slot
            for other in events[:i]
            if other.onset < ev.offset and ev.onset < other.offset
        }
        free = [s for s in range(n_slots) if s not in busy]
        if not free:
            raise SceneError("ran out of source slots")
        ev.slot = free[0]


def sample_events(spec: SceneSpec, rng: np.random.Generator) -> List[SoundEvent]:
    """Random events honouring the overlap constraint, slots assigned lowest-free by onset."""
    lo, hi = spec.event_count
    n = int(rng.integers(lo, hi + 1))
    spans: List[Tuple[float, float]] = []
    for _ in range(n):
        for _attempt in range(spec.retries):
            length = min(rng.uniform(*spec.event_seconds), spec.duration)
            onset = round(rng.uniform(0.0, spec.duration - length), 6)
            offset = round(min(onset + length, spec.duration), 6)
            if offset <= onset:
                continue
            if max_concurrency(spans + [(onset, offset)]) <= spec.max_overlap:
                spans.append((onset, offset))
                break
        else:
            raise SceneError(
                f"could not place {n} events with max overlap {spec.max_overlap} "
                f"in {spec.duration} s after {spec.retries} retries"
            )
    spans.sort()
    events = []
    for onset, offset in spans:
        az = round(rng.uniform(-180.0, 180.0), 6)
        if az >= 180.0:
            az -= 360.0
        el = round(rng.uniform(-spec.el_max, spec.el_max), 6)
        n_sig = int(round(offset * spec.sample_rate)) - int(round(onset * spec.sample_rate))
        sig = prototype_signal(max(n_sig, 1), spec.sample_rate, rng, spec.max_freq_hz)
        events.append(SoundEvent(onset, offset, az, el, sig))
    _assign_slots(events, spec.max_sources)
    return events


def foa_gains(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """(W, Y, Z, X) encoding gains for a plane wave from the given direction."""
    az, el = np.deg2rad(azimuth_deg), np.deg2rad(elevation_deg)
    return np.array([1.0, np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])


def foa_encode(event: SoundEvent, duration: float, sample_rate: int) -> np.ndarray:
    """Place the event's signal at [onset, offset) and encode it to 4 x T."""
    total = int(round(duration * sample_rate))
    out = np.zeros((4, total))
    start = int(round(event.onset * sample_rate))
    sig = event.source_signal[: max(total - start, 0)]
    out[:, start:start + len(sig)] = foa_gains(event.azimuth, event.elevation)[:, None] * sig
    return out


def reverb_responses(spec: SceneSpec) -> np.ndarray:
    """Per-channel impulse responses: direct path plus an exponentially decaying noise tail."""
    rng = scene_rng(spec.seed, 0x5EB)
    n = max(int(round(spec.reverb * spec.sample_rate)), 2)
    t = np.arange(n) / spec.sample_rate
    # 60 dB amplitude decay over the decay time
    envelope = np.exp(-3.0 * np.log(10.0) * t / spec.reverb)
    irs = 0.3 * rng.standard_normal((4, n)) * envelope
    irs[:, 0] = 1.0
    return irs


def mix(spec: SceneSpec, events: Sequence[SoundEvent]) -> np.ndarray:
    """Linear (pre-normalization) rendering of ``events``."""
    out = np.zeros((4, spec.n_samples))
    for ev in events:
        out += foa_encode(ev, spec.duration, spec.sample_rate)
    if spec.reverb is not None and events:
        irs = reverb_responses(spec)
        out = np.stack([fftconvolve(out[c], irs[c])[: spec.n_samples] for c in range(4)])
    return out


def label_table(events: Sequence[SoundEvent]) -> List[LabelRow]:
    return [
        LabelRow(i, ev.slot, ev.onset, ev.offset, ev.azimuth, ev.elevation)
        for i, ev in enumerate(events)
    ]


def render_scene(spec: SceneSpec, events: Sequence[SoundEvent]) -> Tuple[np.ndarray, List[LabelRow]]:
    """Mix, peak-normalize to 0.9, and tabulate labels."""
    wave = mix(spec, events)
    peak = np.max(np.abs(wave)) if wave.size else 0.0
    if peak > 0:
        wave = wave * (PEAK / peak)
    return wave, label_table(events)


def generate_scene(spec: SceneSpec, file_index: int = 0) -> Tuple[np.ndarray, List[LabelRow]]:
    rng = scene_rng(spec.seed, file_index)
    return render_scene(spec, sample_events(spec, rng))


def write_labels(path: Union[str, Path], rows: Sequence[LabelRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LABEL_HEADER)
        for r in rows:
            w.writerow(
                [r.event, r.slot, f"{r.onset_s:.6f}", f"{r.offset_s:.6f}", f"{r.azimuth_deg:.6f}", f"{r.elevation_deg:.6f}"]
            )
