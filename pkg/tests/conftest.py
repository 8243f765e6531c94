"""Shared fixtures: reduced feature settings and small on-disk scene sets."""

from pathlib import Path

import pytest

from seqsel.features import FeatureConfig
from seqsel.synth import SceneSpec, generate_scene, write_labels
from seqsel.wavio import write_wav

SMALL_FEATURES = FeatureConfig(sample_rate=4000, fft_size=256, bins=64)


def write_scenes(root: Path, n: int, overlap: int = 1, seed: int = 0, duration: float = 2.0, max_sources: int = 4) -> Path:
    """Synthesize ``n`` scenes under ``root/audio`` and ``root/labels``."""
    spec = SceneSpec(
        duration=duration,
        max_overlap=overlap,
        seed=seed,
        event_count=(1, 3),
        event_seconds=(0.3, 1.0),
        sample_rate=SMALL_FEATURES.sample_rate,
        max_sources=max_sources,
        max_freq_hz=1000.0,
    )
    (root / "audio").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for i in range(n):
        wave, labels = generate_scene(spec, i)
        write_wav(root / "audio" / f"scene_{i:04d}.wav", wave, spec.sample_rate)
        write_labels(root / "labels" / f"scene_{i:04d}.csv", labels)
    return root


@pytest.fixture
def small_features():
    return SMALL_FEATURES


@pytest.fixture
def scene_dir(tmp_path):
    return write_scenes(tmp_path / "data", 5)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> str:
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
