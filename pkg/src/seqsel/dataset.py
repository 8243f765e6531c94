"""Scene loading, frame-level targets and minibatching."""

import csv
from dataclasses import dataclass
from math import gcd
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .features import FeatureConfig, extract
from .synth import LABEL_HEADER, LabelRow
from .wavio import read_wav


class DatasetError(ValueError):
    """Malformed dataset directory or label file."""


@dataclass
class FrameTarget:
    """Ground truth per frame; arrays share a leading shape and end in S.

    Angles are radians; inactive slots carry 0.
    """

    activity: np.ndarray
    azimuth: np.ndarray
    elevation: np.ndarray

    def __len__(self) -> int:
        return len(self.activity)

    def __getitem__(self, idx) -> "FrameTarget":
        return FrameTarget(self.activity[idx], self.azimuth[idx], self.elevation[idx])

    @property
    def n_slots(self) -> int:
        return self.activity.shape[-1]

    def stacked(self) -> np.ndarray:
        """(gamma, phi, theta) concatenated along the last axis."""
        return np.concatenate([self.activity, self.azimuth, self.elevation], axis=-1)

    @staticmethod
    def stack(items: Sequence["FrameTarget"]) -> "FrameTarget":
        return FrameTarget(
            np.stack([t.activity for t in items]),
            np.stack([t.azimuth for t in items]),
            np.stack([t.elevation for t in items]),
        )

    @staticmethod
    def empty(shape: Tuple[int, ...], n_slots: int) -> "FrameTarget":
        z = np.zeros(tuple(shape) + (n_slots,))
        return FrameTarget(z.copy(), z.copy(), z.copy())


@dataclass
class ChunkDataset:
    features: np.ndarray  # N x K x L x 2C
    targets: FrameTarget  # N x K x S
    provenance: List[Tuple[str, int]]

    def __len__(self) -> int:
        return len(self.features)

    def subset(self, idx: Sequence[int]) -> "ChunkDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return ChunkDataset(self.features[idx], self.targets[idx], [self.provenance[i] for i in idx])

    @staticmethod
    def concat(parts: Sequence["ChunkDataset"]) -> "ChunkDataset":
        return ChunkDataset(
            np.concatenate([p.features for p in parts]),
            FrameTarget(
                np.concatenate([p.targets.activity for p in parts]),
                np.concatenate([p.targets.azimuth for p in parts]),
                np.concatenate([p.targets.elevation for p in parts]),
            ),
            [x for p in parts for x in p.provenance],
        )


@dataclass
class Batch:
    features: np.ndarray  # B x K x L x 2C
    targets: FrameTarget  # B x K x S
    provenance: List[Tuple[str, int]]


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------


def parse_remap(text: str) -> Dict[str, str]:
    """Parse ``ours=theirs`` lines (``#`` comments allowed) into a column mapping."""
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DatasetError(f"remap line {lineno}: expected ours=theirs, got {raw!r}")
        ours, theirs = (s.strip() for s in line.split("=", 1))
        if ours not in LABEL_HEADER:
            raise DatasetError(f"remap line {lineno}: unknown column {ours!r}")
        mapping[ours] = theirs
    return mapping


def read_labels(path: Union[str, Path], remap: Optional[Dict[str, str]] = None) -> List[LabelRow]:
    """Read a label CSV. ``event`` and ``slot`` may be absent in foreign corpora.

    Missing slots are assigned lowest-free in onset order.
    """
    remap = remap or {}
    col = {k: remap.get(k, k) for k in LABEL_HEADER}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for required in ("onset_s", "offset_s", "azimuth_deg", "elevation_deg"):
            if col[required] not in fields:
                raise DatasetError(f"{path}: missing column {col[required]!r}")
        raw = list(reader)
    has_slot = col["slot"] in fields
    has_event = col["event"] in fields
    rows = []
    for i, r in enumerate(raw):
        try:
            rows.append(
                LabelRow(
                    int(r[col["event"]]) if has_event else i,
                    int(r[col["slot"]]) if has_slot else -1,
                    float(r[col["onset_s"]]),
                    float(r[col["offset_s"]]),
                    float(r[col["azimuth_deg"]]),
                    float(r[col["elevation_deg"]]),
                )
            )
        except ValueError as exc:
            raise DatasetError(f"{path}: row {i + 1}: {exc}") from None
    if not has_slot:
        rows = _assign_missing_slots(rows)
    return rows


def _assign_missing_slots(rows: List[LabelRow]) -> List[LabelRow]:
    order = sorted(range(len(rows)), key=lambda i: (rows[i].onset_s, rows[i].offset_s))
    placed: List[LabelRow] = []
    out = list(rows)
    for i in order:
        r = rows[i]
        busy = {p.slot for p in placed if p.onset_s < r.offset_s and r.onset_s < p.offset_s}
        slot = next(s for s in range(len(rows) + 1) if s not in busy)
        out[i] = LabelRow(r.event, slot, r.onset_s, r.offset_s, r.azimuth_deg, r.elevation_deg)
        placed.append(out[i])
    return out


def frame_targets(labels: Sequence[LabelRow], chunk_index: int, config: FeatureConfig, n_slots: int) -> FrameTarget:
    """Targets for the K frames of one chunk, sampled at frame centers."""
    centers = config.frame_centers(chunk_index)
    tgt = FrameTarget.empty((len(centers),), n_slots)
    for row in labels:
        if not 0 <= row.slot < n_slots:
            raise DatasetError(f"label slot {row.slot} outside [0, {n_slots})")
        active = (row.onset_s <= centers) & (centers < row.offset_s)
        if not active.any():
            continue
        clash = active & (tgt.activity[:, row.slot] == 1.0)
        if clash.any():
            k = int(np.argmax(clash))
            raise DatasetError(f"two events claim slot {row.slot} at t={centers[k]:.6f} s")
        tgt.activity[active, row.slot] = 1.0
        tgt.azimuth[active, row.slot] = np.deg2rad(row.azimuth_deg)
        tgt.elevation[active, row.slot] = np.deg2rad(row.elevation_deg)
    return tgt


# ---------------------------------------------------------------------------
# directory layout
# ---------------------------------------------------------------------------


def _byte_sorted(names) -> List[str]:
    return sorted(names, key=lambda s: s.encode("utf-8"))


def list_stems(root: Union[str, Path]) -> List[str]:
    """Stems with both ``audio/<stem>.wav`` and ``labels/<stem>.csv``, byte-sorted."""
    root = Path(root)
    audio = {p.stem: p for p in (root / "audio").glob("*.wav")}
    labels = {p.stem: p for p in (root / "labels").glob("*.csv")}
    for stem in _byte_sorted(set(audio) - set(labels)):
        raise DatasetError(f"orphan audio file without labels: {audio[stem]}")
    for stem in _byte_sorted(set(labels) - set(audio)):
        raise DatasetError(f"orphan label file without audio: {labels[stem]}")
    if not audio:
        raise DatasetError(f"no scenes found under {root}")
    return _byte_sorted(audio)


def parse_split(split: Union[str, Tuple[int, int]]) -> Tuple[int, int]:
    if isinstance(split, str):
        try:
            a, b = (int(x) for x in split.split("/"))
        except ValueError:
            raise DatasetError(f"split must look like '80/20', got {split!r}") from None
    else:
        a, b = split
    if a <= 0 or b <= 0:
        raise DatasetError("split parts must be positive")
    return a, b


def split_stems(stems: Sequence[str], split: Union[str, Tuple[int, int]] = "80/20") -> Tuple[List[str], List[str]]:
    """Partition sorted stems by index modulus: with 80/20, every fifth goes to validation."""
    a, b = parse_split(split)
    g = gcd(a, b)
    a, b = a // g, b // g
    period = a + b
    train = [s for i, s in enumerate(stems) if i % period < a]
    val = [s for i, s in enumerate(stems) if i % period >= a]
    return train, val


def fold_stems(stems: Sequence[str], n_folds: int, fold: int) -> Tuple[List[str], List[str]]:
    if n_folds < 2:
        raise DatasetError("need at least two folds")
    train = [s for i, s in enumerate(stems) if i % n_folds != fold]
    val = [s for i, s in enumerate(stems) if i % n_folds == fold]
    return train, val


def load_scene(
    root: Union[str, Path], stem: str, config: FeatureConfig, n_slots: int, remap: Optional[Dict[str, str]] = None
) -> ChunkDataset:
    root = Path(root)
    wave, rate = read_wav(root / "audio" / f"{stem}.wav")
    if rate != config.sample_rate:
        raise DatasetError(f"{stem}.wav: sample rate {rate} Hz, config expects {config.sample_rate} Hz")
    labels = read_labels(root / "labels" / f"{stem}.csv", remap)
    feats = extract(wave, config)
    targets = FrameTarget.stack([frame_targets(labels, i, config, n_slots) for i in range(len(feats))])
    return ChunkDataset(feats, targets, [(stem, i) for i in range(len(feats))])


def load_scenes(
    root: Union[str, Path],
    stems: Sequence[str],
    config: FeatureConfig,
    n_slots: int,
    remap: Optional[Dict[str, str]] = None,
) -> ChunkDataset:
    if not stems:
        raise DatasetError("no scenes selected")
    return ChunkDataset.concat([load_scene(root, s, config, n_slots, remap) for s in stems])


def load_split(
    root: Union[str, Path],
    split: Union[str, Tuple[int, int]],
    config: FeatureConfig,
    n_slots: int,
    remap: Optional[Dict[str, str]] = None,
) -> Tuple[ChunkDataset, ChunkDataset]:
    train, val = split_stems(list_stems(root), split)
    return load_scenes(root, train, config, n_slots, remap), load_scenes(root, val, config, n_slots, remap)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def make_batches(
    dataset: ChunkDataset, batch_size: int, seed: int = 0, epoch: int = 0, shuffle: bool = True
) -> Iterator[Batch]:
    """Deterministic per-epoch shuffle; the final short batch is kept."""
    n = len(dataset)
    if n == 0:
        raise DatasetError("cannot batch an empty dataset")
    if shuffle:
        order = np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(dataset.features[idx], dataset.targets[idx], [dataset.provenance[i] for i in idx])
