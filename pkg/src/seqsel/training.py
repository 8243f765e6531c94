"""Optimization: AdamW, warmup schedule, early-stopped training and fold runs."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import checkpoint
from .autodiff import Tensor, backward, no_grad, reset_tape
from .dataset import ChunkDataset, fold_stems, list_stems, load_scenes, make_batches
from .features import FeatureConfig
from .init import kaiming_init
from .loss import sel_loss
from .metrics import EvalReport, MannWhitneyResult, evaluate, mann_whitney_u
from .model import ModelConfig, SelModel

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    def __init__(self, provenance, epoch: int, step: int):
        self.provenance = provenance
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}; batch chunks: {provenance}")


@dataclass
class TrainConfig:
    batch_size: int = 16
    base_lr: float = 2e-4
    scheduler: str = "noam"  # "none" | "noam"
    model_dim: int = 128
    warmup_steps: int = 1000
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    lam: float = 1.0
    weight_decay: float = 0.01
    teacher_forcing: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.scheduler not in ("none", "noam"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if self.batch_size < 1 or self.base_lr <= 0 or self.model_dim < 1 or self.warmup_steps < 1:
            raise ValueError("batch size, learning rate, model dim and warmup must be positive")
        if self.weight_decay < 0 or self.lam < 0:
            raise ValueError("weight decay and lambda must be non-negative")

    def lr_at(self, step: int) -> float:
        if self.scheduler == "none":
            return self.base_lr
        return noam_lr(step, self.model_dim, self.warmup_steps, self.base_lr)


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------


def noam_factor(step: int, model_dim: int, warmup: int) -> float:
    """Raw warmup / inverse-square-root factor."""
    if step < 1:
        raise ValueError("step counts from 1")
    return model_dim ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def noam_lr(step: int, model_dim: int, warmup: int, base_lr: float) -> float:
    """Learning rate whose peak (at ``step == warmup``) equals ``base_lr``."""
    return base_lr * noam_factor(step, model_dim, warmup) / noam_factor(warmup, model_dim, warmup)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """One in-place AdamW update with decoupled weight decay."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {i}: {p.shape} vs grad {g.shape}")
        m = state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        v = state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class AdamW:
    def __init__(self, params: Sequence[Tensor], config: TrainConfig):
        self.params = list(params)
        self.config = config
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def step(self, lr: float) -> None:
        c = self.config
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        adamw_step([p.data for p in self.params], grads, self.state, lr, c.beta1, c.beta2, c.adam_eps, c.weight_decay)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class Validation:
    total: float
    activity: float
    doa: float
    report: EvalReport


def predict(model: SelModel, dataset: ChunkDataset, batch_size: int = 16):
    """Eval-mode outputs ``(activity, azimuth, elevation, attention)`` as arrays."""
    acts, azs, els, atts = [], [], [], []
    with no_grad():
        for batch in make_batches(dataset, batch_size, shuffle=False):
            out = model(batch.features, train=False)
            acts.append(out.activity.data)
            azs.append(out.azimuth.data)
            els.append(out.elevation.data)
            if out.attention is not None:
                atts.append(out.attention.data)
    att = np.concatenate(atts) if atts else None
    return np.concatenate(acts), np.concatenate(azs), np.concatenate(els), att


def validate(model: SelModel, dataset: ChunkDataset, batch_size: int, lam: float = 1.0, per_frame: bool = False) -> Validation:
    """Eval-mode loss (chunk-weighted mean over batches) and metrics."""
    n = len(dataset)
    tot = act = doa = 0.0
    acts, azs, els = [], [], []
    with no_grad():
        for batch in make_batches(dataset, batch_size, shuffle=False):
            out = model(batch.features, train=False)
            br = sel_loss(out, batch.targets, lam)
            w = len(batch.provenance)
            tot += br.value * w
            act += br.activity * w
            doa += br.doa * w
            acts.append(out.activity.data)
            azs.append(out.azimuth.data)
            els.append(out.elevation.data)
    report = evaluate(
        np.concatenate(acts), np.concatenate(azs), np.concatenate(els), dataset.targets,
        dataset.provenance if per_frame else None,
    )
    return Validation(tot / n, act / n, doa / n, report)


@dataclass
class TrainLog:
    epochs: List[dict] = field(default_factory=list)

    def append(self, record: dict) -> None:
        expected = len(self.epochs) + 1
        if record["epoch"] != expected:
            raise ValueError(f"epoch {record['epoch']} logged out of order (expected {expected})")
        self.epochs.append(record)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.epochs)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        log = cls()
        for line in text.splitlines():
            if line.strip():
                log.append(json.loads(line))
        return log

    def best(self) -> dict:
        return min(self.epochs, key=lambda r: r["val"]["total"])


def model_card(model: SelModel, features: Optional[FeatureConfig] = None, **meta) -> dict:
    card = {"model": model.config.to_dict(), "parameter_count": model.parameter_count()}
    if features is not None:
        card["features"] = asdict(features)
    card.update(meta)
    return card


def save_model(path: Union[str, Path], model: SelModel, state: Optional[Dict[str, np.ndarray]] = None, card: Optional[dict] = None) -> None:
    """Write ``<path>`` (binary arrays) and ``<path>.json`` (model card)."""
    path = Path(path)
    checkpoint.save(path, state if state is not None else model.state_dict())
    Path(str(path) + ".json").write_text(json.dumps(card if card is not None else model_card(model), indent=2))


def load_model(path: Union[str, Path]) -> Tuple[SelModel, dict]:
    path = Path(path)
    card = json.loads(Path(str(path) + ".json").read_text())
    model = SelModel(ModelConfig.from_dict(card["model"]))
    model.load_state_dict(checkpoint.load(path))
    return model, card


def _resume_arrays(model: SelModel, opt: AdamW, best_state, meta: dict) -> Dict[str, np.ndarray]:
    arrays = dict(model.state_dict())
    names = list(model.params)
    for name, m, v in zip(names, opt.state.m, opt.state.v):
        arrays[f"opt.m.{name}"] = m
        arrays[f"opt.v.{name}"] = v
    if best_state is not None:
        for name, a in best_state.items():
            arrays[f"best.{name}"] = a
    for key, value in meta.items():
        arrays[f"meta.{key}"] = np.array([value], dtype=np.float64)
    arrays["meta.opt_t"] = np.array([opt.state.t], dtype=np.float64)
    return arrays


def train(
    model: SelModel,
    train_set: ChunkDataset,
    val_set: ChunkDataset,
    config: TrainConfig,
    run_dir: Optional[Union[str, Path]] = None,
    features: Optional[FeatureConfig] = None,
    resume: bool = False,
    on_epoch: Optional[Callable[[dict], None]] = None,
    card_extra: Optional[dict] = None,
) -> Tuple[Dict[str, np.ndarray], TrainLog]:
    """Early-stopped training; returns the best (lowest validation loss) state and the log.

    With ``run_dir`` set, writes ``train_log.jsonl``, ``best.adrn`` (+ card)
    and a ``last.adrn`` resume point after every epoch. ``card_extra`` is
    merged into the model card.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    run_dir = Path(run_dir) if run_dir is not None else None
    opt = AdamW(model.parameters(), config)
    log = TrainLog()
    best_total, best_state, stale, step, start_epoch = math.inf, None, 0, 0, 1

    if resume and run_dir is not None and (run_dir / "last.adrn").exists():
        arrays = checkpoint.load(run_dir / "last.adrn")
        model.load_state_dict({k: v for k, v in arrays.items() if k in model.state_dict()})
        for i, name in enumerate(model.params):
            opt.state.m[i] = arrays[f"opt.m.{name}"]
            opt.state.v[i] = arrays[f"opt.v.{name}"]
        opt.state.t = int(arrays["meta.opt_t"][0])
        step = int(arrays["meta.step"][0])
        stale = int(arrays["meta.stale"][0])
        best_total = float(arrays["meta.best_total"][0])
        best_state = {k[5:]: v for k, v in arrays.items() if k.startswith("best.")} or None
        log = TrainLog.from_jsonl((run_dir / "train_log.jsonl").read_text())
        start_epoch = len(log.epochs) + 1
        if stale > config.patience:
            return best_state, log

    card_meta = {"train": asdict(config), **(card_extra or {})}
    for epoch in range(start_epoch, config.max_epochs + 1):
        t0 = time.perf_counter()
        lrs = []
        tot = act = doa = 0.0
        for batch in make_batches(train_set, config.batch_size, config.seed, epoch):
            step += 1
            lr = config.lr_at(step)
            lrs.append(lr)
            reset_tape()
            model.zero_grad()
            teacher = batch.targets.stacked() if config.teacher_forcing else None
            out = model(batch.features, train=True, teacher=teacher)
            br = sel_loss(out, batch.targets, config.lam)
            if not math.isfinite(br.value):
                raise NonFiniteLossError(batch.provenance, epoch, step)
            backward(br.total)
            opt.step(lr)
            w = len(batch.provenance)
            tot += br.value * w
            act += br.activity * w
            doa += br.doa * w
        n = len(train_set)
        val = validate(model, val_set, config.batch_size, config.lam)
        improved = val.total < best_total
        if improved:
            best_total = val.total
            best_state = model.state_dict()
            stale = 0
        else:
            stale += 1
        record = {
            "epoch": epoch,
            "train": {"total": tot / n, "activity": act / n, "doa": doa / n},
            "val": {"total": val.total, "activity": val.activity, "doa": val.doa},
            "val_frame_recall": val.report.frame_recall,
            "val_doa_median_deg": math.degrees(val.report.doa_median) if val.report.doa_errors else None,
            "lr": lrs,
            "best": improved,
            "wall_clock_s": time.perf_counter() - t0,
        }
        log.append(record)
        logger.info(
            "epoch %d train %.4f val %.4f recall %.1f%%",
            epoch, record["train"]["total"], val.total, val.report.frame_recall,
        )
        if on_epoch is not None:
            on_epoch(record)
        if run_dir is not None:
            (run_dir / "train_log.jsonl").write_text(log.to_jsonl())
            card = model_card(model, features, best_epoch=log.best()["epoch"], best_val_total=best_total, **card_meta)
            if improved:
                save_model(run_dir / "best.adrn", model, best_state, card)
            meta = {"step": step, "stale": stale, "best_total": best_total}
            checkpoint.save(run_dir / "last.adrn", _resume_arrays(model, opt, best_state, meta))
        if stale > config.patience:
            break
    return best_state, log


# ---------------------------------------------------------------------------
# cross-validation folds
# ---------------------------------------------------------------------------


@dataclass
class FoldResults:
    reports: Dict[str, List[EvalReport]]
    pooled_errors: Dict[str, List[float]]
    comparisons: Dict[str, MannWhitneyResult]


def compare_errors(a: Sequence[float], b: Sequence[float]) -> MannWhitneyResult:
    return mann_whitney_u(a, b)


def run_folds(
    root: Union[str, Path],
    n_folds: int,
    model_config: ModelConfig,
    train_config: TrainConfig,
    features: FeatureConfig,
    variants: Sequence[str] = ("adrenaline", "cnn-baseline", "seldnet-m"),
    remap=None,
) -> FoldResults:
    """Train and evaluate each variant on every fold; compare pooled DoA errors.

    The first variant is the reference compared against each of the others.
    """
    stems = list_stems(root)
    if n_folds < 2:
        raise ValueError("need at least two folds")
    reports: Dict[str, List[EvalReport]] = {v: [] for v in variants}
    for fold in range(n_folds):
        train_stems, val_stems = fold_stems(stems, n_folds, fold)
        train_set = load_scenes(root, train_stems, features, model_config.max_sources, remap)
        val_set = load_scenes(root, val_stems, features, model_config.max_sources, remap)
        if len(val_set) < 1 or len(train_set) < train_config.batch_size:
            raise ValueError(f"fold {fold} is smaller than one batch")
        for variant in variants:
            cfg = ModelConfig.from_dict({**model_config.to_dict(), "variant": variant})
            model = SelModel(cfg, seed=train_config.seed)
            best, _ = train(model, train_set, val_set, train_config)
            model.load_state_dict(best)
            reports[variant].append(validate(model, val_set, train_config.batch_size, train_config.lam).report)
    pooled = {v: [e for r in reports[v] for e in r.doa_errors] for v in variants}
    ref = variants[0]
    comparisons = {}
    for other in variants[1:]:
        if pooled[ref] and pooled[other]:
            comparisons[f"{ref}_vs_{other}"] = compare_errors(pooled[ref], pooled[other])
    return FoldResults(reports, pooled, comparisons)
