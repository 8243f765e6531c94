"""Command-line driver: synth, train, eval, infer, dump-attention, verify."""

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .autodiff import no_grad
from .checkpoint import CheckpointError
from .config import RUN_ROOT_ENV, SCHEMA, ConfigError, RunConfig
from .dataset import (
    ChunkDataset,
    DatasetError,
    list_stems,
    load_scenes,
    parse_remap,
    split_stems,
)
from .features import FeatureConfig, extract
from .metrics import mann_whitney_u
from .model import SelModel
from .synth import SceneError, SceneSpec, generate_scene, write_labels
from .training import load_model, train, validate
from .verify import run_all
from .wavio import read_wav, write_wav

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VERIFY = 4

logger = logging.getLogger("seqsel")


class UsageError(Exception):
    """Invalid combination of arguments; reported with the config exit code."""


def _shown(default: str) -> str:
    return default if default != "" else '""'


def _keys_table() -> str:
    width = max(len(k) for k in SCHEMA)
    lines = ["config keys (file: key = value, command line: --key value):"]
    for key, spec in SCHEMA.items():
        lines.append(f"  {key:<{width}}  default {_shown(spec.default):<10} {spec.help}")
    return "\n".join(lines)


def _pair(kind):
    def parse(text: str):
        lo, hi = (kind(v) for v in text.split(","))
        return lo, hi

    return parse


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    manifest = {"version": __version__, "subsets": {}}
    for overlap in args.overlap:
        spec = SceneSpec(
            duration=args.duration,
            max_overlap=overlap,
            reverb=args.reverb,
            seed=args.seed,
            event_count=args.events,
            event_seconds=args.event_seconds,
            sample_rate=args.sample_rate,
            el_max=args.el_max,
            max_sources=args.max_sources,
            max_freq_hz=args.max_freq,
        )
        subset = out / f"ov{overlap}"
        try:
            (subset / "audio").mkdir(parents=True, exist_ok=True)
            (subset / "labels").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DatasetError(f"cannot write to {subset}: {exc}") from exc
        stems = []
        for i in range(args.files):
            stem = f"scene_{i:04d}"
            wave, labels = generate_scene(spec, i)
            write_wav(subset / "audio" / f"{stem}.wav", wave, spec.sample_rate, pcm16=args.pcm16)
            write_labels(subset / "labels" / f"{stem}.csv", labels)
            stems.append(stem)
        manifest["subsets"][f"ov{overlap}"] = {"spec": asdict(spec), "files": stems}
        print(f"ov{overlap}: {len(stems)} scenes -> {subset}")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _remap(cfg: RunConfig):
    path = cfg["data.remap"]
    return parse_remap(Path(path).read_text()) if path else None


def cmd_train(args) -> int:
    overrides = {k: v for k, v in vars(args).items() if k in SCHEMA and v is not None}
    if args.variant is not None:
        overrides["model.variant"] = args.variant
    if args.teacher_forcing:
        overrides["train.teacher_forcing"] = "true"
    cfg = RunConfig.load(args.config, overrides)
    if not cfg["data.root"]:
        raise ConfigError(["data.root: required for training"])

    run_dir = Path(args.run_dir) if args.run_dir else cfg.run_dir()
    if (run_dir / "train_log.jsonl").exists() and not args.resume:
        raise UsageError(f"{run_dir} already holds a run; pass --resume to continue it")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.to_text())

    fc = cfg.feature_config()
    tc = cfg.train_config()
    root = cfg["data.root"]
    train_stems, val_stems = split_stems(list_stems(root), cfg["data.split"])
    s = cfg["model.max_sources"]
    train_set = load_scenes(root, train_stems, fc, s, _remap(cfg))
    val_set = load_scenes(root, val_stems, fc, s, _remap(cfg))
    mc = cfg.model_config(channels=train_set.features.shape[-1] // 2)
    model = SelModel(mc, seed=tc.seed)
    logger.info("run %s: %s, %d parameters, %d/%d chunks", run_dir, mc.variant, model.parameter_count(), len(train_set), len(val_set))
    extra = {"data": {"root": str(root), "split": cfg["data.split"], "remap": cfg["data.remap"]}}
    with threadpool_limits(limits=1):
        _, log = train(model, train_set, val_set, tc, run_dir=run_dir, features=fc, resume=args.resume, card_extra=extra)
    best = log.best()
    print(json.dumps({"run_dir": str(run_dir), "epochs": len(log.epochs), "best_epoch": best["epoch"], "best_val_total": best["val"]["total"]}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _card_features(card: dict) -> FeatureConfig:
    if "features" not in card:
        raise DatasetError("model card has no feature configuration")
    return FeatureConfig(**card["features"])


def _eval_set(model, card: dict, root: str, subset: str) -> ChunkDataset:
    fc = _card_features(card)
    stems = list_stems(root)
    if subset != "all":
        split = card.get("data", {}).get("split", "80/20")
        train_stems, val_stems = split_stems(stems, split)
        stems = train_stems if subset == "train" else val_stems
    remap_path = card.get("data", {}).get("remap") or ""
    remap = parse_remap(Path(remap_path).read_text()) if remap_path else None
    ds = load_scenes(root, stems, fc, model.config.max_sources, remap)
    if len(ds) == 0:
        raise DatasetError(f"no chunks to evaluate under {root}")
    channels = ds.features.shape[-1] // 2
    if channels != model.config.channels or ds.features.shape[1:3] != (model.config.frames, model.config.bins):
        raise DatasetError(
            f"data gives {ds.features.shape[1:]} (C={channels}), model card expects "
            f"({model.config.frames}, {model.config.bins}, {2 * model.config.channels})"
        )
    return ds


def _evaluate_checkpoint(path: str, root: str, subset: str, batch_size: int, per_frame: bool):
    model, card = load_model(path)
    ds = _eval_set(model, card, root, subset)
    lam = card.get("train", {}).get("lam", 1.0)
    with threadpool_limits(limits=1):
        return validate(model, ds, batch_size, lam, per_frame=per_frame)


def cmd_eval(args) -> int:
    paths = args.compare if args.compare else [args.checkpoint]
    if not paths or paths[0] is None:
        raise UsageError("eval needs --checkpoint or --compare A B")
    results = [_evaluate_checkpoint(p, args.data, args.subset, args.batch_size, args.frames_csv is not None) for p in paths]
    if len(results) == 1:
        val = results[0]
        payload = dict(val.report.to_dict(), loss=val.total, checkpoint=str(paths[0]))
        if args.frames_csv:
            val.report.write_frame_csv(args.frames_csv)
    else:
        a, b = (r.report for r in results)
        if not a.doa_errors or not b.doa_errors:
            raise DatasetError("a checkpoint matched no frames; nothing to compare")
        test = mann_whitney_u(a.doa_errors, b.doa_errors)
        payload = {
            "a": dict(a.to_dict(), checkpoint=str(paths[0])),
            "b": dict(b.to_dict(), checkpoint=str(paths[1])),
            "mann_whitney": {"u": test.u, "p": test.p, "exact": test.exact, "alternative": "two-sided"},
        }
        if args.frames_csv:
            stem = Path(args.frames_csv)
            a.write_frame_csv(stem.with_name(stem.stem + "_a" + stem.suffix))
            b.write_frame_csv(stem.with_name(stem.stem + "_b" + stem.suffix))
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer / dump-attention
# ---------------------------------------------------------------------------


def _wav_features(model, card: dict, wav: str) -> np.ndarray:
    fc = _card_features(card)
    wave, rate = read_wav(wav)
    if rate != fc.sample_rate:
        raise DatasetError(f"{wav}: sample rate {rate} Hz, model expects {fc.sample_rate} Hz")
    if wave.shape[0] != model.config.channels:
        raise DatasetError(f"{wav}: {wave.shape[0]} channels, model expects {model.config.channels}")
    return extract(wave, fc)


def cmd_infer(args) -> int:
    model, card = load_model(args.checkpoint)
    feats = _wav_features(model, card, args.wav)
    with no_grad(), threadpool_limits(limits=1):
        out = model(feats, train=False)
    lines = ["chunk,frame,slot,activity,azimuth_deg,elevation_deg"]
    act, az, el = (np.asarray(t.data) for t in (out.activity, out.azimuth, out.elevation))
    for c, k, s in np.ndindex(act.shape):
        lines.append(f"{c},{k},{s},{act[c, k, s]:.6f},{np.degrees(az[c, k, s]):.6f},{np.degrees(el[c, k, s]):.6f}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_dump_attention(args) -> int:
    model, card = load_model(args.checkpoint)
    if model.config.variant != "adrenaline":
        raise UsageError(f"variant {model.config.variant!r} has no attention")
    feats = _wav_features(model, card, args.wav)
    if not 0 <= args.chunk < len(feats):
        raise DatasetError(f"chunk {args.chunk} out of range (file has {len(feats)} chunks)")
    with no_grad(), threadpool_limits(limits=1):
        out = model(feats[args.chunk:args.chunk + 1], train=False)
    att = out.attention.data[0]  # rows: decoder step, columns: encoder step
    _emit("".join(",".join(f"{v:.9g}" for v in row) + "\n" for row in att), args.out)
    return EXIT_OK


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    results = run_all(seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="seqsel",
        description="Sound event localization with an attention-based sequence-to-sequence model.",
        epilog=_keys_table() + f"\n\nenvironment: {RUN_ROOT_ENV} overrides run.root\n"
        "exit codes: 0 success, 2 config error, 3 data error, 4 verification failure",
        formatter_class=fmt,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate FOA scenes under <out>/ov{1,2,3}/audio|labels")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--files", type=int, default=10, help="scenes per subset (default 10)")
    p.add_argument("--overlap", type=int, choices=(1, 2, 3), action="append", help="subset(s) to generate (default all)")
    p.add_argument("--seed", type=int, default=0, help="scene seed (default 0)")
    p.add_argument("--duration", type=float, default=30.0, help="scene length in seconds (default 30)")
    p.add_argument("--reverb", type=float, default=None, help="reverb decay time in seconds (default anechoic)")
    p.add_argument("--sample-rate", type=int, default=44100, help="Hz (default 44100)")
    p.add_argument("--el-max", type=float, default=60.0, help="elevation bound in degrees (default 60)")
    p.add_argument("--max-sources", type=int, default=4, help="label slots (default 4)")
    p.add_argument("--events", type=_pair(int), default=(4, 12), help="MIN,MAX events per scene (default 4,12)")
    p.add_argument("--event-seconds", type=_pair(float), default=(0.5, 3.0), help="MIN,MAX event length (default 0.5,3.0)")
    p.add_argument("--max-freq", type=float, default=None, help="upper bound for source spectra in Hz")
    p.add_argument("--pcm16", action="store_true", help="write 16-bit PCM instead of float32")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model variant", epilog=_keys_table(), formatter_class=fmt)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--resume", action="store_true", help="continue an existing run directory")
    p.add_argument("--run-dir", help="explicit run directory (default <run.root>/<config hash>)")
    p.add_argument("--variant", choices=("adrenaline", "cnn-baseline", "seldnet-m"), help="shorthand for --model.variant")
    p.add_argument("--teacher-forcing", action="store_true", help="shorthand for --train.teacher_forcing true")
    for key, spec in SCHEMA.items():
        p.add_argument(f"--{key}", dest=key, metavar="V", default=None, help=f"{spec.help} (default {_shown(spec.default)})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="frame recall and DoA statistics for a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint path (model card at <path>.json)")
    p.add_argument("--compare", nargs=2, metavar=("A", "B"), help="evaluate two checkpoints and test their DoA errors")
    p.add_argument("--data", required=True, help="dataset directory with audio/ and labels/")
    p.add_argument("--subset", choices=("all", "train", "val"), default="all", help="scenes to use, by the card's split (default all)")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--frames-csv", help="write per-frame matched errors here")
    p.add_argument("--out", help="write the JSON report here as well as to stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="per-frame predictions for one WAV file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("dump-attention", help="K x K attention matrix for one chunk as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--chunk", type=int, default=0, help="chunk index (default 0)")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("verify", help="run the embedded oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "overlap", 1) is None:
        args.overlap = [1, 2, 3]
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        errors = exc.errors if isinstance(exc, ConfigError) else [str(exc)]
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, SceneError, CheckpointError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def _entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    _entry()
