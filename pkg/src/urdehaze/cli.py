"""Command-line surface: synthesize, train, finetune, dehaze, evaluate,
hazemap.

Every command is a batch operation driven by a YAML config and/or a
checkpoint; outputs are files (images, manifests, checkpoints, JSONL
training logs, TSV reports and PNG plots) plus a run_meta.json recording
the config hash, seed and library versions. Exit codes: 0 success,
1 usage, 2 data error, 3 numeric failure.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__, checkpoint, evaluation, haze_model, inference, reporting, trainer
from .config import ConfigError, RunConfig
from .dataset import (
    IMAGE_SUFFIXES,
    PairEntry,
    PairManifest,
    load_manifest,
    read_image_bytes,
    save_manifest,
    to_bytes,
    to_unit_signed,
    write_image_bytes,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def write_run_meta(out_dir, command, seed, config_hash=None, extra=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "command": command,
        "seed": seed,
        "config_hash": config_hash,
        "versions": {
            "urdehaze": __version__,
            "python": sys.version.split()[0],
            "torch": torch.__version__,
            "numpy": np.__version__,
        },
    }
    if extra:
        meta.update(extra)
    (out_dir / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


# --- synthesize ----------------------------------------------------------


def cmd_synthesize(args):
    cfg = RunConfig.from_file(args.config)
    syn = cfg["synthesize"]
    if not syn["clear_dir"] or not syn["out_dir"]:
        raise ConfigError("synthesize requires synthesize.clear_dir and synthesize.out_dir")
    clear_dir = Path(syn["clear_dir"])
    out_dir = Path(syn["out_dir"])
    haze_dir = out_dir / "haze"
    haze_dir.mkdir(parents=True, exist_ok=True)

    files = sorted(p for p in clear_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no images found in {clear_dir}")
    rng = np.random.default_rng(cfg.seed)
    b_lo, b_hi = syn["beta_range"]
    a_lo, a_hi = syn["alpha_range"]
    depth_cfg = haze_model.DepthConfig(
        constant=syn["depth_constant"], vertical_ramp=syn["vertical_ramp"]
    )
    entries = []
    for path in files:
        clear_bytes = read_image_bytes(path)
        clear01 = clear_bytes.astype(np.float64) / 255.0
        params = haze_model.ScatteringParams(
            alpha=float(rng.uniform(a_lo, a_hi)), beta=float(rng.uniform(b_lo, b_hi))
        )
        depth = depth_cfg.build(*clear01.shape[:2])
        haze01, _ = haze_model.synthesize_pair(clear01, params, depth)
        haze_bytes = np.floor(np.clip(haze01, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        haze_path = haze_dir / f"{path.stem}.png"
        write_image_bytes(haze_path, haze_bytes)
        entries.append(PairEntry(id=path.stem, haze_path=str(haze_path), clear_path=str(path)))

    manifest = PairManifest(entries=entries)
    save_manifest(manifest, out_dir / "manifest.tsv")
    write_run_meta(out_dir, "synthesize", cfg.seed, cfg.config_hash(), {"pairs": len(entries)})
    print(f"wrote {len(entries)} haze/clear pairs under {out_dir}")
    return EXIT_OK


# --- train / finetune ----------------------------------------------------


def _open_step_log(path):
    f = open(path, "a")

    def callback(state, breakdown):
        record = {"iteration": state.iteration, "epoch": state.epoch, "phase": state.phase}
        record.update(breakdown.as_dict())
        record["wall_time"] = time.time()
        f.write(json.dumps(record) + "\n")
        f.flush()

    return f, callback


def cmd_train(args):
    cfg = RunConfig.from_file(args.config)
    tc = cfg.train_config()
    if not cfg["data"]["train_manifest"]:
        raise ConfigError("train requires data.train_manifest")
    manifest = load_manifest(cfg["data"]["train_manifest"])
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_meta(out_dir, "train", cfg.seed, cfg.config_hash())

    logf, callback = _open_step_log(out_dir / "train_log.jsonl")
    try:
        if args.resume:
            state = trainer.load_state(args.resume, expected_config=tc)
            remaining = tc.max_epochs - state.epoch
            if remaining <= 0:
                print(f"checkpoint already at epoch {state.epoch}; nothing to do")
                return EXIT_OK
            trainer.run_epochs(state, manifest, remaining, callback, checkpoint_dir=out_dir)
        else:
            trainer.pretrain_fixed_size(tc, manifest, callback, checkpoint_dir=out_dir)
    finally:
        logf.close()
    print(f"pretraining done; checkpoints in {out_dir}")
    return EXIT_OK


def cmd_finetune(args):
    cfg = RunConfig.from_file(args.config)
    tc = cfg.train_config()
    if not cfg["data"]["train_manifest"]:
        raise ConfigError("finetune requires data.train_manifest")
    manifest = load_manifest(cfg["data"]["train_manifest"])
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_meta(out_dir, "finetune", cfg.seed, cfg.config_hash())

    state = trainer.load_state(args.checkpoint, expected_config=tc)
    epochs = args.epochs if args.epochs is not None else tc.max_epochs
    logf, callback = _open_step_log(out_dir / "train_log.jsonl")
    try:
        state.phase = trainer.PHASE_IFF
        trainer.run_epochs(state, manifest, epochs, callback, checkpoint_dir=out_dir)
    finally:
        logf.close()
    print(f"IFF fine-tuning done; checkpoints in {out_dir}")
    return EXIT_OK


# --- inference commands ---------------------------------------------------


def _load_model(ckpt_path):
    state = trainer.load_state(ckpt_path)
    model = state.generator
    model.eval()
    return state, model


def _input_files(path):
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise FileNotFoundError(f"no images found in {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    return [path]


def cmd_dehaze(args):
    _, model = _load_model(args.checkpoint)
    files = _input_files(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    done = 0
    for path in files:
        try:
            haze = to_unit_signed(read_image_bytes(path))
            seed = inference.image_seed(args.seed, path.stem)
            dehazed = inference.dehaze_array(model, haze, seed)
            write_image_bytes(out_dir / f"{path.stem}.png", to_bytes(dehazed))
            done += 1
        except Exception as exc:
            print(f"error: {path.name}: {exc}", file=sys.stderr)
    write_run_meta(out_dir, "dehaze", args.seed, extra={"inputs": len(files), "outputs": done})
    print(f"dehazed {done}/{len(files)} images into {out_dir}")
    return EXIT_OK if done else EXIT_DATA


def cmd_hazemap(args):
    _, model = _load_model(args.checkpoint)
    files = _input_files(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in files:
        haze = to_unit_signed(read_image_bytes(path))
        seed = inference.image_seed(args.seed, path.stem)
        m = inference.hazemap_array(model, haze, seed)
        write_image_bytes(out_dir / f"{path.stem}_hazemap.png", inference.hazemap_to_bytes(m))
    write_run_meta(out_dir, "hazemap", args.seed, extra={"inputs": len(files)})
    print(f"wrote {len(files)} haze map(s) into {out_dir}")
    return EXIT_OK


def cmd_evaluate(args):
    manifest = load_manifest(args.manifest, split_tag="val")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.checkpoint_dir:
        ckpts = sorted(Path(args.checkpoint_dir).glob("*.ckpt"))
        if not ckpts:
            raise FileNotFoundError(f"no .ckpt files in {args.checkpoint_dir}")
        history = []
        report = None
        for path in ckpts:
            state, model = _load_model(path)
            report = evaluation.evaluate_dataset(
                inference.make_dehaze_fn(model, args.seed), manifest
            )
            row = {"label": path.name, "epoch": state.epoch}
            row.update(report.means)
            history.append(row)
            print(f"{path.name}: " + "  ".join(f"{k}={v:.4g}" for k, v in report.means.items()))
        reporting.write_history(history, out_dir)
        reporting.write_report(report, out_dir)  # per-image rows of the last checkpoint
    else:
        if not args.checkpoint:
            raise ConfigError("evaluate requires --checkpoint or --checkpoint-dir")
        _, model = _load_model(args.checkpoint)
        report = evaluation.evaluate_dataset(
            inference.make_dehaze_fn(model, args.seed), manifest
        )
        reporting.write_report(report, out_dir)
        print("  ".join(f"{k}={v:.4g}" for k, v in report.means.items()))
    write_run_meta(out_dir, "evaluate", args.seed)
    return EXIT_OK


# --- entry point ----------------------------------------------------------


def build_parser():
    parser = _Parser(prog="urdehaze", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="render haze images for a clear-image directory")
    p.add_argument("-c", "--config", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="fixed-size pretraining")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--resume", help="checkpoint to continue pretraining from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="input-size flexibility fine-tuning (IFF)")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint to start from")
    p.add_argument("--epochs", type=int, help="epochs to run (default: train.max_epochs)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("dehaze", help="dehaze a file or directory at native size")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dehaze)

    p = sub.add_parser("evaluate", help="score a checkpoint (or a directory of them) on a manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--checkpoint-dir")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("hazemap", help="visualize the generator's haze map for an input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_hazemap)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, checkpoint.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (trainer.TrainingDivergedError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
