"""Command-line entry point.

Subcommands: synth, stats, train, eval, predict, gradcheck, params.
Exit codes: 0 success, 1 validation error, 2 numeric failure. Errors go to
stderr with stable ``error:`` / ``gradcheck-fail:`` prefixes; wall-clock
lines carry a ``time:`` prefix so reproducibility comparisons can drop them.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .gradcheck import CHECKS, run_check
from .model import (FRAME_DIFFERENCE, RAW_FRAMES, ModelConfig,
                    count_parameters)
from .pipeline import (compute_normalization_stats, load_manifest, load_stats,
                       save_stats)
from .synth import synth_generate
from .tnsr import TnsrFormatError
from .train import (Checkpoint, TrainConfig, TrainingDivergence,
                    evaluate_ten_crop, load_checkpoint, predict,
                    save_checkpoint, train)

MODE_NAMES = {"raw": RAW_FRAMES, "diff": FRAME_DIFFERENCE}

# flat config-file keys; precedence is flag > file > default
CONFIG_KEYS = {
    "preset": str,
    "mode": str,
    "classes": int,
    "lr": float,
    "batch": int,
    "iterations": int,
    "rho": float,
    "eps": float,
    "seed": int,
    "train_frames": int,
}


class CliError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def parse_config_file(text: str) -> dict:
    """Flat ``key = value`` lines; unknown keys are rejected."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise CliError(f"config line {lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise CliError(f"config line {lineno}: bad value for {key!r}: {value!r}")
    return out


def dump_config(values: dict) -> str:
    return "".join(f"{k} = {values[k]}\n" for k in CONFIG_KEYS if k in values)


def effective_train_config(args, file_values: dict) -> tuple[str, str, int, TrainConfig]:
    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        if key in file_values:
            return file_values[key]
        return default

    preset = pick(args.preset, "preset", "tiny")
    mode_name = pick(args.mode, "mode", "raw")
    if mode_name not in MODE_NAMES:
        raise CliError(f"mode must be raw or diff, got {mode_name!r}")
    base = TrainConfig.for_preset(preset)
    tc = replace(
        base,
        lr=pick(args.lr, "lr", base.lr),
        batch_size=pick(args.batch, "batch", base.batch_size),
        iterations=pick(args.iters, "iterations", base.iterations),
        rho=pick(None, "rho", base.rho),
        eps=pick(None, "eps", base.eps),
        seed=pick(args.seed, "seed", base.seed),
        train_frames=pick(None, "train_frames", base.train_frames),
        input_mode=MODE_NAMES[mode_name],
        preset=preset,
    )
    classes = file_values.get("classes", 0)
    return preset, mode_name, classes, tc


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    manifest = synth_generate(args.out, videos_per_class=args.videos_per_class,
                              frames=args.frames, size=args.size,
                              ego_jitter=args.ego_jitter, seed=args.seed)
    print(f"wrote {len(manifest.entries)} videos to {args.out}")
    print(f"classes: {';'.join(manifest.class_names)}")
    return 0


def cmd_stats(args) -> int:
    manifest = load_manifest(args.manifest)
    stats = compute_normalization_stats(manifest)
    save_stats(stats, args.out)
    print("mean: " + " ".join(f"{v:.6f}" for v in stats.mean))
    print("std:  " + " ".join(f"{v:.6f}" for v in stats.std))
    return 0


def cmd_train(args) -> int:
    file_values = {}
    if args.config:
        file_values = parse_config_file(Path(args.config).read_text())
    preset, mode_name, _classes, tc = effective_train_config(args, file_values)
    manifest = load_manifest(args.manifest)
    model_cfg = ModelConfig.preset_by_name(preset, len(manifest.class_names),
                                           MODE_NAMES[mode_name])
    if args.print_config:
        sys.stdout.write(dump_config({
            "preset": preset, "mode": mode_name,
            "classes": len(manifest.class_names), "lr": tc.lr,
            "batch": tc.batch_size, "iterations": tc.iterations,
            "rho": tc.rho, "eps": tc.eps, "seed": tc.seed,
            "train_frames": tc.train_frames}))
    stats = load_stats(args.stats)
    resume = load_checkpoint(args.resume) if args.resume else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    ckpt, metrics = train(manifest, model_cfg, tc, stats, resume=resume,
                          log=lambda msg: print(msg))
    save_checkpoint(ckpt, out / "checkpoint.clck")
    (out / "metrics.csv").write_text(metrics.to_csv())
    print(f"final loss {metrics.losses[-1]:.6f}" if metrics.losses else "no iterations run")
    print(f"time: {time.monotonic() - t0:.1f}s")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    t0 = time.monotonic()
    acc, confusion = evaluate_ten_crop(ckpt, manifest, crops=args.crops)
    print(f"accuracy: {acc:.4f}")
    print("confusion (rows = true class):")
    for label, row in zip(manifest.class_names, confusion):
        print(f"  {label}: " + " ".join(str(v) for v in row))
    if args.csv:
        lines = ["true_class," + ",".join(manifest.class_names)]
        for label, row in zip(manifest.class_names, confusion):
            lines.append(label + "," + ",".join(str(v) for v in row))
        Path(args.csv).write_text("\n".join(lines) + "\n")
    print(f"time: {time.monotonic() - t0:.1f}s")
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cls, probs = predict(ckpt, args.frames_dir, crops=args.crops)
    names = None
    if args.manifest:
        names = load_manifest(args.manifest).class_names
    label = names[cls] if names else str(cls)
    print(f"class: {label}")
    print("probabilities: " + " ".join(f"{p:.6f}" for p in probs))
    return 0


def cmd_gradcheck(args) -> int:
    names = list(CHECKS) if args.op == "all" else [args.op]
    for name in names:
        if name not in CHECKS:
            raise CliError(f"unknown op {name!r}; choose from all, "
                           + ", ".join(CHECKS))
    failed = False
    t0 = time.monotonic()
    for name in names:
        err, tol, ok = run_check(name, seed=args.seed, trials=args.trials)
        status = "pass" if ok else "FAIL"
        print(f"{name:24s} max_rel_err {err:.3e}  tol {tol:.0e}  {status}")
        if not ok:
            print(f"gradcheck-fail: {name} max_rel_err {err:.3e} > {tol:.0e}",
                  file=sys.stderr)
            failed = True
    print(f"time: {time.monotonic() - t0:.1f}s")
    return 2 if failed else 0


def cmd_params(args) -> int:
    cfg = ModelConfig.preset_by_name(args.preset, args.classes)
    counts = count_parameters(cfg)
    for group in ("encoder", "fusion", "convlstm", "classifier", "total"):
        print(f"{group}: {counts[group]}")
    if args.preset == "full":
        print("note: the published reference figure for this architecture is "
              "21.8M parameters; the exact count above differs because the "
              "encoder uses ungrouped convolutions and no fully-connected "
              "layers, and the original accounting is not reconstructible "
              "from the stated layer shapes.")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="ivnet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic video dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--videos-per-class", type=int, default=10)
    s.add_argument("--frames", type=int, default=24)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--ego-jitter", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("stats", help="compute normalization statistics")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_stats)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--manifest", required=True)
    s.add_argument("--stats", required=True)
    s.add_argument("--preset", choices=["full", "tiny"])
    s.add_argument("--mode", choices=["raw", "diff"])
    s.add_argument("--iters", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="flat key = value config file")
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--print-config", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--crops", type=int, choices=[1, 10], default=10)
    s.add_argument("--csv", help="also write the confusion matrix as CSV")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("predict", help="classify one frame directory")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--frames-dir", required=True)
    s.add_argument("--crops", type=int, choices=[1, 10], default=10)
    s.add_argument("--manifest", help="manifest supplying class names")
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--op", default="all")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=20)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("params", help="closed-form parameter counts")
    s.add_argument("--preset", choices=["full", "tiny"], default="full")
    s.add_argument("--classes", type=int, default=7)
    s.set_defaults(fn=cmd_params)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, TnsrFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except TrainingDivergence as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
