"""Command-line entry point: ``restore-ad <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime or numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import config as cfgmod
from .data import (DataError, DatasetRepartition, SplitSizes, build_repartition, load_image,
                   load_manifest, load_split)
from .evaluation import ScoreReport, evaluate, export_heatmap, heatmap, restore
from .generator import load_generator
from .shapes import SyntheticSpec, make_synthetic
from .synthesis import paired_batch
from .training import TrainingError, Trainer, latest_checkpoint, load_checkpoint_config

log = logging.getLogger("restore_ad")


class UsageError(Exception):
    pass


def _config_epilog() -> str:
    lines = ["config keys (override with key=value):"]
    lines += [f"  {k} = {json.dumps(v)}" for k, v in cfgmod.flat_defaults()]
    return "\n".join(lines)


def _resolve_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load_run_config(getattr(args, "config", None), getattr(args, "overrides", []))
    print(f"config fingerprint: {cfgmod.fingerprint(cfg)}")
    return cfg


def _ckpt_dir(path: str) -> Path:
    p = Path(path)
    if (p / "generator.pt").is_file():
        return p
    latest = latest_checkpoint(p)
    if latest is None:
        raise UsageError(f"no checkpoint found at {p}")
    return latest


def cmd_prepare(args) -> int:
    if not 0.0 <= args.ar <= 1.0:
        raise UsageError(f"--ar must lie in [0, 1], got {args.ar}")
    records = load_manifest(args.manifest)
    sizes = SplitSizes(args.n_normal_train, args.n_unlabeled, args.n_test_normal,
                       args.n_test_abnormal)
    root = str(Path(args.manifest).resolve().parent)
    rep = build_repartition(records, args.ar, sizes, args.seed, root=root)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rep.save(out)
    print(f"config fingerprint: {cfgmod.fingerprint(sizes)}")
    for k, v in rep.summary().items():
        print(f"{k}: {v}")
    return 0


def cmd_make_synthetic(args) -> int:
    spec = SyntheticSpec(n_normal=args.n_normal, n_abnormal=args.n_abnormal, size=args.size,
                         seed=args.seed, n_train_normal=args.n_train_normal,
                         n_test_normal=args.n_test_normal, n_test_abnormal=args.n_test_abnormal)
    print(f"config fingerprint: {cfgmod.fingerprint(spec)}")
    records = make_synthetic(spec, args.out)
    print(f"wrote {len(records)} images and {Path(args.out) / 'manifest.csv'}")
    return 0


def cmd_synth_preview(args) -> int:
    cfg = _resolve_config(args)
    rep = DatasetRepartition.load(args.repartition or cfg.data.repartition)
    size = cfg.generator.input_size
    images, records = load_split(rep, "normal_train", size)
    n = min(args.count, len(images))
    if n == 0:
        raise UsageError("normal_train split is empty")
    rng = np.random.default_rng(cfg.synth.seed)
    pseudo, src, masks = paired_batch(torch.from_numpy(images[:n]), cfg.synth, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        to8 = lambda a: np.round((np.clip(a, -1, 1) + 1) * 127.5).astype(np.uint8)
        grid = np.concatenate([to8(src[i, 0].numpy()), to8(pseudo[i, 0].numpy()),
                               masks[i].astype(np.uint8) * 255], axis=1)
        Image.fromarray(grid, mode="L").save(out / f"{records[i].id}_preview.png")
    print(f"wrote {n} previews to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.save_run_config(cfg, out / "resolved_config.json")
    rep_path = args.repartition or cfg.data.repartition
    if not rep_path:
        raise UsageError("no repartition given (data.repartition or --repartition)")
    rep = DatasetRepartition.load(rep_path)
    size = cfg.generator.input_size
    normal, _ = load_split(rep, "normal_train", size)
    unlabeled = load_split(rep, "unlabeled_train", size)[0] if cfg.train.include_unlabeled else None
    if args.resume:
        # architecture and schedule come from the checkpoint; only the stopping point is taken
        # from this invocation
        trainer = Trainer.resume(_ckpt_dir(args.resume), normal, unlabeled)
    else:
        trainer = Trainer(cfg, normal, unlabeled)
    trainer.run(out, max_iterations=cfg.train.max_iterations, progress=True)
    print(f"finished at iteration {trainer.g_steps}; checkpoints in {out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = _ckpt_dir(args.checkpoint)
    cfg = load_checkpoint_config(ckpt)
    eval_cfg = cfgmod.from_dict(cfgmod.EvalConfig, cfgmod.apply_overrides(
        cfgmod.to_dict(cfg.eval), args.overrides))
    print(f"config fingerprint: {cfgmod.fingerprint(cfg)}")
    rep = DatasetRepartition.load(args.repartition)
    model = load_generator(ckpt / "generator.pt", cfg.generator)
    state = json.loads((ckpt / "state.json").read_text())
    report = evaluate(model, rep, eval_cfg, config_fingerprint=cfgmod.fingerprint(cfg),
                      checkpoint_iteration=state["g_steps"])
    out = Path(args.out) if args.out else ckpt / "score_report.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    print(f"AUC {report.auc:.4f}  AP {report.ap:.4f}  ({len(report.entries)} images) -> {out}")
    return 0


def cmd_heatmap(args) -> int:
    ckpt = _ckpt_dir(args.checkpoint)
    cfg = load_checkpoint_config(ckpt)
    print(f"config fingerprint: {cfgmod.fingerprint(cfg)}")
    model = load_generator(ckpt / "generator.pt", cfg.generator)
    size = cfg.generator.input_size
    paths = [Path(p) for p in args.images]
    if args.list:
        paths += [Path(line.strip()) for line in Path(args.list).read_text().splitlines()
                  if line.strip()]
    if not paths:
        raise UsageError("no images given")
    images = np.stack([load_image(p, size) for p in paths])
    restored = restore(model, images)
    for p, x, xp in zip(paths, images, restored):
        export_heatmap(heatmap(x, xp), args.out, p.stem)
    print(f"wrote {len(paths)} heatmaps to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    epilog = _config_epilog()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="restore-ad", description=__doc__, formatter_class=fmt,
                                     epilog=epilog)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="sample T_n / T_u / T_test from a manifest",
                       formatter_class=fmt, epilog=epilog)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ar", type=float, required=True, help="anomaly ratio of the unlabeled set")
    p.add_argument("--n-normal-train", type=int, required=True)
    p.add_argument("--n-unlabeled", type=int, required=True)
    p.add_argument("--n-test-normal", type=int, required=True)
    p.add_argument("--n-test-abnormal", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("make-synthetic", help="write the synthetic-shapes dataset and manifest",
                       formatter_class=fmt, epilog=epilog)
    d = SyntheticSpec()
    p.add_argument("--n-normal", type=int, default=d.n_normal)
    p.add_argument("--n-abnormal", type=int, default=d.n_abnormal)
    p.add_argument("--n-train-normal", type=int, default=d.n_train_normal)
    p.add_argument("--n-test-normal", type=int, default=d.n_test_normal)
    p.add_argument("--n-test-abnormal", type=int, default=d.n_test_abnormal)
    p.add_argument("--size", type=int, default=d.size)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_synthetic)

    def with_config(p):
        p.add_argument("--config", help="YAML or JSON run config")
        p.add_argument("overrides", nargs="*", metavar="key=value")

    p = sub.add_parser("synth-preview", help="write source | pseudo-anomaly | mask strips",
                       formatter_class=fmt, epilog=epilog)
    with_config(p)
    p.add_argument("--repartition")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_preview)

    p = sub.add_parser("train", help="adversarial training", formatter_class=fmt, epilog=epilog)
    with_config(p)
    p.add_argument("--repartition")
    p.add_argument("--resume", help="checkpoint directory (or run directory) to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score the test split and write a report",
                       formatter_class=fmt, epilog=epilog)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--repartition", required=True)
    p.add_argument("--out")
    p.add_argument("overrides", nargs="*", metavar="key=value",
                   help="evaluation overrides, e.g. score_mode=max")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="export |restoration - input| heatmaps",
                       formatter_class=fmt, epilog=epilog)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--list", help="text file with one image path per line")
    p.add_argument("--out", required=True)
    p.add_argument("images", nargs="*")
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, cfgmod.ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, FloatingPointError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
