"""Command-line entry point: gen-data, train, evaluate, gradcheck.

Exit codes: 0 success, 2 usage/config problems (including missing
prerequisite checkpoints), 1 runtime failures.
"""

import argparse
import dataclasses
import json
import os
import sys
import time

from .errors import CheckpointError, ConfigError, FeatsimError
from .metrics import aggregate, evaluate_case, overall_means, summary_rows, write_case_csv
from .phantoms import DIFFICULTY_PRESETS, generate_dataset, load_dataset
from .training import TrainConfig, run_pipeline
from .unet import UNet
from . import gradcheck

_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_UNET_KEYS = {"depth", "base_channels"}
_TOP_KEYS = {"manifest", "out", "mode", "folds", "train", "unet"}
_MODES = ("full", "stage1", "stage2", "stage3", "joint", "plain")


def _reject_unknown(mapping, allowed, where):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {sorted(unknown)}")


def _load_run_config(path):
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"unparseable config {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be a JSON object: {path}")
    _reject_unknown(doc, _TOP_KEYS, "top-level")
    _reject_unknown(doc.get("train", {}), _TRAIN_KEYS, "train")
    _reject_unknown(doc.get("unet", {}), _UNET_KEYS, "unet")
    return doc


def cmd_gen_data(args):
    if args.difficulty not in DIFFICULTY_PRESETS:
        raise ConfigError(
            f"unknown difficulty {args.difficulty!r}; presets: {sorted(DIFFICULTY_PRESETS)}")
    diff = DIFFICULTY_PRESETS[args.difficulty]
    overrides = {}
    if args.border_blur_sigma is not None:
        overrides["border_blur_sigma"] = args.border_blur_sigma
    if args.distractor_delta is not None:
        overrides["distractor_intensity_delta"] = args.distractor_delta
    if args.noise_sigma is not None:
        overrides["noise_sigma"] = args.noise_sigma
    if overrides:
        diff = dataclasses.replace(diff, **overrides)
    manifest = generate_dataset(args.out, args.count, args.seed, args.size, args.size,
                                difficulty=diff, k_folds=args.k_folds,
                                previews=not args.no_previews)
    print(f"wrote {manifest['count']} samples under {args.out} "
          f"({args.size}x{args.size}, seed {args.seed}, {args.k_folds} folds)")
    return 0


def cmd_train(args):
    doc = _load_run_config(args.config)
    manifest = args.manifest or doc.get("manifest")
    out = args.out or doc.get("out")
    if manifest is None:
        raise ConfigError("no dataset manifest given (--manifest or config file)")
    if out is None:
        raise ConfigError("no output directory given (--out or config file)")
    mode = args.mode or doc.get("mode", "full")
    if mode not in _MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {_MODES}")

    fields = dict(doc.get("train", {}))
    for name in ("lr", "epochs", "noise_p", "xi", "batch_size", "seed", "k_folds",
                 "dice_eps"):
        v = getattr(args, name)
        if v is not None:
            fields[name] = v
    if args.no_refine:
        fields["no_refine"] = True
    if args.no_noise:
        fields["no_noise"] = True
    try:
        cfg = TrainConfig(**fields)
    except TypeError as e:
        raise ConfigError(f"bad train config: {e}") from e

    unet = dict(doc.get("unet", {}))
    if args.depth is not None:
        unet["depth"] = args.depth
    if args.base_channels is not None:
        unet["base_channels"] = args.base_channels
    depth = unet.get("depth", 3)
    base = unet.get("base_channels", 8)

    folds = args.fold if args.fold else doc.get("folds")
    stages = {"stage1": ["1"], "stage2": ["2"], "stage3": ["3"]}.get(mode)
    pipeline_mode = mode if mode in ("joint", "plain") else "full"

    dataset = load_dataset(manifest)
    t0 = time.time()
    art = run_pipeline(dataset, cfg, out, depth=depth, base_channels=base,
                       mode=pipeline_mode, stages=stages, folds=folds,
                       verbose=not args.quiet)
    if art.mean_dsc is not None:
        assd_txt = f"{art.mean_assd:.2f} mm" if art.mean_assd is not None else "n/a"
        print(f"held-out mean DSC {100 * art.mean_dsc:.1f}%, "
              f"mean ASSD {assd_txt} "
              f"({len(art.case_reports)} cases, {time.time() - t0:.0f}s)")
    else:
        print(f"stages {art.stages} done for folds {art.folds} "
              f"({time.time() - t0:.0f}s)")
    return 0


def _parse_spacing(text):
    try:
        sy, sx = (float(v) for v in text.split(","))
    except ValueError as e:
        raise ConfigError(f"spacing must be 'sy,sx', got {text!r}") from e
    return sy, sx


def cmd_evaluate(args):
    dataset = load_dataset(args.manifest)
    spacing = _parse_spacing(args.spacing)
    classes = tuple(range(1, dataset.k))
    if args.fold is not None:
        _, indices = dataset.fold_indices(args.fold)
    else:
        indices = range(len(dataset))

    if args.identity:
        ids, reports = [], []
        for i in indices:
            reports.append(evaluate_case(dataset.masks[i], dataset.masks[i],
                                         spacing, classes))
            ids.append(int(i))
    else:
        if args.checkpoint is None:
            raise ConfigError("need --checkpoint (or --identity for the sanity path)")
        if not os.path.isfile(os.path.join(args.checkpoint, "manifest.json")):
            raise ConfigError(f"checkpoint not found: {args.checkpoint}")
        net = UNet.load(args.checkpoint)
        ids, reports = [], []
        for i in indices:
            pred = net.predict(dataset.images[i])
            reports.append(evaluate_case(pred, dataset.masks[i], spacing, classes))
            ids.append(int(i))

    if args.out:
        write_case_csv(args.out, ids, reports, classes)
    agg = aggregate(reports, classes)
    for row in summary_rows(agg):
        print(f"class {row['class']}: DSC {row['dsc_pct']} ASSD {row['assd_mm']}")
    mean_dsc, mean_assd = overall_means(reports, classes)
    assd_txt = f"{mean_assd:.2f}" if mean_assd is not None else "n/a"
    print(f"overall: DSC {100 * mean_dsc:.1f} ASSD {assd_txt} ({len(ids)} cases)")
    return 0


def cmd_gradcheck(args):
    sizes = tuple(int(s) for s in args.sizes.split(","))
    if any(s < 3 for s in sizes):
        raise ConfigError(f"gradcheck sizes must be >= 3, got {sizes}")
    seeds = range(args.seed, args.seed + args.seeds)
    report, ok = gradcheck.run_all(seeds=seeds, sizes=sizes, corrupt=args.corrupt)
    for name, err, passed in report:
        print(f"{name:<18} max rel err {err:.3e}  {'ok' if passed else 'FAIL'}")
    print(f"gradcheck: {'all passed' if ok else 'FAILURES'} "
          f"(tolerance {gradcheck.TOLERANCE:g}, {args.seeds} seeds, sizes {sizes})")
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="featsim",
                                description="ground-truth-exploitation lab")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic phantom dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--k-folds", type=int, default=5)
    g.add_argument("--difficulty", default="default",
                   help="preset: " + ", ".join(sorted(DIFFICULTY_PRESETS)))
    g.add_argument("--border-blur-sigma", type=float, default=None)
    g.add_argument("--distractor-delta", type=float, default=None)
    g.add_argument("--noise-sigma", type=float, default=None)
    g.add_argument("--no-previews", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run the training pipeline or one stage")
    t.add_argument("--config", help="RunConfig JSON; flags override its fields")
    t.add_argument("--manifest")
    t.add_argument("--out")
    t.add_argument("--mode", choices=_MODES, default=None)
    t.add_argument("--fold", type=int, action="append",
                   help="restrict to this fold (repeatable)")
    t.add_argument("--xi", type=float, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    t.add_argument("--noise-p", type=float, default=None, dest="noise_p")
    t.add_argument("--dice-eps", type=float, default=None, dest="dice_eps")
    t.add_argument("--k-folds", type=int, default=None, dest="k_folds")
    t.add_argument("--no-refine", action="store_true")
    t.add_argument("--no-noise", action="store_true")
    t.add_argument("--depth", type=int, default=None)
    t.add_argument("--base-channels", type=int, default=None, dest="base_channels")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--fold", type=int, default=None)
    e.add_argument("--out", help="per-case CSV path")
    e.add_argument("--spacing", default="1,1")
    e.add_argument("--identity", action="store_true",
                   help="score the GT masks against themselves")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every op")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--seeds", type=int, default=5, help="number of seeds")
    c.add_argument("--sizes", default="4", help="comma list of base spatial extents")
    c.add_argument("--corrupt", default=None,
                   help="deliberately skew this op's analytic gradient")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FeatsimError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
