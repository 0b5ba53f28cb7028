"""Command-line interface: dataset synthesis, training, evaluation, and
activation-channel visualization.

Subcommands: synth-data, train, evaluate, visualize. All randomness flows
from --seed; identical invocations produce identical artifacts on the same
platform and precision. Exit code is 0 only when the requested action fully
succeeded.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import data as data_mod
from . import metrics as metrics_mod
from . import training as train_mod
from . import visualize as vis_mod


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compseg",
        description="Cross-modal segmentation via unpaired translation and "
                    "compositional kernel activations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth-data", help="synthesize the two-domain toy dataset")
    p_synth.add_argument("--out", required=True, help="output dataset directory")
    p_synth.add_argument("--n", type=int, required=True, help="samples per domain")
    p_synth.add_argument("--size", type=int, default=64, help="image size in pixels")
    p_synth.add_argument("--seed", type=int, default=0)

    p_train = sub.add_parser("train", help="train one fold or all folds")
    p_train.add_argument("--config", help="flat key-value config file")
    p_train.add_argument("--data-root", required=True)
    p_train.add_argument("--fold", default="all", help="fold index or 'all'")
    p_train.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p_train.add_argument("--mode", choices=[m.value for m in train_mod.Mode],
                         help="training mode (overrides config)")
    p_train.add_argument("--seed", type=int, help="seed override")
    p_train.add_argument("--epochs", type=int, help="epoch-count override")
    p_train.add_argument("--progress", action="store_true", help="print per-epoch progress")

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint on the target domain")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data-root", required=True)
    p_eval.add_argument("--split", choices=["val", "test"], default="test")
    p_eval.add_argument("--postprocess", action="store_true",
                        help="keep only the largest connected component per class")
    p_eval.add_argument("--out", required=True, help="output directory for CSV and table")

    p_vis = sub.add_parser("visualize", help="render kernel activation channels for one image")
    p_vis.add_argument("--checkpoint", required=True)
    p_vis.add_argument("--image", required=True, help="image file (PNG or raw)")
    p_vis.add_argument("--out", required=True, help="output directory for panels")
    p_vis.add_argument("--raw", action="store_true",
                       help="render unnormalized (max-shifted) activations")
    return parser


def cmd_synth_data(args) -> int:
    if args.n < 1:
        print("error: --n must be >= 1", file=sys.stderr)
        return 2
    domain_a, domain_b = data_mod.synthesize_toy_dataset(args.n, args.size, args.seed)
    manifest = data_mod.toy_manifest()
    out = Path(args.out)
    data_mod.write_dataset(out, manifest, {
        manifest.source_domain: domain_a,
        manifest.target_domain: domain_b,
    })
    n_files = sum(1 for _ in out.rglob("*.png"))
    print(f"wrote {n_files} files under {out} ({args.n} images + masks per domain)")
    return 0


def cmd_train(args) -> int:
    overrides = {}
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.config:
        config = train_mod.TrainConfig.from_file(args.config, overrides)
    else:
        config = train_mod.TrainConfig(**overrides)

    folds = None
    if args.fold != "all":
        folds = [int(args.fold)]
    result = train_mod.run_cross_validation(config, args.data_root, args.out,
                                            folds=folds, progress=args.progress)
    print((Path(args.out) / "report.txt").read_text(), end="")
    for res in result.fold_results:
        print(f"fold {res.fold_index}: best val score {res.best_val_score:.4f} "
              f"at epoch {res.best_epoch} -> {res.checkpoint_path}")
    return 0


def cmd_evaluate(args) -> int:
    state = train_mod.load_checkpoint(args.checkpoint)
    config = state.config
    manifest = data_mod.DatasetManifest.load(args.data_root)
    if manifest.num_classes != config.num_classes:
        raise ValueError(
            f"checkpoint was trained for {config.num_classes} classes but the dataset "
            f"manifest declares {manifest.num_classes}"
        )
    target = data_mod.load_dataset(args.data_root, data_mod.Domain.TARGET, manifest)
    splits = train_mod.make_folds([img.id for img, _ in target], config.num_folds,
                                  config.seed, config.val_fraction)
    split = splits[state.fold_index]
    ids = split.test_ids if args.split == "test" else split.val_ids
    by_id = {img.id: (img, mask) for img, mask in target}
    samples = [by_id[i] for i in ids]
    missing = [img.id for img, mask in samples if mask is None]
    if missing:
        raise ValueError(f"cannot evaluate: target ids lack masks: {missing[:5]}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = train_mod.evaluate_split(state, samples, postprocess=args.postprocess)
    report = metrics_mod.aggregate(rows, post_processed=args.postprocess)
    metrics_mod.write_metrics_csv(rows, out / "per_image_metrics.csv")
    table = metrics_mod.format_table(report, manifest.class_names, row_label=config.mode)
    (out / "report.txt").write_text(table + "\n")

    # predicted masks in the dataset mask format
    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    preds = train_mod.predict_target(state, [img for img, _ in samples])
    for (image, _), pred in zip(samples, preds):
        if args.postprocess:
            pred = metrics_mod.apply_largest_component(pred, config.num_classes)
        data_mod.write_mask_png(pred_dir / f"{image.id}.png", pred)
    print(table)
    print(f"wrote {len(preds)} predicted masks under {pred_dir}")
    return 0


def cmd_visualize(args) -> int:
    state = train_mod.load_checkpoint(args.checkpoint)
    paths = vis_mod.write_visualization(state, args.image, args.out, raw=args.raw)
    n_channels = sum(1 for k in paths if k.startswith("channel_"))
    print(f"wrote {n_channels} activation panels, grid, input, and overlay under {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth-data": cmd_synth_data,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "visualize": cmd_visualize,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
