"""Command-line entry points.

Subcommands:
  gen-data    write the synthetic datasets and fold file for one seed
  train       train a single stage on one dataset file
  eval        evaluate a checkpoint against a dataset file
  experiment  run a strategy / mode grid / maintain ablation and render reports
  gradcheck   verify analytic gradients against finite differences

Every failure exits non-zero after printing one structured line to stderr:
``error: <ExceptionName>: <message>``.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .dataset import (
    TARGET_CLASSES,
    generate_auxiliary,
    generate_generic_pretrain,
    generate_target,
    kfold_partition,
    load_dataset,
    save_dataset,
    save_folds,
)
from .model import (
    ConvSpec,
    TrainConfig,
    build_network,
    drop_classifier,
    load_checkpoint,
    restore_network,
    save_checkpoint,
    train,
)
from .numerics import gradient_check
from .evaluation import evaluate_model
from .pipeline import (
    ConfigError,
    ExperimentConfig,
    derive_seed_bundle,
    load_experiment_config,
    render_report,
    run_maintain_ablation,
    run_mode_grid,
    run_strategy,
    write_outputs,
)
from .taxonomy import apply_merge_map


def _load_config(path: str | None) -> ExperimentConfig:
    return load_experiment_config(path) if path else ExperimentConfig()


def _cmd_gen_data(args) -> int:
    config = _load_config(args.config)
    bundle = derive_seed_bundle(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = generate_target(config.target_data, seed=bundle["data"])
    aux_raw = generate_auxiliary(config.auxiliary_data, seed=bundle["data"])
    aux = apply_merge_map(aux_raw, config.merge_map)
    pretrain = generate_generic_pretrain(config.pretrain_data, seed=bundle["pretrain_data"])
    k = args.folds if args.folds is not None else config.k
    partition = kfold_partition(target, k, seed=bundle["folds"], stratified=config.stratified)
    files = {
        out / "target.scn": target,
        out / "auxiliary_raw.scn": aux_raw,
        out / "auxiliary.scn": aux,
        out / "pretrain.scn": pretrain,
    }
    for path, data in files.items():
        save_dataset(data, path)
        print(f"wrote: {path} ({len(data.sequences)} sequences, {data.frame_count} frames)")
    folds_path = out / "folds.yaml"
    save_folds(partition, folds_path)
    print(f"wrote: {folds_path} (k={k})")
    return 0


def _cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    config = _load_config(args.config)
    if args.init:
        checkpoint = load_checkpoint(args.init)
        net = restore_network(checkpoint)
        if net.class_names != tuple(dataset.class_names):
            net = drop_classifier(
                net, dataset.class_names, seed=args.seed, provenance="cli-drop"
            )
    else:
        arch = config.arch
        if (arch.height, arch.width) != (dataset.height, dataset.width):
            raise ConfigError(
                f"arch expects {arch.height}x{arch.width} input but the dataset "
                f"is {dataset.height}x{dataset.width}"
            )
        net = build_network(arch, dataset.class_names, seed=args.seed, provenance="cli-init")
    train_config = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        momentum=args.momentum,
        loss_mode=args.loss_mode,
        sampler_mode=args.sampler_mode,
        seed=args.seed,
    )
    trained, history = train(net, dataset, train_config)
    save_checkpoint(trained, args.out)
    print(
        yaml.safe_dump(
            {
                "checkpoint": str(args.out),
                "classes": list(trained.class_names),
                "epochs": train_config.epochs,
                "loss_history": [float(x) for x in history],
            },
            sort_keys=False,
        ),
        end="",
    )
    return 0


def _cmd_eval(args) -> int:
    net = restore_network(load_checkpoint(args.checkpoint))
    dataset = load_dataset(args.data)
    report = evaluate_model(net, dataset, metadata={"checkpoint": str(args.checkpoint)})
    text = yaml.safe_dump(report.to_dict(), sort_keys=False)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.yaml").write_text(text)
        from .figures import confusion_heatmap

        figure = confusion_heatmap(report, out / "confusion.png", "evaluation")
        print(f"wrote: {out / 'report.yaml'}")
        print(f"wrote: {figure}")
    else:
        print(text, end="")
    return 0


def _cmd_experiment(args) -> int:
    config = _load_config(args.config)
    overrides = {}
    if args.strategy is not None:
        overrides["strategy"] = args.strategy
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.folds is not None:
        overrides["k"] = args.folds
    if args.seed:
        overrides["seeds"] = tuple(args.seed)
    if overrides:
        config = replace(config, **overrides)
    if args.kind == "strategy":
        results = [run_strategy(config)]
    elif args.kind == "grid":
        results = run_mode_grid(config)
    else:
        results = list(run_maintain_ablation(config))
    written = write_outputs(results, args.out, figures=not args.no_figures)
    print(render_report(results, "markdown-table"))
    for path in written.values():
        print(f"wrote: {path}")
    return 0


def _cmd_gradcheck(args) -> int:
    config = _load_config(args.config)
    arch = config.arch
    if args.conv:
        arch = replace(arch, conv=ConvSpec())
    net = build_network(arch, TARGET_CLASSES, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    images = rng.uniform(0.0, 1.0, size=(args.batch_size, arch.height, arch.width, 3))
    labels = rng.integers(0, len(TARGET_CLASSES), size=args.batch_size)
    error = gradient_check(net, (images, labels), eps=args.eps)
    passed = error < args.threshold
    print(f"max_relative_error: {error:.6e}")
    print(f"threshold: {args.threshold:.1e}")
    print(f"gradcheck: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenetransfer",
        description="Two-stage transfer learning for imbalanced scene sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic datasets and a fold file")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--seed", type=int, default=0, help="replication seed")
    p.add_argument("--folds", type=int, default=None, help="fold count override")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a single stage on one dataset file")
    p.add_argument("--data", required=True, help="dataset file (.scn)")
    p.add_argument("--init", help="starting checkpoint; its head is dropped on class mismatch")
    p.add_argument("--config", help="experiment config file (for the architecture)")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--loss-mode", choices=("plain", "weighted"), default="plain")
    p.add_argument(
        "--sampler-mode", choices=("sequential-shuffle", "class-balanced"),
        default="sequential-shuffle",
    )
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="directory for report.yaml and the confusion figure")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("experiment", help="run a strategy, mode grid, or ablation")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--kind", choices=("strategy", "grid", "ablation"), default="grid")
    p.add_argument("--strategy", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--mode", choices=("DR", "WL", "RS"))
    p.add_argument("--folds", type=int, help="fold count override")
    p.add_argument(
        "--seed", type=int, action="append",
        help="replication seed; repeat the flag for several",
    )
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--config", help="experiment config file (for the architecture)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--conv", action="store_true", help="add the small conv front end")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one structured line, non-zero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
