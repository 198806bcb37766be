"""Experiment orchestration for the two-stage transfer framework.

Four training strategies over identical data and folds:

  1  target only, random init
  2  generic pretrain -> drop head -> fine-tune on target
  3  generic pretrain -> drop head -> train on merged auxiliary, no target
     training at all; evaluated directly on the target test folds
  4  generic pretrain -> drop head -> train on merged auxiliary ->
     maintain (or, for the ablation, drop) the head -> fine-tune on target

Three imbalance treatments, applied by default to the strategy's final
training stage: DR (plain loss, shuffled batches), WL (inverse-frequency
weighted loss), RS (class-balanced resampling).

Runs are seed-major: per replication seed the datasets, fold partition and
early-stage checkpoints are built once and shared by every grid cell, so
baselines and ours rows consume bit-identical inputs. Everything downstream
of a seed is deterministic; repeating a run reproduces the CSV byte for
byte.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .dataset import (
    FoldPartition,
    GeneratorConfig,
    PatternSpec,
    SceneDataset,
    default_auxiliary_config,
    default_pretrain_config,
    default_target_config,
    fold_split,
    generate_auxiliary,
    generate_generic_pretrain,
    generate_target,
    kfold_partition,
)
from .evaluation import EvaluationReport, aggregate_folds, evaluate_model
from .model import (
    ArchConfig,
    ComposedNetwork,
    ConvSpec,
    TrainConfig,
    build_network,
    checkpoint_of,
    drop_classifier,
    maintain_classifier,
    parameter_fingerprint,
    restore_network,
    train,
)
from .taxonomy import ClassMergeMap, apply_merge_map, default_aux_merge_map, load_merge_map

MODES = ("DR", "WL", "RS")
STRATEGIES = (1, 2, 3, 4)

STAGE_PRETRAIN = "pretrain"
STAGE_AUXILIARY = "auxiliary"
STAGE_TARGET = "target"

# which stages each strategy executes, in order
STAGES_BY_STRATEGY = {
    1: (STAGE_TARGET,),
    2: (STAGE_PRETRAIN, STAGE_TARGET),
    3: (STAGE_PRETRAIN, STAGE_AUXILIARY),
    4: (STAGE_PRETRAIN, STAGE_AUXILIARY, STAGE_TARGET),
}

REPORT_FORMATS = ("structured-text", "markdown-table", "csv")


class ConfigError(ValueError):
    """An experiment configuration that cannot be run."""


# ----------------------------------------------------------------- config


@dataclass(frozen=True)
class StageTrainConfig:
    """Per-stage optimizer settings; epochs = 0 skips the stage entirely.

    Plain SGD by default: heavy-ball momentum at the default learning
    rates diverges on some seeds at this scale (the calibration module
    documents the failure), poisoning every strategy downstream of the
    shared pretrained extractor.
    """

    epochs: int
    learning_rate: float
    batch_size: int = 32
    momentum: float = 0.0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"stage epochs must be >= 0, got {self.epochs}")
        if self.learning_rate < 0.0:
            raise ConfigError(f"stage learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"stage batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"stage momentum must lie in [0, 1), got {self.momentum}")

    def to_train_config(self, loss_mode: str, sampler_mode: str, seed: int) -> TrainConfig | None:
        if self.epochs == 0:
            return None
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            momentum=self.momentum,
            loss_mode=loss_mode,
            sampler_mode=sampler_mode,
            seed=seed,
        )


# calibrated stage defaults: the target stage is kept short and gentle so
# the benefit of the earlier stages is measurable rather than washed out
DEFAULT_PRETRAIN_STAGE = StageTrainConfig(epochs=3, learning_rate=0.05)
DEFAULT_AUXILIARY_STAGE = StageTrainConfig(epochs=6, learning_rate=0.05)
DEFAULT_TARGET_STAGE = StageTrainConfig(epochs=5, learning_rate=0.01)

_STAGE_FIELDS = {
    STAGE_PRETRAIN: "stage_pretrain",
    STAGE_AUXILIARY: "stage_auxiliary",
    STAGE_TARGET: "stage_target",
}


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: int = 4
    mode: str = "DR"
    maintain: bool = True
    k: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    arch: ArchConfig = field(default_factory=ArchConfig)
    stage_pretrain: StageTrainConfig | None = field(
        default_factory=lambda: DEFAULT_PRETRAIN_STAGE
    )
    stage_auxiliary: StageTrainConfig | None = field(
        default_factory=lambda: DEFAULT_AUXILIARY_STAGE
    )
    stage_target: StageTrainConfig | None = field(
        default_factory=lambda: DEFAULT_TARGET_STAGE
    )
    target_data: GeneratorConfig = field(default_factory=default_target_config)
    auxiliary_data: GeneratorConfig = field(default_factory=default_auxiliary_config)
    pretrain_data: GeneratorConfig = field(default_factory=default_pretrain_config)
    merge_map: ClassMergeMap = field(default_factory=default_aux_merge_map)
    # stages the imbalance mode applies to; None = the final training stage
    mode_stages: tuple[str, ...] | None = None
    stratified: bool = True

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        for stage in STAGES_BY_STRATEGY[self.strategy]:
            if getattr(self, _STAGE_FIELDS[stage]) is None:
                raise ConfigError(
                    f"strategy {self.strategy} uses the {stage} stage but its "
                    f"config is missing"
                )
        if self.mode_stages is not None:
            object.__setattr__(self, "mode_stages", tuple(self.mode_stages))
            bad = [s for s in self.mode_stages if s not in STAGES_BY_STRATEGY[self.strategy]]
            if bad:
                raise ConfigError(
                    f"mode_stages {bad} are not stages of strategy {self.strategy}"
                )

    def resolved_mode_stages(self) -> tuple[str, ...]:
        if self.mode_stages is not None:
            return self.mode_stages
        return (STAGES_BY_STRATEGY[self.strategy][-1],)


def _mode_knobs(mode: str) -> tuple[str, str]:
    """(loss_mode, sampler_mode) a treatment applies to its stage."""
    return {
        "DR": ("plain", "sequential-shuffle"),
        "WL": ("weighted", "sequential-shuffle"),
        "RS": ("plain", "class-balanced"),
    }[mode]


def method_label(strategy: int, mode: str, maintain: bool = True) -> str:
    if strategy == 1:
        base = f"Target only ({mode})"
    elif strategy == 2:
        base = {"DR": "Baseline 0 (DR)", "WL": "Baseline 1 (WL)", "RS": "Baseline 2 (RS)"}[mode]
    elif strategy == 3:
        base = f"Aux only ({mode})"
    else:
        base = {"DR": "Ours (DR)", "WL": "Ours (WL)", "RS": "Ours (RS)"}[mode]
    if strategy == 4 and not maintain:
        base += " w/o M"
    return base


# ---------------------------------------------------------------- seeding


_BUNDLE_KEYS = (
    "data",  # shared by target and auxiliary so their patterns coincide
    "pretrain_data",
    "folds",
    "init",
    "drop_after_pretrain",
    "drop_before_target",
    "train_pretrain",
    "train_auxiliary",
    "train_target",
)


def derive_seed_bundle(seed: int) -> dict[str, int]:
    """Independent sub-seeds for every random decision of one replication."""
    state = np.random.SeedSequence(seed).generate_state(len(_BUNDLE_KEYS))
    return {key: int(value) for key, value in zip(_BUNDLE_KEYS, state)}


@dataclass
class SeedContext:
    """Everything one replication shares across strategies and modes."""

    seed: int
    bundle: dict[str, int]
    target: SceneDataset
    auxiliary: SceneDataset  # already merged to the target label space
    pretrain: SceneDataset
    partition: FoldPartition


def build_seed_context(config: ExperimentConfig, seed: int) -> SeedContext:
    bundle = derive_seed_bundle(seed)
    target = generate_target(config.target_data, seed=bundle["data"])
    auxiliary = apply_merge_map(
        generate_auxiliary(config.auxiliary_data, seed=bundle["data"]), config.merge_map
    )
    pretrain = generate_generic_pretrain(config.pretrain_data, seed=bundle["pretrain_data"])
    partition = kfold_partition(target, config.k, seed=bundle["folds"], stratified=config.stratified)
    return SeedContext(seed, bundle, target, auxiliary, pretrain, partition)


# ----------------------------------------------------------------- results


@dataclass
class SeedRunResult:
    seed: int
    fold_reports: tuple[EvaluationReport, ...]
    aggregate: EvaluationReport
    events: tuple[dict, ...]

    @property
    def datasets_used(self) -> tuple[str, ...]:
        """Distinct datasets actually trained on, in first-use order."""
        seen: list[str] = []
        for event in self.events:
            if event["event"] == "train" and event["dataset"] not in seen:
                seen.append(event["dataset"])
        return tuple(seen)


@dataclass
class ExperimentResult:
    strategy: int
    mode: str
    maintain: bool
    label: str
    seed_results: tuple[SeedRunResult, ...]
    aggregate: EvaluationReport  # pooled over every (seed, fold)
    config_echo: dict
    wall_clock_seconds: float

    @property
    def mean_macro_f1(self) -> float:
        """Mean over seeds of the per-seed pooled macro-F1."""
        return math.fsum(sr.aggregate.macro_f1 for sr in self.seed_results) / len(
            self.seed_results
        )

    def per_seed_class_accuracy(self, class_name: str) -> list[float | None]:
        return [sr.aggregate.per_class_accuracy[class_name] for sr in self.seed_results]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "strategy": self.strategy,
            "mode": self.mode,
            "maintain": self.maintain,
            "wall_clock_seconds": self.wall_clock_seconds,
            "config": self.config_echo,
            "aggregate": replace(self.aggregate, per_fold=()).to_dict(),
            "per_seed": [
                {
                    "seed": sr.seed,
                    "datasets_used": list(sr.datasets_used),
                    "aggregate": replace(sr.aggregate, per_fold=()).to_dict(),
                    "folds": [rep.to_dict() for rep in sr.fold_reports],
                    "events": [dict(e) for e in sr.events],
                }
                for sr in self.seed_results
            ],
        }


# ----------------------------------------------------------------- running


def _classifier_fingerprint(net: ComposedNetwork) -> str:
    return parameter_fingerprint(
        {"classifier.weight": net.classifier.weight, "classifier.bias": net.classifier.bias}
    )


def _train_stage(
    net: ComposedNetwork,
    dataset: SceneDataset,
    stage_name: str,
    dataset_name: str,
    stage_config: StageTrainConfig,
    knobs: tuple[str, str],
    seed: int,
    fold: int | None,
) -> tuple[ComposedNetwork, list[dict]]:
    """Run one stage; returns the resulting net and its log events."""
    train_config = stage_config.to_train_config(*knobs, seed=seed)
    if train_config is None:
        return net, []
    trained, history = train(net, dataset, train_config)
    event = {
        "event": "train",
        "stage": stage_name,
        "dataset": dataset_name,
        "fold": fold,
        "n_sequences": len(dataset.sequences),
        "epochs": train_config.epochs,
        "loss_mode": train_config.loss_mode,
        "sampler_mode": train_config.sampler_mode,
        "loss_history": [float(x) for x in history],
        "fingerprint_before": parameter_fingerprint(net),
        "fingerprint_after": parameter_fingerprint(trained),
        "classifier_fingerprint": _classifier_fingerprint(trained),
    }
    return trained, [event]


def _early_chain(
    config: ExperimentConfig, ctx: SeedContext, cache: dict
) -> tuple[ComposedNetwork, list[dict]]:
    """Stages before the per-fold target stage; shared across folds.

    Returns the network each fold's target stage starts from (for strategy 3,
    the finished network) plus the log events that produced it.
    """
    bundle = ctx.bundle
    events: list[dict] = []
    mode_stages = config.resolved_mode_stages()

    def knobs_for(stage: str) -> tuple[str, str]:
        return _mode_knobs(config.mode) if stage in mode_stages else ("plain", "sequential-shuffle")

    if config.strategy == 1:
        net = build_network(
            config.arch, ctx.target.class_names, seed=bundle["init"], provenance="random-init"
        )
        events.append(
            {
                "event": "init",
                "classes": list(net.class_names),
                "fingerprint": parameter_fingerprint(net),
            }
        )
        return net, events

    # stage 0: generic pretraining, cached per (seed, effective knobs)
    knobs0 = knobs_for(STAGE_PRETRAIN)
    key0 = ("stage0", knobs0)
    if key0 not in cache:
        net0 = build_network(
            config.arch, ctx.pretrain.class_names, seed=bundle["init"], provenance="pretrain-init"
        )
        net0, stage_events = _train_stage(
            net0,
            ctx.pretrain,
            STAGE_PRETRAIN,
            "generic-pretrain",
            config.stage_pretrain,
            knobs0,
            bundle["train_pretrain"],
            fold=None,
        )
        cache[key0] = (checkpoint_of(net0), tuple(stage_events))
    cp0, cached_events = cache[key0]
    events.extend(dict(e) for e in cached_events)
    net = restore_network(cp0)

    # drop the generic head, re-point at the target label space
    net = drop_classifier(
        net, ctx.target.class_names, seed=bundle["drop_after_pretrain"], provenance="drop-after-pretrain"
    )
    events.append(
        {
            "event": "drop",
            "after": STAGE_PRETRAIN,
            "classes": list(net.class_names),
            "classifier_fingerprint": _classifier_fingerprint(net),
        }
    )
    if config.strategy == 2:
        return net, events

    # stage 1: merged auxiliary training, cached per effective knobs
    knobs1 = knobs_for(STAGE_AUXILIARY)
    key1 = ("stage1", knobs_for(STAGE_PRETRAIN), knobs1)
    if key1 not in cache:
        net1, stage_events = _train_stage(
            net,
            ctx.auxiliary,
            STAGE_AUXILIARY,
            "auxiliary-merged",
            config.stage_auxiliary,
            knobs1,
            bundle["train_auxiliary"],
            fold=None,
        )
        cache[key1] = (checkpoint_of(net1), tuple(stage_events))
    cp1, cached_events = cache[key1]
    events.extend(dict(e) for e in cached_events)
    net = restore_network(cp1)
    if config.strategy == 3:
        return net, events

    # between stages: maintain the trained head, or drop it for the ablation
    if config.maintain:
        net = maintain_classifier(checkpoint_of(net), ctx.target.class_names)
        events.append(
            {
                "event": "maintain",
                "classes": list(net.class_names),
                "classifier_fingerprint": _classifier_fingerprint(net),
            }
        )
    else:
        net = drop_classifier(
            net,
            ctx.target.class_names,
            seed=bundle["drop_before_target"],
            provenance="drop-before-target",
        )
        events.append(
            {
                "event": "drop",
                "after": STAGE_AUXILIARY,
                "classes": list(net.class_names),
                "classifier_fingerprint": _classifier_fingerprint(net),
            }
        )
    return net, events


def _run_seed(config: ExperimentConfig, ctx: SeedContext, cache: dict) -> SeedRunResult:
    start_net, events = _early_chain(config, ctx, cache)
    uses_target_stage = STAGE_TARGET in STAGES_BY_STRATEGY[config.strategy]
    knobs2 = (
        _mode_knobs(config.mode)
        if STAGE_TARGET in config.resolved_mode_stages()
        else ("plain", "sequential-shuffle")
    )
    fold_reports: list[EvaluationReport] = []
    for fold_index in range(config.k):
        train_ds, test_ds = fold_split(ctx.target, ctx.partition, fold_index)
        net = start_net
        if uses_target_stage:
            net, stage_events = _train_stage(
                start_net,
                train_ds,
                STAGE_TARGET,
                "target-train",
                config.stage_target,
                knobs2,
                ctx.bundle["train_target"] + fold_index,
                fold=fold_index,
            )
            events.extend(stage_events)
        report = evaluate_model(
            net,
            test_ds,
            metadata={
                "strategy": config.strategy,
                "mode": config.mode,
                "maintain": config.maintain,
                "label": method_label(config.strategy, config.mode, config.maintain),
                "seed": ctx.seed,
                "fold": fold_index,
            },
        )
        fold_reports.append(report)
    return SeedRunResult(
        seed=ctx.seed,
        fold_reports=tuple(fold_reports),
        aggregate=aggregate_folds(fold_reports),
        events=tuple(events),
    )


def _plain(value):
    """Recursively convert config dataclasses into YAML-safe builtins."""
    if isinstance(value, (ArchConfig, ConvSpec, StageTrainConfig, GeneratorConfig, PatternSpec)):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, ClassMergeMap):
        return {"targets": list(value.targets), "map": dict(value.mapping)}
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(config: ExperimentConfig) -> dict:
    return {f.name: _plain(getattr(config, f.name)) for f in fields(config)}


def _assemble_result(
    config: ExperimentConfig, seed_results: list[SeedRunResult], elapsed: float
) -> ExperimentResult:
    all_folds = [rep for sr in seed_results for rep in sr.fold_reports]
    return ExperimentResult(
        strategy=config.strategy,
        mode=config.mode,
        maintain=config.maintain,
        label=method_label(config.strategy, config.mode, config.maintain),
        seed_results=tuple(seed_results),
        aggregate=aggregate_folds(all_folds),
        config_echo=config_to_dict(config),
        wall_clock_seconds=elapsed,
    )


def run_cells(
    base: ExperimentConfig, cells: list[tuple[int, str, bool]]
) -> list[ExperimentResult]:
    """Run an arbitrary list of (strategy, mode, maintain) cells.

    Seed-major execution: per seed, build data once, run every cell.
    Stage-0/1 checkpoints are cached per seed, so cells differing only in
    their final-stage treatment reuse the identical early chain.
    """
    configs = [
        replace(base, strategy=strategy, mode=mode, maintain=maintain)
        for strategy, mode, maintain in cells
    ]
    per_cell: list[list[SeedRunResult]] = [[] for _ in cells]
    per_cell_time = [0.0 for _ in cells]
    for seed in base.seeds:
        ctx = build_seed_context(base, seed)
        cache: dict = {}
        for i, cfg in enumerate(configs):
            t0 = time.perf_counter()
            per_cell[i].append(_run_seed(cfg, ctx, cache))
            per_cell_time[i] += time.perf_counter() - t0
    return [
        _assemble_result(cfg, runs, elapsed)
        for cfg, runs, elapsed in zip(configs, per_cell, per_cell_time)
    ]


def run_strategy(config: ExperimentConfig) -> ExperimentResult:
    """One (strategy, mode, maintain) cell over every seed and fold."""
    return run_cells(config, [(config.strategy, config.mode, config.maintain)])[0]


def run_mode_grid(config: ExperimentConfig) -> list[ExperimentResult]:
    """Baselines (strategy 2) and ours (strategy 4) under DR, WL and RS.

    Six results in row order Baseline 0/1/2 then Ours DR/WL/RS, all on
    bit-identical datasets, folds and early-stage checkpoints per seed.
    """
    cells = [(2, mode, True) for mode in MODES] + [(4, mode, True) for mode in MODES]
    return run_cells(config, cells)


def run_maintain_ablation(config: ExperimentConfig) -> tuple[ExperimentResult, ExperimentResult]:
    """Strategy 4 with the head maintained vs freshly dropped before stage 2."""
    with_m, without_m = run_cells(config, [(4, config.mode, True), (4, config.mode, False)])
    return with_m, without_m


# --------------------------------------------------------------- reporting


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def render_report(results, format: str = "structured-text") -> str:
    """Render experiment results; see REPORT_FORMATS for the choices."""
    results = list(results)
    if not results:
        raise ValueError("render_report: no results")
    if format == "structured-text":
        return yaml.safe_dump(
            {"results": [r.to_dict() for r in results]}, sort_keys=False, width=100
        )
    if format == "markdown-table":
        return _render_markdown(results)
    if format == "csv":
        return _render_csv(results)
    raise ValueError(f"unknown report format {format!r}, expected one of {REPORT_FORMATS}")


def parse_report(text: str) -> dict:
    """Inverse of the structured-text rendering."""
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict) or "results" not in doc:
        raise ValueError("not a structured-text experiment report")
    return doc


def _class_names(results) -> tuple[str, ...]:
    names = results[0].aggregate.confusion.class_names
    for result in results[1:]:
        if result.aggregate.confusion.class_names != names:
            raise ValueError("results span different class lists")
    return names


def _render_csv(results) -> str:
    names = _class_names(results)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        ["strategy", "mode", "seed", "fold", "sla", "macro_p", "macro_r", "macro_f1"]
        + [f"acc_{name}" for name in names]
        + ["maintain", "label"]
    )
    for result in results:
        for sr in result.seed_results:
            for rep in sr.fold_reports:
                writer.writerow(
                    [
                        result.strategy,
                        result.mode,
                        sr.seed,
                        rep.metadata["fold"],
                        repr(rep.sla),
                        repr(rep.macro_precision),
                        repr(rep.macro_recall),
                        repr(rep.macro_f1),
                    ]
                    + [_fmt(rep.per_class_accuracy[name]) for name in names]
                    + [int(result.maintain), result.label]
                )
    return out.getvalue()


def _render_markdown(results) -> str:
    names = _class_names(results)
    lines = [
        "# Experiment results",
        "",
        "Pooled over every seed and fold per method.",
        "",
        "| Method | SLA | Macro P | Macro R | Macro F1 |",
        "| --- | --- | --- | --- | --- |",
    ]
    for result in results:
        agg = result.aggregate
        lines.append(
            f"| {result.label} | {agg.sla:.4f} | {agg.macro_precision:.4f} "
            f"| {agg.macro_recall:.4f} | {agg.macro_f1:.4f} |"
        )
    lines += [
        "",
        "## Per-class sequence accuracy",
        "",
        "| Method | " + " | ".join(names) + " |",
        "| --- |" + " --- |" * len(names),
    ]
    for result in results:
        cells = []
        for name in names:
            value = result.aggregate.per_class_accuracy[name]
            cells.append("n/a" if value is None else f"{value:.4f}")
        lines.append(f"| {result.label} | " + " | ".join(cells) + " |")
    lines.append("")
    return "\n".join(lines)


def write_outputs(results, out_dir, figures: bool = True) -> dict[str, Path]:
    """results.csv + report.yaml + report.md (+ figures/) under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {
        "csv": out / "results.csv",
        "yaml": out / "report.yaml",
        "markdown": out / "report.md",
    }
    written["csv"].write_text(render_report(results, "csv"))
    written["yaml"].write_text(render_report(results, "structured-text"))
    written["markdown"].write_text(render_report(results, "markdown-table"))
    if figures:
        from .figures import render_figures

        for name, path in render_figures(results, out / "figures").items():
            written[f"figure:{name}"] = path
    return written


# ------------------------------------------------------------ config files


def _stage_from_dict(doc: dict | None, default: StageTrainConfig | None) -> StageTrainConfig | None:
    if doc is None:
        return default
    base = default if default is not None else DEFAULT_TARGET_STAGE
    known = {f.name for f in fields(StageTrainConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown stage config keys {sorted(unknown)}")
    merged = {f.name: getattr(base, f.name) for f in fields(StageTrainConfig)}
    merged.update(doc)
    return StageTrainConfig(**merged)


def _generator_from_dict(doc: dict | None, default: GeneratorConfig) -> GeneratorConfig:
    if doc is None:
        return default
    doc = dict(doc)
    known = {f.name for f in fields(GeneratorConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown generator config keys {sorted(unknown)}")
    if "pattern" in doc:
        pattern_doc = doc["pattern"]
        bad = set(pattern_doc) - {f.name for f in fields(PatternSpec)}
        if bad:
            raise ConfigError(f"unknown pattern keys {sorted(bad)}")
        merged = {f.name: getattr(default.pattern, f.name) for f in fields(PatternSpec)}
        merged.update(pattern_doc)
        doc["pattern"] = PatternSpec(**merged)
    if "frames_per_sequence" in doc:
        doc["frames_per_sequence"] = tuple(doc["frames_per_sequence"])
    return replace(default, **doc)


def _arch_from_config_dict(doc: dict | None, default: ArchConfig) -> ArchConfig:
    if doc is None:
        return default
    doc = dict(doc)
    known = {f.name for f in fields(ArchConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown arch keys {sorted(unknown)}")
    if "hidden_dims" in doc:
        doc["hidden_dims"] = tuple(doc["hidden_dims"])
    if doc.get("conv") is not None:
        doc["conv"] = ConvSpec(**doc["conv"])
    return replace(default, **doc)


def experiment_config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a config from a parsed structured-text document.

    Every key is optional and overrides the shipped default; unknown keys
    are rejected by name.
    """
    doc = dict(doc or {})
    defaults = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown experiment config keys {sorted(unknown)}")
    merge_map = defaults.merge_map
    if "merge_map" in doc:
        raw = doc["merge_map"]
        if isinstance(raw, str):
            merge_map = load_merge_map(raw)
        else:
            merge_map = ClassMergeMap(tuple(raw["targets"]), dict(raw["map"]))
    return ExperimentConfig(
        strategy=doc.get("strategy", defaults.strategy),
        mode=doc.get("mode", defaults.mode),
        maintain=doc.get("maintain", defaults.maintain),
        k=doc.get("k", defaults.k),
        seeds=tuple(doc.get("seeds", defaults.seeds)),
        arch=_arch_from_config_dict(doc.get("arch"), defaults.arch),
        stage_pretrain=_stage_from_dict(doc.get("stage_pretrain"), defaults.stage_pretrain),
        stage_auxiliary=_stage_from_dict(doc.get("stage_auxiliary"), defaults.stage_auxiliary),
        stage_target=_stage_from_dict(doc.get("stage_target"), defaults.stage_target),
        target_data=_generator_from_dict(doc.get("target_data"), defaults.target_data),
        auxiliary_data=_generator_from_dict(doc.get("auxiliary_data"), defaults.auxiliary_data),
        pretrain_data=_generator_from_dict(doc.get("pretrain_data"), defaults.pretrain_data),
        merge_map=merge_map,
        mode_stages=(
            tuple(doc["mode_stages"]) if doc.get("mode_stages") is not None else None
        ),
        stratified=doc.get("stratified", defaults.stratified),
    )


def load_experiment_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return experiment_config_from_dict(doc)
