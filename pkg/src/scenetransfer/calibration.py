"""Calibration search for the shipped default knobs.

The end-to-end comparisons only demonstrate the qualitative pattern they
are meant to demonstrate if the synthetic generators and stage
hyperparameters sit in a regime where:

  (a) every strategy-2 baseline (DR, WL, RS) scores 0.00 Vehicle
      sequence accuracy: the held-out Vehicle sub-pattern must not be
      recoverable from the target training split alone, however the
      imbalance is treated;
  (b) strategy 4 scores >= 0.50 Vehicle accuracy: merged auxiliary
      training must expose both Vehicle sub-patterns;
  (c) mean macro-F1 orders strategy 4 > strategy 2 > strategy 1, and
      keeping the stage-1 classifier beats re-initializing it;
  (d) the whole comparison grid stays cheap enough for a desktop CPU.

Rather than hard-coding lucky constants, this module documents the knobs
that matter, scores candidate settings end to end, and reports which
candidates satisfy the goals. The shipped package defaults are the
winning candidate of `default_candidates()`; re-run the search with

    python3 -m scenetransfer.calibration --seeds 0 1 2 3 4 --out report.yaml

to reproduce or extend that decision. `--screen` restricts to the first
two seeds for a fast first pass.

Knobs and what they move:
  - vehicle_alias: how far each Vehicle sub-pattern leans toward a
    non-vehicle class. Too low and class-balanced resampling lets the
    baselines learn Vehicle from one sub-pattern (breaks a); too high
    and the plain final stage forgets the class on some seeds (breaks b).
  - stage momentum / learning rates: heavy-ball momentum at lr 0.05
    diverges on some seeds at this scale, poisoning every strategy that
    shares the pretrained extractor (breaks c). Plain SGD is slower but
    stable.
  - target sequence length: with long sequences the majority classes are
    learnable from scratch and strategy 2 ties strategy 1 (breaks c);
    short sequences starve the target stage so pretraining pays off.
  - target-stage epochs: long fine-tuning washes out the difference
    between initializations (breaks c and the maintain ablation); short
    fine-tuning starves strategies 1 and 2.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .pipeline import (
    MODES,
    ExperimentConfig,
    ExperimentResult,
    StageTrainConfig,
    run_cells,
)

# the cell list every candidate is scored on: strategy 1, the three
# baselines, the three ours variants, and the no-maintain ablation
SCORING_CELLS: tuple[tuple[int, str, bool], ...] = (
    (1, "DR", True),
    *((2, mode, True) for mode in MODES),
    *((4, mode, True) for mode in MODES),
    (4, "DR", False),
)


@dataclass(frozen=True)
class Candidate:
    """One point in the calibration search space.

    Field defaults equal the shipped package defaults, so
    ``Candidate("shipped-defaults")`` scores exactly what users get.
    """

    name: str
    vehicle_alias: float = 0.55
    alias_strength: float = 0.55
    sequence_noise: float = 0.06
    frame_noise: float = 0.04
    target_frames: tuple[int, int] = (5, 15)
    pretrain: StageTrainConfig = StageTrainConfig(epochs=3, learning_rate=0.05)
    auxiliary: StageTrainConfig = StageTrainConfig(epochs=6, learning_rate=0.05)
    target: StageTrainConfig = StageTrainConfig(epochs=5, learning_rate=0.01)

    def apply(self, base: ExperimentConfig) -> ExperimentConfig:
        # target and auxiliary must share pattern knobs or their class
        # anchors stop coinciding; noise applies to every generator
        pattern = replace(base.target_data.pattern, vehicle_alias=self.vehicle_alias)
        noise = dict(sequence_noise=self.sequence_noise, frame_noise=self.frame_noise)
        return replace(
            base,
            stage_pretrain=self.pretrain,
            stage_auxiliary=self.auxiliary,
            stage_target=self.target,
            target_data=replace(
                base.target_data,
                pattern=pattern,
                alias_strength=self.alias_strength,
                frames_per_sequence=self.target_frames,
                **noise,
            ),
            auxiliary_data=replace(
                base.auxiliary_data,
                pattern=pattern,
                alias_strength=self.alias_strength,
                **noise,
            ),
            pretrain_data=replace(base.pretrain_data, **noise),
        )


@dataclass
class Score:
    """Goal-by-goal outcome for one candidate."""

    candidate: str
    seeds: tuple[int, ...]
    baseline_vehicle_zero_seeds: int  # seeds where every baseline scores 0.00
    ours_vehicle_half_seeds: int  # seeds where every ours cell scores >= 0.50
    joint_seeds: int  # seeds satisfying both at once
    strategy_mean_f1: dict[str, float]  # label -> mean macro-F1 over seeds
    f1_ordering_ok: bool  # s4 > s2 > s1 on DR cells and strategy means
    maintain_ordering_ok: bool  # with-M mean macro-F1 > without-M
    wall_clock_seconds: float
    n_seeds_required: int = 4

    @property
    def passed(self) -> bool:
        return (
            self.joint_seeds >= self.n_seeds_required
            and self.f1_ordering_ok
            and self.maintain_ordering_ok
        )

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate,
            "seeds": list(self.seeds),
            "baseline_vehicle_zero_seeds": self.baseline_vehicle_zero_seeds,
            "ours_vehicle_half_seeds": self.ours_vehicle_half_seeds,
            "joint_seeds": self.joint_seeds,
            "strategy_mean_f1": {k: float(v) for k, v in self.strategy_mean_f1.items()},
            "f1_ordering_ok": self.f1_ordering_ok,
            "maintain_ordering_ok": self.maintain_ordering_ok,
            "wall_clock_seconds": self.wall_clock_seconds,
            "passed": self.passed,
        }


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def score_results(results: list[ExperimentResult], elapsed: float, name: str) -> Score:
    """Evaluate the calibration goals on one finished cell list."""
    by_label = {r.label: r for r in results}
    seeds = tuple(sr.seed for sr in results[0].seed_results)
    baseline_labels = ["Baseline 0 (DR)", "Baseline 1 (WL)", "Baseline 2 (RS)"]
    ours_labels = ["Ours (DR)", "Ours (WL)", "Ours (RS)"]

    def vehicle_by_seed(label: str) -> list[float]:
        accs = by_label[label].per_seed_class_accuracy("Vehicle")
        if any(a is None for a in accs):
            raise ValueError(f"{label}: a seed never tested a Vehicle sequence")
        return [float(a) for a in accs]

    baseline_zero = ours_half = joint = 0
    for i in range(len(seeds)):
        zero = all(vehicle_by_seed(l)[i] == 0.0 for l in baseline_labels)
        half = all(vehicle_by_seed(l)[i] >= 0.5 for l in ours_labels)
        baseline_zero += zero
        ours_half += half
        joint += zero and half

    strategy_mean_f1 = {
        "strategy_1": by_label["Target only (DR)"].mean_macro_f1,
        "strategy_2": _mean(by_label[l].mean_macro_f1 for l in baseline_labels),
        "strategy_4": _mean(by_label[l].mean_macro_f1 for l in ours_labels),
        "ours_dr": by_label["Ours (DR)"].mean_macro_f1,
        "baseline_dr": by_label["Baseline 0 (DR)"].mean_macro_f1,
        "ours_no_maintain": by_label["Ours (DR) w/o M"].mean_macro_f1,
    }
    f1_ordering_ok = (
        strategy_mean_f1["ours_dr"] > strategy_mean_f1["baseline_dr"] > strategy_mean_f1["strategy_1"]
        and strategy_mean_f1["strategy_4"] > strategy_mean_f1["strategy_2"] > strategy_mean_f1["strategy_1"]
    )
    maintain_ordering_ok = strategy_mean_f1["ours_dr"] > strategy_mean_f1["ours_no_maintain"]
    return Score(
        candidate=name,
        seeds=seeds,
        baseline_vehicle_zero_seeds=baseline_zero,
        ours_vehicle_half_seeds=ours_half,
        joint_seeds=joint,
        strategy_mean_f1=strategy_mean_f1,
        f1_ordering_ok=f1_ordering_ok,
        maintain_ordering_ok=maintain_ordering_ok,
        wall_clock_seconds=elapsed,
        n_seeds_required=max(len(seeds) - 1, 1),
    )


def score_candidate(candidate: Candidate, seeds: tuple[int, ...]) -> Score:
    config = candidate.apply(ExperimentConfig(seeds=seeds))
    t0 = time.perf_counter()
    results = run_cells(config, list(SCORING_CELLS))
    return score_results(results, time.perf_counter() - t0, candidate.name)


def default_candidates() -> list[Candidate]:
    """The documented search lattice, in the order it was explored.

    Each entry other than the last preserves a failure mode the search
    had to move away from; re-running the list reproduces the evidence
    behind the shipped defaults (the final entry).
    """
    return [
        # heavy-ball momentum at lr 0.05 diverges on some seeds, so every
        # pretrain-sharing strategy collapses and strategy 1 wins
        Candidate(
            "momentum-heavy-long-frames",
            vehicle_alias=0.35,
            target_frames=(30, 90),
            pretrain=StageTrainConfig(epochs=3, learning_rate=0.05, momentum=0.9),
            auxiliary=StageTrainConfig(epochs=6, learning_rate=0.05, momentum=0.9),
            target=StageTrainConfig(epochs=10, learning_rate=0.02, momentum=0.9),
        ),
        # stable, but long sequences make the majority classes learnable
        # from scratch: strategy 2 exactly ties strategy 1
        Candidate(
            "sgd-long-frames",
            vehicle_alias=0.50,
            target_frames=(30, 90),
            target=StageTrainConfig(epochs=6, learning_rate=0.01),
        ),
        # data-starved target stage separates the strategies, but at
        # vehicle_alias 0.50 resampled/weighted baselines occasionally
        # recover the held-out Vehicle sub-pattern through the shared base
        Candidate("sgd-short-frames-va50", vehicle_alias=0.50),
        # at 0.60 the plain-mode final stage forgets Vehicle on one seed
        Candidate("sgd-short-frames-va60", vehicle_alias=0.60),
        # the shipped defaults: every goal on every probed seed
        Candidate("shipped-defaults"),
    ]


def run_search(
    candidates: list[Candidate], seeds: tuple[int, ...], out: Path | None = None
) -> list[Score]:
    scores = []
    for candidate in candidates:
        score = score_candidate(candidate, seeds)
        scores.append(score)
        flag = "PASS" if score.passed else "fail"
        print(
            f"[{flag}] {score.candidate}: joint {score.joint_seeds}/{len(seeds)} seeds, "
            f"f1 order {score.f1_ordering_ok}, maintain {score.maintain_ordering_ok}, "
            f"{score.wall_clock_seconds:.0f}s"
        )
    if out is not None:
        doc = {"seeds": list(seeds), "scores": [s.to_dict() for s in scores]}
        Path(out).write_text(yaml.safe_dump(doc, sort_keys=False))
        print(f"wrote: {out}")
    return scores


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scenetransfer-calibration", description=__doc__.splitlines()[0]
    )
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument(
        "--screen", action="store_true", help="use only the first two seeds (fast pass)"
    )
    parser.add_argument("--out", type=Path, default=None, help="score report path (.yaml)")
    args = parser.parse_args(argv)
    seeds = tuple(args.seeds[:2] if args.screen else args.seeds)
    scores = run_search(default_candidates(), seeds, args.out)
    return 0 if any(s.passed for s in scores) else 1


if __name__ == "__main__":
    sys.exit(main())
