"""Tests for the default-knob calibration search."""

import yaml

from scenetransfer.calibration import (
    SCORING_CELLS,
    Candidate,
    default_candidates,
    score_results,
)
from scenetransfer.dataset import (
    default_auxiliary_config,
    default_pretrain_config,
    default_target_config,
)
from scenetransfer.pipeline import (
    DEFAULT_AUXILIARY_STAGE,
    DEFAULT_PRETRAIN_STAGE,
    DEFAULT_TARGET_STAGE,
    ExperimentConfig,
    StageTrainConfig,
    run_cells,
)


def test_candidate_defaults_mirror_shipped_defaults():
    # the no-override candidate must score exactly what users get
    applied = Candidate("shipped-defaults").apply(ExperimentConfig())
    assert applied == ExperimentConfig()
    assert applied.stage_pretrain == DEFAULT_PRETRAIN_STAGE
    assert applied.stage_auxiliary == DEFAULT_AUXILIARY_STAGE
    assert applied.stage_target == DEFAULT_TARGET_STAGE


def test_candidate_overrides_touch_both_pattern_generators():
    cand = Candidate("probe", vehicle_alias=0.4, alias_strength=0.7,
                     sequence_noise=0.1, frame_noise=0.08, target_frames=(3, 9))
    applied = cand.apply(ExperimentConfig())
    assert applied.target_data.pattern.vehicle_alias == 0.4
    assert applied.auxiliary_data.pattern.vehicle_alias == 0.4
    assert applied.target_data.alias_strength == 0.7
    assert applied.auxiliary_data.alias_strength == 0.7
    assert applied.target_data.frames_per_sequence == (3, 9)
    assert applied.auxiliary_data.frames_per_sequence == (10, 30)
    assert applied.pretrain_data.sequence_noise == 0.1


def test_default_lattice_ends_with_shipped_defaults():
    candidates = default_candidates()
    names = [c.name for c in candidates]
    assert len(set(names)) == len(names)
    assert candidates[-1] == Candidate("shipped-defaults")


def test_score_results_on_a_tiny_run():
    config = ExperimentConfig(
        k=3,
        seeds=(0,),
        stage_pretrain=StageTrainConfig(epochs=1, learning_rate=0.05),
        stage_auxiliary=StageTrainConfig(epochs=1, learning_rate=0.05),
        stage_target=StageTrainConfig(epochs=1, learning_rate=0.01),
        target_data=default_target_config(
            class_counts={"Vehicle": 2, "Home": 8, "Restaurant": 4, "Workplace": 3},
            frames_per_sequence=(4, 8),
        ),
        auxiliary_data=default_auxiliary_config(frames_per_sequence=(3, 5)),
        pretrain_data=default_pretrain_config(
            class_counts={f"generic_{i:02d}": 3 for i in range(6)},
            frames_per_sequence=(3, 5),
        ),
    )
    results = run_cells(config, list(SCORING_CELLS))
    score = score_results(results, elapsed=1.0, name="tiny")
    assert score.seeds == (0,)
    assert 0 <= score.baseline_vehicle_zero_seeds <= 1
    assert 0 <= score.ours_vehicle_half_seeds <= 1
    assert score.joint_seeds <= min(score.baseline_vehicle_zero_seeds, score.ours_vehicle_half_seeds)
    assert set(score.strategy_mean_f1) == {
        "strategy_1", "strategy_2", "strategy_4", "ours_dr", "baseline_dr", "ours_no_maintain",
    }
    doc = yaml.safe_load(yaml.safe_dump(score.to_dict()))
    assert doc["candidate"] == "tiny"
    assert isinstance(doc["passed"], bool)
