import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenetransfer import taxonomy
from scenetransfer.dataset import (
    Frame,
    SceneDataset,
    Sequence,
    default_auxiliary_config,
    default_target_config,
    generate_auxiliary,
    generate_target,
)
from scenetransfer.taxonomy import (
    DROP,
    ClassMergeMap,
    MergeMapError,
    apply_merge_map,
    default_aux_merge_map,
    identity_merge_map,
    imbalance_ratio,
    load_merge_map,
    packaged_merge_map_path,
    save_merge_map,
)


def toy_dataset(labels, class_names):
    img = np.full((2, 2, 3), 0.25)
    seqs = tuple(
        Sequence(f"s{i}", label, (Frame(img, 0), Frame(img, 1)))
        for i, label in enumerate(labels)
    )
    return SceneDataset(tuple(class_names), seqs, 2, 2)


# ------------------------------------------------------------- merge map


def test_merge_map_validation():
    with pytest.raises(MergeMapError, match="non-empty"):
        ClassMergeMap((), {})
    with pytest.raises(MergeMapError, match="unknown target"):
        ClassMergeMap(("a",), {"x": "b"})
    with pytest.raises(MergeMapError, match="no source class maps"):
        ClassMergeMap(("a", "b"), {"x": "a"})
    with pytest.raises(MergeMapError, match="duplicate"):
        ClassMergeMap(("a", "a"), {"x": "a"})
    with pytest.raises(MergeMapError, match="cannot be a target"):
        ClassMergeMap(("a", DROP), {"x": "a", "y": DROP})


def test_apply_merges_and_drops():
    data = toy_dataset(["x", "y", "z", "x"], ["x", "y", "z"])
    mm = ClassMergeMap(("keep",), {"x": "keep", "y": "keep", "z": DROP})
    merged = apply_merge_map(data, mm)
    assert merged.class_names == ("keep",)
    assert [s.seq_id for s in merged.sequences] == ["s0", "s1", "s3"]
    assert all(s.label == "keep" for s in merged.sequences)


def test_apply_preserves_frames_exactly():
    data = toy_dataset(["x", "y"], ["x", "y"])
    mm = ClassMergeMap(("m",), {"x": "m", "y": "m"})
    merged = apply_merge_map(data, mm)
    for before, after in zip(data.sequences, merged.sequences):
        assert before.frames is after.frames or all(
            a is b for a, b in zip(before.frames, after.frames)
        )


def test_apply_requires_total_coverage():
    data = toy_dataset(["x", "y"], ["x", "y"])
    mm = ClassMergeMap(("m",), {"x": "m"})
    with pytest.raises(MergeMapError, match="'y'"):
        apply_merge_map(data, mm)


def test_identity_map_only_normalizes_class_order():
    data = toy_dataset(["b", "a"], ["b", "a"])
    out = apply_merge_map(data, identity_merge_map(["a", "b"]))
    assert out.class_names == ("a", "b")
    assert [s.seq_id for s in out.sequences] == ["s0", "s1"]
    assert [s.label for s in out.sequences] == ["b", "a"]


def test_merge_is_idempotent_under_induced_identity():
    data = toy_dataset(["x", "y", "z"], ["x", "y", "z"])
    mm = ClassMergeMap(("m", "n"), {"x": "m", "y": "n", "z": DROP})
    once = apply_merge_map(data, mm)
    twice = apply_merge_map(once, identity_merge_map(once.class_names))
    assert twice.class_names == once.class_names
    assert [s.seq_id for s in twice.sequences] == [s.seq_id for s in once.sequences]
    assert [s.label for s in twice.sequences] == [s.label for s in once.sequences]


@given(st.lists(st.sampled_from(["p", "q", "r", "s"]), min_size=1, max_size=30))
@settings(max_examples=40, deadline=None)
def test_merge_conserves_sequences(labels):
    # kept + dropped partitions the input; nothing is duplicated or invented
    data = toy_dataset(labels, ["p", "q", "r", "s"])
    mm = ClassMergeMap(("one", "two"), {"p": "one", "q": "two", "r": "one", "s": DROP})
    merged = apply_merge_map(data, mm)
    dropped = sum(1 for lbl in labels if lbl == "s")
    assert len(merged.sequences) == len(labels) - dropped
    before_ids = [s.seq_id for s in data.sequences if s.label != "s"]
    assert [s.seq_id for s in merged.sequences] == before_ids


# ------------------------------------------------------- imbalance ratio


def test_imbalance_ratio_sequence_and_frame():
    img = np.zeros((2, 2, 3))
    seqs = (
        Sequence("a0", "a", (Frame(img, 0), Frame(img, 1), Frame(img, 2))),
        Sequence("a1", "a", (Frame(img, 0),)),
        Sequence("b0", "b", (Frame(img, 0),)),
    )
    data = SceneDataset(("a", "b"), seqs, 2, 2)
    assert imbalance_ratio(data, "sequence") == 2.0
    assert imbalance_ratio(data, "frame") == 4.0


def test_imbalance_ratio_default_target_is_32():
    data = generate_target(default_target_config(seed=1))
    assert imbalance_ratio(data, "sequence") == 32.0  # 64 Home / 2 Vehicle


def test_imbalance_ratio_rejects_empty_class():
    data = toy_dataset(["x"], ["x", "y"])
    with pytest.raises(ValueError, match="'y'"):
        imbalance_ratio(data)


def test_imbalance_ratio_rejects_bad_granularity():
    data = toy_dataset(["x"], ["x"])
    with pytest.raises(ValueError, match="granularity"):
        imbalance_ratio(data, "pixel")


def test_default_merge_drops_ratio_to_about_8():
    aux = generate_auxiliary(default_auxiliary_config(seed=2))
    assert imbalance_ratio(aux, "sequence") > 5.0  # source set itself imbalanced
    merged = apply_merge_map(aux, default_aux_merge_map())
    ratio = imbalance_ratio(merged, "sequence")
    assert 7.0 <= ratio <= 9.0
    assert merged.class_names == ("Vehicle", "Home", "Restaurant", "Workplace")


def test_default_map_covers_twenty_sources():
    mm = default_aux_merge_map()
    assert len(mm.mapping) == 20
    assert sum(1 for t in mm.mapping.values() if t == DROP) == 8
    assert len(mm.kept_sources()) == 12


# ----------------------------------------------------------------- files


def test_merge_map_file_round_trip(tmp_path):
    mm = default_aux_merge_map()
    path = tmp_path / "map.yaml"
    save_merge_map(mm, path)
    assert load_merge_map(path) == mm


def test_merge_map_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("targets: [a]\nmap: {x: a}\nbogus: 1\n")
    with pytest.raises(MergeMapError, match="bogus"):
        load_merge_map(path)


def test_merge_map_file_rejects_missing_keys(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("targets: [a]\n")
    with pytest.raises(MergeMapError, match="map"):
        load_merge_map(path)


def test_shipped_default_map_matches_code():
    assert load_merge_map(packaged_merge_map_path()) == default_aux_merge_map()


def test_shipped_template_is_loadable():
    mm = load_merge_map(packaged_merge_map_path("merge_map_template.yaml"))
    assert mm.targets == ("Vehicle", "Home", "Restaurant", "Workplace")
    assert DROP in mm.mapping.values()
