import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenetransfer.dataset import Frame, SceneDataset, Sequence
from scenetransfer.sampling import (
    BatchStream,
    ClassWeights,
    balanced_batches,
    inverse_frequency_weights,
    shuffled_batches,
)


def dataset_with_frame_counts(counts):
    img = np.full((2, 2, 3), 0.5)
    names = tuple(f"c{i}" for i in range(len(counts)))
    seqs = tuple(
        Sequence(f"s{i}", names[i], tuple(Frame(img, j) for j in range(n)))
        for i, n in enumerate(counts)
    )
    return SceneDataset(names, seqs, 2, 2)


# ---------------------------------------------------------------- weights


def test_inverse_frequency_hand_case():
    # frame counts from the default composition percentages of 5,351 frames
    w = inverse_frequency_weights([107, 3585, 728, 931]).weights
    assert np.allclose(w, [3.0964, 0.0924, 0.4551, 0.3559], atol=5e-4)
    assert w.sum() == pytest.approx(4.0, abs=1e-12)


def test_weights_mean_one_after_normalization():
    rng = np.random.default_rng(4)
    for _ in range(50):
        counts = rng.integers(1, 10_000, size=rng.integers(1, 12))
        cw = inverse_frequency_weights(counts)
        assert cw.weights.mean() == pytest.approx(1.0, abs=1e-12)
        assert cw.weights.sum() == pytest.approx(len(counts), abs=1e-9)


@given(st.lists(st.integers(1, 10**6), min_size=1, max_size=10), st.integers(1, 1000))
@settings(max_examples=40, deadline=None)
def test_weights_invariant_under_count_scaling(counts, factor):
    # multiplying every count by a constant leaves the weights unchanged
    base = inverse_frequency_weights(counts).weights
    scaled = inverse_frequency_weights([c * factor for c in counts]).weights
    assert np.allclose(base, scaled, rtol=1e-12)


def test_weights_order_rare_class_heaviest():
    w = inverse_frequency_weights([100, 1, 10]).weights
    assert w[1] > w[2] > w[0]


def test_weights_reject_bad_counts():
    with pytest.raises(ValueError):
        inverse_frequency_weights([])
    with pytest.raises(ValueError):
        inverse_frequency_weights([3, 0])
    with pytest.raises(ValueError):
        inverse_frequency_weights([1.5, 2.5])


def test_class_weights_rejects_nonpositive():
    with pytest.raises(ValueError):
        ClassWeights(np.array([1.0, 0.0]), 1.0)


# ---------------------------------------------------------------- batches


def test_shuffled_batches_cover_every_frame_once():
    data = dataset_with_frame_counts([5, 3, 9])
    batches = shuffled_batches(data, 4, seed=0)
    flat = np.concatenate(batches)
    assert sorted(flat.tolist()) == list(range(17))
    assert [len(b) for b in batches] == [4, 4, 4, 4, 1]


def test_shuffled_batches_seeded():
    data = dataset_with_frame_counts([8])
    assert [b.tolist() for b in shuffled_batches(data, 3, seed=5)] == [
        b.tolist() for b in shuffled_batches(data, 3, seed=5)
    ]
    assert [b.tolist() for b in shuffled_batches(data, 3, seed=5)] != [
        b.tolist() for b in shuffled_batches(data, 3, seed=6)
    ]


def test_balanced_batches_shapes_and_validity():
    data = dataset_with_frame_counts([50, 2, 10])
    labels = data.frame_labels()
    batches = balanced_batches(data, 8, 12, seed=1)
    assert len(batches) == 12
    for batch in batches:
        assert len(batch) == 8
        assert ((batch >= 0) & (batch < 62)).all()
        assert set(labels[batch].tolist()) <= {0, 1, 2}


def test_balanced_batches_equalizes_class_frequency():
    # 100k draws from a 50:2:10 frame imbalance -> each class near 1/3
    data = dataset_with_frame_counts([50, 2, 10])
    labels = data.frame_labels()
    batches = balanced_batches(data, 100, 1000, seed=3)
    drawn = labels[np.concatenate(batches)]
    freqs = np.bincount(drawn, minlength=3) / drawn.size
    assert np.all(np.abs(freqs - 1 / 3) < 0.01)


def test_balanced_batches_uniform_within_class():
    data = dataset_with_frame_counts([2, 40])
    labels = data.frame_labels()
    batches = balanced_batches(data, 100, 400, seed=7)
    drawn = np.concatenate(batches)
    first_class = drawn[labels[drawn] == 0]
    share = (first_class == 0).mean()
    assert abs(share - 0.5) < 0.02  # the two frames of class 0 drawn evenly


def test_balanced_batches_rejects_empty_class():
    data = dataset_with_frame_counts([4, 4])
    empty_sub = data.subset(["s0"])  # class c1 now has no frames
    with pytest.raises(ValueError, match="c1"):
        balanced_batches(empty_sub, 4, 2, seed=0)


def test_batch_size_validation():
    data = dataset_with_frame_counts([4])
    with pytest.raises(ValueError):
        shuffled_batches(data, 0, seed=0)
    with pytest.raises(ValueError):
        balanced_batches(data, 2, 0, seed=0)


# ----------------------------------------------------------- batch stream


def test_batch_stream_is_reproducible_across_epochs():
    data = dataset_with_frame_counts([6, 6])

    def run(seed):
        stream = BatchStream(data, 4, "sequential-shuffle", seed)
        return [b.tolist() for _ in range(3) for b in stream.epoch()]

    assert run(9) == run(9)
    assert run(9) != run(10)


def test_batch_stream_epochs_differ():
    data = dataset_with_frame_counts([16])
    stream = BatchStream(data, 4, "sequential-shuffle", 2)
    first = [b.tolist() for b in stream.epoch()]
    second = [b.tolist() for b in stream.epoch()]
    assert first != second


def test_batch_stream_balanced_mode_batch_count():
    data = dataset_with_frame_counts([10, 3])
    stream = BatchStream(data, 4, "class-balanced", 0)
    assert len(stream.epoch()) == 4  # ceil(13 / 4)


def test_batch_stream_rejects_unknown_mode():
    data = dataset_with_frame_counts([4])
    with pytest.raises(ValueError, match="mode"):
        BatchStream(data, 2, "roulette", 0)
