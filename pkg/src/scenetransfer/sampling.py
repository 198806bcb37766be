"""Imbalance countermeasures: inverse-frequency class weights and batch
streams (plain shuffled epochs or class-balanced resampling).

Class-balanced draws pick a class uniformly at random, then a member frame
uniformly within that class with replacement, so every class has the same
probability of appearing in a mini-batch slot regardless of its size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SceneDataset

SAMPLER_MODES = ("sequential-shuffle", "class-balanced")


@dataclass(frozen=True)
class ClassWeights:
    """Per-class weights aligned with the class list, rescaled to mean 1."""

    weights: np.ndarray
    scale: float  # the normalization constant applied to the raw 1/n_i

    def __post_init__(self) -> None:
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise ValueError(f"weights must be a non-empty vector, got shape {self.weights.shape}")
        if not (self.weights > 0.0).all():
            raise ValueError("class weights must be strictly positive")


def inverse_frequency_weights(counts) -> ClassWeights:
    """w_i proportional to 1/n_i, rescaled so the weights sum to N."""
    arr = np.asarray(counts)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"counts must be a non-empty vector, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer) or (arr < 1).any():
        raise ValueError(f"counts must be positive integers, got {arr.tolist()}")
    raw = 1.0 / arr.astype(np.float64)
    scale = float(arr.size / raw.sum())
    return ClassWeights(weights=raw * scale, scale=scale)


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def shuffled_batches(dataset: SceneDataset, batch_size: int, seed) -> list[np.ndarray]:
    """One epoch of frame indices: a seeded permutation cut into batches."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = dataset.frame_count
    if n == 0:
        raise ValueError("dataset has no frames")
    perm = _as_rng(seed).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def balanced_batches(
    dataset: SceneDataset, batch_size: int, n_batches: int, seed
) -> list[np.ndarray]:
    """Class-balanced batches with replacement: uniform class, then uniform member."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if n_batches < 1:
        raise ValueError(f"n_batches must be >= 1, got {n_batches}")
    labels = dataset.frame_labels()
    if labels.size == 0:
        raise ValueError("dataset has no frames")
    n_classes = len(dataset.class_names)
    members = [np.flatnonzero(labels == c) for c in range(n_classes)]
    empty = [dataset.class_names[c] for c in range(n_classes) if members[c].size == 0]
    if empty:
        raise ValueError(f"class-balanced sampling impossible: {empty} have no frames")
    rng = _as_rng(seed)
    total = batch_size * n_batches
    classes = rng.integers(0, n_classes, size=total)
    sizes = np.array([m.size for m in members])
    positions = rng.integers(0, sizes[classes])
    flat = np.array([members[c][p] for c, p in zip(classes, positions)])
    return [flat[i : i + batch_size] for i in range(0, total, batch_size)]


class BatchStream:
    """Seeded stream of index batches over a dataset, one epoch at a time.

    The generator state persists across epochs, so epoch contents differ but
    the whole stream is reproducible from (dataset, batch_size, mode, seed).
    """

    def __init__(self, dataset: SceneDataset, batch_size: int, mode: str, seed: int):
        if mode not in SAMPLER_MODES:
            raise ValueError(f"mode must be one of {SAMPLER_MODES}, got {mode!r}")
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.mode = mode
        self._rng = np.random.default_rng(seed)

    def epoch(self) -> list[np.ndarray]:
        if self.mode == "sequential-shuffle":
            return shuffled_batches(self.dataset, self.batch_size, self._rng)
        n_batches = -(-self.dataset.frame_count // self.batch_size)  # ceil div
        return balanced_batches(self.dataset, self.batch_size, n_batches, self._rng)
