"""Semantic class filtering and merging.

A ClassMergeMap sends each source class either to one target class or to the
DROP sentinel. Applying it relabels kept sequences, discards dropped ones,
and leaves frame contents untouched, which is what lets a classifier trained
on the merged set be kept for the target set: the class lists agree by name.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .dataset import AUX_SOURCE_TO_TARGET, TARGET_CLASSES, SceneDataset

DROP = "DROP"


class MergeMapError(ValueError):
    """A merge map is malformed or does not cover a dataset."""


@dataclass(frozen=True)
class ClassMergeMap:
    targets: tuple[str, ...]
    mapping: dict[str, str]  # source -> target name or DROP

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.targets:
            raise MergeMapError("target class list must be non-empty")
        if len(set(self.targets)) != len(self.targets):
            raise MergeMapError(f"duplicate target classes in {list(self.targets)}")
        if DROP in self.targets:
            raise MergeMapError(f"{DROP!r} cannot be a target class name")
        allowed = set(self.targets) | {DROP}
        for source, target in self.mapping.items():
            if target not in allowed:
                raise MergeMapError(
                    f"source {source!r} maps to unknown target {target!r}; "
                    f"targets are {list(self.targets)} (or {DROP!r})"
                )
        reached = {t for t in self.mapping.values() if t != DROP}
        orphans = set(self.targets) - reached
        if orphans:
            raise MergeMapError(
                f"no source class maps to target(s) {sorted(orphans)}"
            )

    def kept_sources(self) -> list[str]:
        return [s for s, t in self.mapping.items() if t != DROP]


def identity_merge_map(class_names) -> ClassMergeMap:
    """Each class maps to itself; applying it only normalizes class order."""
    names = tuple(class_names)
    return ClassMergeMap(targets=names, mapping={n: n for n in names})


def default_aux_merge_map() -> ClassMergeMap:
    """The shipped 20-source-class map onto the four target classes."""
    mapping = {
        source: (target if target is not None else DROP)
        for source, target in AUX_SOURCE_TO_TARGET.items()
    }
    return ClassMergeMap(targets=TARGET_CLASSES, mapping=mapping)


def apply_merge_map(dataset: SceneDataset, merge_map: ClassMergeMap) -> SceneDataset:
    """Relabel kept sequences, drop the rest; frames are shared, not copied."""
    unmapped = [c for c in dataset.class_names if c not in merge_map.mapping]
    if unmapped:
        raise MergeMapError(
            f"merge map does not cover dataset class(es) {unmapped}; "
            f"mapped sources are {sorted(merge_map.mapping)}"
        )
    from .dataset import Sequence  # local import keeps module load cheap

    kept = []
    for seq in dataset.sequences:
        target = merge_map.mapping[seq.label]
        if target == DROP:
            continue
        if target == seq.label:
            kept.append(seq)
        else:
            kept.append(Sequence(seq_id=seq.seq_id, label=target, frames=seq.frames))
    return SceneDataset(
        class_names=merge_map.targets,
        sequences=tuple(kept),
        height=dataset.height,
        width=dataset.width,
        provenance=f"{dataset.provenance}|merged[{len(kept)}/{len(dataset.sequences)}]",
    )


def imbalance_ratio(dataset: SceneDataset, granularity: str = "sequence") -> float:
    """max/min per-class count at 'sequence' or 'frame' granularity."""
    if granularity == "sequence":
        counts = dataset.sequence_counts()
    elif granularity == "frame":
        counts = dataset.frame_counts()
    else:
        raise ValueError(
            f"granularity must be 'sequence' or 'frame', got {granularity!r}"
        )
    if (counts == 0).any():
        empty = [n for n, c in zip(dataset.class_names, counts) if c == 0]
        raise ValueError(f"imbalance ratio undefined: class(es) {empty} have no members")
    return float(counts.max() / counts.min())


# ----------------------------------------------------------------- files


def save_merge_map(merge_map: ClassMergeMap, path) -> None:
    doc = {"targets": list(merge_map.targets), "map": dict(merge_map.mapping)}
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def load_merge_map(path) -> ClassMergeMap:
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict):
        raise MergeMapError(f"{path}: merge map file must be a mapping")
    unknown = set(doc) - {"targets", "map"}
    if unknown:
        raise MergeMapError(
            f"{path}: unknown key(s) {sorted(unknown)}; only 'targets' and 'map' are allowed"
        )
    missing = {"targets", "map"} - set(doc)
    if missing:
        raise MergeMapError(f"{path}: missing key(s) {sorted(missing)}")
    if not isinstance(doc["map"], dict):
        raise MergeMapError(f"{path}: 'map' must be a mapping of source -> target")
    return ClassMergeMap(
        targets=tuple(str(t) for t in doc["targets"]),
        mapping={str(s): str(t) for s, t in doc["map"].items()},
    )


def packaged_merge_map_path(name: str = "aux_merge_default.yaml") -> Path:
    """Path of a merge map shipped inside the package's data directory."""
    return Path(resources.files("scenetransfer").joinpath("data", name))
