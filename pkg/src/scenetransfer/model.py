"""Backbone networks split into a feature extractor and a final affine
classifier, plus the transfer operations between training stages.

The split is the point: between stages the classifier is either dropped
(fresh seeded head over bit-identical extractor weights) or maintained
(kept verbatim, legal only when the class lists agree by name). Training
never freezes anything; every parameter receives updates in every stage
that trains.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import numerics
from .dataset import SceneDataset
from .numerics import (
    LayerGradients,
    OptimizerState,
    ShapeError,
    Tensor,
    sgd_step,
    weighted_softmax_cross_entropy,
)
from .sampling import SAMPLER_MODES, BatchStream, inverse_frequency_weights

CHECKPOINT_MAGIC = b"NNCK"
CHECKPOINT_VERSION = 1

LOSS_MODES = ("plain", "weighted")


class CheckpointError(ValueError):
    """A checkpoint file is malformed."""


class ClassMismatchError(ValueError):
    """Class lists that must agree do not."""


# ------------------------------------------------------------------ arch


@dataclass(frozen=True)
class ConvSpec:
    filters: int = 8
    kernel: int = 3
    pool: int = 2  # non-overlapping average-pool window

    def __post_init__(self) -> None:
        if self.filters < 1 or self.kernel < 1 or self.pool < 1:
            raise ValueError(f"conv spec fields must be positive: {self}")


@dataclass(frozen=True)
class ArchConfig:
    height: int = 16
    width: int = 16
    hidden_dims: tuple[int, ...] = (32,)
    feature_dim: int = 16
    conv: ConvSpec | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.height < 1 or self.width < 1:
            raise ValueError(f"bad input size {self.height}x{self.width}")
        if any(d < 1 for d in self.hidden_dims):
            raise ValueError(f"hidden layer widths must be positive, got {self.hidden_dims}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be positive, got {self.feature_dim}")


DEFAULT_ARCH = ArchConfig()


def _arch_to_dict(arch: ArchConfig) -> dict:
    return {
        "height": arch.height,
        "width": arch.width,
        "hidden_dims": list(arch.hidden_dims),
        "feature_dim": arch.feature_dim,
        "conv": None
        if arch.conv is None
        else {"filters": arch.conv.filters, "kernel": arch.conv.kernel, "pool": arch.conv.pool},
    }


def _arch_from_dict(doc: dict) -> ArchConfig:
    conv = doc.get("conv")
    return ArchConfig(
        height=doc["height"],
        width=doc["width"],
        hidden_dims=tuple(doc["hidden_dims"]),
        feature_dim=doc["feature_dim"],
        conv=None if conv is None else ConvSpec(**conv),
    )


# ---------------------------------------------------------------- layers


class FlattenLayer:
    def __init__(self, name: str):
        self.name = name

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def set_parameters(self, params: dict[str, Tensor]) -> None:
        pass

    def apply(self, x: Tensor):
        shape = x.shape
        out = x.reshape(shape[0], -1)

        def backward(upstream: Tensor) -> LayerGradients:
            return LayerGradients({}, numerics.as_tensor(upstream).reshape(shape))

        return out, backward


class ReluLayer:
    def __init__(self, name: str):
        self.name = name

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def set_parameters(self, params: dict[str, Tensor]) -> None:
        pass

    def apply(self, x: Tensor):
        return numerics.relu(x)


class AffineLayer:
    def __init__(self, name: str, weight: Tensor, bias: Tensor):
        self.name = name
        self.weight = weight
        self.bias = bias

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def set_parameters(self, params: dict[str, Tensor]) -> None:
        self.weight = params["weight"]
        self.bias = params["bias"]

    def apply(self, x: Tensor):
        return numerics.affine(x, self.weight, self.bias)


class ConvLayer:
    """Valid-padding stride-1 2-D convolution over (B, H, W, C) inputs."""

    def __init__(self, name: str, kernel: Tensor, bias: Tensor):
        self.name = name
        self.kernel = kernel  # (k, k, C_in, F)
        self.bias = bias  # (F,)

    def parameters(self) -> dict[str, Tensor]:
        return {"kernel": self.kernel, "bias": self.bias}

    def set_parameters(self, params: dict[str, Tensor]) -> None:
        self.kernel = params["kernel"]
        self.bias = params["bias"]

    def apply(self, x: Tensor):
        k = self.kernel.shape[0]
        if x.ndim != 4 or x.shape[3] != self.kernel.shape[2]:
            raise ShapeError(
                f"conv: input shape {x.shape} does not match kernel {self.kernel.shape}"
            )
        if x.shape[1] < k or x.shape[2] < k:
            raise ShapeError(f"conv: input {x.shape} smaller than kernel size {k}")
        windows = sliding_window_view(x, (k, k), axis=(1, 2))  # (B, oh, ow, C, k, k)
        out = np.einsum("bijcuv,uvcf->bijf", windows, self.kernel) + self.bias
        kernel = self.kernel
        oh, ow = out.shape[1], out.shape[2]

        def backward(upstream: Tensor) -> LayerGradients:
            up = numerics.as_tensor(upstream)
            if up.shape != out.shape:
                raise ShapeError(
                    f"conv backward: upstream shape {up.shape} != output {out.shape}"
                )
            dbias = up.sum(axis=(0, 1, 2))
            dkernel = np.einsum("bijcuv,bijf->uvcf", windows, up)
            dx = np.zeros_like(x)
            for u in range(k):
                for v in range(k):
                    dx[:, u : u + oh, v : v + ow, :] += np.einsum(
                        "bijf,cf->bijc", up, kernel[u, v]
                    )
            return LayerGradients({"kernel": dkernel, "bias": dbias}, dx)

        return out, backward


class AvgPoolLayer:
    """Non-overlapping p x p average pooling over (B, h, w, F)."""

    def __init__(self, name: str, pool: int):
        self.name = name
        self.pool = pool

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def set_parameters(self, params: dict[str, Tensor]) -> None:
        pass

    def apply(self, x: Tensor):
        p = self.pool
        b, h, w, f = x.shape
        if h % p or w % p:
            raise ShapeError(f"avg-pool: window {p} does not divide input {x.shape}")
        out = x.reshape(b, h // p, p, w // p, p, f).mean(axis=(2, 4))

        def backward(upstream: Tensor) -> LayerGradients:
            up = numerics.as_tensor(upstream)
            if up.shape != out.shape:
                raise ShapeError(
                    f"avg-pool backward: upstream shape {up.shape} != output {out.shape}"
                )
            spread = np.broadcast_to(
                (up / (p * p))[:, :, None, :, None, :], (b, h // p, p, w // p, p, f)
            )
            return LayerGradients({}, spread.reshape(b, h, w, f))

        return out, backward


# --------------------------------------------------------------- network


@dataclass
class FeatureExtractor:
    """f: image batch (B, H, W, 3) -> feature batch (B, C)."""

    input_hw: tuple[int, int]
    layers: list
    feature_dim: int

    def _check_batch(self, batch) -> Tensor:
        x = numerics.as_tensor(batch)
        expected = (self.input_hw[0], self.input_hw[1], 3)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(
                f"batch shape {x.shape} does not match expected (B, {expected[0]}, "
                f"{expected[1]}, 3)"
            )
        return x

    def forward(self, batch) -> Tensor:
        x = self._check_batch(batch)
        for layer in self.layers:
            x, _ = layer.apply(x)
        return x

    def forward_tape(self, batch):
        x = self._check_batch(batch)
        tape = []
        for layer in self.layers:
            x, back = layer.apply(x)
            tape.append(back)
        return x, tape

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for layer in self.layers:
            for key, value in layer.parameters().items():
                out[f"{layer.name}.{key}"] = value
        return out


@dataclass
class FeatureClassifier:
    """g: feature batch (B, C) -> logits (B, N), one affine map."""

    weight: Tensor  # (C, N)
    bias: Tensor  # (N,)
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        self.class_names = tuple(self.class_names)
        if not self.class_names:
            raise ValueError("classifier needs at least one class")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError(f"duplicate class names: {list(self.class_names)}")
        n = len(self.class_names)
        if self.weight.ndim != 2 or self.weight.shape[1] != n or self.bias.shape != (n,):
            raise ShapeError(
                f"classifier shapes weight {self.weight.shape}, bias {self.bias.shape} "
                f"do not fit {n} classes"
            )


@dataclass
class ComposedNetwork:
    """g ∘ f: image batch -> logits, with the split kept explicit."""

    extractor: FeatureExtractor
    classifier: FeatureClassifier
    arch: ArchConfig
    provenance: str
    seed: int

    def __post_init__(self) -> None:
        if self.classifier.weight.shape[0] != self.extractor.feature_dim:
            raise ShapeError(
                f"classifier expects {self.classifier.weight.shape[0]} features, "
                f"extractor produces {self.extractor.feature_dim}"
            )

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.classifier.class_names

    def parameters(self) -> dict[str, Tensor]:
        """Live parameter arrays in declaration order."""
        out = {f"extractor.{k}": v for k, v in self.extractor.parameters().items()}
        out["classifier.weight"] = self.classifier.weight
        out["classifier.bias"] = self.classifier.bias
        return out

    def set_parameters(self, params: dict[str, Tensor]) -> None:
        """Install a full parameter dict; the arrays are adopted, not copied."""
        current = self.parameters()
        if set(params) != set(current):
            diff = sorted(set(params) ^ set(current))
            raise ValueError(f"parameter key mismatch: {diff}")
        for name, arr in params.items():
            if arr.shape != current[name].shape:
                raise ShapeError(
                    f"parameter {name!r}: shape {arr.shape} != expected {current[name].shape}"
                )
        for layer in self.extractor.layers:
            local = {
                key: numerics.as_tensor(params[f"extractor.{layer.name}.{key}"])
                for key in layer.parameters()
            }
            layer.set_parameters(local)
        self.classifier.weight = numerics.as_tensor(params["classifier.weight"])
        self.classifier.bias = numerics.as_tensor(params["classifier.bias"])

    def clone(self) -> "ComposedNetwork":
        return copy.deepcopy(self)

    def loss(self, images, labels, class_weights=None) -> float:
        feats = self.extractor.forward(images)
        logits, _ = numerics.affine(feats, self.classifier.weight, self.classifier.bias)
        value, _ = weighted_softmax_cross_entropy(logits, labels, class_weights)
        return value

    def loss_and_param_gradients(self, images, labels, class_weights=None):
        feats, tape = self.extractor.forward_tape(images)
        logits, clf_back = numerics.affine(
            feats, self.classifier.weight, self.classifier.bias
        )
        value, dlogits = weighted_softmax_cross_entropy(logits, labels, class_weights)
        grads: dict[str, Tensor] = {}
        lg = clf_back(dlogits)
        grads["classifier.weight"] = lg.params["weight"]
        grads["classifier.bias"] = lg.params["bias"]
        downstream = lg.wrt_input
        for layer, back in zip(reversed(self.extractor.layers), reversed(tape)):
            lg = back(downstream)
            for key, grad in lg.params.items():
                grads[f"extractor.{layer.name}.{key}"] = grad
            downstream = lg.wrt_input
        return value, grads


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build_network(arch: ArchConfig, class_names, seed: int, provenance: str = "random-init") -> ComposedNetwork:
    """Fresh network: He-style fan-in scaled uniform weights, zero biases.

    Same (arch, class_names, seed) always builds bit-identical parameters.
    """
    names = tuple(class_names)
    if not names or len(set(names)) != len(names):
        raise ValueError(f"class names must be non-empty and unique, got {list(names)}")
    rng = np.random.default_rng(seed)
    layers: list = []
    if arch.conv is not None:
        spec = arch.conv
        oh = arch.height - spec.kernel + 1
        ow = arch.width - spec.kernel + 1
        if oh < 1 or ow < 1:
            raise ValueError(
                f"conv kernel {spec.kernel} too large for {arch.height}x{arch.width} input"
            )
        if oh % spec.pool or ow % spec.pool:
            raise ValueError(
                f"pool window {spec.pool} must divide conv output {oh}x{ow}"
            )
        kernel = _he_uniform(rng, (spec.kernel, spec.kernel, 3, spec.filters),
                             fan_in=spec.kernel * spec.kernel * 3)
        layers.append(ConvLayer("conv", kernel, np.zeros(spec.filters)))
        layers.append(ReluLayer("conv_relu"))
        layers.append(AvgPoolLayer("pool", spec.pool))
        flat_dim = (oh // spec.pool) * (ow // spec.pool) * spec.filters
    else:
        flat_dim = arch.height * arch.width * 3
    layers.append(FlattenLayer("flatten"))
    dims = [flat_dim, *arch.hidden_dims, arch.feature_dim]
    for i in range(len(dims) - 1):
        weight = _he_uniform(rng, (dims[i], dims[i + 1]), fan_in=dims[i])
        layers.append(AffineLayer(f"fc{i}", weight, np.zeros(dims[i + 1])))
        layers.append(ReluLayer(f"relu{i}"))
    extractor = FeatureExtractor((arch.height, arch.width), layers, arch.feature_dim)
    clf_weight = _he_uniform(rng, (arch.feature_dim, len(names)), fan_in=arch.feature_dim)
    classifier = FeatureClassifier(clf_weight, np.zeros(len(names)), names)
    return ComposedNetwork(extractor, classifier, arch, provenance, seed)


def extract_features(net: ComposedNetwork, batch) -> Tensor:
    """f(batch): (B, H, W, 3) -> (B, C)."""
    return net.extractor.forward(batch)


def classify(net: ComposedNetwork, batch) -> Tensor:
    """(g o f)(batch): logits of shape (B, N)."""
    feats = net.extractor.forward(batch)
    logits, _ = numerics.affine(feats, net.classifier.weight, net.classifier.bias)
    return logits


def drop_classifier(
    net: ComposedNetwork, new_class_names, seed: int, provenance: str | None = None
) -> ComposedNetwork:
    """Keep the extractor bit-for-bit, replace the head with a fresh seeded one."""
    names = tuple(new_class_names)
    if not names or len(set(names)) != len(names):
        raise ValueError(f"class names must be non-empty and unique, got {list(names)}")
    kept = net.clone()
    rng = np.random.default_rng(seed)
    weight = _he_uniform(rng, (net.extractor.feature_dim, len(names)), fan_in=net.extractor.feature_dim)
    classifier = FeatureClassifier(weight, np.zeros(len(names)), names)
    return ComposedNetwork(
        extractor=kept.extractor,
        classifier=classifier,
        arch=net.arch,
        provenance=provenance if provenance is not None else f"drop({net.provenance})",
        seed=seed,
    )


# ------------------------------------------------------------ checkpoints


@dataclass
class Checkpoint:
    arch: ArchConfig
    class_names: tuple[str, ...]
    provenance: str
    seed: int
    params: dict[str, Tensor]  # declaration order


def checkpoint_of(net: ComposedNetwork) -> Checkpoint:
    return Checkpoint(
        arch=net.arch,
        class_names=net.class_names,
        provenance=net.provenance,
        seed=net.seed,
        params={k: v.copy() for k, v in net.parameters().items()},
    )


def restore_network(cp: Checkpoint) -> ComposedNetwork:
    """Rebuild the network with exactly the checkpoint's parameter bytes."""
    net = build_network(cp.arch, cp.class_names, cp.seed, provenance=cp.provenance)
    net.set_parameters({k: v.copy() for k, v in cp.params.items()})
    return net


def maintain_classifier(cp: Checkpoint, target_class_names) -> ComposedNetwork:
    """Restore the whole network, classifier included.

    Legal only when the checkpoint's class list equals the target's exactly;
    anything else would silently misalign classifier rows with labels.
    """
    targets = tuple(target_class_names)
    if tuple(cp.class_names) != targets:
        raise ClassMismatchError(
            f"cannot maintain classifier: checkpoint classes "
            f"{list(cp.class_names)} != target classes {list(targets)}"
        )
    return restore_network(cp)


def parameter_fingerprint(params) -> str:
    """SHA-256 over (name, shape, bytes) in declaration order."""
    import hashlib

    if isinstance(params, ComposedNetwork):
        params = params.parameters()
    elif isinstance(params, Checkpoint):
        params = params.params
    digest = hashlib.sha256()
    for name, arr in params.items():
        digest.update(name.encode("utf-8"))
        digest.update(str(arr.shape).encode("utf-8"))
        digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return digest.hexdigest()


def save_checkpoint(net_or_checkpoint, path) -> None:
    """NNCK container: magic, version, JSON header, float64-LE blocks."""
    cp = (
        checkpoint_of(net_or_checkpoint)
        if isinstance(net_or_checkpoint, ComposedNetwork)
        else net_or_checkpoint
    )
    header = {
        "arch": _arch_to_dict(cp.arch),
        "class_names": list(cp.class_names),
        "provenance": cp.provenance,
        "seed": cp.seed,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in cp.params.items()],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for arr in cp.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}"
        )
    if len(raw) < 16:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    header_end = 16 + header_len
    if len(raw) < header_end:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    missing = {"arch", "class_names", "provenance", "seed", "params"} - set(header)
    if missing:
        raise CheckpointError(f"{path}: header missing keys {sorted(missing)}")
    payload = raw[header_end:]
    shapes = [(entry["name"], tuple(entry["shape"])) for entry in header["params"]]
    expected = sum(int(np.prod(shape)) for _, shape in shapes) * 8
    if len(payload) != expected:
        kind = "truncated" if len(payload) < expected else "oversized"
        raise CheckpointError(
            f"{path}: {kind} parameter payload, {len(payload)} bytes vs {expected} expected"
        )
    params: dict[str, Tensor] = {}
    offset = 0
    for name, shape in shapes:
        count = int(np.prod(shape))
        params[name] = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += count * 8
    return Checkpoint(
        arch=_arch_from_dict(header["arch"]),
        class_names=tuple(header["class_names"]),
        provenance=header["provenance"],
        seed=header["seed"],
        params=params,
    )


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float
    batch_size: int = 32
    momentum: float = 0.0  # plain SGD; momentum can diverge at lr >= 0.05 here
    loss_mode: str = "plain"  # plain | weighted
    sampler_mode: str = "sequential-shuffle"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        # lr = 0 is a legal no-op configuration
        if self.learning_rate < 0.0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.sampler_mode not in SAMPLER_MODES:
            raise ValueError(
                f"sampler_mode must be one of {SAMPLER_MODES}, got {self.sampler_mode!r}"
            )


def train(
    net: ComposedNetwork, dataset: SceneDataset, config: TrainConfig
) -> tuple[ComposedNetwork, list[float]]:
    """Mini-batch SGD over all frames; returns (trained copy, per-epoch loss).

    The input network is left untouched. The per-epoch loss is the
    sample-weighted mean of batch losses. With loss_mode "weighted" the
    class weights are inverse frame frequencies of this dataset; a uniform
    weight vector reproduces the plain path bit for bit.
    """
    if tuple(dataset.class_names) != net.class_names:
        raise ClassMismatchError(
            f"cannot train: dataset classes {list(dataset.class_names)} != "
            f"network classes {list(net.class_names)}"
        )
    if dataset.frame_count == 0:
        raise ValueError("cannot train on a dataset with no frames")
    images, labels = dataset.frame_matrix()
    class_weights = None
    if config.loss_mode == "weighted":
        counts = dataset.frame_counts()
        if (counts == 0).any():
            empty = [n for n, c in zip(dataset.class_names, counts) if c == 0]
            raise ValueError(f"weighted loss undefined: class(es) {empty} have no frames")
        class_weights = inverse_frequency_weights(counts).weights
    trained = net.clone()
    state = OptimizerState(config.learning_rate, config.momentum)
    stream = BatchStream(dataset, config.batch_size, config.sampler_mode, config.seed)
    history: list[float] = []
    for _ in range(config.epochs):
        total = 0.0
        seen = 0
        for idx in stream.epoch():
            batch_loss, grads = trained.loss_and_param_gradients(
                images[idx], labels[idx], class_weights
            )
            new_params, state = sgd_step(trained.parameters(), grads, state)
            trained.set_parameters(new_params)
            total += batch_loss * len(idx)
            seen += len(idx)
        history.append(total / seen)
    return trained, history
