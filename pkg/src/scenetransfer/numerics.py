"""Dense float64 tensor math with hand-derived backward passes.

Layer primitives (matmul, affine, relu), a weight-normalized softmax
cross-entropy, SGD with momentum, and a central finite-difference gradient
checker. Every operation is pure and deterministic: identical inputs give
bit-identical outputs, nothing touches global state, and all arithmetic is
64-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

# A tensor is a float64 ndarray in row-major order.
Tensor = np.ndarray

_REL_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


def as_tensor(values) -> Tensor:
    """Coerce to a float64 ndarray (no copy when already one)."""
    return np.asarray(values, dtype=np.float64)


def _require_finite(out: Tensor, op: str) -> Tensor:
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{op}: result contains non-finite values")
    return out


@dataclass
class LayerGradients:
    """Backward-pass output: per-parameter gradients plus the input gradient."""

    params: dict[str, Tensor]
    wrt_input: Tensor


GradFn = Callable[[Tensor], LayerGradients]


def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(
            f"matmul: expected 2-D operands, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}"
        )
    return _require_finite(a @ b, "matmul")


def affine(x, weight, bias) -> tuple[Tensor, GradFn]:
    """Row-wise x @ weight + bias; returns (output, backward).

    backward(upstream) yields gradients for "weight" and "bias" plus the
    gradient with respect to x.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    bias = as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(
            f"affine: expected x (B,D), weight (D,K), bias (K,), got "
            f"{x.shape}, {weight.shape}, {bias.shape}"
        )
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ShapeError(
            f"affine: incompatible shapes x {x.shape}, weight {weight.shape}, "
            f"bias {bias.shape}"
        )
    out = _require_finite(x @ weight + bias, "affine")

    def backward(upstream: Tensor) -> LayerGradients:
        up = as_tensor(upstream)
        if up.shape != out.shape:
            raise ShapeError(
                f"affine backward: upstream shape {up.shape} does not match "
                f"output shape {out.shape}"
            )
        return LayerGradients(
            params={"weight": x.T @ up, "bias": up.sum(axis=0)},
            wrt_input=up @ weight.T,
        )

    return out, backward


def relu(x) -> tuple[Tensor, GradFn]:
    """Elementwise max(x, 0); subgradient at 0 is taken as 0."""
    x = as_tensor(x)
    out = np.maximum(x, 0.0)
    mask = x > 0.0

    def backward(upstream: Tensor) -> LayerGradients:
        up = as_tensor(upstream)
        if up.shape != out.shape:
            raise ShapeError(
                f"relu backward: upstream shape {up.shape} does not match "
                f"output shape {out.shape}"
            )
        return LayerGradients(params={}, wrt_input=up * mask)

    return out, backward


def softmax(logits) -> Tensor:
    """Row-wise softmax with max subtraction for overflow safety."""
    z = as_tensor(logits)
    if z.ndim != 2:
        raise ShapeError(f"softmax: expected 2-D logits, got shape {z.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return _require_finite(e / e.sum(axis=1, keepdims=True), "softmax")


def weighted_softmax_cross_entropy(
    logits, labels, class_weights=None
) -> tuple[float, Tensor]:
    """Weight-normalized softmax cross-entropy and its gradient.

    loss = sum_b w[y_b] * (-log softmax(z_b)[y_b]) / sum_b w[y_b]

    With class_weights None (or any constant vector) this is exactly the
    plain mean cross-entropy: sample weights are scaled by their batch max
    before use, so a uniform weight vector becomes exactly 1.0 per sample
    and the arithmetic matches the unweighted path bit for bit.
    """
    z = as_tensor(logits)
    if z.ndim != 2:
        raise ShapeError(f"cross-entropy: expected 2-D logits, got {z.shape}")
    n_rows, n_classes = z.shape
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n_rows:
        raise ShapeError(
            f"cross-entropy: labels shape {y.shape} does not match batch {n_rows}"
        )
    if y.size == 0:
        raise ValueError("cross-entropy: empty batch")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("cross-entropy: labels must be integers")
    if ((y < 0) | (y >= n_classes)).any():
        raise ValueError(f"cross-entropy: labels must lie in [0, {n_classes})")
    if class_weights is None:
        w = np.ones(n_classes)
    else:
        w = as_tensor(class_weights)
        if w.shape != (n_classes,):
            raise ShapeError(
                f"cross-entropy: class_weights shape {w.shape} does not match "
                f"class count {n_classes}"
            )
        if not (w > 0.0).all():
            raise ValueError("cross-entropy: class weights must be strictly positive")

    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n_rows)
    nll = -log_probs[rows, y]

    sample_w = w[y]
    scaled = sample_w / sample_w.max()  # uniform weights -> exactly 1.0 each
    denom = scaled.sum()
    loss = float((scaled * nll).sum() / denom)

    grad = np.exp(log_probs)
    grad[rows, y] -= 1.0
    grad *= (scaled / denom)[:, None]
    if not np.isfinite(loss):
        raise NonFiniteError("cross-entropy: loss is non-finite")
    return loss, _require_finite(grad, "cross-entropy gradient")


@dataclass
class OptimizerState:
    """SGD-with-momentum state; velocities are keyed like the parameters."""

    learning_rate: float
    momentum: float = 0.0
    velocities: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        # lr = 0 is a legal no-op configuration; only negative rates are wrong
        if self.learning_rate < 0.0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


def sgd_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Tensor],
    state: OptimizerState,
) -> tuple[dict[str, Tensor], OptimizerState]:
    """One SGD step: v <- momentum*v + g; p <- p - lr*v.

    Pure: inputs are not mutated; fresh parameter and state dicts come back.
    """
    if set(grads) != set(params):
        missing = sorted(set(params) ^ set(grads))
        raise ValueError(f"sgd_step: parameter/gradient key mismatch: {missing}")
    new_params: dict[str, Tensor] = {}
    new_velocities: dict[str, Tensor] = {}
    for name, p in params.items():
        g = as_tensor(grads[name])
        if g.shape != p.shape:
            raise ShapeError(
                f"sgd_step: gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {p.shape}"
            )
        v_old = state.velocities.get(name)
        if v_old is None:
            v = g.copy()
        else:
            if v_old.shape != p.shape:
                raise ShapeError(
                    f"sgd_step: velocity shape {v_old.shape} does not match "
                    f"parameter {name!r} shape {p.shape}"
                )
            v = state.momentum * v_old + g
        new_velocities[name] = v
        new_params[name] = _require_finite(p - state.learning_rate * v, "sgd_step")
    return new_params, OptimizerState(
        learning_rate=state.learning_rate,
        momentum=state.momentum,
        velocities=new_velocities,
    )


def relative_error(analytic: float, numeric: float) -> float:
    """|a - n| / max(|a|, |n|, 1e-12)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), _REL_FLOOR)


def gradient_check(net, batch, eps: float = 1e-5, class_weights=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``net`` must expose ``parameters() -> dict[str, Tensor]`` returning the
    live parameter arrays, ``loss(images, labels, class_weights) -> float``,
    and ``loss_and_param_gradients(images, labels, class_weights)``. The
    check runs entirely in float64; parameters are perturbed in place and
    restored bit-exactly from the saved originals.
    """
    if eps <= 0.0:
        raise ValueError(f"gradient_check: eps must be positive, got {eps}")
    images, labels = batch
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("gradient_check: empty batch")
    _, analytic = net.loss_and_param_gradients(images, labels, class_weights)
    worst = 0.0
    for name, param in net.parameters().items():
        grad = analytic[name]
        if grad.shape != param.shape:
            raise ShapeError(
                f"gradient_check: analytic gradient shape {grad.shape} does not "
                f"match parameter {name!r} shape {param.shape}"
            )
        for idx in np.ndindex(*param.shape):
            orig = param[idx]
            param[idx] = orig + eps
            loss_plus = net.loss(images, labels, class_weights)
            param[idx] = orig - eps
            loss_minus = net.loss(images, labels, class_weights)
            param[idx] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            err = relative_error(float(grad[idx]), numeric)
            if err > worst:
                worst = err
    return worst
