"""MLP backbone with a batch-normalized exponential uncertainty head.

The backbone maps inputs to an embedding (the last hidden activation) and
class logits. The head maps the same embedding to a strictly positive
uncertainty vector u = exp(batchnorm(linear(e))). Both are built from graph
primitives, so every output is differentiable with respect to parameters
and inputs alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream
from .tensor import (
    GraphNode,
    Tensor,
    add,
    as_node,
    div,
    exp,
    leaf,
    matmul,
    mul,
    reduce_mean,
    relu,
    square,
    sqrt,
    sub,
)

__all__ = [
    "BackboneConfig",
    "UncertaintyHeadConfig",
    "ModelParams",
    "ForwardOutput",
    "HeadOutput",
    "init_params",
    "param_leaves",
    "forward",
    "uncertainty_forward",
    "expected_param_count",
    "eval_logits",
    "predict_classes",
]

TRAIN = "train"
EVAL = "eval"


@dataclass(frozen=True)
class BackboneConfig:
    """Architecture of the classifier MLP.

    The embedding exposed to the uncertainty head is the activation of the
    last hidden layer, so ``hidden_dims[-1]`` is the embedding width.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    dropout_rate: float = 0.3
    use_batchnorm: bool = True
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be at least 1")
        if not self.hidden_dims:
            raise ValueError("at least one hidden layer is required")
        if any(d < 1 for d in self.hidden_dims):
            raise ValueError("hidden widths must be at least 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ValueError("bn_momentum must lie in (0, 1]")
        if self.bn_epsilon <= 0.0:
            raise ValueError("bn_epsilon must be positive")

    @property
    def embed_dim(self) -> int:
        return self.hidden_dims[-1]


@dataclass(frozen=True)
class UncertaintyHeadConfig:
    """Shape of the uncertainty head.

    ``delta`` is the number of resampling dimensions. With ``scalar_u`` the
    head emits a single shared uncertainty that is broadcast across all
    delta resampling draws; otherwise it emits one value per dimension.
    """

    embed_dim: int
    delta: int = 32
    scalar_u: bool = False
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be at least 1")
        if self.delta < 1:
            raise ValueError("delta must be at least 1")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ValueError("bn_momentum must lie in (0, 1]")
        if self.bn_epsilon <= 0.0:
            raise ValueError("bn_epsilon must be positive")

    @property
    def out_dim(self) -> int:
        return 1 if self.scalar_u else self.delta


@dataclass
class ModelParams:
    """Trainable weights plus batchnorm running statistics.

    ``weights`` take gradient steps; ``bn_state`` holds running means and
    variances, which are updated by exponential moving average and must never
    receive gradient or weight-decay updates.
    """

    backbone: BackboneConfig
    head: UncertaintyHeadConfig
    weights: dict[str, Tensor] = field(default_factory=dict)
    bn_state: dict[str, Tensor] = field(default_factory=dict)

    def weight_count(self) -> int:
        return sum(t.size for t in self.weights.values())


@dataclass
class ForwardOutput:
    """Backbone outputs as graph nodes, ready for losses or input gradients."""

    logits: GraphNode
    embedding: GraphNode
    x: GraphNode
    leaves: dict[str, GraphNode]
    bn_updates: dict[str, Tensor]


@dataclass
class HeadOutput:
    u: GraphNode
    bn_updates: dict[str, Tensor]


def _lecun_uniform(rng: RngStream, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)))


def init_params(backbone: BackboneConfig, head: UncertaintyHeadConfig, rng: RngStream) -> ModelParams:
    """Fresh parameters.

    Linear layers draw LeCun-uniform weights (zero biases) from per-layer
    sub-streams. The head's linear layer starts at zero, so with zero-mean
    batchnorm output the initial uncertainty is exp(0) = 1 everywhere.
    Batchnorm starts at identity (gamma 1, beta 0) with running mean 0 and
    running variance 1.
    """
    if head.embed_dim != backbone.embed_dim:
        raise ValueError(
            f"head embed_dim {head.embed_dim} does not match backbone embedding width {backbone.embed_dim}"
        )
    weights: dict[str, Tensor] = {}
    bn_state: dict[str, Tensor] = {}

    def bn_block(prefix: str, width: int) -> None:
        weights[f"{prefix}.gamma"] = Tensor(np.ones(width))
        weights[f"{prefix}.beta"] = Tensor.zeros(width)
        bn_state[f"{prefix}.mean"] = Tensor.zeros(width)
        bn_state[f"{prefix}.var"] = Tensor(np.ones(width))

    fan_in = backbone.input_dim
    for i, width in enumerate(backbone.hidden_dims):
        name = f"backbone.h{i}"
        weights[f"{name}.w"] = _lecun_uniform(rng.substream(f"init.{name}"), fan_in, width)
        weights[f"{name}.b"] = Tensor.zeros(width)
        if backbone.use_batchnorm:
            bn_block(f"{name}.bn", width)
        fan_in = width
    weights["backbone.out.w"] = _lecun_uniform(rng.substream("init.backbone.out"), fan_in, backbone.num_classes)
    weights["backbone.out.b"] = Tensor.zeros(backbone.num_classes)

    weights["head.w"] = Tensor.zeros((head.embed_dim, head.out_dim))
    weights["head.b"] = Tensor.zeros(head.out_dim)
    bn_block("head.bn", head.out_dim)

    return ModelParams(backbone, head, weights, bn_state)


def expected_param_count(backbone: BackboneConfig, head: UncertaintyHeadConfig) -> int:
    """Closed-form trainable weight count for the given architecture."""
    count = 0
    fan_in = backbone.input_dim
    for width in backbone.hidden_dims:
        count += (fan_in + 1) * width
        if backbone.use_batchnorm:
            count += 2 * width
        fan_in = width
    count += (fan_in + 1) * backbone.num_classes
    count += (head.embed_dim + 1) * head.out_dim + 2 * head.out_dim
    return count


def param_leaves(params: ModelParams) -> dict[str, GraphNode]:
    """One fresh graph leaf per trainable weight, keyed by weight name."""
    return {name: leaf(tensor) for name, tensor in params.weights.items()}


def _linear(leaves: dict[str, GraphNode], prefix: str, h: GraphNode) -> GraphNode:
    return add(matmul(h, leaves[f"{prefix}.w"]), leaves[f"{prefix}.b"])


def _batchnorm(
    leaves: dict[str, GraphNode],
    bn_state: dict[str, Tensor],
    prefix: str,
    z: GraphNode,
    mode: str,
    momentum: float,
    epsilon: float,
    updates: dict[str, Tensor],
) -> GraphNode:
    gamma = leaves[f"{prefix}.gamma"]
    beta = leaves[f"{prefix}.beta"]
    if mode == TRAIN:
        mu = reduce_mean(z, axis=0, keepdims=True)
        centered = sub(z, mu)
        var = reduce_mean(square(centered), axis=0, keepdims=True)
        z_hat = div(centered, sqrt(add(var, as_node(epsilon))))
        old_mean = bn_state[f"{prefix}.mean"].array
        old_var = bn_state[f"{prefix}.var"].array
        updates[f"{prefix}.mean"] = Tensor((1.0 - momentum) * old_mean + momentum * mu.array.ravel())
        updates[f"{prefix}.var"] = Tensor((1.0 - momentum) * old_var + momentum * var.array.ravel())
    else:
        run_mean = bn_state[f"{prefix}.mean"].array
        run_var = bn_state[f"{prefix}.var"].array
        if np.any(run_var < 0.0):
            raise ValueError(f"corrupt running variance in {prefix} (negative entries)")
        # Running stats are constants at eval time; fold them numerically.
        z_hat = div(sub(z, leaf(run_mean)), leaf(np.sqrt(run_var + epsilon)))
    return add(mul(z_hat, gamma), beta)


def _dropout(h: GraphNode, rate: float, rng: RngStream) -> GraphNode:
    # Inverted dropout: surviving units scaled so the expectation is unchanged.
    keep = rng.uniform(0.0, 1.0, h.shape) >= rate
    return mul(h, leaf(keep / (1.0 - rate)))


def forward(
    params: ModelParams,
    x,
    mode: str,
    rng: RngStream | None = None,
    leaves: dict[str, GraphNode] | None = None,
) -> ForwardOutput:
    """Run the backbone on a batch.

    ``x`` is a (batch, input_dim) array or node. In train mode batchnorm uses
    batch statistics (and reports running-stat updates); dropout needs ``rng``.
    In eval mode the pass is deterministic and each row's outputs are exactly
    the values it would get in any other batch.
    """
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = params.backbone
    x_node = as_node(x)
    if x_node.value.ndim != 2 or x_node.value.shape[1] != cfg.input_dim:
        raise ValueError(
            f"input must have shape (batch, {cfg.input_dim}), got {x_node.value.shape}"
        )
    if mode == TRAIN and cfg.dropout_rate > 0.0 and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng stream")
    if leaves is None:
        leaves = param_leaves(params)

    updates: dict[str, Tensor] = {}
    h = x_node
    for i in range(len(cfg.hidden_dims)):
        name = f"backbone.h{i}"
        z = _linear(leaves, name, h)
        if cfg.use_batchnorm:
            z = _batchnorm(
                leaves, params.bn_state, f"{name}.bn", z, mode, cfg.bn_momentum, cfg.bn_epsilon, updates
            )
        h = relu(z)
        if mode == TRAIN and cfg.dropout_rate > 0.0:
            h = _dropout(h, cfg.dropout_rate, rng)
    embedding = h
    logits = _linear(leaves, "backbone.out", embedding)
    return ForwardOutput(logits, embedding, x_node, leaves, updates)


def uncertainty_forward(
    params: ModelParams,
    embedding,
    mode: str,
    leaves: dict[str, GraphNode] | None = None,
) -> HeadOutput:
    """Uncertainty head: u = exp(batchnorm(linear(embedding))), strictly positive.

    Pass the ``leaves`` of a backbone ForwardOutput to share one parameter
    leaf set across backbone and head (required for joint gradients).
    """
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = params.head
    e = as_node(embedding)
    if e.value.ndim != 2 or e.value.shape[1] != cfg.embed_dim:
        raise ValueError(f"embedding must have shape (batch, {cfg.embed_dim}), got {e.value.shape}")
    if leaves is None:
        leaves = param_leaves(params)
    updates: dict[str, Tensor] = {}
    z = _linear(leaves, "head", e)
    z = _batchnorm(leaves, params.bn_state, "head.bn", z, mode, cfg.bn_momentum, cfg.bn_epsilon, updates)
    return HeadOutput(exp(z), updates)


def eval_logits(params: ModelParams, x, batch_size: int = 512) -> np.ndarray:
    """Deterministic eval-mode logits, computed in batches."""
    x = np.asarray(x, dtype=np.float64)
    parts = [
        forward(params, x[i : i + batch_size], EVAL).logits.array
        for i in range(0, len(x), batch_size)
    ]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, params.backbone.num_classes))


def predict_classes(params: ModelParams, x, batch_size: int = 512) -> np.ndarray:
    """Predicted labels in 1..num_classes."""
    return np.argmax(eval_logits(params, x, batch_size), axis=1) + 1
