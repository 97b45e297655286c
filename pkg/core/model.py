"""
Small differentiable classifier: feature extractor f (MLP) and classifier head g.

Forward and reverse passes are written out by hand with numpy, layer by layer,
keeping every intermediate activation for the backward pass.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import DivergenceError, ParameterError, ShapeError
from core.simplex import as_float_array, softmax, validate_prob_vector

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu", "identity")


def _activate(pre: NDArray[np.float64], act: str) -> NDArray[np.float64]:
    if act == "tanh":
        return np.tanh(pre)
    if act == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _activation_grad(pre: NDArray[np.float64], out: NDArray[np.float64], act: str) -> NDArray[np.float64]:
    if act == "tanh":
        return 1.0 - out * out
    if act == "relu":
        return (pre > 0.0).astype(np.float64)
    return np.ones_like(pre)


@dataclass
class Layer:
    """Affine map followed by an activation. `weight` is out x in."""

    weight: NDArray[np.float64]
    bias: NDArray[np.float64]
    activation: str = "identity"

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class ModelParams:
    """
    Parameters of the whole network.

    Attributes:
        layers: Affine layers in evaluation order.
        split: Index of the layer whose output is the feature vector z.
        h: Feature dimension (output size of layer `split`).
        C: Number of classes (output size of the last layer).
    """

    layers: List[Layer]
    split: int
    h: int
    C: int

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.layers:
            raise ShapeError("model needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ParameterError(f"layer {i}: unknown activation '{layer.activation}'")
            if layer.bias.shape != (layer.fan_out,):
                raise ShapeError(f"layer {i}: bias shape {layer.bias.shape} does not match {layer.fan_out} outputs")
            if i > 0 and layer.fan_in != self.layers[i - 1].fan_out:
                raise ShapeError(
                    f"layer {i}: expects {layer.fan_in} inputs but layer {i - 1} produces {self.layers[i - 1].fan_out}"
                )
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ParameterError(f"layer {i}: parameters must be finite")
        if not 0 <= self.split < len(self.layers):
            raise ShapeError(f"split index {self.split} outside 0..{len(self.layers) - 1}")
        if self.layers[self.split].fan_out != self.h:
            raise ShapeError(f"layer {self.split} produces {self.layers[self.split].fan_out} features, expected h={self.h}")
        if self.layers[-1].fan_out != self.C:
            raise ShapeError(f"final layer produces {self.layers[-1].fan_out} outputs, expected C={self.C}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def num_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def copy(self) -> "ModelParams":
        return ModelParams(
            layers=[Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
            split=self.split,
            h=self.h,
            C=self.C,
        )

    def arrays(self) -> List[NDArray[np.float64]]:
        """Weights and biases in a fixed order (w0, b0, w1, b1, ...)."""
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def head_layers(self) -> List[int]:
        """Indices of the classifier g (layers after the split)."""
        return list(range(self.split + 1, len(self.layers)))

    def equals(self, other: "ModelParams") -> bool:
        """Bit-exact equality of architecture and every parameter."""
        if (self.split, self.h, self.C, len(self.layers)) != (other.split, other.h, other.C, len(other.layers)):
            return False
        return all(
            a.activation == b.activation and np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )

    def to_dict(self) -> Dict:
        return {
            "layers": [{"w": l.weight.tolist(), "b": l.bias.tolist(), "act": l.activation} for l in self.layers],
            "split": self.split,
            "h": self.h,
            "C": self.C,
        }

    @staticmethod
    def from_dict(data: Dict) -> "ModelParams":
        try:
            layers = [
                Layer(
                    np.asarray(item["w"], dtype=np.float64).reshape(len(item["w"]), -1),
                    np.asarray(item["b"], dtype=np.float64),
                    item["act"],
                )
                for item in data["layers"]
            ]
            return ModelParams(layers=layers, split=int(data["split"]), h=int(data["h"]), C=int(data["C"]))
        except (KeyError, TypeError) as e:
            raise ShapeError(f"malformed checkpoint document: {e}")


@dataclass
class GradientBuffer:
    """Parameter gradients congruent with a ModelParams."""

    weights: List[NDArray[np.float64]]
    biases: List[NDArray[np.float64]]

    @staticmethod
    def zeros_like(params: ModelParams) -> "GradientBuffer":
        return GradientBuffer(
            weights=[np.zeros_like(l.weight) for l in params.layers],
            biases=[np.zeros_like(l.bias) for l in params.layers],
        )

    def arrays(self) -> List[NDArray[np.float64]]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def flat(self) -> NDArray[np.float64]:
        return np.concatenate([a.ravel() for a in self.arrays()])


@dataclass
class OptimizerState:
    """
    SGD-with-momentum state.

    Attributes:
        velocity_w / velocity_b: Momentum buffers per layer.
        lr_base: Learning rate of the base layers.
        lr_head: Learning rate of the final layers.
        momentum: Momentum coefficient in [0, 1).
        head_layers: Layer indices trained with lr_head.
        frozen_layers: Layer indices that are never updated.
    """

    velocity_w: List[NDArray[np.float64]]
    velocity_b: List[NDArray[np.float64]]
    lr_base: float = 1e-3
    lr_head: float = 1e-2
    momentum: float = 0.9
    head_layers: List[int] = field(default_factory=list)
    frozen_layers: List[int] = field(default_factory=list)

    @staticmethod
    def create(
        params: ModelParams,
        lr_base: float = 1e-3,
        lr_head: float = 1e-2,
        momentum: float = 0.9,
        head_layers: Optional[Sequence[int]] = None,
        frozen_layers: Sequence[int] = (),
    ) -> "OptimizerState":
        """
        Zero momentum buffers for `params`.

        The head group defaults to the final two layers, mirroring differential
        learning rates for the bottleneck and classifier layers.
        """
        if lr_base <= 0 or lr_head <= 0:
            raise ParameterError(f"learning rates must be positive, got {lr_base}, {lr_head}")
        if not 0.0 <= momentum < 1.0:
            raise ParameterError(f"momentum must lie in [0, 1), got {momentum}")
        if head_layers is None:
            head_layers = list(range(max(0, len(params.layers) - 2), len(params.layers)))
        return OptimizerState(
            velocity_w=[np.zeros_like(l.weight) for l in params.layers],
            velocity_b=[np.zeros_like(l.bias) for l in params.layers],
            lr_base=lr_base,
            lr_head=lr_head,
            momentum=momentum,
            head_layers=list(head_layers),
            frozen_layers=list(frozen_layers),
        )

    def learning_rate(self, layer_index: int) -> float:
        return self.lr_head if layer_index in self.head_layers else self.lr_base


@dataclass
class ForwardCache:
    """Per-layer pre-activations and outputs kept for the backward pass."""

    inputs: NDArray[np.float64]
    pre: List[NDArray[np.float64]]
    post: List[NDArray[np.float64]]


def init_params(
    input_dim: int,
    num_classes: int,
    hidden_sizes: Sequence[int] = (32,),
    feature_dim: int = 16,
    activation: str = "tanh",
    seed: int = 0,
) -> ModelParams:
    """
    Build input -> hidden (activation) -> feature_dim (identity, z) -> C logits.

    Weights are uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)); biases start at zero.
    """
    if activation not in ACTIVATIONS:
        raise ParameterError(f"unknown activation '{activation}'")
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden_sizes, feature_dim, num_classes]
    acts = [activation] * len(hidden_sizes) + ["identity", "identity"]
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], acts):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out), act))
    return ModelParams(layers=layers, split=len(hidden_sizes), h=feature_dim, C=num_classes)


def forward_batch(
    params: ModelParams, inputs: ArrayLike
) -> Tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64], ForwardCache]:
    """
    Evaluate the network on a batch (rows of `inputs`).

    Returns:
        (z, logits, p, cache) with z of shape n x h and logits, p of shape n x C.
    """
    x = as_float_array(inputs, "inputs")
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {params.input_dim}), got {x.shape}")
    pre, post = [], []
    a = x
    for layer in params.layers:
        s = a @ layer.weight.T + layer.bias
        a = _activate(s, layer.activation)
        pre.append(s)
        post.append(a)
    logits = post[-1]
    return post[params.split], logits, softmax(logits), ForwardCache(inputs=x, pre=pre, post=post)


def forward(params: ModelParams, x: ArrayLike) -> Tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """
    Compute (z, logits, p) for one input vector or a batch of row vectors.

    Raises:
        ShapeError: If the input dimension does not match the first layer.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    z, logits, p, _ = forward_batch(params, arr[None, :] if single else arr)
    if single:
        return z[0], logits[0], p[0]
    return z, logits, p


def backward(
    params: ModelParams,
    inputs: ArrayLike,
    loss_grad_on_logits: ArrayLike,
    cache: Optional[ForwardCache] = None,
) -> GradientBuffer:
    """
    Reverse pass: parameter gradients from per-sample dL/dlogits.

    Per-sample gradients are summed over the batch; any 1/n normalization must
    already be part of `loss_grad_on_logits`.

    Args:
        params: Current parameters.
        inputs: Batch inputs, n x d.
        loss_grad_on_logits: n x C gradient of the loss with respect to logits.
        cache: Forward cache for these inputs; recomputed when omitted.
    """
    if cache is None:
        _, _, _, cache = forward_batch(params, inputs)
    delta = as_float_array(loss_grad_on_logits, "loss gradient")
    if delta.ndim == 1:
        delta = delta[None, :]
    if delta.shape != (cache.inputs.shape[0], params.C):
        raise ShapeError(f"loss gradient shape {delta.shape} does not match batch ({cache.inputs.shape[0]}, {params.C})")

    grads = GradientBuffer.zeros_like(params)
    upstream = delta
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        ds = upstream * _activation_grad(cache.pre[i], cache.post[i], layer.activation)
        layer_input = cache.post[i - 1] if i > 0 else cache.inputs
        grads.weights[i] = ds.T @ layer_input
        grads.biases[i] = ds.sum(axis=0)
        upstream = ds @ layer.weight
    return grads


def sgd_step(params: ModelParams, grads: GradientBuffer, state: OptimizerState, lr_scale: float = 1.0) -> Tuple[ModelParams, OptimizerState]:
    """
    Momentum update v <- m*v + g; theta <- theta - lr*v, in place.

    Raises:
        DivergenceError: If any gradient entry is non-finite.
    """
    if len(grads.weights) != len(params.layers):
        raise ShapeError("gradient buffer does not match the model")
    if not grads.is_finite():
        raise DivergenceError("non-finite gradient encountered in sgd_step")
    m = state.momentum
    for i, layer in enumerate(params.layers):
        if i in state.frozen_layers:
            continue
        if grads.weights[i].shape != layer.weight.shape or grads.biases[i].shape != layer.bias.shape:
            raise ShapeError(f"layer {i}: gradient shape does not match parameters")
        lr = state.learning_rate(i) * lr_scale
        state.velocity_w[i] = m * state.velocity_w[i] + grads.weights[i]
        state.velocity_b[i] = m * state.velocity_b[i] + grads.biases[i]
        layer.weight -= lr * state.velocity_w[i]
        layer.bias -= lr * state.velocity_b[i]
    return params, state


def softmax_jacobian_vector_product(p: ArrayLike, dL_dp: ArrayLike) -> NDArray[np.float64]:
    """
    Map probability-space gradients to logit space: (diag(p) - p p^T) dL/dp.

    Works row-wise on batches.
    """
    probs = validate_prob_vector(p)
    g = as_float_array(dL_dp, "dL/dp")
    if g.shape != probs.shape:
        raise ShapeError(f"dL/dp shape {g.shape} does not match probabilities {probs.shape}")
    inner = np.sum(probs * g, axis=-1, keepdims=True)
    return probs * (g - inner)
