"""MLP encoder with projection head and class-center classifier.

The same parameter tree serves as the query network and as its EMA twin.
Forward and backward passes are written out by hand; ``grad_check``
compares them against central finite differences.
"""

import copy
import logging
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .config import settings
from .models import GradCheckReport
from .numeric import Array, SeededRng, ShapeError

logger = logging.getLogger(__name__)

# loss_fn(trace) -> (loss, d loss / d logits, d loss / d z)
LossFn = Callable[["ForwardTrace"], Tuple[float, Array, Array]]

ACTIVATIONS = ("relu", "identity")

# Denominator floor for gradient relative errors.
_REL_ERROR_FLOOR = 1e-3


class DenseLayer(BaseModel):
    """Affine map ``x @ weight + bias`` with weight shaped (fan_in, fan_out)."""

    weight: np.ndarray
    bias: np.ndarray

    model_config = {"arbitrary_types_allowed": True}


class ParamTree(BaseModel):
    """Backbone layers, two projection layers and the class-center matrix."""

    backbone: List[DenseLayer] = Field(default_factory=list)
    projection: List[DenseLayer] = Field(default_factory=list)
    classifier: np.ndarray

    model_config = {"arbitrary_types_allowed": True}

    def named_tensors(self) -> Iterator[Tuple[str, np.ndarray]]:
        """Yield (name, array) pairs in a fixed order; arrays are live views."""
        for i, layer in enumerate(self.backbone):
            yield f"backbone.{i}.weight", layer.weight
            yield f"backbone.{i}.bias", layer.bias
        for i, layer in enumerate(self.projection):
            yield f"projection.{i}.weight", layer.weight
            yield f"projection.{i}.bias", layer.bias
        yield "classifier", self.classifier

    def parameter_count(self) -> int:
        return int(sum(arr.size for _, arr in self.named_tensors()))

    def shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(name, tuple(arr.shape)) for name, arr in self.named_tensors()]

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(arr))) for _, arr in self.named_tensors())


def is_decayed(name: str) -> bool:
    """Weight decay applies to weight matrices and class centers, never biases."""
    return not name.endswith(".bias")


class ModelParams(ParamTree):
    activation: str = "relu"
    classifier_on_projection: bool = False

    @property
    def input_dim(self) -> int:
        return int(self.backbone[0].weight.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.backbone[-1].weight.shape[1])

    @property
    def proj_dim(self) -> int:
        return int(self.projection[-1].weight.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.classifier.shape[0])

    def clone(self) -> "ModelParams":
        return copy.deepcopy(self)

    def zeros_like(self) -> "ParamGrads":
        return ParamGrads(
            backbone=[DenseLayer(weight=np.zeros_like(l.weight), bias=np.zeros_like(l.bias)) for l in self.backbone],
            projection=[
                DenseLayer(weight=np.zeros_like(l.weight), bias=np.zeros_like(l.bias)) for l in self.projection
            ],
            classifier=np.zeros_like(self.classifier),
        )


class ParamGrads(ParamTree):
    """Gradients, shape-congruent with the parameters they differentiate."""


class ForwardTrace(BaseModel):
    """Intermediate values of one forward pass over a batch."""

    inputs: np.ndarray
    pre_acts: List[np.ndarray]
    acts: List[np.ndarray]  # acts[0] is the input, acts[-1] is h
    h: np.ndarray
    proj_pre: np.ndarray
    proj_hidden: np.ndarray
    u: np.ndarray
    u_norm: np.ndarray
    z: np.ndarray
    logits: np.ndarray

    model_config = {"arbitrary_types_allowed": True}

    @property
    def batch_size(self) -> int:
        return int(self.inputs.shape[0])


def _activate(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(x, 0.0)
    return x


def _activation_grad(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (pre > 0.0).astype(np.float64)
    return np.ones_like(pre)


def _uniform_layer(fan_in: int, fan_out: int, rng: SeededRng) -> DenseLayer:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return DenseLayer(
        weight=np.asarray(rng.uniform(-bound, bound, (fan_in, fan_out)), dtype=np.float64),
        bias=np.zeros(fan_out, dtype=np.float64),
    )


def init_params(
    layer_dims: Sequence[int],
    proj_dims: Sequence[int],
    num_classes: int,
    rng: SeededRng,
    activation: str = "relu",
    classifier_on_projection: bool = False,
) -> ModelParams:
    """Scaled-uniform initialization, bound ``sqrt(6 / (fan_in + fan_out))``, zero biases.

    ``layer_dims`` starts with the input dimension, e.g. ``[2, 16, 16]``;
    ``proj_dims`` lists the projection hidden and output widths.
    """
    if len(layer_dims) < 2:
        raise ValueError("layer_dims needs the input dimension and at least one layer width")
    if len(proj_dims) != 2:
        raise ValueError("proj_dims must list the projection hidden and output widths")
    if any(d <= 0 for d in [*layer_dims, *proj_dims, num_classes]):
        raise ValueError("all dimensions must be positive")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation '{activation}'")

    backbone = [_uniform_layer(a, b, rng) for a, b in zip(layer_dims[:-1], layer_dims[1:])]
    feature_dim = layer_dims[-1]
    projection = [
        _uniform_layer(feature_dim, proj_dims[0], rng),
        _uniform_layer(proj_dims[0], proj_dims[1], rng),
    ]
    classifier_in = proj_dims[1] if classifier_on_projection else feature_dim
    bound = np.sqrt(6.0 / (classifier_in + num_classes))
    classifier = np.asarray(rng.uniform(-bound, bound, (num_classes, classifier_in)), dtype=np.float64)
    return ModelParams(
        backbone=backbone,
        projection=projection,
        classifier=classifier,
        activation=activation,
        classifier_on_projection=classifier_on_projection,
    )


def forward(params: ModelParams, batch: np.ndarray) -> ForwardTrace:
    """Run the encoder, projection head and classifier over a batch of rows."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"batch must have shape (n, {params.input_dim}), got {x.shape}")

    act = params.activation
    pre_acts: List[np.ndarray] = []
    acts: List[np.ndarray] = [x]
    last = len(params.backbone) - 1
    for i, layer in enumerate(params.backbone):
        pre = acts[-1] @ layer.weight + layer.bias
        pre_acts.append(pre)
        # ReLU sits between backbone layers; the backbone output stays linear.
        acts.append(_activate(pre, act) if i < last else pre)
    h = acts[-1]

    hidden_layer, out_layer = params.projection
    proj_pre = h @ hidden_layer.weight + hidden_layer.bias
    proj_hidden = _activate(proj_pre, act)
    u = proj_hidden @ out_layer.weight + out_layer.bias
    u_norm = np.linalg.norm(u, axis=1)
    if np.any(u_norm == 0.0):
        raise FloatingPointError("projection output collapsed to a zero vector")
    z = u / u_norm[:, None]

    features = z if params.classifier_on_projection else h
    logits = features @ params.classifier.T
    return ForwardTrace(
        inputs=x,
        pre_acts=pre_acts,
        acts=acts,
        h=h,
        proj_pre=proj_pre,
        proj_hidden=proj_hidden,
        u=u,
        u_norm=u_norm,
        z=z,
        logits=logits,
    )


def backward(params: ModelParams, trace: ForwardTrace, grad_logits: np.ndarray, grad_z: np.ndarray) -> ParamGrads:
    """Gradients of a scalar loss given its partials w.r.t. logits and z."""
    g_logits = np.asarray(grad_logits, dtype=np.float64)
    g_z = np.asarray(grad_z, dtype=np.float64)
    if g_logits.shape != trace.logits.shape:
        raise ShapeError(f"grad_logits shape {g_logits.shape} does not match logits {trace.logits.shape}")
    if g_z.shape != trace.z.shape:
        raise ShapeError(f"grad_z shape {g_z.shape} does not match z {trace.z.shape}")

    act = params.activation
    features = trace.z if params.classifier_on_projection else trace.h
    d_classifier = g_logits.T @ features
    d_features = g_logits @ params.classifier

    d_h = np.zeros_like(trace.h)
    if params.classifier_on_projection:
        g_z = g_z + d_features
    else:
        d_h += d_features

    # Jacobian of z = u / ||u|| is (I - z z^T) / ||u||.
    z = trace.z
    d_u = (g_z - z * np.sum(g_z * z, axis=1, keepdims=True)) / trace.u_norm[:, None]

    hidden_layer, out_layer = params.projection
    d_out_w = trace.proj_hidden.T @ d_u
    d_out_b = d_u.sum(axis=0)
    d_proj_pre = (d_u @ out_layer.weight.T) * _activation_grad(trace.proj_pre, act)
    d_hidden_w = trace.h.T @ d_proj_pre
    d_hidden_b = d_proj_pre.sum(axis=0)
    d_h += d_proj_pre @ hidden_layer.weight.T

    backbone_grads: List[DenseLayer] = [None] * len(params.backbone)  # type: ignore[list-item]
    delta = d_h
    for i in range(len(params.backbone) - 1, -1, -1):
        layer = params.backbone[i]
        backbone_grads[i] = DenseLayer(weight=trace.acts[i].T @ delta, bias=delta.sum(axis=0))
        if i > 0:
            delta = (delta @ layer.weight.T) * _activation_grad(trace.pre_acts[i - 1], act)

    return ParamGrads(
        backbone=backbone_grads,
        projection=[
            DenseLayer(weight=d_hidden_w, bias=d_hidden_b),
            DenseLayer(weight=d_out_w, bias=d_out_b),
        ],
        classifier=d_classifier,
    )


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(max|a|, max|n|, floor)`` over one parameter array."""
    diff = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    return diff / max(scale, _REL_ERROR_FLOOR)


def grad_check(
    params: ModelParams,
    batch: np.ndarray,
    loss_fn: LossFn,
    tolerance: float,
    step: Optional[float] = None,
    grad_hook: Optional[Callable[[ParamGrads], None]] = None,
    name: str = "model",
) -> GradCheckReport:
    """Compare ``backward`` against central finite differences for every parameter.

    ``grad_hook`` may edit the analytic gradients in place before the
    comparison (negative controls).
    """
    h = settings.GRADCHECK_STEP if step is None else step
    trace = forward(params, batch)
    _, g_logits, g_z = loss_fn(trace)
    analytic = backward(params, trace, g_logits, g_z)
    if grad_hook is not None:
        grad_hook(analytic)

    errors = {}
    for (pname, arr), (_, grad) in zip(params.named_tensors(), analytic.named_tensors()):
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + h
            loss_plus = loss_fn(forward(params, batch))[0]
            flat[idx] = original - h
            loss_minus = loss_fn(forward(params, batch))[0]
            flat[idx] = original
            numeric_flat[idx] = (loss_plus - loss_minus) / (2.0 * h)
        errors[pname] = relative_error(grad, numeric)

    worst = max(errors.values(), default=0.0)
    passed = worst <= tolerance
    logger.debug(f"grad_check[{name}]: worst relative error {worst:.3e} (tolerance {tolerance:.1e})")
    return GradCheckReport(name=name, max_rel_error=errors, tolerance=tolerance, passed=passed)
