"""
Two-hidden-layer ReLU network predicting down-sampled marginal value curves.

The network maps a normalized feature vector to z-scored segment values; the
forward pass de-normalizes with the stored target statistics. Parameters are
kept as a flat tuple (W1, b1, W2, b2, W3, b3) so gradients and Adam moments share
one layout.

Model files are JSON documents with sorted keys:

    format, version   identification
    layer_dims        [input, H, H, output]
    seed              initialization seed
    feature_spec      look-back window, day-ahead switch and feature statistics
    target            {"mean": [...], "std": [...]} of the training labels
    layers            [{"weights": rows, "bias": [...]}, ...] in row-major order
    metadata          free-form string labels such as the training zone
"""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from services.features import FeatureSpec
from utils.exceptions import BaseCustomException, DimensionMismatchError, FileOperationError, ModelFormatError, NumericError

MODEL_FORMAT = "vf-arbitrage-mlp"
MODEL_VERSION = 1
DEFAULT_OUTPUT = 50

Parameters = Tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Network parameters together with everything needed to use them on raw prices."""

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    feature_spec: FeatureSpec
    target_mean: np.ndarray
    target_std: np.ndarray
    seed: int = 0
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        if len(weights) != 3 or len(biases) != 3:
            raise DimensionMismatchError("the network needs exactly three layers")
        dims = [weights[0].shape[0]] + [w.shape[1] for w in weights]
        for index, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or w.shape[0] != dims[index] or b.size != w.shape[1]:
                raise DimensionMismatchError(f"layer {index} shapes do not chain",
                                             data={"weights": list(w.shape), "bias": b.size})
        if dims[1] != dims[2]:
            raise DimensionMismatchError("both hidden layers must have the same width")
        if dims[0] != self.feature_spec.length:
            raise DimensionMismatchError(
                f"input width {dims[0]} does not match the {self.feature_spec.length}-feature spec")
        target_mean = np.broadcast_to(np.asarray(self.target_mean, dtype=np.float64), (dims[-1],)).copy()
        target_std = np.broadcast_to(np.asarray(self.target_std, dtype=np.float64), (dims[-1],)).copy()
        arrays = weights + biases + (target_mean, target_std)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise NumericError("model parameters must be finite")
        for array in arrays:
            array.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "target_mean", target_mean)
        object.__setattr__(self, "target_std", target_std)

    @property
    def layer_dims(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def hidden(self) -> int:
        return self.layer_dims[1]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def parameters(self) -> Parameters:
        return (self.weights[0], self.biases[0], self.weights[1], self.biases[1], self.weights[2], self.biases[2])

    def with_parameters(self, params: Sequence[np.ndarray]) -> "MlpModel":
        return replace(self, weights=tuple(params[0::2]), biases=tuple(params[1::2]))

    def same_parameters(self, other: "MlpModel") -> bool:
        """Bit-for-bit equality of parameters, statistics and seed."""
        ours = self.parameters + (self.target_mean, self.target_std)
        theirs = other.parameters + (other.target_mean, other.target_std)
        return (self.seed == other.seed and self.feature_spec.to_dict() == other.feature_spec.to_dict()
                and all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(ours, theirs)))


def init_model(feature_spec: FeatureSpec, hidden: int, output_dim: int = DEFAULT_OUTPUT, seed: int = 0,
               target_mean: Union[float, np.ndarray] = 0.0, target_std: Union[float, np.ndarray] = 1.0,
               metadata: Optional[Dict[str, str]] = None) -> MlpModel:
    """He-uniform weights drawn from ``seed`` and zero biases."""
    rng = np.random.default_rng([seed, 0])
    dims = [feature_spec.length, hidden, hidden, output_dim]
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    biases = [np.zeros(fan_out) for fan_out in dims[1:]]
    return MlpModel(tuple(weights), tuple(biases), feature_spec, target_mean, target_std, seed, dict(metadata or {}))


def _check_inputs(x: np.ndarray, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != width:
        raise DimensionMismatchError(f"expected {width} features, got shape {x.shape}",
                                     data={"expected": width, "shape": list(x.shape)})
    if not np.all(np.isfinite(x)):
        raise NumericError("features contain NaN or infinite values")
    return x


def _forward_pass(params: Parameters, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    w1, b1, w2, b2, w3, b3 = params
    z1 = x @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2 + b2
    a2 = np.maximum(z2, 0.0)
    return z1, a1, a2, a2 @ w3 + b3


def predict_normalized(model: MlpModel, x: np.ndarray) -> np.ndarray:
    return _forward_pass(model.parameters, _check_inputs(x, model.layer_dims[0]))[-1]


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Predicted segment values in $/MWh for one feature vector or a batch of rows."""
    return predict_normalized(model, x) * model.target_std + model.target_mean


def loss_and_grad_normalized(params: Parameters, x: np.ndarray, y: np.ndarray) -> Tuple[float, Parameters]:
    """Mean squared error over batch and outputs, and its gradient by back-propagation."""
    _, _, w2, _, w3, _ = params
    z1, a1, a2, out = _forward_pass(params, x)
    error = out - y
    loss = float(np.mean(error * error))

    d_out = 2.0 * error / error.size
    d_w3 = a2.T @ d_out
    d_b3 = d_out.sum(axis=0)
    d_z2 = (d_out @ w3.T) * (a2 > 0.0)
    d_w2 = a1.T @ d_z2
    d_b2 = d_z2.sum(axis=0)
    d_z1 = (d_z2 @ w2.T) * (z1 > 0.0)
    d_w1 = x.T @ d_z1
    d_b1 = d_z1.sum(axis=0)
    return loss, (d_w1, d_b1, d_w2, d_b2, d_w3, d_b3)


def loss_and_grad(model: MlpModel, x: np.ndarray, targets: np.ndarray) -> Tuple[float, Parameters]:
    """
    Loss and gradient on a batch of feature rows and $/MWh label curves.

    Labels are z-scored with the model's target statistics before the comparison,
    so the loss is in normalized units.
    """
    x = _check_inputs(np.atleast_2d(x), model.layer_dims[0])
    if x.shape[0] == 0:
        raise DimensionMismatchError("batch is empty")
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if targets.shape != (x.shape[0], model.output_dim):
        raise DimensionMismatchError(f"targets have shape {targets.shape}, expected ({x.shape[0]}, {model.output_dim})")
    if not np.all(np.isfinite(targets)):
        raise NumericError("targets contain NaN or infinite values")
    normalized = (targets - model.target_mean) / model.target_std
    return loss_and_grad_normalized(model.parameters, x, normalized)


@dataclass(frozen=True, eq=False)
class AdamState:
    """Bias-corrected Adam moments, one pair per parameter array."""

    first_moment: Parameters
    second_moment: Parameters
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], learning_rate: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        zeros = tuple(np.zeros_like(p) for p in params)
        return cls(zeros, tuple(np.zeros_like(p) for p in params), 0, learning_rate, beta1, beta2, epsilon)


def adam_update(params: Sequence[np.ndarray], state: AdamState,
                grads: Sequence[np.ndarray]) -> Tuple[Parameters, AdamState]:
    """One Adam step on arbitrary parameter arrays; returns new arrays and state."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise DimensionMismatchError("gradient shapes do not match parameters")
    step = state.step + 1
    first_correction = 1.0 - state.beta1 ** step
    second_correction = 1.0 - state.beta2 ** step
    new_params, firsts, seconds = [], [], []
    for param, grad, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        m_hat = m / first_correction
        v_hat = v / second_correction
        new_params.append(param - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        firsts.append(m)
        seconds.append(v)
    return tuple(new_params), replace(state, first_moment=tuple(firsts), second_moment=tuple(seconds), step=step)


def adam_step(model: MlpModel, state: AdamState, grads: Sequence[np.ndarray]) -> Tuple[MlpModel, AdamState]:
    params, state = adam_update(model.parameters, state, grads)
    return model.with_parameters(params), state


def model_to_dict(model: MlpModel) -> Dict[str, Any]:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layer_dims": model.layer_dims,
        "seed": model.seed,
        "feature_spec": model.feature_spec.to_dict(),
        "target": {"mean": model.target_mean.tolist(), "std": model.target_std.tolist()},
        "layers": [{"weights": w.tolist(), "bias": b.tolist()} for w, b in zip(model.weights, model.biases)],
        "metadata": dict(sorted(model.metadata.items())),
    }


def save(model: MlpModel, path: Union[str, Path]) -> None:
    """Write the model as sorted JSON; equal models give equal bytes."""
    text = json.dumps(model_to_dict(model), sort_keys=True, indent=1)
    try:
        Path(path).write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise FileOperationError(f"cannot write model {path}: {exc}", data={"path": str(path)}) from exc


def _section(document: Dict[str, Any], name: str) -> Any:
    if name not in document:
        raise ModelFormatError(f"model file lacks the '{name}' section", section=name)
    return document[name]


def model_from_dict(document: Dict[str, Any]) -> MlpModel:
    if _section(document, "format") != MODEL_FORMAT or _section(document, "version") != MODEL_VERSION:
        raise ModelFormatError("not a supported model file", section="format")
    dims = _section(document, "layer_dims")
    if not (isinstance(dims, list) and len(dims) == 4 and all(isinstance(d, int) and d > 0 for d in dims)):
        raise ModelFormatError(f"bad layer_dims header {dims}", section="layer_dims")
    try:
        spec = FeatureSpec.from_dict(_section(document, "feature_spec"))
    except (BaseCustomException, TypeError, ValueError) as exc:
        raise ModelFormatError(f"bad feature_spec: {exc}", section="feature_spec") from exc
    target = _section(document, "target")
    layers = _section(document, "layers")
    if not isinstance(layers, list) or len(layers) != 3:
        raise ModelFormatError("expected three layers", section="layers")
    weights, biases = [], []
    for index, layer in enumerate(layers):
        try:
            w = np.array(layer["weights"], dtype=np.float64)
            b = np.array(layer["bias"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"layer {index} is malformed: {exc}", section="layers") from exc
        if w.shape != (dims[index], dims[index + 1]) or b.shape != (dims[index + 1],):
            raise ModelFormatError(f"layer {index} has shape {w.shape}, header says "
                                   f"({dims[index]}, {dims[index + 1]})", section="layer_dims")
        weights.append(w)
        biases.append(b)
    try:
        mean = np.array(target["mean"], dtype=np.float64)
        std = np.array(target["std"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"target statistics are malformed: {exc}", section="target") from exc
    if mean.shape != (dims[-1],) or std.shape != (dims[-1],):
        raise ModelFormatError("target statistics do not match the output width", section="target")
    try:
        return MlpModel(tuple(weights), tuple(biases), spec, mean, std, int(_section(document, "seed")),
                        {str(k): str(v) for k, v in document.get("metadata", {}).items()})
    except (DimensionMismatchError, NumericError) as exc:
        raise ModelFormatError(str(exc.message), section="layers") from exc


def load(path: Union[str, Path]) -> MlpModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileOperationError(f"cannot read model {path}: {exc}", data={"path": str(path)}) from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file {path} is not valid JSON: {exc}", section="document") from exc
    if not isinstance(document, dict):
        raise ModelFormatError(f"model file {path} is not a JSON object", section="document")
    return model_from_dict(document)
