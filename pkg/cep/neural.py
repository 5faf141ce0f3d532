"""
Perception network: a ReLU multilayer perceptron with a softmax output, its
manual backward pass, the Adam optimizer and the JSON checkpoint format.

Weights are stored as (fan_out, fan_in) matrices; batches are row-major
(one event per row).
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DatasetIOError, NumericError, SchemaError, ShapeError

logger = logging.getLogger('cep')

LAYER_WIDTHS: Tuple[int, ...] = (128, 100, 80, 50, 25, 10)
FEATURE_SCALE = 255.0
CHECKPOINT_FORMAT = 'cep-mlp/1'


@dataclass
class MLPParams:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def widths(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(weight.shape[0] for weight in self.weights)

    def validate(self):
        for layer, (weight, bias) in enumerate(zip(self.weights, self.biases), start=1):
            if weight.ndim != 2 or bias.shape != (weight.shape[0],):
                raise ShapeError(f"Layer {layer}: weight {weight.shape} does not match bias {bias.shape}")
            if layer > 1 and weight.shape[1] != self.weights[layer - 2].shape[0]:
                raise ShapeError(f"Layer {layer} expects {weight.shape[1]} inputs, previous layer has "
                                 f"{self.weights[layer - 2].shape[0]} units")
            if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
                raise NumericError(f"Layer {layer} holds non-finite parameters")

    def copy(self) -> 'MLPParams':
        return MLPParams([weight.copy() for weight in self.weights], [bias.copy() for bias in self.biases])


@dataclass
class ForwardTrace:
    """Activations of one forward pass: ``activations[0]`` is the input batch"""
    activations: List[np.ndarray]
    pre_activations: List[np.ndarray]
    output: np.ndarray
    single: bool


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    steps: int = 0
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def initial(cls, params: MLPParams, learning_rate: float = 1e-3, beta1: float = 0.9,
                beta2: float = 0.999, epsilon: float = 1e-8) -> 'OptimizerState':
        shapes = [array.shape for array in params.weights + params.biases]
        return cls(
            learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon, steps=0,
            first_moments=[np.zeros(shape) for shape in shapes],
            second_moments=[np.zeros(shape) for shape in shapes],
        )

    def hyperparameters(self) -> Dict[str, float]:
        return {
            'learning_rate': self.learning_rate,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'epsilon': self.epsilon,
        }


def init(seed: int, widths: Sequence[int] = LAYER_WIDTHS) -> MLPParams:
    """Glorot-uniform weights and zero biases, fully determined by ``seed``"""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def scale_features(raw) -> np.ndarray:
    """Map raw integer features (1..255) to [0, 1]"""
    return np.asarray(raw, dtype=np.float64) / FEATURE_SCALE


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return shifted / np.sum(shifted, axis=-1, keepdims=True)


def forward(params: MLPParams, features) -> Tuple[np.ndarray, ForwardTrace]:
    """
    Class distribution for one scaled feature vector (shape (128,)) or a batch
    (shape (n, 128)), with the trace ``backward`` needs.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[1]:
        raise ShapeError(f"Expected features of length {params.weights[0].shape[1]}, got shape {np.shape(features)}")

    activations = [x]
    pre_activations = []
    last = len(params.weights) - 1
    for layer, (weight, bias) in enumerate(zip(params.weights, params.biases)):
        z = activations[-1] @ weight.T + bias
        pre_activations.append(z)
        activations.append(softmax(z) if layer == last else relu(z))
    output = activations[-1]
    trace = ForwardTrace(activations, pre_activations, output, single)
    return (output[0] if single else output), trace


def forward_batch(params: MLPParams, raw_features) -> np.ndarray:
    """Distributions for a matrix of raw (unscaled) features"""
    output, _ = forward(params, scale_features(np.atleast_2d(raw_features)))
    return output


def predict_classes(params: MLPParams, raw_features) -> np.ndarray:
    return np.argmax(forward_batch(params, raw_features), axis=1)


def backward(trace: ForwardTrace, params: MLPParams, grad_out) -> MLPParams:
    """
    Gradients of the loss with respect to every weight and bias, given the
    loss gradient with respect to the softmax output. Batch rows are summed.
    """
    if len(trace.pre_activations) != len(params.weights):
        raise ShapeError(f"Trace has {len(trace.pre_activations)} layers, parameters have {len(params.weights)}")
    grad = np.asarray(grad_out, dtype=np.float64)
    if trace.single and grad.ndim == 1:
        grad = grad[np.newaxis, :]
    if grad.shape != trace.output.shape:
        raise ShapeError(f"Output gradient has shape {np.shape(grad_out)}, expected {trace.output.shape}")

    probabilities = trace.output
    # Softmax Jacobian-vector product.
    delta = probabilities * (grad - np.sum(grad * probabilities, axis=1, keepdims=True))
    weight_grads: List[np.ndarray] = [None] * len(params.weights)
    bias_grads: List[np.ndarray] = [None] * len(params.weights)
    for layer in range(len(params.weights) - 1, -1, -1):
        if trace.activations[layer].shape[1] != params.weights[layer].shape[1]:
            raise ShapeError(f"Trace activations of layer {layer + 1} do not match the parameters")
        weight_grads[layer] = delta.T @ trace.activations[layer]
        bias_grads[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (trace.pre_activations[layer - 1] > 0)
    return MLPParams(weight_grads, bias_grads)


def step(state: OptimizerState, params: MLPParams, grads: MLPParams) -> Tuple[MLPParams, OptimizerState]:
    """One Adam update; returns new parameters and state without touching the inputs"""
    layers = len(params.weights)
    for layer, (weight_grad, bias_grad) in enumerate(zip(grads.weights, grads.biases), start=1):
        if not (np.all(np.isfinite(weight_grad)) and np.all(np.isfinite(bias_grad))):
            raise NumericError(f"Non-finite gradient in layer {layer}")
    current = params.weights + params.biases
    gradients = grads.weights + grads.biases
    if [array.shape for array in current] != [array.shape for array in gradients]:
        raise ShapeError("Gradient shapes do not match the parameters")

    steps = state.steps + 1
    first_moments, second_moments, updated = [], [], []
    for value, gradient, first, second in zip(current, gradients, state.first_moments, state.second_moments):
        first = state.beta1 * first + (1.0 - state.beta1) * gradient
        second = state.beta2 * second + (1.0 - state.beta2) * gradient * gradient
        first_hat = first / (1.0 - state.beta1 ** steps)
        second_hat = second / (1.0 - state.beta2 ** steps)
        updated.append(value - state.learning_rate * first_hat / (np.sqrt(second_hat) + state.epsilon))
        first_moments.append(first)
        second_moments.append(second)

    new_state = OptimizerState(
        learning_rate=state.learning_rate, beta1=state.beta1, beta2=state.beta2, epsilon=state.epsilon,
        steps=steps, first_moments=first_moments, second_moments=second_moments,
    )
    return MLPParams(updated[:layers], updated[layers:]), new_state


def zeros_like(params: MLPParams) -> MLPParams:
    return MLPParams([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])


def accumulate(total: MLPParams, grads: MLPParams) -> MLPParams:
    return MLPParams(
        [a + b for a, b in zip(total.weights, grads.weights)],
        [a + b for a, b in zip(total.biases, grads.biases)],
    )


# ---------------------------------------------------------------------------
# Checkpoints

def checkpoint_dict(params: MLPParams, seed: int, optimizer: Optional[OptimizerState] = None,
                    metadata: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return {
        'format': CHECKPOINT_FORMAT,
        'widths': list(params.widths),
        'weights': [weight.ravel().tolist() for weight in params.weights],
        'biases': [bias.tolist() for bias in params.biases],
        'optimizer': (optimizer or OptimizerState()).hyperparameters(),
        'seed': seed,
        'metadata': metadata or {},
    }


def save_checkpoint(path, params: MLPParams, seed: int, optimizer: Optional[OptimizerState] = None,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(checkpoint_dict(params, seed, optimizer, metadata), handle, sort_keys=True)
    except OSError as exc:
        raise DatasetIOError(f"Cannot write checkpoint {path}: {exc}") from exc
    logger.info(f"Saved checkpoint {path}")
    return path


def params_from_dict(payload: Dict[str, Any]) -> MLPParams:
    if payload.get('format') != CHECKPOINT_FORMAT:
        raise SchemaError(f"Unsupported checkpoint format {payload.get('format')!r}")
    try:
        widths = [int(width) for width in payload['widths']]
        weights = [
            np.asarray(flat, dtype=np.float64).reshape(fan_out, fan_in)
            for flat, fan_in, fan_out in zip(payload['weights'], widths[:-1], widths[1:])
        ]
        biases = [np.asarray(bias, dtype=np.float64) for bias in payload['biases']]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"Malformed checkpoint: {exc}") from exc
    if len(weights) != len(widths) - 1 or len(biases) != len(weights):
        raise SchemaError("Checkpoint layer count does not match its widths")
    params = MLPParams(weights, biases)
    params.validate()
    return params


def load_checkpoint(path) -> Tuple[MLPParams, Dict[str, Any]]:
    """Parameters plus the raw checkpoint payload (seed, optimizer, metadata)"""
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise DatasetIOError(f"Cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"Checkpoint {path} is not valid JSON: {exc}") from exc
    return params_from_dict(payload), payload
