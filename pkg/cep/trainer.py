"""
End-to-end training of the perception network from complex-event labels.

For every training point the network classifies the events the point's
circuits mention, the circuits turn those beliefs into an 11-way outcome
distribution, and the negative log-likelihood gradient flows back through the
circuits into the network.
"""
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import neural
from .circuit import BeliefTable, Circuit, CircuitCache, circuit_key, compile_proofs, evaluate_with_gradient
from .datagen import ALL_LABELS, CE_LABELS, NULL_LABEL, EventStream, Split
from .engine import DEFAULT_MAX_STEPS, Engine, StreamContext, happens_at
from .exceptions import DatasetIOError, EvaluationError, NumericError, UsageError
from .terms import Program

logger = logging.getLogger('cep')

LOSS_EPSILON = 1e-12
EXCLUSIVITY_TOLERANCE = 1e-9


@dataclass
class TrainConfig:
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 1e-3
    seed: int = 0
    batch_size: int = 1
    window: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    loss_epsilon: float = LOSS_EPSILON
    circuit_cache: bool = True
    max_resolution_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self):
        if self.max_epochs < 1:
            raise UsageError("max_epochs must be at least 1")
        if self.patience < 1:
            raise UsageError("patience must be at least 1")
        if self.batch_size < 1:
            raise UsageError("batch_size must be at least 1")
        if self.window < 1:
            raise UsageError("window must be at least 1")


@dataclass
class OutcomeDistribution:
    """Probabilities of the ten complex events at one timestamp; null is the complement"""
    ce: np.ndarray

    @property
    def null(self) -> float:
        return 1.0 - float(np.sum(self.ce))

    @property
    def probabilities(self) -> np.ndarray:
        return np.append(self.ce, self.null)

    def probability(self, label: str) -> float:
        return float(self.probabilities[ALL_LABELS.index(label)])

    def argmax(self) -> str:
        return ALL_LABELS[int(np.argmax(self.probabilities))]

    def to_dict(self) -> Dict[str, float]:
        return {label: float(value) for label, value in zip(ALL_LABELS, self.probabilities)}


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_ce_acc: float
    val_simple_acc: Optional[float]
    seconds: float


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    def to_frame(self, include_seconds: bool = True) -> pd.DataFrame:
        """One row per epoch; drop the wall-clock column to compare runs"""
        frame = pd.DataFrame([asdict(record) for record in self.records],
                             columns=['epoch', 'train_loss', 'val_ce_acc', 'val_simple_acc', 'seconds'])
        if not include_seconds:
            frame = frame.drop(columns='seconds')
        return frame

    def write_csv(self, path):
        try:
            self.to_frame().to_csv(path, index=False, lineterminator='\n')
        except OSError as exc:
            raise DatasetIOError(f"Cannot write {path}: {exc}") from exc


class CEInference:
    """
    Circuits for the complex-event queries of one stream, with translation
    reuse through a CircuitCache and a per-timestamp memo.
    """

    def __init__(self, program: Program, context: StreamContext, domain: Sequence[str],
                 labels: Sequence[str] = CE_LABELS, cache: Optional[CircuitCache] = None,
                 max_steps: int = DEFAULT_MAX_STEPS):
        self.program = program
        self.context = context
        self.domain = tuple(domain)
        self.labels = tuple(labels)
        self.engine = Engine(program, max_steps=max_steps)
        self.cache = cache if cache is not None else CircuitCache()
        self._fingerprint = program.fingerprint
        self._memo: Dict[int, List[Tuple[Circuit, int]]] = {}

    def circuits(self, t: int) -> List[Tuple[Circuit, int]]:
        """(circuit, offset) per label; evaluate each circuit with its offset"""
        if t not in self.context:
            raise UsageError(f"Timestamp {t} is not in the stream")
        cached = self._memo.get(t)
        if cached is not None:
            return cached
        result = []
        for label in self.labels:
            query = happens_at(label, t)
            key = circuit_key(self._fingerprint, self.context, query, t)
            circuit = self.cache.lookup(key, t)
            if circuit is not None:
                result.append((circuit, t))
                continue
            proofs, trace = self.engine.solve_anchored(self.context, query, t)
            circuit = compile_proofs(proofs)
            self.cache.store(key, circuit, t, trace)
            result.append((circuit, 0))
        self._memo[t] = result
        return result

    def leaf_timestamps(self, t: int) -> List[int]:
        return sorted({ts + offset for circuit, offset in self.circuits(t) for ts in circuit.timestamps()})

    def _check_exclusive(self, ce: np.ndarray, t: int):
        if ce.sum() > 1.0 + EXCLUSIVITY_TOLERANCE:
            raise EvaluationError(
                f"Complex-event probabilities at timestamp {t} sum to {ce.sum():.12g}; "
                "the rules do not make the events mutually exclusive"
            )

    def distribution(self, t: int, beliefs: BeliefTable) -> OutcomeDistribution:
        dist, _ = self.distribution_with_gradient(t, beliefs)
        return dist

    def distribution_with_gradient(self, t: int, beliefs: BeliefTable) -> Tuple[OutcomeDistribution, List[Dict[int, np.ndarray]]]:
        values = []
        gradients = []
        for circuit, offset in self.circuits(t):
            value, grads = evaluate_with_gradient(circuit, beliefs, offset)
            values.append(value)
            gradients.append(grads)
        ce = np.asarray(values, dtype=np.float64)
        self._check_exclusive(ce, t)
        return OutcomeDistribution(ce), gradients


def ce_distribution(program: Program, context: StreamContext, beliefs: BeliefTable, t: int,
                    labels: Sequence[str] = CE_LABELS) -> OutcomeDistribution:
    """Outcome distribution at ``t`` compiled from scratch (no cache)"""
    inference = CEInference(program, context, beliefs.domain, labels, cache=CircuitCache(enabled=False))
    return inference.distribution(t, beliefs)


def loss(dist: OutcomeDistribution, label: str, epsilon: float = LOSS_EPSILON) -> Tuple[float, np.ndarray]:
    """
    Negative log-likelihood of ``label`` and its gradient with respect to the
    ten complex-event probabilities.
    """
    grad = np.zeros(len(dist.ce))
    if label == NULL_LABEL:
        probability = max(dist.null, epsilon)
        grad[:] = 1.0 / probability
    else:
        index = CE_LABELS.index(label)
        probability = max(float(dist.ce[index]), epsilon)
        grad[index] = -1.0 / probability
    return -float(np.log(probability)), grad


# ---------------------------------------------------------------------------
# Evaluation

@dataclass
class Metrics:
    ce_accuracy: float
    simple_accuracy: Optional[float]
    confusion: np.ndarray
    points: int
    ce_accuracy_natural: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'ce_accuracy': self.ce_accuracy,
            'ce_accuracy_natural': self.ce_accuracy_natural,
            'simple_accuracy': self.simple_accuracy,
            'points': self.points,
            'confusion': self.confusion.tolist(),
        }


def stream_beliefs(params: neural.MLPParams, stream: EventStream, domain: Sequence[str]) -> BeliefTable:
    return BeliefTable.from_matrix(domain, neural.forward_batch(params, stream.features), validate=False)


def evaluate(params: neural.MLPParams, program: Program, split: Split, window: Optional[int] = None,
             inference: Optional[CEInference] = None, natural: bool = False,
             domain: Optional[Sequence[str]] = None) -> Metrics:
    """
    CE accuracy on the split's evaluation points, simple-event accuracy on all
    events with a known class, and the 11x11 confusion matrix (rows: label,
    columns: prediction). ``natural`` adds CE accuracy over every t >= 1.
    """
    if inference is None:
        domain = domain or tuple(program.neural[0].domain)
        context = StreamContext.for_length(len(split.stream), window or split.window)
        inference = CEInference(program, context, domain)
    beliefs = stream_beliefs(params, split.stream, inference.domain)

    confusion = np.zeros((len(ALL_LABELS), len(ALL_LABELS)), dtype=np.int64)
    for t, label in split.points:
        predicted = inference.distribution(t, beliefs).argmax()
        confusion[ALL_LABELS.index(label), ALL_LABELS.index(predicted)] += 1
    total = int(confusion.sum())
    ce_accuracy = float(np.trace(confusion) / total) if total else 0.0

    simple_accuracy = None
    if split.stream.true_classes is not None and len(split.stream):
        predicted_classes = np.argmax(np.stack([beliefs.rows[t] for t in split.stream.timestamps]), axis=1)
        simple_accuracy = float(np.mean(predicted_classes == split.stream.true_classes))

    natural_accuracy = None
    if natural and len(split.stream) > 1:
        hits = sum(
            inference.distribution(t, beliefs).argmax() == split.labeling[t]
            for t in range(1, len(split.stream))
        )
        natural_accuracy = hits / (len(split.stream) - 1)
    return Metrics(ce_accuracy, simple_accuracy, confusion, total, natural_accuracy)


# ---------------------------------------------------------------------------
# Training

def _write_belief_snapshot(output_dir: Optional[Path], epoch: int, point: Tuple[int, str],
                           beliefs: BeliefTable, dist: OutcomeDistribution) -> Optional[str]:
    if output_dir is None:
        return None
    path = Path(output_dir) / 'diagnostics' / 'belief_snapshot.json'
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            'epoch': epoch,
            'point': {'timestamp': point[0], 'label': point[1]},
            'beliefs': beliefs.to_dict(),
            'distribution': {label: repr(value) for label, value in dist.to_dict().items()},
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding='utf-8')
    except OSError as exc:
        logger.error(f"Could not write belief snapshot: {exc}")
        return None
    return str(path)


def point_gradient(params: neural.MLPParams, features: np.ndarray, inference: CEInference,
                   point: Tuple[int, str], epsilon: float = LOSS_EPSILON):
    """
    Loss of one training point and its gradient with respect to the network
    parameters, chained through the point's circuits.
    """
    t, label = point
    timestamps = inference.leaf_timestamps(t)
    if timestamps:
        output, trace = neural.forward(params, neural.scale_features(features[timestamps]))
        beliefs = BeliefTable.from_matrix(inference.domain, output, timestamps, validate=False)
    else:
        trace = None
        beliefs = BeliefTable(inference.domain, {}, validate=False)
    dist, ce_grads = inference.distribution_with_gradient(t, beliefs)
    value, dloss_dce = loss(dist, label, epsilon)
    if trace is None:
        return value, neural.zeros_like(params), dist, beliefs

    grad_out = np.zeros_like(trace.output)
    row = {ts: position for position, ts in enumerate(timestamps)}
    for weight, grads in zip(dloss_dce, ce_grads):
        if weight == 0.0:
            continue
        for ts, partial in grads.items():
            grad_out[row[ts]] += weight * partial
    return value, neural.backward(trace, params, grad_out), dist, beliefs


def train(program: Program, params: neural.MLPParams, splits: Dict[str, Split], cfg: TrainConfig,
          output_dir: Optional[Path] = None) -> Tuple[neural.MLPParams, TrainHistory]:
    """
    Adam over shuffled training points with early stopping on validation CE
    accuracy. Returns the parameters of the best validation epoch.
    """
    train_split = splits['train']
    validation = splits['validation']
    if not train_split.points:
        raise UsageError("The training split has no points")
    domain = tuple(program.neural[0].domain)
    cache = CircuitCache(enabled=cfg.circuit_cache)
    train_inference = CEInference(program, StreamContext.for_length(len(train_split.stream), cfg.window),
                                  domain, cache=cache, max_steps=cfg.max_resolution_steps)
    val_inference = CEInference(program, StreamContext.for_length(len(validation.stream), cfg.window),
                                domain, cache=cache, max_steps=cfg.max_resolution_steps)

    rng = np.random.default_rng(cfg.seed)
    optimizer = neural.OptimizerState.initial(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon)
    features = train_split.stream.features
    history = TrainHistory()
    best_params, best_accuracy, stale = params.copy(), -1.0, 0

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_split.points))
        total_loss = 0.0
        batch = neural.zeros_like(params)
        pending = 0
        for position in order:
            point = train_split.points[position]
            value, grads, dist, beliefs = point_gradient(params, features, train_inference, point, cfg.loss_epsilon)
            if not np.isfinite(value):
                path = _write_belief_snapshot(output_dir, epoch, point, beliefs, dist)
                raise NumericError(f"Non-finite loss at epoch {epoch}, point t={point[0]} ({point[1]})", path)
            total_loss += value
            batch = neural.accumulate(batch, grads)
            pending += 1
            if pending == cfg.batch_size:
                params, optimizer = neural.step(optimizer, params, batch)
                batch, pending = neural.zeros_like(params), 0
        if pending:
            params, optimizer = neural.step(optimizer, params, batch)

        metrics = evaluate(params, program, validation, cfg.window, inference=val_inference)
        seconds = time.perf_counter() - started
        record = EpochRecord(epoch, total_loss / len(order), metrics.ce_accuracy, metrics.simple_accuracy, seconds)
        history.records.append(record)
        logger.info(
            f"Epoch {epoch}: loss {record.train_loss:.4f}, val CE accuracy {record.val_ce_acc:.4f}, "
            f"val simple accuracy {record.val_simple_acc}, {seconds:.1f}s, cache {cache.stats()}"
        )

        if metrics.ce_accuracy > best_accuracy:
            best_params, best_accuracy, stale = params.copy(), metrics.ce_accuracy, 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                history.stopped_early = True
                logger.info(f"Early stopping after epoch {epoch}; best epoch {history.best_epoch}")
                break
    return best_params, history


def supervised_baseline(train_stream: EventStream, test_stream: EventStream, seed: int = 0, epochs: int = 20,
                        batch_size: int = 32, learning_rate: float = 1e-3) -> Tuple[float, neural.MLPParams]:
    """
    Train the same network directly on simple-event classes and return its
    test accuracy. Used to calibrate feature difficulty only.
    """
    if train_stream.true_classes is None or test_stream.true_classes is None:
        raise UsageError("Supervised training needs ground-truth classes")
    rng = np.random.default_rng(seed)
    params = neural.init(seed)
    optimizer = neural.OptimizerState.initial(params, learning_rate)
    x = neural.scale_features(train_stream.features)
    targets = np.eye(params.widths[-1])[train_stream.true_classes]
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(order), batch_size):
            rows = order[start:start + batch_size]
            output, trace = neural.forward(params, x[rows])
            grad_out = -targets[rows] / np.maximum(output, LOSS_EPSILON) / len(rows)
            params, optimizer = neural.step(optimizer, params, neural.backward(trace, params, grad_out))
    accuracy = float(np.mean(neural.predict_classes(params, test_stream.features) == test_stream.true_classes))
    logger.info(f"Supervised simple-event accuracy: {accuracy:.4f}")
    return accuracy, params
