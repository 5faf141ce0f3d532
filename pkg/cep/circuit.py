"""
Arithmetic circuits for exact query probabilities.

A set of proofs is compiled by Shannon expansion over the outcome variables,
latest timestamp first, so the proofs of a sequence query (which share the
literal at the query timestamp) compile to a chain whose size grows linearly
with the window. Evaluation and reverse-mode differentiation walk the
topologically ordered node list.
"""
import bisect
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .engine import ChoiceLiteral, Literal, NeuralLiteral, Proof, SearchTrace, StreamContext
from .exceptions import BindingError, ResourceError, ShapeError, UsageError
from .terms import Atom, Int, Struct, Term

logger = logging.getLogger('cep')

LEAF = 'leaf'
CONSTANT = 'constant'
SUM = 'sum'
PRODUCT = 'product'
COMPLEMENT = 'complement'

BELIEF_TOLERANCE = 1e-9
ENUMERATION_LIMIT = 7


@dataclass(frozen=True)
class Node:
    kind: str
    children: Tuple[int, ...] = ()
    timestamp: Optional[int] = None
    label: Optional[str] = None
    value: Optional[float] = None


@dataclass(frozen=True)
class Circuit:
    """Node DAG in topological order (children precede parents)"""
    nodes: Tuple[Node, ...]
    root: int

    def translate(self, delta: int) -> 'Circuit':
        if delta == 0:
            return self
        nodes = tuple(
            Node(node.kind, node.children, node.timestamp + delta, node.label, node.value)
            if node.kind == LEAF else node
            for node in self.nodes
        )
        return Circuit(nodes, self.root)

    def leaves(self) -> List[Tuple[int, str]]:
        return [(node.timestamp, node.label) for node in self.nodes if node.kind == LEAF]

    def timestamps(self) -> List[int]:
        return sorted({node.timestamp for node in self.nodes if node.kind == LEAF})

    def __len__(self):
        return len(self.nodes)


class BeliefTable:
    """Per-timestamp probability vectors over the neural domain"""

    def __init__(self, domain: Sequence[str], rows: Mapping[int, Any], validate: bool = True):
        self.domain = tuple(domain)
        self._index = {label: position for position, label in enumerate(self.domain)}
        self.rows: Dict[int, np.ndarray] = {int(t): np.asarray(row, dtype=np.float64) for t, row in rows.items()}
        if validate:
            self.validate()

    def validate(self):
        width = len(self.domain)
        for timestamp, row in self.rows.items():
            if row.shape != (width,):
                raise ShapeError(f"Belief row for timestamp {timestamp} has shape {row.shape}, expected ({width},)")
            if np.any(row < -BELIEF_TOLERANCE) or np.any(row > 1 + BELIEF_TOLERANCE):
                raise UsageError(f"Belief row for timestamp {timestamp} has entries outside [0, 1]")
            if abs(row.sum() - 1.0) > BELIEF_TOLERANCE:
                raise UsageError(f"Belief row for timestamp {timestamp} sums to {row.sum():.12g}")

    @classmethod
    def from_matrix(cls, domain: Sequence[str], matrix, timestamps: Optional[Iterable[int]] = None,
                    validate: bool = True) -> 'BeliefTable':
        matrix = np.asarray(matrix, dtype=np.float64)
        if timestamps is None:
            timestamps = range(matrix.shape[0])
        return cls(domain, dict(zip(timestamps, matrix)), validate=validate)

    @classmethod
    def uniform(cls, domain: Sequence[str], timestamps: Iterable[int]) -> 'BeliefTable':
        width = len(domain)
        return cls(domain, {t: np.full(width, 1.0 / width) for t in timestamps})

    @classmethod
    def one_hot(cls, domain: Sequence[str], classes: Sequence[int]) -> 'BeliefTable':
        """Certain perception: timestamp ``t`` observes class ``classes[t]``"""
        identity = np.eye(len(domain))
        return cls(domain, {t: identity[int(c)] for t, c in enumerate(classes)})

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UsageError(f"'{label}' is not in the belief domain") from None

    def value(self, timestamp: int, label: str) -> float:
        row = self.rows.get(timestamp)
        if row is None:
            raise BindingError(timestamp)
        return float(row[self.index(label)])

    def timestamps(self) -> List[int]:
        return sorted(self.rows)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'domain': list(self.domain),
            'rows': {str(t): [float(v) for v in self.rows[t]] for t in self.timestamps()},
        }


# ---------------------------------------------------------------------------
# Compilation

class _Builder:
    """Hash-consing node store shared by one compilation"""

    def __init__(self):
        self.nodes: List[Node] = []
        self._ids: Dict[Node, int] = {}
        self.memo: Dict[FrozenSet[FrozenSet[Literal]], int] = {}

    def add(self, node: Node) -> int:
        existing = self._ids.get(node)
        if existing is not None:
            return existing
        self.nodes.append(node)
        self._ids[node] = len(self.nodes) - 1
        return len(self.nodes) - 1

    def constant(self, value: float) -> int:
        return self.add(Node(CONSTANT, value=float(value)))

    def _constant_value(self, node_id: int) -> Optional[float]:
        node = self.nodes[node_id]
        return node.value if node.kind == CONSTANT else None

    def leaf(self, literal: Literal) -> int:
        if isinstance(literal, ChoiceLiteral):
            return self.constant(literal.probability)
        if literal.timestamp is None:
            raise UsageError(f"Circuit leaves need a single timestamp input; got {literal}")
        return self.add(Node(LEAF, timestamp=literal.timestamp, label=literal.outcome))

    def product(self, children: Sequence[int]) -> int:
        kept = []
        for child in children:
            value = self._constant_value(child)
            if value == 0.0:
                return self.constant(0.0)
            if value != 1.0:
                kept.append(child)
        if not kept:
            return self.constant(1.0)
        if len(kept) == 1:
            return kept[0]
        return self.add(Node(PRODUCT, tuple(kept)))

    def sum(self, children: Sequence[int]) -> int:
        kept = [child for child in children if self._constant_value(child) != 0.0]
        if not kept:
            return self.constant(0.0)
        if len(kept) == 1:
            return kept[0]
        return self.add(Node(SUM, tuple(kept)))

    def complement(self, child: int) -> int:
        value = self._constant_value(child)
        if value is not None:
            return self.constant(1.0 - value)
        return self.add(Node(COMPLEMENT, (child,)))


def _absorb(proofs: Iterable[FrozenSet[Literal]]) -> FrozenSet[FrozenSet[Literal]]:
    """Drop proofs that contain another proof; they add no satisfying worlds"""
    kept: List[FrozenSet[Literal]] = []
    for proof in sorted(set(proofs), key=len):
        if not any(other <= proof for other in kept):
            kept.append(proof)
    return frozenset(kept)


def _literal_order(literal: Literal) -> Tuple:
    if literal.timestamp is not None:
        return (1, literal.timestamp, literal.sort_key())
    return (0, 0, literal.sort_key())


def _expand(builder: _Builder, proofs: FrozenSet[FrozenSet[Literal]]) -> int:
    if not proofs:
        return builder.constant(0.0)
    if frozenset() in proofs:
        return builder.constant(1.0)
    cached = builder.memo.get(proofs)
    if cached is not None:
        return cached

    pivot = max((literal for proof in proofs for literal in proof), key=_literal_order)
    variable = pivot.variable
    by_value: Dict[Any, Literal] = {}
    without = []
    for proof in proofs:
        mentioned = [literal for literal in proof if literal.variable == variable]
        if mentioned:
            by_value.setdefault(mentioned[0].value, mentioned[0])
        else:
            without.append(proof)

    terms = []
    leaves = []
    for value in sorted(by_value, key=str):
        literal = by_value[value]
        leaf = builder.leaf(literal)
        leaves.append(leaf)
        residual = [proof - {literal} for proof in proofs if literal in proof]
        residual.extend(without)
        terms.append(builder.product([leaf, _expand(builder, _absorb(residual))]))
    if without:
        other = builder.complement(builder.sum(leaves))
        terms.append(builder.product([other, _expand(builder, _absorb(without))]))

    node_id = builder.sum(terms)
    builder.memo[proofs] = node_id
    return node_id


def compile_proofs(proofs: Iterable[Proof]) -> Circuit:
    """
    Exact circuit for the probability that at least one proof holds when every
    outcome variable is drawn independently. An empty proof set compiles to the
    constant 0.
    """
    builder = _Builder()
    root = _expand(builder, _absorb(proof.literals for proof in proofs))
    return Circuit(tuple(builder.nodes), root)


compile = compile_proofs


# ---------------------------------------------------------------------------
# Evaluation and gradients

def _forward(circuit: Circuit, beliefs: BeliefTable, offset: int) -> List[float]:
    values: List[float] = []
    for node in circuit.nodes:
        if node.kind == LEAF:
            values.append(beliefs.value(node.timestamp + offset, node.label))
        elif node.kind == CONSTANT:
            values.append(node.value)
        elif node.kind == SUM:
            values.append(sum(values[child] for child in node.children))
        elif node.kind == PRODUCT:
            result = 1.0
            for child in node.children:
                result *= values[child]
            values.append(result)
        else:
            values.append(1.0 - values[node.children[0]])
    return values


def evaluate(circuit: Circuit, beliefs: BeliefTable, offset: int = 0) -> float:
    """Root value with every leaf timestamp shifted by ``offset``"""
    return _forward(circuit, beliefs, offset)[circuit.root]


def evaluate_with_gradient(circuit: Circuit, beliefs: BeliefTable,
                           offset: int = 0) -> Tuple[float, Dict[int, np.ndarray]]:
    """
    Root value and its partial derivatives with respect to the belief rows of
    the timestamps the circuit mentions, in one reverse pass.
    """
    values = _forward(circuit, beliefs, offset)
    adjoints = [0.0] * len(circuit.nodes)
    adjoints[circuit.root] = 1.0
    width = len(beliefs.domain)
    grads: Dict[int, np.ndarray] = {}
    for node_id in range(circuit.root, -1, -1):
        adjoint = adjoints[node_id]
        node = circuit.nodes[node_id]
        if node.kind == LEAF:
            timestamp = node.timestamp + offset
            row = grads.setdefault(timestamp, np.zeros(width))
            row[beliefs.index(node.label)] += adjoint
        elif adjoint == 0.0:
            continue
        elif node.kind == SUM:
            for child in node.children:
                adjoints[child] += adjoint
        elif node.kind == PRODUCT:
            for position, child in enumerate(node.children):
                partial = adjoint
                for other_position, other in enumerate(node.children):
                    if other_position != position:
                        partial *= values[other]
                adjoints[child] += partial
        elif node.kind == COMPLEMENT:
            adjoints[node.children[0]] -= adjoint
    return values[circuit.root], grads


def gradient(circuit: Circuit, beliefs: BeliefTable, offset: int = 0) -> Dict[int, np.ndarray]:
    """Partial derivatives for every row of ``beliefs``; zero rows where the circuit has no leaf"""
    _, grads = evaluate_with_gradient(circuit, beliefs, offset)
    width = len(beliefs.domain)
    return {t: grads.get(t, np.zeros(width)) for t in beliefs.timestamps()}


# ---------------------------------------------------------------------------
# Enumeration oracle

def brute_force_prob(proofs: Iterable[Proof], beliefs: BeliefTable, limit: int = ENUMERATION_LIMIT) -> float:
    """
    Probability that some proof holds, by summing over joint assignments of the
    mentioned variables. Outcomes no proof mentions are pooled into one
    remainder value per variable, which leaves the sum unchanged.
    """
    proofs = list(proofs)
    literals = {literal for proof in proofs for literal in proof.literals}
    timestamps = {literal.timestamp for literal in literals if isinstance(literal, NeuralLiteral)}
    if len(timestamps) > limit:
        raise ResourceError(f"Enumeration over {len(timestamps)} timestamps exceeds the limit of {limit}")

    outcomes: Dict[Tuple, Dict[Any, float]] = {}
    for literal in sorted(literals, key=lambda literal: literal.sort_key()):
        if isinstance(literal, NeuralLiteral):
            probability = beliefs.value(literal.timestamp, literal.outcome)
        else:
            probability = literal.probability
        outcomes.setdefault(literal.variable, {})[literal.value] = probability

    variables = list(outcomes)
    choices = []
    for variable in variables:
        values = list(outcomes[variable].items())
        remainder = 1.0 - sum(probability for _, probability in values)
        values.append((None, remainder))
        choices.append(values)

    total = 0.0
    for combination in itertools.product(*choices):
        assignment = {variable: value for variable, (value, _) in zip(variables, combination)}
        if any(proof.satisfied_by(assignment) for proof in proofs):
            weight = 1.0
            for _, probability in combination:
                weight *= probability
            total += weight
    return total


# ---------------------------------------------------------------------------
# Translation-invariant cache

@dataclass(frozen=True)
class CircuitKey:
    program: str
    window: int
    query: str
    offsets: Tuple[int, ...]
    is_first: bool


def _template(term: Term, timestamp: int) -> str:
    if isinstance(term, Int) and term.value == timestamp:
        return 'T'
    if isinstance(term, Struct):
        return f"{term.functor}(" + ', '.join(_template(arg, timestamp) for arg in term.args) + ")"
    return str(term)


def circuit_key(program_fingerprint: str, context: StreamContext, query: Atom, t: int) -> CircuitKey:
    """
    Key for the circuit of ``query`` at timestamp ``t``: the query with ``t``
    abstracted, plus the layout of the stream timestamps in (t - W, t].
    """
    low = bisect.bisect_right(context.timestamps, t - context.window)
    high = bisect.bisect_right(context.timestamps, t)
    offsets = tuple(ts - t for ts in context.timestamps[low:high])
    is_first = bool(context.timestamps) and context.timestamps[0] == t
    return CircuitKey(program_fingerprint, context.window, _template(query.as_term(), t), offsets, is_first)


class CircuitCache:
    """
    Circuits stored anchored at timestamp 0 and re-bound by offset.

    Confined to one trainer or evaluator thread. Each entry keeps the trace of
    the search that produced it, and a lookup at ``t`` only returns an entry
    whose recorded time constraints hold at ``t``. A circuit is never stored
    when its search read the stream outside (t - W, t] or its leaves reach
    there, because the key does not describe the stream there.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._entries: Dict[CircuitKey, List[Tuple[SearchTrace, Circuit]]] = {}
        self.hits = 0
        self.misses = 0
        self.rejected = 0

    def lookup(self, key: CircuitKey, t: int) -> Optional[Circuit]:
        if not self.enabled:
            return None
        for trace, circuit in self._entries.get(key, ()):
            if trace.holds_at(t):
                self.hits += 1
                return circuit
        self.misses += 1
        return None

    def store(self, key: CircuitKey, circuit: Circuit, t: int, trace: SearchTrace) -> bool:
        """Keep ``circuit``, compiled from the proofs of an anchored search at ``t``"""
        if not self.enabled:
            return False
        if trace.anchor != t:
            raise UsageError(f"Search trace is anchored at {trace.anchor}, not at {t}")
        if not trace.reusable or any(not (t - key.window < timestamp <= t) for timestamp in circuit.timestamps()):
            self.rejected += 1
            return False
        self._entries.setdefault(key, []).append((trace, circuit.translate(-t)))
        return True

    def clear(self):
        self._entries.clear()
        self.hits = self.misses = self.rejected = 0

    def stats(self) -> Dict[str, int]:
        return {'entries': len(self), 'hits': self.hits, 'misses': self.misses, 'rejected': self.rejected}

    def __len__(self):
        return sum(len(entries) for entries in self._entries.values())


def to_json(circuit: Circuit) -> Dict[str, Any]:
    nodes = []
    for node_id, node in enumerate(circuit.nodes):
        entry: Dict[str, Any] = {'id': node_id, 'kind': node.kind, 'children': list(node.children)}
        if node.kind == LEAF:
            entry['leaf'] = {'timestamp': node.timestamp, 'class': node.label}
        if node.kind == CONSTANT:
            entry['value'] = node.value
        nodes.append(entry)
    return {'root': circuit.root, 'size': len(circuit.nodes), 'nodes': nodes}
