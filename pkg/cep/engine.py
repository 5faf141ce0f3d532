"""
SLD-resolution proof search over rule programs with neural annotated
disjunctions.

``solve`` enumerates the proofs of a ground query as sets of outcome literals
(one categorical choice per neural call or AD instance). Built-ins and the
stream context facts ``window/1`` and ``allTimeStamps/1`` are evaluated during
search and never appear in proofs.
"""
import bisect
import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Set, Tuple, Union

from .exceptions import EvaluationError, ResourceError, UsageError
from .terms import (
    Atom, Clause, Const, Int, Program, Struct, Term, Var, format_atom, is_ground,
    list_elements, make_list,
)

logger = logging.getLogger('cep')

DEFAULT_MAX_STEPS = 10000

# previousTimeStamp/3 answer for the first timestamp of a stream. Stream
# timestamps are nonnegative, so the T >= 0 guards of the framework reject it.
NO_PREVIOUS = -1

ARITHMETIC_COMPARISONS = {
    '=:=': lambda a, b: a == b,
    '=\\=': lambda a, b: a != b,
    '<': lambda a, b: a < b,
    '=<': lambda a, b: a <= b,
    '>': lambda a, b: a > b,
    '>=': lambda a, b: a >= b,
}

Substitution = Dict[Var, Term]


# ---------------------------------------------------------------------------
# Anchored search traces

@dataclass
class SearchTrace:
    """
    What one proof search observed about absolute time.

    A search anchored at the query timestamp ``anchor`` tags every integer
    with its slope in the anchor (see ``Int.slope``). Comparisons between
    values of equal slope answer the same way at every anchor; the others are
    kept as constraints, and the proofs carry over to another anchor exactly
    when ``holds_at`` accepts it. Reading a value from outside
    (anchor - window, anchor] clears ``reusable``.
    """
    anchor: Optional[int] = None
    window: int = 0
    reusable: bool = True
    constraints: Set[Tuple] = field(default_factory=set)

    @property
    def anchored(self) -> bool:
        return self.anchor is not None

    def taint(self):
        if self.anchored:
            self.reusable = False

    def observe(self, operator: str, left: Int, right: Int, outcome: bool):
        if not self.anchored:
            return
        if left.slope is None or right.slope is None:
            self.reusable = False
        elif left.slope != right.slope:
            self.constraints.add((
                operator,
                left.value - left.slope * self.anchor, left.slope,
                right.value - right.slope * self.anchor, right.slope,
                outcome,
            ))

    def holds_at(self, t: int) -> bool:
        return all(
            ARITHMETIC_COMPARISONS[operator](left + left_slope * t, right + right_slope * t) == outcome
            for operator, left, left_slope, right, right_slope, outcome in self.constraints
        )

    def in_window(self, value: Int) -> bool:
        return value.slope == 1 and self.anchor - self.window < value.value <= self.anchor

    def previous_slope(self, timestamp: Int, previous: Optional[int]) -> Optional[int]:
        """Slope of the stream timestamp before ``timestamp``, or None when the window does not determine it"""
        if not self.anchored:
            return 0
        if previous is None or not self.in_window(timestamp):
            self.reusable = False
            return None
        if previous == NO_PREVIOUS:
            # Whether the anchor starts the stream is part of the cache key.
            return 0 if timestamp.value == self.anchor else None
        return 1 if previous > self.anchor - self.window else None


def _linear_slope(left: Optional[int], right: Optional[int], sign: int) -> Optional[int]:
    if left is None or right is None:
        return None
    return left + sign * right


def _product_slope(left: Int, right: Int) -> Optional[int]:
    if left.slope == 0 and right.slope is not None:
        return right.slope * left.value
    if right.slope == 0 and left.slope is not None:
        return left.slope * right.value
    return None


# ---------------------------------------------------------------------------
# Unification

def walk(term: Term, bindings: Mapping[Var, Term]) -> Term:
    while isinstance(term, Var) and term in bindings:
        term = bindings[term]
    return term


def resolve(term: Term, bindings: Mapping[Var, Term]) -> Term:
    """Apply ``bindings`` to ``term`` all the way down"""
    term = walk(term, bindings)
    if isinstance(term, Struct):
        return Struct(term.functor, tuple(resolve(arg, bindings) for arg in term.args))
    return term


def _occurs(var: Var, term: Term, bindings: Mapping[Var, Term]) -> bool:
    stack = [term]
    while stack:
        current = walk(stack.pop(), bindings)
        if current == var:
            return True
        if isinstance(current, Struct):
            stack.extend(current.args)
    return False


def _unify(a: Term, b: Term, bindings: Substitution, trace: Optional[SearchTrace] = None) -> bool:
    """Extend ``bindings`` in place; on failure the dict is left partially extended"""
    tracing = trace is not None and trace.anchored
    stack = [(a, b)]
    while stack:
        left, right = stack.pop()
        left = walk(left, bindings)
        right = walk(right, bindings)
        if left is right:
            continue
        if isinstance(left, Int) and isinstance(right, Int):
            equal = left.value == right.value
            if tracing:
                trace.observe('=:=', left, right, equal)
            if not equal:
                return False
            continue
        # Equal structures may still hide integers of different slopes.
        if not (tracing and isinstance(left, Struct)) and left == right:
            continue
        if isinstance(left, Var):
            if _occurs(left, right, bindings):
                return False
            bindings[left] = right
        elif isinstance(right, Var):
            if _occurs(right, left, bindings):
                return False
            bindings[right] = left
        elif isinstance(left, Struct) and isinstance(right, Struct):
            if left.functor != right.functor or len(left.args) != len(right.args):
                return False
            stack.extend(zip(left.args, right.args))
        else:
            return False
    return True


def unify_with(a: Term, b: Term, bindings: Mapping[Var, Term],
               trace: Optional[SearchTrace] = None) -> Optional[Substitution]:
    extended = dict(bindings)
    return extended if _unify(a, b, extended, trace) else None


def unify(a: Term, b: Term) -> Optional[Substitution]:
    """
    Most general unifier of two terms, or None when they do not unify.
    The returned substitution is idempotent: every binding is fully resolved.
    """
    bindings = unify_with(a, b, {})
    if bindings is None:
        return None
    return {var: resolve(value, bindings) for var, value in bindings.items()}


def _anchor_term(term: Term, t: int) -> Term:
    if isinstance(term, Int) and term.value == t:
        return Int(t, slope=1)
    if isinstance(term, Struct):
        return Struct(term.functor, tuple(_anchor_term(arg, t) for arg in term.args))
    return term


# ---------------------------------------------------------------------------
# Stream context and proof literals

@dataclass(frozen=True)
class StreamContext:
    """Timestamp universe and window a query is solved against"""
    timestamps: Tuple[int, ...]
    window: int

    def __post_init__(self):
        object.__setattr__(self, 'timestamps', tuple(int(t) for t in self.timestamps))
        if self.window < 1:
            raise UsageError(f"Window must be at least 1, got {self.window}")
        if self.timestamps and self.timestamps[0] < 0:
            raise UsageError(f"Stream timestamps must be nonnegative, got {self.timestamps[0]}")
        if any(later <= earlier for earlier, later in zip(self.timestamps, self.timestamps[1:])):
            raise UsageError("Stream timestamps must be strictly increasing")

    @classmethod
    def for_length(cls, length: int, window: int) -> 'StreamContext':
        return cls(tuple(range(length)), window)

    @cached_property
    def timestamps_term(self) -> Term:
        # Elements are opaque to anchored searches: only previousTimeStamp/3
        # reads the list in a way the cache key describes.
        return make_list(Int(t, slope=None) for t in self.timestamps)

    def __contains__(self, timestamp) -> bool:
        index = bisect.bisect_left(self.timestamps, timestamp)
        return index < len(self.timestamps) and self.timestamps[index] == timestamp

    def previous(self, timestamp: int) -> Optional[int]:
        """
        Largest timestamp below ``timestamp``; NO_PREVIOUS when ``timestamp``
        is the first one; None otherwise.
        """
        if not self.timestamps or self.timestamps[0] > timestamp:
            return None
        if self.timestamps[0] == timestamp:
            return NO_PREVIOUS
        return self.timestamps[bisect.bisect_left(self.timestamps, timestamp) - 1]



@dataclass(frozen=True)
class NeuralLiteral:
    """The neural predicate ``network`` classified ``inputs`` as ``outcome``"""
    network: str
    inputs: Tuple[Term, ...]
    outcome: str

    @property
    def variable(self) -> Tuple:
        return ('nn', self.network, self.inputs)

    @property
    def value(self) -> str:
        return self.outcome

    @property
    def timestamp(self) -> Optional[int]:
        if len(self.inputs) == 1 and isinstance(self.inputs[0], Int):
            return self.inputs[0].value
        return None

    def sort_key(self) -> Tuple:
        return (0, self.network, tuple(str(term) for term in self.inputs), self.outcome)

    def __str__(self):
        inputs = ', '.join(str(term) for term in self.inputs)
        return f"{self.network}({inputs})={self.outcome}"


@dataclass(frozen=True)
class ChoiceLiteral:
    """Ground instance ``instance`` of annotated disjunction ``ad_index`` chose ``alternative``"""
    ad_index: int
    instance: Tuple[Term, ...]
    alternative: int
    probability: float

    @property
    def variable(self) -> Tuple:
        return ('ad', self.ad_index, self.instance)

    @property
    def value(self) -> int:
        return self.alternative

    @property
    def timestamp(self) -> Optional[int]:
        return None

    def sort_key(self) -> Tuple:
        return (1, str(self.ad_index), tuple(str(term) for term in self.instance), str(self.alternative))

    def __str__(self):
        return f"ad{self.ad_index}({', '.join(str(term) for term in self.instance)})={self.alternative}"


Literal = Union[NeuralLiteral, ChoiceLiteral]


@dataclass(frozen=True)
class Proof:
    """One derivation of a query: the conjunction of outcome literals it relies on"""
    literals: FrozenSet[Literal]

    def satisfied_by(self, assignment: Mapping[Tuple, Any]) -> bool:
        return all(assignment.get(literal.variable) == literal.value for literal in self.literals)

    @property
    def timestamps(self) -> List[int]:
        return sorted({literal.timestamp for literal in self.literals if literal.timestamp is not None})

    def sorted_literals(self) -> List[Literal]:
        return sorted(self.literals, key=lambda literal: literal.sort_key())

    def sort_key(self) -> Tuple:
        return tuple(literal.sort_key() for literal in self.sorted_literals())

    def __str__(self):
        return '{' + ', '.join(str(literal) for literal in self.sorted_literals()) + '}'


# ---------------------------------------------------------------------------
# Search

@dataclass(frozen=True)
class _Goal:
    atom: Atom
    origin: str


@dataclass(frozen=True)
class _ChoiceMarker:
    """Pushed after an AD body; records the choice once the body has bound the instance"""
    ad_index: int
    alternative: int
    probability: float
    heads: Tuple[Atom, ...]
    origin: str


# Goal lists are cons pairs (entry, rest) ending in None.
_GoalList = Optional[Tuple[Any, Any]]


@dataclass
class _State:
    goals: _GoalList
    bindings: Substitution
    literals: Dict[Tuple, Literal]


def _push(entries: Sequence[Any], rest: _GoalList) -> _GoalList:
    for entry in reversed(entries):
        rest = (entry, rest)
    return rest


def _int_slopes(term: Term) -> Tuple:
    if isinstance(term, Int):
        return (term.slope,)
    if isinstance(term, Struct):
        return tuple(slope for arg in term.args for slope in _int_slopes(arg))
    return ()


def _observe_shared_variables(proofs: Sequence[Proof], trace: SearchTrace):
    """Proofs share an outcome variable when its terms compare equal; record those comparisons"""
    variables: Dict[Tuple, Tuple] = {}
    for proof in proofs:
        for literal in proof.literals:
            kind, name, terms = literal.variable
            variables.setdefault((literal.variable, _int_slopes(Struct(kind, terms))), literal.variable)
    distinct = list(variables.values())
    for position, (kind, name, terms) in enumerate(distinct):
        for other_kind, other_name, other_terms in distinct[position + 1:]:
            if (other_kind, other_name) == (kind, name) and len(other_terms) == len(terms):
                _unify(Struct(kind, terms), Struct(kind, other_terms), {}, trace)


def _minimal(proofs: Iterator[Proof]) -> List[Proof]:
    unique = sorted(set(proofs), key=lambda proof: (len(proof.literals), proof.sort_key()))
    kept: List[Proof] = []
    for proof in unique:
        if not any(other.literals < proof.literals for other in kept):
            kept.append(proof)
    return sorted(kept, key=lambda proof: proof.sort_key())


class Engine:
    """
    Depth-first SLD resolution with leftmost goal selection.

    The engine is immutable once built, so one instance can serve concurrent
    queries over the same program.
    """

    ARITHMETIC_COMPARISONS = ARITHMETIC_COMPARISONS

    def __init__(self, program: Program, max_steps: int = DEFAULT_MAX_STEPS, native_builtins: bool = True):
        self.program = program
        self.max_steps = max_steps
        self.native_builtins = native_builtins
        self._clauses: Dict[Tuple[str, int], List[Clause]] = {}
        for clause in program.clauses:
            self._clauses.setdefault(clause.head.key, []).append(clause)
        self._ad_heads: Dict[Tuple[str, int], List[Tuple[int, int]]] = {}
        for ad_index, ad in enumerate(program.ads):
            for alternative, (_, head) in enumerate(ad.alternatives):
                self._ad_heads.setdefault(head.key, []).append((ad_index, alternative))
        self._neural = {declaration.key: declaration for declaration in program.neural}

    # -- public API -------------------------------------------------------

    def solve(self, context: StreamContext, query: Atom) -> List[Proof]:
        """Every minimal consistent proof of a ground query, deduplicated and in canonical order"""
        if not query.is_ground():
            raise UsageError(f"Query {query} must be ground; use Engine.query for open goals")
        proofs = _minimal(proof for _, proof in self._search(context, query, SearchTrace()))
        logger.debug(f"Solved {query}: {len(proofs)} proofs")
        return proofs

    def solve_anchored(self, context: StreamContext, query: Atom, t: int) -> Tuple[List[Proof], SearchTrace]:
        """
        ``solve`` for a query about timestamp ``t``, together with the trace
        that tells at which other timestamps the translated proofs still hold.
        """
        if not query.is_ground():
            raise UsageError(f"Query {query} must be ground; use Engine.query for open goals")
        trace = SearchTrace(anchor=t, window=context.window)
        anchored = Atom(query.predicate, tuple(_anchor_term(arg, t) for arg in query.args))
        found = [proof for _, proof in self._search(context, anchored, trace)]
        if trace.reusable:
            _observe_shared_variables(found, trace)
        proofs = _minimal(iter(found))
        logger.debug(f"Solved {query}: {len(proofs)} proofs, {len(trace.constraints)} time constraints, "
                     f"reusable={trace.reusable}")
        return proofs, trace

    def query(self, context: StreamContext, goal: Atom) -> List[Tuple[Dict[str, Term], Proof]]:
        """Answer substitutions for the variables of ``goal``, each with the proof that produced it"""
        variables = sorted({var for var in goal.variables() if var.name != '_'}, key=lambda var: var.name)
        answers = []
        seen = set()
        for bindings, proof in self._search(context, goal, SearchTrace()):
            answer = {var.name: resolve(var, bindings) for var in variables}
            key = (tuple(str(answer[var.name]) for var in variables), proof)
            if key not in seen:
                seen.add(key)
                answers.append((answer, proof))
        return answers

    # -- search -----------------------------------------------------------

    def _search(self, context: StreamContext, goal: Atom, trace: SearchTrace) -> Iterator[Tuple[Substitution, Proof]]:
        counter = itertools.count()
        # Named query variables keep their names; each anonymous one becomes fresh.
        named = {var.name: var for var in goal.variables() if var.name != '_'}
        goal = self._rename_atom(goal, named, counter)
        stack = [_State((_Goal(goal, 'query'), None), {}, {})]
        steps = 0
        while stack:
            state = stack.pop()
            if state.goals is None:
                yield state.bindings, Proof(frozenset(state.literals.values()))
                continue
            steps += 1
            if steps > self.max_steps:
                raise ResourceError(
                    f"Resolution step bound of {self.max_steps} exceeded while solving {goal}"
                )
            entry, rest = state.goals
            if isinstance(entry, _ChoiceMarker):
                successor = self._record_choice(entry, rest, state, trace)
                successors = [successor] if successor is not None else []
            else:
                successors = self._expand(entry, rest, state, context, counter, trace)
            # Reverse so the first alternative is explored first.
            stack.extend(reversed(successors))

    def _expand(self, entry: _Goal, rest: _GoalList, state: _State, context: StreamContext, counter,
                trace: SearchTrace) -> List[_State]:
        atom = entry.atom
        key = atom.key
        bindings = state.bindings

        if key == ('true', 0):
            return [_State(rest, bindings, state.literals)]
        if key[1] == 2 and (key[0] in ('=', '\\=', 'is') or key[0] in ARITHMETIC_COMPARISONS):
            return self._builtin(entry, rest, state, trace)
        if key == ('window', 1):
            return self._unify_successor(atom.args[0], Int(context.window), rest, state, trace)
        if key == ('allTimeStamps', 1):
            target = walk(atom.args[0], bindings)
            if isinstance(target, Var):
                # The context list is ground, so no occurs check is needed.
                extended = dict(bindings)
                extended[target] = context.timestamps_term
                return [_State(rest, extended, state.literals)]
            return self._unify_successor(target, context.timestamps_term, rest, state, trace)
        if self.native_builtins and key == ('reverse', 2):
            return self._native_reverse(entry, rest, state, trace)
        if self.native_builtins and key == ('previousTimeStamp', 3):
            return self._native_previous(entry, rest, state, context, trace)
        if key in self._neural:
            return self._neural_call(entry, rest, state, trace)

        successors = []
        for ad_index, alternative in self._ad_heads.get(key, ()):
            successors.extend(self._ad_call(entry, rest, state, ad_index, alternative, counter, trace))
        for clause in self._clauses.get(key, ()):
            mapping: Dict[str, Var] = {}
            head = self._rename_atom(clause.head, mapping, counter)
            extended = unify_with(atom.as_term(), head.as_term(), bindings, trace)
            if extended is None:
                continue
            origin = str(clause)
            body = [_Goal(self._rename_atom(goal, mapping, counter), origin) for goal in clause.body]
            successors.append(_State(_push(body, rest), extended, state.literals))
        if not successors and key not in self._clauses and key not in self._ad_heads:
            raise EvaluationError(f"Unknown predicate {atom.indicator} called from '{entry.origin}'")
        return successors

    def _unify_successor(self, a: Term, b: Term, rest: _GoalList, state: _State,
                         trace: SearchTrace) -> List[_State]:
        extended = unify_with(a, b, state.bindings, trace)
        return [] if extended is None else [_State(rest, extended, state.literals)]

    # -- built-ins --------------------------------------------------------

    def _arithmetic(self, term: Term, bindings: Substitution, entry: _Goal, trace: SearchTrace) -> Int:
        term = walk(term, bindings)
        if isinstance(term, Int):
            return term
        if isinstance(term, Var):
            raise EvaluationError(
                f"Unbound arithmetic in clause '{entry.origin}': {format_atom(entry.atom)}"
            )
        if isinstance(term, Struct):
            values = [self._arithmetic(arg, bindings, entry, trace) for arg in term.args]
            if len(values) == 1 and term.functor == '-':
                operand = values[0]
                return Int(-operand.value, _linear_slope(0, operand.slope, -1))
            if len(values) == 2:
                left, right = values
                if term.functor == '+':
                    return Int(left.value + right.value, _linear_slope(left.slope, right.slope, 1))
                if term.functor == '-':
                    return Int(left.value - right.value, _linear_slope(left.slope, right.slope, -1))
                if term.functor == '*':
                    return Int(left.value * right.value, _product_slope(left, right))
                if term.functor in ('//', 'mod'):
                    if right.slope != 0:
                        # Whether the divisor is zero depends on the anchor.
                        trace.taint()
                    if right.value == 0:
                        raise EvaluationError(f"Division by zero in clause '{entry.origin}'")
                    value = left.value // right.value if term.functor == '//' else left.value % right.value
                    return Int(value, 0 if left.slope == 0 and right.slope == 0 else None)
        raise EvaluationError(f"Cannot evaluate {term} as a number in clause '{entry.origin}'")

    def _builtin(self, entry: _Goal, rest: _GoalList, state: _State, trace: SearchTrace) -> List[_State]:
        predicate = entry.atom.predicate
        left, right = entry.atom.args
        if predicate == '=':
            return self._unify_successor(left, right, rest, state, trace)
        if predicate == '\\=':
            if unify_with(left, right, state.bindings, trace) is None:
                return [_State(rest, state.bindings, state.literals)]
            return []
        if predicate == 'is':
            value = self._arithmetic(right, state.bindings, entry, trace)
            return self._unify_successor(left, value, rest, state, trace)
        left_value = self._arithmetic(left, state.bindings, entry, trace)
        right_value = self._arithmetic(right, state.bindings, entry, trace)
        outcome = ARITHMETIC_COMPARISONS[predicate](left_value.value, right_value.value)
        trace.observe(predicate, left_value, right_value, outcome)
        return [_State(rest, state.bindings, state.literals)] if outcome else []

    def _native_reverse(self, entry: _Goal, rest: _GoalList, state: _State, trace: SearchTrace) -> List[_State]:
        source, target = entry.atom.args
        elements = list_elements(resolve(source, state.bindings))
        if elements is not None:
            return self._unify_successor(target, make_list(reversed(elements)), rest, state, trace)
        elements = list_elements(resolve(target, state.bindings))
        if elements is not None:
            return self._unify_successor(source, make_list(reversed(elements)), rest, state, trace)
        raise EvaluationError(f"reverse/2 needs a proper list in clause '{entry.origin}'")

    def _native_previous(self, entry: _Goal, rest: _GoalList, state: _State, context: StreamContext,
                         trace: SearchTrace) -> List[_State]:
        timestamp_term, timestamps_term, previous_term = entry.atom.args
        timestamp = self._arithmetic(timestamp_term, state.bindings, entry, trace)
        timestamps_term = walk(timestamps_term, state.bindings)
        if timestamps_term is context.timestamps_term:
            previous = context.previous(timestamp.value)
            slope = trace.previous_slope(timestamp, previous)
        else:
            elements = list_elements(resolve(timestamps_term, state.bindings))
            if elements is None or not all(isinstance(element, Int) for element in elements):
                raise EvaluationError(
                    f"previousTimeStamp/3 needs a list of integers in clause '{entry.origin}'"
                )
            if timestamp.slope != 0 or any(element.slope != 0 for element in elements):
                trace.taint()
            previous = _previous_in(timestamp.value, [element.value for element in elements])
            slope = 0
        if previous is None:
            return []
        return self._unify_successor(previous_term, Int(previous, slope), rest, state, trace)

    # -- probabilistic calls ------------------------------------------------

    def _observe_variable(self, variable: Tuple, literals: Mapping[Tuple, Literal], trace: SearchTrace):
        """Record the comparisons behind looking ``variable`` up among the literals chosen so far"""
        if not trace.anchored:
            return
        kind, name, terms = variable
        for other_kind, other_name, other_terms in literals:
            if (other_kind, other_name) == (kind, name) and len(other_terms) == len(terms):
                _unify(Struct(kind, other_terms), Struct(kind, terms), {}, trace)

    def _neural_call(self, entry: _Goal, rest: _GoalList, state: _State, trace: SearchTrace) -> List[_State]:
        declaration = self._neural[entry.atom.key]
        arity = len(declaration.inputs)
        inputs = tuple(resolve(arg, state.bindings) for arg in entry.atom.args[:arity])
        if not all(is_ground(term) for term in inputs):
            raise EvaluationError(
                f"Neural predicate {declaration.head.indicator} called with non-ground input "
                f"in clause '{entry.origin}'"
            )
        if trace.anchored and len(inputs) == 1 and isinstance(inputs[0], Int) and not trace.in_window(inputs[0]):
            trace.taint()
        outcome_term = walk(entry.atom.args[arity], state.bindings)
        variable = ('nn', declaration.network, inputs)
        self._observe_variable(variable, state.literals, trace)
        existing = state.literals.get(variable)
        successors = []
        for outcome in declaration.domain:
            if existing is not None and existing.value != outcome:
                continue
            extended = unify_with(outcome_term, Const(outcome), state.bindings, trace)
            if extended is None:
                continue
            literals = state.literals
            if existing is None:
                literals = dict(literals)
                literals[variable] = NeuralLiteral(declaration.network, inputs, outcome)
            successors.append(_State(rest, extended, literals))
        return successors

    def _ad_call(self, entry: _Goal, rest: _GoalList, state: _State, ad_index: int, alternative: int, counter,
                 trace: SearchTrace) -> List[_State]:
        ad = self.program.ads[ad_index]
        mapping: Dict[str, Var] = {}
        heads = tuple(self._rename_atom(head, mapping, counter) for head in ad.heads)
        extended = unify_with(entry.atom.as_term(), heads[alternative].as_term(), state.bindings, trace)
        if extended is None:
            return []
        origin = str(ad)
        body = [_Goal(self._rename_atom(goal, mapping, counter), origin) for goal in ad.body]
        marker = _ChoiceMarker(ad_index, alternative, ad.alternatives[alternative][0], heads, origin)
        return [_State(_push(body + [marker], rest), extended, state.literals)]

    def _record_choice(self, marker: _ChoiceMarker, rest: _GoalList, state: _State,
                       trace: SearchTrace) -> Optional[_State]:
        instance = tuple(resolve(head.as_term(), state.bindings) for head in marker.heads)
        if not all(is_ground(term) for term in instance):
            raise EvaluationError(f"Annotated disjunction '{marker.origin}' reached with a non-ground head")
        variable = ('ad', marker.ad_index, instance)
        self._observe_variable(variable, state.literals, trace)
        existing = state.literals.get(variable)
        if existing is not None:
            return _State(rest, state.bindings, state.literals) if existing.value == marker.alternative else None
        literals = dict(state.literals)
        literals[variable] = ChoiceLiteral(marker.ad_index, instance, marker.alternative, marker.probability)
        return _State(rest, state.bindings, literals)

    # -- renaming ---------------------------------------------------------

    def _rename_term(self, term: Term, mapping: Dict[str, Var], counter) -> Term:
        if isinstance(term, Var):
            if term.name == '_':
                return Var(f"_#{next(counter)}")
            if term.name not in mapping:
                mapping[term.name] = Var(f"{term.name}#{next(counter)}")
            return mapping[term.name]
        if isinstance(term, Struct):
            return Struct(term.functor, tuple(self._rename_term(arg, mapping, counter) for arg in term.args))
        return term

    def _rename_atom(self, atom: Atom, mapping: Dict[str, Var], counter) -> Atom:
        if not atom.args:
            return atom
        return Atom(atom.predicate, tuple(self._rename_term(arg, mapping, counter) for arg in atom.args))


def _previous_in(timestamp: int, timestamps: List[int]) -> Optional[int]:
    if not timestamps or timestamps[0] > timestamp:
        return None
    if timestamps[0] == timestamp:
        return NO_PREVIOUS
    previous = timestamps[0]
    for value in timestamps[1:]:
        if value >= timestamp:
            break
        previous = value
    return previous


def solve(program: Program, context: StreamContext, query: Atom,
          max_steps: int = DEFAULT_MAX_STEPS, native_builtins: bool = True) -> List[Proof]:
    return Engine(program, max_steps=max_steps, native_builtins=native_builtins).solve(context, query)


def ce_label(index: int) -> str:
    return f"ce_{index}"


def happens_at(label: str, timestamp: int) -> Atom:
    """The ground query ``happensAt(label, timestamp)``"""
    return Atom('happensAt', (Const(label), Int(timestamp)))


def label_oracle(classes: Sequence[int], window: int, t: int) -> Optional[str]:
    """
    The complex event at ``t`` under exact perception: ``ce_N`` when the class
    N observed at ``t`` occurred at some P with t - window < P < t.
    """
    if not 0 <= t < len(classes):
        raise UsageError(f"Timestamp {t} is outside the stream (0..{len(classes) - 1})")
    current = classes[t]
    for previous in range(max(0, t - window + 1), t):
        if classes[previous] == current:
            return ce_label(int(current))
    return None
