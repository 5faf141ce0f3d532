"""
Data types of the rule language: terms, atoms, clauses, annotated
disjunctions, neural declarations and programs, plus the pretty printer that
renders them back to parseable text.

Lists are built from cons cells: ``Struct('.', (head, tail))`` terminated by
``NIL``. Use ``make_list`` / ``list_elements`` rather than building cells by hand.
"""
import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, List, Optional, Tuple, Union


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Const:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Int:
    value: int
    # Provenance used by anchored searches: value == offset + slope * t for the
    # query timestamp t. None marks a value read from outside the stream window
    # the search is anchored to. Ignored by equality and hashing.
    slope: Optional[int] = field(default=0, compare=False, repr=False)

    def __str__(self):
        return str(self.value)


@dataclass(frozen=True)
class Struct:
    functor: str
    args: Tuple['Term', ...]

    def __str__(self):
        return format_term(self)


Term = Union[Var, Const, Int, Struct]

NIL = Const('[]')
CONS = '.'

# Infix operators usable inside terms, with their binding strength.
ARITHMETIC_OPERATORS = {'+': 500, '-': 500, '*': 400, '//': 400, 'mod': 400}
# Infix operators usable as body goals.
COMPARISON_OPERATORS = ('is', '=', '\\=', '=:=', '=\\=', '<', '=<', '>', '>=')


def make_list(elements: Iterable[Term], tail: Term = NIL) -> Term:
    result = tail
    for element in reversed(list(elements)):
        result = Struct(CONS, (element, result))
    return result


def list_elements(term: Term) -> Optional[List[Term]]:
    """Elements of a proper list, or None when ``term`` is not one"""
    elements = []
    while isinstance(term, Struct) and term.functor == CONS and len(term.args) == 2:
        elements.append(term.args[0])
        term = term.args[1]
    return elements if term == NIL else None


def is_ground(term: Term) -> bool:
    if isinstance(term, Var):
        return False
    if isinstance(term, Struct):
        return all(is_ground(arg) for arg in term.args)
    return True


def directive_name(term: Term) -> str:
    if isinstance(term, Struct):
        return term.functor
    return str(term)


def term_variables(term: Term) -> Iterator[Var]:
    if isinstance(term, Var):
        yield term
    elif isinstance(term, Struct):
        for arg in term.args:
            yield from term_variables(arg)


@dataclass(frozen=True)
class Atom:
    """A predicate applied to arguments, used as clause head or body goal"""
    predicate: str
    args: Tuple[Term, ...] = ()

    @property
    def key(self) -> Tuple[str, int]:
        return (self.predicate, len(self.args))

    @property
    def indicator(self) -> str:
        return f"{self.predicate}/{len(self.args)}"

    def as_term(self) -> Term:
        return Struct(self.predicate, self.args) if self.args else Const(self.predicate)

    def variables(self) -> Iterator[Var]:
        for arg in self.args:
            yield from term_variables(arg)

    def is_ground(self) -> bool:
        return all(is_ground(arg) for arg in self.args)

    def __str__(self):
        return format_atom(self)


@dataclass(frozen=True)
class Clause:
    head: Atom
    body: Tuple[Atom, ...] = ()

    @property
    def is_fact(self) -> bool:
        return not self.body

    def __str__(self):
        return format_clause(self)


@dataclass(frozen=True)
class AnnotatedDisjunction:
    """
    ``p1::h1; ...; pn::hn :- body.`` A single alternative without body is a
    probabilistic fact ``p::f.``
    """
    alternatives: Tuple[Tuple[float, Atom], ...]
    body: Tuple[Atom, ...] = ()

    @property
    def total_probability(self) -> float:
        return sum(probability for probability, _ in self.alternatives)

    @property
    def heads(self) -> Tuple[Atom, ...]:
        return tuple(head for _, head in self.alternatives)

    def __str__(self):
        return format_annotated_disjunction(self)


@dataclass(frozen=True)
class NeuralDeclaration:
    """``nn(network, [X1, ..., Xk], O, [y1, ..., yn])::q(X1, ..., Xk, O).``"""
    network: str
    inputs: Tuple[Var, ...]
    output: Var
    domain: Tuple[str, ...]
    head: Atom

    @property
    def predicate(self) -> str:
        return self.head.predicate

    @property
    def key(self) -> Tuple[str, int]:
        return self.head.key

    def __str__(self):
        return format_neural_declaration(self)


@dataclass(frozen=True)
class Program:
    clauses: Tuple[Clause, ...] = ()
    ads: Tuple[AnnotatedDisjunction, ...] = ()
    neural: Tuple[NeuralDeclaration, ...] = ()
    directives: Tuple[Term, ...] = ()

    def merge(self, other: 'Program') -> 'Program':
        """Statements of ``self`` followed by those of ``other``"""
        return Program(
            clauses=self.clauses + other.clauses,
            ads=self.ads + other.ads,
            neural=self.neural + other.neural,
            directives=self.directives + other.directives,
        )

    def neural_declaration(self, predicate_key: Tuple[str, int]) -> Optional[NeuralDeclaration]:
        for declaration in self.neural:
            if declaration.key == predicate_key:
                return declaration
        return None

    def clauses_for(self, predicate_key: Tuple[str, int]) -> List[Clause]:
        return [clause for clause in self.clauses if clause.head.key == predicate_key]

    def directive_value(self, name: str) -> Optional[Term]:
        """First argument of the first ``:- name(Arg).`` directive"""
        for term in self.directives:
            if directive_name(term) == name and isinstance(term, Struct) and term.args:
                return term.args[0]
        return None

    @cached_property
    def fingerprint(self) -> str:
        return hashlib.sha256(pretty_print(self).encode('utf-8')).hexdigest()

    def __hash__(self):
        return hash(self.fingerprint)

    def __str__(self):
        return pretty_print(self)


# ---------------------------------------------------------------------------
# Pretty printing

def _operator_strength(term: Term) -> int:
    if isinstance(term, Struct):
        if len(term.args) == 2 and term.functor in ARITHMETIC_OPERATORS:
            return ARITHMETIC_OPERATORS[term.functor]
        if len(term.args) == 1 and term.functor == '-':
            return 200
    return 0


def _format_list(term: Term) -> str:
    parts = []
    while isinstance(term, Struct) and term.functor == CONS and len(term.args) == 2:
        parts.append(format_term(term.args[0]))
        term = term.args[1]
    if term == NIL:
        return '[' + ', '.join(parts) + ']'
    return '[' + ', '.join(parts) + ' | ' + format_term(term) + ']'


def format_term(term: Term) -> str:
    if isinstance(term, (Var, Const)):
        return term.name
    if isinstance(term, Int):
        return str(term.value)
    if term.functor == CONS and len(term.args) == 2:
        return _format_list(term)
    strength = _operator_strength(term)
    if strength and len(term.args) == 2:
        left, right = term.args
        left_text = format_term(left)
        right_text = format_term(right)
        # Left-associative: equal strength needs parentheses only on the right.
        if _operator_strength(left) > strength:
            left_text = f"({left_text})"
        if _operator_strength(right) >= strength or (isinstance(right, Int) and right.value < 0):
            right_text = f"({right_text})"
        return f"{left_text} {term.functor} {right_text}"
    if strength:
        operand = term.args[0]
        text = format_term(operand)
        if _operator_strength(operand) or isinstance(operand, Int):
            text = f"({text})"
        return f"-{text}"
    return f"{term.functor}(" + ', '.join(format_term(arg) for arg in term.args) + ")"


def format_atom(atom: Atom) -> str:
    if atom.predicate in COMPARISON_OPERATORS and len(atom.args) == 2:
        return f"{format_term(atom.args[0])} {atom.predicate} {format_term(atom.args[1])}"
    if not atom.args:
        return atom.predicate
    return f"{atom.predicate}(" + ', '.join(format_term(arg) for arg in atom.args) + ")"


def _format_body(body: Tuple[Atom, ...]) -> str:
    return ', '.join(format_atom(goal) for goal in body)


def format_clause(clause: Clause) -> str:
    if clause.is_fact:
        return f"{format_atom(clause.head)}."
    return f"{format_atom(clause.head)} :- {_format_body(clause.body)}."


def format_annotated_disjunction(ad: AnnotatedDisjunction) -> str:
    heads = '; '.join(f"{probability!r}::{format_atom(head)}" for probability, head in ad.alternatives)
    if ad.body:
        return f"{heads} :- {_format_body(ad.body)}."
    return f"{heads}."


def format_neural_declaration(declaration: NeuralDeclaration) -> str:
    inputs = '[' + ', '.join(var.name for var in declaration.inputs) + ']'
    domain = '[' + ', '.join(declaration.domain) + ']'
    return (
        f"nn({declaration.network}, {inputs}, {declaration.output.name}, {domain})"
        f"::{format_atom(declaration.head)}."
    )


def pretty_print(program: Program) -> str:
    lines = [f":- {format_term(term)}." for term in program.directives]
    lines.extend(format_neural_declaration(declaration) for declaration in program.neural)
    lines.extend(format_annotated_disjunction(ad) for ad in program.ads)
    lines.extend(format_clause(clause) for clause in program.clauses)
    return '\n'.join(lines) + ('\n' if lines else '')
