"""
Rule language front end: a lark grammar for the probabilistic logic subset
(clauses, annotated disjunctions, neural annotated disjunctions, directives),
program validation, and the bundled sequence library.
"""
import logging
from pathlib import Path
from typing import FrozenSet, Iterable, List, Optional, Set, Tuple

import lark
from lark import Lark, Transformer

from .exceptions import DatasetIOError, ProgramValidationError, RuleSyntaxError
from .terms import (
    ARITHMETIC_OPERATORS, COMPARISON_OPERATORS, NIL, AnnotatedDisjunction, Atom, Clause, Const,
    Int, NeuralDeclaration, Program, Struct, Var, directive_name, list_elements, make_list,
)

logger = logging.getLogger('cep')

PROBABILITY_TOLERANCE = 1e-9

RULE_GRAMMAR = r"""
    start: statement*
    query: goal "."?

    ?statement: clause
              | annotated
              | neural
              | directive

    directive: ":-" goal "."
    clause: head [":-" body] "."
    neural: head "::" head "."
    annotated: alternative (";" alternative)* [":-" body] "."
    alternative: probability "::" head

    ?probability: FLOAT -> float_number
                | INT -> int_number

    head: IDENT                        -> head_constant
        | IDENT "(" arguments ")"      -> head_compound

    body: goal ("," goal)*

    ?goal: sum
         | sum comparison_operator sum -> comparison

    ?sum: product
        | sum add_operator product     -> binary

    ?product: unary
            | product mul_operator unary -> binary

    ?unary: primary
          | "-" unary                  -> negation

    ?primary: VAR                      -> variable
            | IDENT                    -> constant
            | IDENT "(" arguments ")"  -> compound
            | INT                      -> integer
            | list
            | "(" sum ")"

    arguments: sum ("," sum)*

    list: "[" "]"                      -> empty_list
        | "[" arguments "]"            -> proper_list
        | "[" arguments "|" sum "]"    -> partial_list

    !comparison_operator: "=:=" | "=\\=" | "\\=" | "=<" | ">=" | "is" | "<" | ">" | "="
    !add_operator: "+" | "-"
    !mul_operator: "//" | "*" | "mod"

    IDENT: /[a-z][a-zA-Z0-9_]*/
    VAR: /[A-Z_][a-zA-Z0-9_]*/
    FLOAT: /\d+\.\d+([eE][-+]?\d+)?/ | /\d+[eE][-+]?\d+/
    INT: /\d+/

    COMMENT: /%[^\n]*/
    %import common.WS
    %ignore WS
    %ignore COMMENT
"""

# Predicates the engine evaluates natively; always defined for validation purposes.
CORE_BUILTINS: FrozenSet[Tuple[str, int]] = frozenset(
    [(operator, 2) for operator in COMPARISON_OPERATORS] + [('true', 0)]
)
# Facts the engine asserts from the stream context at query time.
CONTEXT_PREDICATES: FrozenSet[Tuple[str, int]] = frozenset({('window', 1), ('allTimeStamps', 1)})
# Library predicates with native implementations inside the engine.
NATIVE_LIBRARY: FrozenSet[Tuple[str, int]] = frozenset({('reverse', 2), ('previousTimeStamp', 3)})
ENGINE_BUILTINS = CORE_BUILTINS | CONTEXT_PREDICATES | NATIVE_LIBRARY

SEQUENCE_FRAMEWORK = """\
sequence(S, W, T) :-
    reverse(S, S2),
    sequenceEndingAt(S2, W, T).
sequenceWithin([], _, _).
sequenceWithin(S, W, T) :-
    sequenceEndingAt(S, W, T).
sequenceWithin(S, W, T) :-
    W > 0, T >= 0,
    NextW is W - 1,
    allTimeStamps(Timestamps),
    previousTimeStamp(T, Timestamps, Tprev),
    sequenceWithin(S, NextW, Tprev).
sequenceEndingAt([X | L], W, T) :-
    W > 0, T >= 0,
    digit(T, X),
    NextW is W - 1,
    allTimeStamps(Timestamps),
    previousTimeStamp(T, Timestamps, Tprev),
    sequenceWithin(L, NextW, Tprev).
"""

HELPER_PREDICATES = """\
% reverse(List, Reversed)
reverse(L, R) :- reverseAcc(L, [], R).
reverseAcc([], Acc, Acc).
reverseAcc([H | T], Acc, R) :- reverseAcc(T, [H | Acc], R).

% previousTimeStamp(T, Timestamps, Tprev): Tprev is the largest element of the
% ordered list Timestamps below T. When T is the first element, Tprev is -1,
% which the T >= 0 guards above reject.
previousTimeStamp(T, [First | _], Tprev) :- First =:= T, Tprev = -1.
previousTimeStamp(T, [First | Rest], Tprev) :- First < T, lastBelow(Rest, T, First, Tprev).
lastBelow([], _, Best, Best).
lastBelow([H | _], T, Best, Best) :- H >= T.
lastBelow([H | Rest], T, _, Tprev) :- H < T, lastBelow(Rest, T, H, Tprev).
"""

_parser: Optional[Lark] = None


def _get_parser() -> Lark:
    global _parser
    if _parser is None:
        _parser = Lark(
            RULE_GRAMMAR,
            parser='lalr',
            start=['start', 'query'],
            maybe_placeholders=True,
            propagate_positions=True,
        )
    return _parser


class _ProgramBuilder(Transformer):
    """Turns the lark parse tree into terms and statements"""

    # Terms

    def variable(self, children):
        return Var(str(children[0]))

    def constant(self, children):
        return Const(str(children[0]))

    def integer(self, children):
        return Int(int(children[0]))

    def compound(self, children):
        return Struct(str(children[0]), tuple(children[1]))

    def arguments(self, children):
        return list(children)

    def empty_list(self, children):
        return NIL

    def proper_list(self, children):
        return make_list(children[0])

    def partial_list(self, children):
        return make_list(children[0], children[1])

    def comparison_operator(self, children):
        return str(children[0])

    add_operator = comparison_operator
    mul_operator = comparison_operator

    def binary(self, children):
        left, operator, right = children
        return Struct(operator, (left, right))

    def negation(self, children):
        operand = children[0]
        if isinstance(operand, Int):
            return Int(-operand.value)
        return Struct('-', (operand,))

    def float_number(self, children):
        return float(children[0])

    def int_number(self, children):
        return float(int(children[0]))

    # Goals and heads

    def head_constant(self, children):
        return Atom(str(children[0]))

    def head_compound(self, children):
        return Atom(str(children[0]), tuple(children[1]))

    def comparison(self, children):
        left, operator, right = children
        return Atom(operator, (left, right))

    def body(self, children):
        return tuple(_as_goal(child) for child in children)

    # Statements

    def clause(self, children):
        head, body = children
        return Clause(head, body or ())

    def alternative(self, children):
        return (children[0], children[1])

    def annotated(self, children):
        *alternatives, body = children
        return AnnotatedDisjunction(tuple(alternatives), body or ())

    def neural(self, children):
        annotation, head = children
        return _neural_declaration(annotation, head)

    def directive(self, children):
        goal = _as_goal(children[0])
        return ('directive', goal)

    def query(self, children):
        return _as_goal(children[0])

    def start(self, children):
        clauses, ads, neural, directives = [], [], [], []
        for statement in children:
            if isinstance(statement, Clause):
                clauses.append(statement)
            elif isinstance(statement, AnnotatedDisjunction):
                ads.append(statement)
            elif isinstance(statement, NeuralDeclaration):
                neural.append(statement)
            else:
                goal = statement[1]
                directives.append(goal.as_term())
        return Program(tuple(clauses), tuple(ads), tuple(neural), tuple(directives))


def _as_goal(node) -> Atom:
    if isinstance(node, Atom):
        return node
    if isinstance(node, Const):
        return Atom(node.name)
    if isinstance(node, Struct) and node.functor not in ARITHMETIC_OPERATORS and node.functor != '.':
        return Atom(node.functor, node.args)
    raise _StatementError(f"'{node}' is not a callable goal")


class _StatementError(Exception):
    pass


def _neural_declaration(annotation: Atom, head: Atom) -> NeuralDeclaration:
    if annotation.predicate != 'nn' or len(annotation.args) != 4:
        raise _StatementError("a '::' annotation without probability must be nn(Network, Inputs, Output, Domain)")
    network, inputs, output, domain = annotation.args
    input_terms = list_elements(inputs)
    domain_terms = list_elements(domain)
    if not isinstance(network, Const):
        raise _StatementError("neural network identifier must be a constant")
    if input_terms is None or not all(isinstance(term, Var) for term in input_terms):
        raise _StatementError("neural inputs must be a list of variables")
    if not isinstance(output, Var):
        raise _StatementError("neural output must be a variable")
    if domain_terms is None or not all(isinstance(term, Const) for term in domain_terms):
        raise _StatementError("neural domain must be a list of constants")
    return NeuralDeclaration(
        network=network.name,
        inputs=tuple(input_terms),
        output=output,
        domain=tuple(term.name for term in domain_terms),
        head=head,
    )


def _parse(text: str, start: str):
    try:
        return _ProgramBuilder().transform(_get_parser().parse(text, start=start))
    except lark.exceptions.UnexpectedInput as exc:
        expected = getattr(exc, 'expected', None) or getattr(exc, 'allowed', None) or []
        token = getattr(exc, 'token', None) or getattr(exc, 'char', None)
        found = f"unexpected '{token}'" if token else 'unexpected end of input'
        raise RuleSyntaxError(found, getattr(exc, 'line', 0), getattr(exc, 'column', 0), list(expected)) from exc
    except lark.exceptions.VisitError as exc:
        meta = getattr(exc.obj, 'meta', None)
        line = getattr(meta, 'line', 0) if meta is not None else 0
        column = getattr(meta, 'column', 0) if meta is not None else 0
        raise RuleSyntaxError(str(exc.orig_exc), line, column) from exc


def parse_program(text: str, validate_structure: bool = True) -> Program:
    """
    Parse rule text into a Program.

    Raises RuleSyntaxError with line/column and expected tokens, and
    ProgramValidationError when annotated disjunctions do not sum to one, a
    neural predicate is declared twice or a directive is repeated.
    """
    program = _parse(text, 'start')

    if validate_structure:
        structural = _structural_diagnostics(program)
        if structural:
            raise ProgramValidationError(structural)
    logger.debug(
        f"Parsed program: {len(program.clauses)} clauses, {len(program.ads)} ADs, "
        f"{len(program.neural)} neural declarations"
    )
    return program


def _structural_diagnostics(program: Program) -> List[str]:
    diagnostics = []
    for ad in program.ads:
        total = ad.total_probability
        if len(ad.alternatives) > 1 and abs(total - 1.0) > PROBABILITY_TOLERANCE:
            diagnostics.append(f"AD probabilities sum to {total:g}")
        for probability, head in ad.alternatives:
            if not 0.0 <= probability <= 1.0:
                diagnostics.append(f"probability {probability:g} of {head} is outside [0, 1]")
    seen: Set[str] = set()
    for declaration in program.neural:
        if declaration.predicate in seen:
            diagnostics.append(f"duplicate neural declaration for {declaration.predicate}")
        seen.add(declaration.predicate)
    names = [directive_name(term) for term in program.directives]
    for name in sorted({name for name in names if names.count(name) > 1}):
        diagnostics.append(f"duplicate directive {name}")
    return diagnostics


def validate(program: Program, builtins: Iterable[Tuple[str, int]] = CORE_BUILTINS) -> List[str]:
    """
    Check every program invariant and return human-readable diagnostics.
    An empty list means the program is valid with respect to ``builtins``.
    """
    diagnostics = _structural_diagnostics(program)
    defined: Set[Tuple[str, int]] = set(builtins)
    neural_keys = {declaration.key for declaration in program.neural}
    neural_names = {declaration.predicate for declaration in program.neural}
    defined.update(clause.head.key for clause in program.clauses)
    defined.update(head.key for ad in program.ads for head in ad.heads)
    defined.update(neural_keys)

    for ad in program.ads:
        if len(ad.alternatives) == 1 and not ad.body and not ad.alternatives[0][1].is_ground():
            diagnostics.append(f"non-ground probabilistic fact {ad.alternatives[0][1]}")

    for declaration in program.neural:
        if len(set(declaration.domain)) != len(declaration.domain):
            diagnostics.append(f"neural declaration for {declaration.predicate} has repeated domain values")
        expected_args = tuple(declaration.inputs) + (declaration.output,)
        if declaration.head.args != expected_args:
            diagnostics.append(
                f"neural head {declaration.head} must take the inputs followed by the output variable"
            )

    for clause in program.clauses:
        if clause.head.predicate in neural_names:
            diagnostics.append(f"clause head {clause.head.indicator} clashes with a neural predicate")

    bodies = [clause.body for clause in program.clauses] + [ad.body for ad in program.ads]
    reported: Set[Tuple[str, int]] = set()
    for body in bodies:
        for goal in body:
            if goal.key not in defined and goal.key not in reported:
                reported.add(goal.key)
                diagnostics.append(f"undefined predicate {goal.indicator}")
    return diagnostics


def stdlib() -> Program:
    """The sequence framework plus reverse/2 and previousTimeStamp/3"""
    return parse_program(SEQUENCE_FRAMEWORK + '\n' + HELPER_PREDICATES)


def load_program(path, include_stdlib: bool = True) -> Program:
    """
    Read a rule file, append the bundled library and validate the result
    against the engine's built-ins.
    """
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as exc:
        raise DatasetIOError(f"Cannot read rule file {path}: {exc}") from exc
    program = parse_program(text)
    if include_stdlib:
        program = program.merge(stdlib())
    diagnostics = validate(program, ENGINE_BUILTINS)
    if diagnostics:
        raise ProgramValidationError(diagnostics)
    logger.info(f"Loaded rule file {path} ({len(program.clauses)} clauses)")
    return program


def default_rules_path() -> Path:
    return Path(__file__).resolve().parent / 'rules' / 'sequence_ce.pl'


def parse_query(text: str) -> Atom:
    """Parse a single goal such as ``happensAt(ce_8, 5)``; the final period is optional"""
    return _parse(text, 'query')
