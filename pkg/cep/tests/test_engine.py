import itertools

import numpy as np
from django.test import SimpleTestCase

from cep.datagen import CLASS_NAMES, FEATURE_DIM, NULL_LABEL, EventStream, label_ce
from cep.engine import (
    NO_PREVIOUS, Engine, NeuralLiteral, StreamContext, ce_label, happens_at, label_oracle, solve, unify,
)
from cep.exceptions import EvaluationError, ResourceError, UsageError
from cep.rulelang import default_rules_path, load_program, parse_program, parse_query, stdlib
from cep.terms import Atom, Const, Int, Struct, Var

SIREN = CLASS_NAMES.index('siren')
ENGINE_IDLING = CLASS_NAMES.index('enginge_idling')

# Stream of eight clips with siren at 3 and 5 and engine idling at 2 and 7.
EXAMPLE_STREAM = [0, 1, ENGINE_IDLING, SIREN, 4, SIREN, 6, ENGINE_IDLING]


def digit_literal(t, outcome):
    return NeuralLiteral('audioNN', (Int(t),), outcome)


def small_program(domain):
    """The shipped rule pattern over a reduced class domain"""
    rules = [f"nn(net, [T], C, [{', '.join(domain)}])::digit(T, C)."]
    rules += [
        f"happensAt(ce_{index}, T) :- window(W), sequence([{name}, {name}], W, T)."
        for index, name in enumerate(domain)
    ]
    return parse_program('\n'.join(rules)).merge(stdlib())


class UnifyTest(SimpleTestCase):
    """Most general unifiers"""

    def test_variable_constant(self):
        """A variable binds to a constant"""
        self.assertEqual(unify(Var('X'), Const('siren')), {Var('X'): Const('siren')})

    def test_structural(self):
        """Compound terms unify argument by argument"""
        result = unify(Struct('f', (Var('X'), Const('b'))), Struct('f', (Const('a'), Var('Y'))))
        self.assertEqual(result, {Var('X'): Const('a'), Var('Y'): Const('b')})

    def test_constant_clash(self):
        """Different constants do not unify"""
        self.assertIsNone(unify(Const('a'), Const('b')))

    def test_occurs_check(self):
        """A variable does not unify with a term containing it"""
        self.assertIsNone(unify(Var('X'), Struct('f', (Var('X'),))))

    def test_substitution_is_idempotent(self):
        """Bindings are fully resolved"""
        result = unify(Struct('g', (Var('X'), Var('Y'))), Struct('g', (Var('Y'), Int(3))))
        self.assertEqual(result[Var('X')], Int(3))
        self.assertEqual(result[Var('Y')], Int(3))


class StreamContextTest(SimpleTestCase):

    def test_invalid_contexts(self):
        """Windows below one, unordered and negative timestamps are rejected"""
        with self.assertRaises(UsageError):
            StreamContext((0, 1, 2), 0)
        with self.assertRaises(UsageError):
            StreamContext((0, 2, 1), 2)
        with self.assertRaises(UsageError):
            StreamContext((-2, 0, 1), 2)

    def test_previous(self):
        """The first timestamp has no predecessor, whatever its value"""
        context = StreamContext((0, 3, 7), 2)
        self.assertEqual(context.previous(0), NO_PREVIOUS)
        self.assertEqual(context.previous(7), 3)
        self.assertEqual(context.previous(5), 3)
        self.assertIn(3, context)
        self.assertNotIn(4, context)
        self.assertEqual(StreamContext((5, 6, 7), 2).previous(5), NO_PREVIOUS)
        self.assertIsNone(StreamContext((5, 6, 7), 2).previous(4))


class SolveTest(SimpleTestCase):
    """Proof enumeration for the shipped sequence rules"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.program = load_program(default_rules_path())
        cls.engine = Engine(cls.program)

    def test_window_five(self):
        """Window five at t=5 yields one proof per earlier position 1..4"""
        proofs = self.engine.solve(StreamContext.for_length(8, 5), happens_at('ce_8', 5))

        expected = {
            frozenset({digit_literal(5, 'siren'), digit_literal(p, 'siren')})
            for p in (1, 2, 3, 4)
        }
        self.assertEqual({proof.literals for proof in proofs}, expected)
        self.assertEqual(len(proofs), 4)

    def test_window_two(self):
        """Window two only reaches the adjacent timestamp"""
        proofs = self.engine.solve(StreamContext.for_length(8, 2), happens_at('ce_8', 5))

        self.assertEqual(len(proofs), 1)
        self.assertEqual(proofs[0].literals, frozenset({digit_literal(5, 'siren'), digit_literal(4, 'siren')}))
        self.assertEqual(str(proofs[0]), '{audioNN(4)=siren, audioNN(5)=siren}')

    def test_first_timestamp(self):
        """Nothing precedes timestamp 0"""
        self.assertEqual(self.engine.solve(StreamContext.for_length(8, 5), happens_at('ce_8', 0)), [])

    def test_near_stream_start(self):
        """Positions before 0 are never used"""
        proofs = self.engine.solve(StreamContext.for_length(8, 5), happens_at('ce_0', 2))
        self.assertEqual(sorted(proof.timestamps for proof in proofs), [[0, 2], [1, 2]])

    def test_stream_starting_late(self):
        """A stream starting at 5 never reaches back to timestamp 4, natively or through the library rules"""
        context = StreamContext((5, 6, 7), 2)
        for engine in (self.engine, Engine(self.program, native_builtins=False)):
            with self.subTest(native=engine.native_builtins):
                self.assertEqual(engine.solve(context, happens_at('ce_8', 5)), [])
                self.assertEqual(engine.solve(context, parse_query("sequence([siren, siren], 2, 5)")), [])
                proofs = engine.solve(context, happens_at('ce_8', 6))
                self.assertEqual([proof.timestamps for proof in proofs], [[5, 6]])

    def test_proofs_are_consistent(self):
        """No proof assigns two outcomes to one timestamp"""
        for window in (2, 3, 4, 5):
            for proof in self.engine.solve(StreamContext.for_length(8, window), happens_at('ce_3', 6)):
                variables = [literal.variable for literal in proof.literals]
                self.assertEqual(len(variables), len(set(variables)))

    def test_solve_is_pure(self):
        """Repeated solving yields identical proofs"""
        context = StreamContext.for_length(10, 4)
        first = self.engine.solve(context, happens_at('ce_2', 7))
        second = solve(self.program, context, happens_at('ce_2', 7))
        self.assertEqual(first, second)

    def test_non_ground_query(self):
        """solve needs a ground query"""
        with self.assertRaises(UsageError):
            self.engine.solve(StreamContext.for_length(4, 2), Atom('happensAt', (Const('ce_1'), Var('T'))))

    def test_one_hot_consistency(self):
        """Under certain perception a satisfied proof exists exactly when the oracle fires"""
        rng = np.random.default_rng(7)
        for window in (2, 3, 5):
            classes = rng.integers(0, 3, size=9)
            context = StreamContext.for_length(len(classes), window)
            assignment = {('nn', 'audioNN', (Int(t),)): CLASS_NAMES[c] for t, c in enumerate(classes)}
            for t in range(len(classes)):
                expected = label_oracle(classes, window, t)
                for index in range(3):
                    label = ce_label(index)
                    proofs = self.engine.solve(context, happens_at(label, t))
                    satisfied = any(proof.satisfied_by(assignment) for proof in proofs)
                    with self.subTest(window=window, t=t, label=label):
                        self.assertEqual(satisfied, expected == label)

    def test_one_hot_argmax_matches_labels(self):
        """
        Under certain perception the most likely outcome is the generated
        label, on 1000 random streams of 200 clips at windows 2 and 5.
        """
        rng = np.random.default_rng(17)
        streams, length = 1000, 200
        for window in (2, 5):
            classes = rng.integers(0, len(CLASS_NAMES), size=(streams, length))
            context = StreamContext.for_length(length, window)
            # -1 stands for null: no complex event has probability 1.
            predicted = np.full(classes.shape, -1)
            for t in range(length):
                for index in range(len(CLASS_NAMES)):
                    certain = np.zeros(streams, dtype=bool)
                    for proof in self.engine.solve(context, happens_at(ce_label(index), t)):
                        holds = np.ones(streams, dtype=bool)
                        for literal in proof.literals:
                            holds &= classes[:, literal.timestamp] == CLASS_NAMES.index(literal.outcome)
                        certain |= holds
                    self.assertFalse((certain & (predicted[:, t] >= 0)).any())
                    predicted[certain, t] = index

            for row, stream_classes in zip(predicted, classes):
                labels = label_ce(EventStream(np.ones((length, FEATURE_DIM)), stream_classes), window).labels
                argmax = [NULL_LABEL if index < 0 else ce_label(int(index)) for index in row]
                self.assertEqual(argmax, labels)

    def test_agrees_with_enumeration(self):
        """On short streams solve agrees with enumerating every class assignment"""
        domain = ['u', 'v', 'w']
        program = small_program(domain)
        engine = Engine(program)
        for length, window in [(4, 2), (5, 3), (6, 4)]:
            context = StreamContext.for_length(length, window)
            proofs = {
                (index, t): engine.solve(context, happens_at(ce_label(index), t))
                for index in range(len(domain)) for t in range(length)
            }
            for classes in itertools.product(range(len(domain)), repeat=length):
                assignment = {('nn', 'net', (Int(t),)): domain[c] for t, c in enumerate(classes)}
                for (index, t), found in proofs.items():
                    holds = label_oracle(classes, window, t) == ce_label(index)
                    self.assertEqual(any(proof.satisfied_by(assignment) for proof in found), holds)


class BuiltinTest(SimpleTestCase):
    """Errors raised by built-ins and the search bound"""

    def test_unbound_arithmetic(self):
        """is/2 with an unbound right side names the clause"""
        program = parse_program("p(X) :- X is Y + 1.")
        with self.assertRaises(EvaluationError) as context:
            Engine(program).solve(StreamContext.for_length(1, 1), parse_query("p(3)"))
        self.assertIn("p(X) :- X is Y + 1.", context.exception.message)

    def test_step_bound(self):
        """Unbounded recursion hits the resolution step bound"""
        program = parse_program("loop(X) :- loop(X).")
        with self.assertRaises(ResourceError):
            Engine(program, max_steps=500).solve(StreamContext.for_length(1, 1), parse_query("loop(a)"))

    def test_arithmetic_comparisons(self):
        """Comparison built-ins evaluate integer expressions"""
        program = parse_program("ok :- 7 // 2 =:= 3, 7 mod 3 =:= 1, 2 * 3 > 5, -1 < 0.")
        proofs = Engine(program).solve(StreamContext.for_length(1, 1), parse_query("ok"))
        self.assertEqual([proof.literals for proof in proofs], [frozenset()])

    def test_unknown_predicate(self):
        """Calling an undefined predicate is an evaluation error"""
        program = parse_program("p :- q.")
        with self.assertRaises(EvaluationError):
            Engine(program).solve(StreamContext.for_length(1, 1), parse_query("p"))

    def test_annotated_disjunction_choices(self):
        """AD alternatives become choice literals"""
        program = parse_program("0.25::low(X); 0.75::high(X) :- reading(X).\nreading(1).")
        proofs = Engine(program).solve(StreamContext.for_length(1, 1), parse_query("high(1)"))

        self.assertEqual(len(proofs), 1)
        (literal,) = proofs[0].literals
        self.assertEqual(literal.alternative, 1)
        self.assertEqual(literal.probability, 0.75)


class SearchTraceTest(SimpleTestCase):
    """What anchored searches record about absolute time"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.engine = Engine(load_program(default_rules_path()))

    def anchored(self, program, t, context):
        return Engine(program).solve_anchored(context, happens_at('ce_0', t), t)

    def test_sequence_rules_translate(self):
        """Mid-stream proofs of the sequence rules carry over to any later timestamp"""
        context = StreamContext.for_length(30, 5)
        proofs, trace = self.engine.solve_anchored(context, happens_at('ce_8', 5), 5)

        self.assertEqual(proofs, self.engine.solve(context, happens_at('ce_8', 5)))
        self.assertTrue(trace.reusable)
        self.assertTrue(all(trace.holds_at(t) for t in range(5, 30)))

    def test_stream_start_is_not_reusable(self):
        """Near the stream start the search reads timestamps the window does not describe"""
        _, trace = self.engine.solve_anchored(StreamContext.for_length(30, 5), happens_at('ce_8', 1), 1)
        self.assertFalse(trace.reusable)

    def test_first_timestamp_is_reusable(self):
        _, trace = self.engine.solve_anchored(StreamContext.for_length(30, 5), happens_at('ce_8', 0), 0)
        self.assertTrue(trace.reusable)

    def test_constant_comparison(self):
        """Comparing the query timestamp with a constant restricts where the proofs carry over"""
        program = parse_program("happensAt(ce_0, T) :- T > 10.")
        proofs, trace = self.anchored(program, 5, StreamContext.for_length(20, 3))

        self.assertEqual(proofs, [])
        self.assertTrue(trace.reusable)
        self.assertTrue(trace.holds_at(8))
        self.assertFalse(trace.holds_at(17))

    def test_relative_arithmetic(self):
        """Offsets from the query timestamp add no constraints"""
        program = parse_program(
            "nn(net, [T], C, [u, v])::digit(T, C).\n"
            "happensAt(ce_0, T) :- P is T - 1, digit(P, u), digit(T, u)."
        )
        proofs, trace = self.anchored(program, 6, StreamContext.for_length(20, 3))

        self.assertEqual([proof.timestamps for proof in proofs], [[5, 6]])
        self.assertTrue(trace.reusable)
        self.assertEqual(trace.constraints, set())

    def test_absolute_neural_input(self):
        """A neural call on a fixed timestamp cannot be translated"""
        program = parse_program(
            "nn(net, [T], C, [u, v])::digit(T, C).\n"
            "happensAt(ce_0, T) :- digit(3, u), digit(T, u)."
        )
        _, trace = self.anchored(program, 4, StreamContext.for_length(20, 3))
        self.assertFalse(trace.reusable)

    def test_shared_choice_instance(self):
        """Two calls share an AD instance only while their timestamps coincide"""
        program = parse_program(
            "0.5::alarm(X); 0.5::calm(X) :- X >= 0.\n"
            "happensAt(ce_0, T) :- alarm(T), alarm(4)."
        )
        proofs, trace = self.anchored(program, 4, StreamContext.for_length(20, 3))

        self.assertEqual(len(proofs), 1)
        self.assertEqual(len(proofs[0].literals), 1)
        self.assertTrue(trace.reusable)
        self.assertFalse(trace.holds_at(7))


class LabelOracleTest(SimpleTestCase):

    def test_repeat_within_window(self):
        """Siren at 3 and 5 with window five marks ceSiren at 5"""
        self.assertEqual(label_oracle(EXAMPLE_STREAM, 5, 5), ce_label(SIREN))

    def test_repeat_outside_window(self):
        """Engine idling at 2 and 7 is too far apart for window five"""
        self.assertIsNone(label_oracle(EXAMPLE_STREAM, 5, 7))

    def test_first_timestamp(self):
        """The first timestamp never has a complex event"""
        for window in (2, 3, 4, 5):
            self.assertIsNone(label_oracle(EXAMPLE_STREAM, window, 0))

    def test_out_of_range(self):
        with self.assertRaises(UsageError):
            label_oracle(EXAMPLE_STREAM, 2, 8)
