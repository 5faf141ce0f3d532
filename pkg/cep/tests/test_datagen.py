import tempfile
from collections import Counter
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from cep.datagen import (
    ALL_LABELS, CE_LABELS, CLASS_NAMES, FEATURE_DIM, NULL_LABEL, CELabeling, EventStream, FeatureModel,
    NoiseConfig, balance, balanced_evaluation_points, class_counts, derive_seed, display_name, feature_columns,
    inject_noise, label_ce, make_splits, read_dataset, read_features, synth_stream, write_dataset,
)
from cep.engine import label_oracle
from cep.exceptions import BalanceError, DatasetIOError, SchemaError, UsageError

SIREN = CLASS_NAMES.index('siren')
ENGINE_IDLING = CLASS_NAMES.index('enginge_idling')


def stream_of(classes):
    features = np.full((len(classes), FEATURE_DIM), 100, dtype=np.int64)
    return EventStream(features, np.asarray(classes))


class SynthStreamTest(SimpleTestCase):
    """Synthetic feature streams"""

    def setUp(self):
        self.model = FeatureModel.random(seed=1, sigma=30.0)

    def test_class_counts(self):
        """Per-class counts are exact and near equal"""
        counts = class_counts(2003)
        self.assertEqual(sum(counts), 2003)
        self.assertLessEqual(max(counts) - min(counts), 1)

        stream = synth_stream(counts, self.model, seed=4)
        self.assertEqual(Counter(stream.true_classes.tolist()), dict(enumerate(counts)))

    def test_feature_range(self):
        """Features are integers in 1..255"""
        stream = synth_stream(class_counts(500), FeatureModel.random(seed=2, sigma=200.0), seed=3)
        self.assertEqual(stream.features.shape, (500, FEATURE_DIM))
        self.assertGreaterEqual(stream.features.min(), 1)
        self.assertLessEqual(stream.features.max(), 255)

    def test_deterministic(self):
        """The same seed gives the same stream"""
        first = synth_stream(class_counts(300), self.model, seed=5)
        second = synth_stream(class_counts(300), self.model, seed=5)
        self.assertTrue(np.array_equal(first.features, second.features))
        self.assertTrue(np.array_equal(first.true_classes, second.true_classes))

    def test_sigma_zero(self):
        """Without spread every feature equals its class centroid"""
        stream = synth_stream(class_counts(50), FeatureModel.random(seed=2, sigma=0.0), seed=1)
        model = FeatureModel.random(seed=2, sigma=0.0)
        self.assertTrue(np.array_equal(stream.features, model.centroids[stream.true_classes]))

    def test_invalid_requests(self):
        with self.assertRaises(UsageError):
            synth_stream([1] + [0] * 9, self.model, seed=0)
        with self.assertRaises(UsageError):
            synth_stream([5, 5], self.model, seed=0)
        with self.assertRaises(UsageError):
            FeatureModel.random(seed=0, sigma=-1.0)

    def test_stream_schema(self):
        """Streams reject wrong widths and out-of-range values"""
        with self.assertRaises(SchemaError):
            EventStream(np.ones((3, 12)))
        with self.assertRaises(SchemaError):
            EventStream(np.zeros((3, FEATURE_DIM)))


class LabelingTest(SimpleTestCase):
    """Complex-event labels from ground-truth classes"""

    def test_example_stream(self):
        """Siren at 3 and 5 is ceSiren at 5; engine idling at 2 and 7 is too far apart"""
        classes = [0, 1, ENGINE_IDLING, SIREN, 4, SIREN, 6, ENGINE_IDLING]
        labeling = label_ce(stream_of(classes), window=5)

        self.assertEqual(labeling[5], CE_LABELS[SIREN])
        self.assertEqual(labeling[7], NULL_LABEL)
        self.assertEqual(display_name(labeling[5]), 'ceSiren')
        self.assertEqual(labeling.counts()[CE_LABELS[SIREN]], 1)

    def test_matches_oracle(self):
        """label_ce agrees with the oracle everywhere"""
        rng = np.random.default_rng(0)
        classes = rng.integers(0, 10, size=400)
        for window in (2, 3, 4, 5):
            labeling = label_ce(stream_of(classes), window)
            expected = [label_oracle(classes, window, t) or NULL_LABEL for t in range(len(classes))]
            self.assertEqual(labeling.labels, expected)

    def test_first_event_is_null(self):
        labeling = label_ce(stream_of([3, 3, 3]), window=4)
        self.assertEqual(labeling.labels, [NULL_LABEL, CE_LABELS[3], CE_LABELS[3]])

    def test_unknown_labels(self):
        with self.assertRaises(SchemaError):
            CELabeling(['ce_42'])

    def test_needs_ground_truth(self):
        with self.assertRaises(UsageError):
            label_ce(EventStream(np.ones((4, FEATURE_DIM))), window=2)


class NoiseTest(SimpleTestCase):
    """Random relabeling of complex events"""

    def setUp(self):
        rng = np.random.default_rng(1)
        self.labeling = label_ce(stream_of(rng.integers(0, 10, size=5000)), window=3)

    def test_zero_noise(self):
        """Fraction zero leaves the labels untouched"""
        noisy = inject_noise(self.labeling, NoiseConfig(0.0, seed=3))
        self.assertEqual(noisy.labels, self.labeling.labels)
        self.assertEqual(noisy.redrawn, ())

    def test_null_labels_kept(self):
        """Null labels are never redrawn and redrawn labels stay complex events"""
        noisy = inject_noise(self.labeling, NoiseConfig(1.0, seed=3))
        for before, after in zip(self.labeling.labels, noisy.labels):
            if before == NULL_LABEL:
                self.assertEqual(after, NULL_LABEL)
            else:
                self.assertIn(after, CE_LABELS)
        self.assertEqual(len(noisy.redrawn), sum(label != NULL_LABEL for label in self.labeling.labels))

    def test_full_noise_is_uniform(self):
        """At fraction one the redrawn labels pass a chi-squared uniformity test"""
        noisy = inject_noise(self.labeling, NoiseConfig(1.0, seed=5))
        redrawn = np.asarray([noisy[t] for t in noisy.redrawn])
        observed = np.array([np.count_nonzero(redrawn == label) for label in CE_LABELS])
        expected = len(redrawn) / len(CE_LABELS)
        statistic = float(np.sum((observed - expected) ** 2 / expected))
        # 99.9th percentile of chi-squared with 9 degrees of freedom
        self.assertLess(statistic, 27.88)
        self.assertGreater(len(redrawn), 500)

    def test_expected_change_rate(self):
        """About fraction * 9/10 of the complex-event labels change"""
        noisy = inject_noise(self.labeling, NoiseConfig(0.6, seed=7))
        ce_positions = [t for t, label in enumerate(self.labeling.labels) if label != NULL_LABEL]
        changed = sum(noisy[t] != self.labeling[t] for t in ce_positions) / len(ce_positions)
        self.assertAlmostEqual(changed, 0.6 * 0.9, delta=0.06)

    def test_deterministic(self):
        first = inject_noise(self.labeling, NoiseConfig(0.4, seed=11))
        second = inject_noise(self.labeling, NoiseConfig(0.4, seed=11))
        self.assertEqual(first.labels, second.labels)

    def test_invalid_fraction(self):
        with self.assertRaises(UsageError):
            NoiseConfig(1.5)


class BalanceTest(SimpleTestCase):
    """Class-balanced point selection"""

    def setUp(self):
        rng = np.random.default_rng(2)
        self.labeling = label_ce(stream_of(rng.integers(0, 10, size=8000)), window=5)

    def test_thousand_points(self):
        """1000 points over 11 classes give counts 90 or 91"""
        points = balance(self.labeling, 1000, seed=1)
        counts = Counter(label for _, label in points)

        self.assertEqual(len(points), 1000)
        self.assertEqual(set(counts), set(ALL_LABELS))
        self.assertLessEqual(max(counts.values()) - min(counts.values()), 1)
        self.assertEqual(len({t for t, _ in points}), 1000)
        for t, label in points:
            self.assertEqual(self.labeling[t], label)

    def test_scarce_class(self):
        """A class with too few occurrences names itself and its shortfall"""
        labeling = CELabeling([NULL_LABEL] * 50 + ['ce_0'] * 3)
        with self.assertRaises(BalanceError) as context:
            balance(labeling, 110, seed=0)
        self.assertIn("'ce_0' occurs 3 times but 10 are required", context.exception.message)

    def test_evaluation_points(self):
        """Evaluation subsets use the rarest class size for every class"""
        points = balanced_evaluation_points(self.labeling, seed=3)
        counts = Counter(label for _, label in points)
        self.assertEqual(len(set(counts.values())), 1)
        self.assertEqual(set(counts), set(ALL_LABELS))


class SplitsTest(SimpleTestCase):
    """Dataset splits and their on-disk format"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = FeatureModel.random(seed=0, sigma=40.0)
        cls.seeds = [derive_seed(0, 100 + index) for index in range(3)]
        cls.splits = make_splits(cls.seeds, window=3, model=cls.model, noise=0.2,
                                 sizes=(3000, 1500, 1500), train_points=220)

    def test_split_contents(self):
        """Training labels are noisy and hide ground truth; evaluation splits stay clean"""
        train, validation, test = (self.splits[name] for name in ('train', 'validation', 'test'))

        self.assertIsNone(train.stream.true_classes)
        self.assertEqual(len(train.points), 220)
        self.assertEqual(train.meta['noise'], 0.2)
        self.assertEqual(validation.meta['noise'], 0.0)
        self.assertIsNotNone(test.stream.true_classes)
        self.assertEqual(test.labeling.labels, label_ce(test.stream, 3).labels)
        self.assertEqual(train.window, 3)

    def test_independent_streams(self):
        """Splits come from independent streams"""
        self.assertFalse(np.array_equal(self.splits['validation'].stream.features,
                                        self.splits['test'].stream.features))

    def test_seeds_must_differ(self):
        with self.assertRaises(UsageError):
            make_splits([1, 1, 2], window=2, model=self.model, noise=0.0)

    def test_write_and_read(self):
        """Datasets reload with identical streams, labels and points"""
        with tempfile.TemporaryDirectory() as directory:
            write_dataset(directory, self.splits, {'seed': 0})
            loaded = read_dataset(directory)
            header = pd.read_csv(Path(directory) / 'train' / 'features.csv', nrows=0).columns.tolist()

        self.assertEqual(header, ['timestamp'] + feature_columns() + ['trueClass'])
        for name, split in self.splits.items():
            self.assertTrue(np.array_equal(loaded[name].stream.features, split.stream.features))
            self.assertEqual(loaded[name].labeling.labels, split.labeling.labels)
            self.assertEqual(loaded[name].points, split.points)
            self.assertEqual(loaded[name].meta, split.meta)
        self.assertIsNone(loaded['train'].stream.true_classes)
        self.assertTrue(np.array_equal(loaded['test'].stream.true_classes, self.splits['test'].stream.true_classes))

    def test_external_features(self):
        """A features file without trueClass loads as an unlabeled stream"""
        frame = pd.DataFrame(np.full((4, FEATURE_DIM), 7), columns=feature_columns())
        frame.insert(0, 'timestamp', range(4))
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'features.csv'
            frame.to_csv(path, index=False)
            stream = read_features(path)
        self.assertEqual(len(stream), 4)
        self.assertIsNone(stream.true_classes)

    def test_bad_feature_files(self):
        """Missing columns and unordered timestamps are schema errors"""
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'features.csv'
            pd.DataFrame({'timestamp': [0, 1], 'f0': [1, 2]}).to_csv(path, index=False)
            with self.assertRaises(SchemaError):
                read_features(path)

            frame = pd.DataFrame(np.full((2, FEATURE_DIM), 7), columns=feature_columns())
            frame.insert(0, 'timestamp', [1, 0])
            frame.to_csv(path, index=False)
            with self.assertRaises(SchemaError):
                read_features(path)

            with self.assertRaises(DatasetIOError):
                read_features(Path(directory) / 'missing.csv')
            with self.assertRaises(DatasetIOError):
                read_dataset(Path(directory) / 'nowhere')
