import json
import math
import tempfile
from pathlib import Path

import pandas as pd
from django.test import SimpleTestCase, override_settings

from cep.exceptions import ConfigError, UsageError
from cep.experiments import (
    ExperimentConfig, aggregate_metrics, preset_names, preset_overrides, resolve_config, runs_frame, summarize,
    write_config, write_sweep_outputs,
)


def run_row(window, noise, replicate, accuracy, status='succeeded'):
    return {
        'window': window, 'noise': noise, 'seed': replicate, 'replicate': replicate, 'status': status,
        'ce_accuracy': accuracy, 'ce_accuracy_natural': accuracy, 'simple_accuracy': 0.5,
        'epochs': 3 if status == 'succeeded' else None, 'error': '' if status == 'succeeded' else 'boom',
    }


class ExperimentConfigTest(SimpleTestCase):
    """Layered configuration"""

    @override_settings(CEP={'MAX_EPOCHS': 7, 'TRAIN_EVENTS': 500, 'UNRELATED': 'ignored'})
    def test_settings_defaults(self):
        """settings.CEP keys map onto config fields case-insensitively"""
        config = ExperimentConfig.from_settings()
        self.assertEqual(config.max_epochs, 7)
        self.assertEqual(config.train_events, 500)
        self.assertEqual(config.patience, 10)

    @override_settings(CEP={'MAX_EPOCHS': 7})
    def test_layering_order(self):
        """Config file, preset and flags override in that order"""
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'config.json'
            path.write_text(json.dumps({'max_epochs': 9, 'window': 4, 'seed': 5}), encoding='utf-8')
            config = resolve_config(path, 'noise-w3-f0.4', {'seed': 11, 'patience': None})

        self.assertEqual(config.max_epochs, 9)
        self.assertEqual(config.window, 3)
        self.assertEqual(config.noise, 0.4)
        self.assertEqual(config.noise_fractions, (0.4,))
        self.assertEqual(config.seed, 11)
        self.assertEqual(config.patience, 10)

    def test_unknown_keys(self):
        """Unknown configuration keys are rejected"""
        with self.assertRaises(ConfigError):
            ExperimentConfig().merged({'windw': 3})

    def test_invalid_values(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(windows=(1, 2))
        with self.assertRaises(ConfigError):
            ExperimentConfig(noise=1.2)
        with self.assertRaises(ConfigError):
            ExperimentConfig(replicates=0)

    def test_bad_config_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'config.json'
            path.write_text('[1, 2]', encoding='utf-8')
            with self.assertRaises(ConfigError):
                resolve_config(path)
            with self.assertRaises(ConfigError):
                resolve_config(Path(directory) / 'missing.json')

    def test_seeds(self):
        """Replicates shift the seed; splits get three distinct derived seeds"""
        config = ExperimentConfig(seed=10)
        self.assertEqual([config.replicate_seed(r) for r in range(3)], [10, 11, 12])
        seeds = config.split_seeds(11)
        self.assertEqual(len(set(seeds)), 3)
        self.assertEqual(seeds, ExperimentConfig(seed=0).split_seeds(11))
        self.assertNotEqual(config.feature_seed, ExperimentConfig(seed=11).feature_seed)

    def test_train_config(self):
        config = ExperimentConfig(max_epochs=4, learning_rate=0.01, circuit_cache=False)
        train_config = config.train_config(seed=3, window=5)
        self.assertEqual((train_config.max_epochs, train_config.learning_rate), (4, 0.01))
        self.assertEqual((train_config.seed, train_config.window), (3, 5))
        self.assertFalse(train_config.circuit_cache)

    def test_write_config(self):
        """config.json holds the resolved configuration plus extras"""
        with tempfile.TemporaryDirectory() as directory:
            path = write_config(ExperimentConfig(window=3), directory, {'seed': 4})
            payload = json.loads(path.read_text(encoding='utf-8'))
        self.assertEqual(payload['window'], 3)
        self.assertEqual(payload['seed'], 4)
        self.assertEqual(payload['windows'], [2, 3, 4, 5])


class PresetTest(SimpleTestCase):

    def test_base_presets(self):
        """base-wN runs window N without noise"""
        self.assertEqual(preset_overrides('base-w4'),
                         {'window': 4, 'noise': 0.0, 'windows': (4,), 'noise_fractions': (0.0,)})

    def test_noise_presets(self):
        self.assertEqual(preset_overrides('noise-w2-f0.6'),
                         {'window': 2, 'noise': 0.6, 'noise_fractions': (0.6,)})
        self.assertEqual(preset_overrides('noise-w5-f0')['noise'], 0.0)

    def test_every_listed_preset_resolves(self):
        for name in preset_names():
            preset_overrides(name)
        self.assertEqual(len(preset_names()), 20)

    def test_unknown_preset(self):
        with self.assertRaises(UsageError):
            preset_overrides('base-w9')


class SweepCellsTest(SimpleTestCase):

    def test_base_cells(self):
        """A base sweep covers every window without noise"""
        cells = ExperimentConfig(replicates=3).cells('base')
        self.assertEqual(len(cells), 12)
        self.assertEqual({(w, n) for w, n, _ in cells}, {(2, 0.0), (3, 0.0), (4, 0.0), (5, 0.0)})

    def test_noise_cells(self):
        """A noise sweep covers every noise fraction at the configured window"""
        cells = ExperimentConfig(window=3, replicates=2).cells('noise')
        self.assertEqual(cells[:2], [(3, 0.0, 0), (3, 0.0, 1)])
        self.assertEqual(len(cells), 8)

    def test_unknown_kind(self):
        with self.assertRaises(UsageError):
            ExperimentConfig().cells('grid')


class SweepTablesTest(SimpleTestCase):
    """runs.csv, summary.csv and plot data"""

    def setUp(self):
        self.runs = runs_frame([
            run_row(3, 0.2, 1, 0.6),
            run_row(2, 0.0, 0, 0.8),
            run_row(3, 0.2, 0, 0.4),
            run_row(2, 0.0, 1, 0.6),
            run_row(3, 0.2, 2, None, status='failed'),
        ])

    def test_runs_are_sorted(self):
        """Rows are ordered by window, noise and replicate whatever the completion order"""
        self.assertEqual(list(zip(self.runs['window'], self.runs['replicate'])),
                         [(2, 0), (2, 1), (3, 0), (3, 1), (3, 2)])

    def test_summary_skips_failed_runs(self):
        """Mean and sample standard deviation over succeeded runs only"""
        summary = summarize(self.runs)
        row = summary[summary['window'] == 3].iloc[0]

        self.assertEqual(row['runs'], 2)
        self.assertAlmostEqual(row['ce_accuracy_mean'], 0.5)
        self.assertAlmostEqual(row['ce_accuracy_std'], math.sqrt(0.02))

    def test_write_outputs(self):
        """Sweep outputs include the gnuplot data and script"""
        with tempfile.TemporaryDirectory() as directory:
            paths = write_sweep_outputs(directory, self.runs)
            for path in paths.values():
                self.assertTrue(Path(path).exists())
            noise_curve = Path(paths['noise_curve']).read_text(encoding='utf-8').splitlines()
            runs = pd.read_csv(paths['runs'])

        self.assertEqual(noise_curve[1], '# noise mean std runs')
        self.assertEqual(noise_curve[2].split()[0], '0')
        self.assertEqual(len(noise_curve), 4)
        self.assertEqual(runs['status'].tolist().count('failed'), 1)

    def test_all_failed(self):
        """A sweep where nothing succeeded still writes an empty summary"""
        runs = runs_frame([run_row(2, 0.0, 0, None, status='failed')])
        self.assertTrue(summarize(runs).empty)
        with tempfile.TemporaryDirectory() as directory:
            write_sweep_outputs(directory, runs)

    def test_single_run_has_zero_std_in_plot_data(self):
        runs = runs_frame([run_row(4, 0.0, 0, 0.7)])
        with tempfile.TemporaryDirectory() as directory:
            paths = write_sweep_outputs(directory, runs)
            lines = Path(paths['window_table']).read_text(encoding='utf-8').splitlines()
        self.assertEqual(lines[2], '4 0.700000 0.000000 1')

    def test_aggregate_metrics(self):
        """metrics rows aggregate per window and noise"""
        frame = pd.DataFrame([
            {'window': 2, 'noise': 0.0, 'seed': 0, 'ce_accuracy': 0.5, 'simple_accuracy': 0.4,
             'ce_accuracy_natural': 0.6},
            {'window': 2, 'noise': 0.0, 'seed': 1, 'ce_accuracy': 0.7, 'simple_accuracy': 0.6,
             'ce_accuracy_natural': 0.8},
        ])
        summary = aggregate_metrics(frame)
        self.assertEqual(len(summary), 1)
        self.assertAlmostEqual(summary.iloc[0]['ce_accuracy_mean'], 0.6)
        self.assertEqual(summary.iloc[0]['runs'], 2)
