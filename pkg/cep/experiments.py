"""
Experiment configuration, presets and sweep bookkeeping.

Configuration is layered: ``settings.CEP`` defaults, then a JSON config file,
then a preset, then explicit command flags.
"""
import json
import logging
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
from django.conf import settings

from .datagen import FEATURES, derive_seed
from .exceptions import ConfigError, DatasetIOError, UsageError
from .trainer import TrainConfig

logger = logging.getLogger('cep')

DEFAULT_WINDOWS = (2, 3, 4, 5)
DEFAULT_NOISE_FRACTIONS = (0.0, 0.2, 0.4, 0.6)
SWEEP_KINDS = ('base', 'noise')

_BASE_PRESET = re.compile(r'^base-w(?P<window>[2-5])$')
_NOISE_PRESET = re.compile(r'^noise-w(?P<window>[2-5])-f(?P<noise>0\.[0246]|0)$')


@dataclass
class ExperimentConfig:
    rules_path: str = ''
    window: int = 2
    noise: float = 0.0
    windows: Tuple[int, ...] = DEFAULT_WINDOWS
    noise_fractions: Tuple[float, ...] = DEFAULT_NOISE_FRACTIONS
    replicates: int = 3
    seed: int = 0
    train_events: int = 16000
    validation_events: int = 2000
    test_events: int = 2000
    train_points: int = 1000
    feature_sigma: float = 40.0
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    loss_epsilon: float = 1e-12
    circuit_cache: bool = True
    max_resolution_steps: int = 10000
    output_dir: str = 'runs'

    def __post_init__(self):
        self.windows = tuple(int(window) for window in self.windows)
        self.noise_fractions = tuple(float(noise) for noise in self.noise_fractions)
        if any(window < 2 for window in self.windows) or self.window < 1:
            raise ConfigError("Window sizes must be at least 2")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if not 0.0 <= self.noise <= 1.0 or any(not 0.0 <= noise <= 1.0 for noise in self.noise_fractions):
            raise ConfigError("Noise fractions must lie in [0, 1]")
        if min(self.train_events, self.validation_events, self.test_events) < 2:
            raise ConfigError("Every split needs at least two events")

    @classmethod
    def field_names(cls) -> List[str]:
        return [item.name for item in fields(cls)]

    @classmethod
    def from_settings(cls) -> 'ExperimentConfig':
        defaults = getattr(settings, 'CEP', {})
        known = {key.lower(): value for key, value in defaults.items() if key.lower() in cls.field_names()}
        return cls(**known)

    def merged(self, overrides: Dict[str, Any]) -> 'ExperimentConfig':
        unknown = sorted(set(overrides) - set(self.field_names()))
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
        values = asdict(self)
        values.update({key: value for key, value in overrides.items() if value is not None})
        try:
            return ExperimentConfig(**values)
        except TypeError as exc:
            raise ConfigError(f"Invalid configuration: {exc}") from exc

    def train_config(self, seed: Optional[int] = None, window: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            max_epochs=self.max_epochs,
            patience=self.patience,
            learning_rate=self.learning_rate,
            seed=self.seed if seed is None else seed,
            batch_size=self.batch_size,
            window=self.window if window is None else window,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_epsilon=self.adam_epsilon,
            loss_epsilon=self.loss_epsilon,
            circuit_cache=self.circuit_cache,
            max_resolution_steps=self.max_resolution_steps,
        )

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return (self.train_events, self.validation_events, self.test_events)

    def replicate_seed(self, replicate: int) -> int:
        return self.seed + replicate

    def split_seeds(self, seed: Optional[int] = None) -> Tuple[int, int, int]:
        seed = self.seed if seed is None else seed
        return tuple(derive_seed(seed, 100 + index) for index in range(3))

    @property
    def feature_seed(self) -> int:
        """Centroids depend on the base seed only, so replicates share one feature model"""
        return derive_seed(self.seed, FEATURES)

    def cells(self, kind: str) -> List[Tuple[int, float, int]]:
        """(window, noise, replicate) for every run of a sweep"""
        if kind == 'base':
            grid = [(window, 0.0) for window in self.windows]
        elif kind == 'noise':
            grid = [(self.window, noise) for noise in self.noise_fractions]
        else:
            raise UsageError(f"Unknown sweep kind '{kind}'; expected one of {', '.join(SWEEP_KINDS)}")
        return [(window, noise, replicate) for window, noise in grid for replicate in range(self.replicates)]

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['windows'] = list(self.windows)
        values['noise_fractions'] = list(self.noise_fractions)
        return values


def preset_overrides(name: str) -> Dict[str, Any]:
    """``base-w{2..5}`` or ``noise-w{W}-f{0,0.2,0.4,0.6}``"""
    match = _BASE_PRESET.match(name)
    if match:
        window = int(match.group('window'))
        return {'window': window, 'noise': 0.0, 'windows': (window,), 'noise_fractions': (0.0,)}
    match = _NOISE_PRESET.match(name)
    if match:
        window, noise = int(match.group('window')), float(match.group('noise'))
        return {'window': window, 'noise': noise, 'noise_fractions': (noise,)}
    raise UsageError(f"Unknown preset '{name}'; expected base-w2..base-w5 or noise-w<W>-f<0|0.2|0.4|0.6>")


def preset_names() -> List[str]:
    names = [f"base-w{window}" for window in DEFAULT_WINDOWS]
    names += [f"noise-w{window}-f{noise:g}" for window in DEFAULT_WINDOWS for noise in DEFAULT_NOISE_FRACTIONS]
    return names


def load_config_file(path) -> Dict[str, Any]:
    try:
        payload = json.loads(Path(path).read_text(encoding='utf-8'))
    except OSError as exc:
        raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    return payload


def resolve_config(config_path=None, preset: Optional[str] = None,
                   flags: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    config = ExperimentConfig.from_settings()
    if config_path:
        config = config.merged(load_config_file(config_path))
    if preset:
        config = config.merged(preset_overrides(preset))
    if flags:
        config = config.merged(flags)
    return config


def write_config(config: ExperimentConfig, directory, extra: Optional[Dict[str, Any]] = None) -> Path:
    payload = config.to_dict()
    payload.update(extra or {})
    path = Path(directory) / 'config.json'
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    except OSError as exc:
        raise DatasetIOError(f"Cannot write {path}: {exc}") from exc
    return path


# ---------------------------------------------------------------------------
# Sweep tables

RUN_COLUMNS = [
    'window', 'noise', 'seed', 'replicate', 'status', 'ce_accuracy', 'ce_accuracy_natural',
    'simple_accuracy', 'epochs', 'error',
]
METRICS = ['ce_accuracy', 'ce_accuracy_natural', 'simple_accuracy']


def runs_frame(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    frame = pd.DataFrame(rows, columns=RUN_COLUMNS)
    return frame.sort_values(['window', 'noise', 'replicate'], kind='mergesort').reset_index(drop=True)


def summarize(runs: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample standard deviation per (window, noise) over succeeded runs"""
    succeeded = runs[runs['status'] == 'succeeded']
    succeeded = succeeded.assign(**{metric: pd.to_numeric(succeeded[metric], errors='coerce') for metric in METRICS})
    columns = ['window', 'noise', 'runs'] + [f"{metric}_{stat}" for metric in METRICS for stat in ('mean', 'std')]
    if succeeded.empty:
        return pd.DataFrame(columns=columns)
    grouped = succeeded.groupby(['window', 'noise'], sort=True)
    summary = grouped[METRICS].agg(['mean', 'std'])
    summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
    summary.insert(0, 'runs', grouped.size())
    return summary.reset_index()[columns]


def _dat_table(frame: pd.DataFrame, key: str, header: str) -> str:
    lines = [f"# {header}", f"# {key} mean std runs"]
    for row in frame.itertuples(index=False):
        std = getattr(row, 'ce_accuracy_std')
        std = 0.0 if pd.isna(std) else std
        lines.append(f"{getattr(row, key):g} {row.ce_accuracy_mean:.6f} {std:.6f} {row.runs}")
    return '\n'.join(lines) + '\n'


PLOT_SCRIPT = """\
# Render with: gnuplot plot.gp
set terminal pngcairo size 800,500
set key off
set grid

set output 'noise_curve.png'
set xlabel 'noise fraction'
set ylabel 'test CE accuracy'
set yrange [0:1]
plot 'noise_curve.dat' using 1:2:3 with yerrorlines lw 2 pt 7

set output 'window_table.png'
set xlabel 'window size'
set xtics 1
plot 'window_table.dat' using 1:2:3 with yerrorlines lw 2 pt 7
"""


def write_sweep_outputs(directory, runs: pd.DataFrame) -> Dict[str, Path]:
    """runs.csv, summary.csv, noise_curve.dat, window_table.dat and plot.gp"""
    directory = Path(directory)
    summary = summarize(runs)
    paths = {
        'runs': directory / 'runs.csv',
        'summary': directory / 'summary.csv',
        'noise_curve': directory / 'noise_curve.dat',
        'window_table': directory / 'window_table.dat',
        'plot': directory / 'plot.gp',
    }
    try:
        directory.mkdir(parents=True, exist_ok=True)
        runs.to_csv(paths['runs'], index=False, lineterminator='\n')
        summary.to_csv(paths['summary'], index=False, lineterminator='\n')
        by_noise = summary.sort_values('noise', kind='mergesort')
        paths['noise_curve'].write_text(_dat_table(by_noise, 'noise', 'CE accuracy per noise fraction'),
                                        encoding='utf-8')
        by_window = summary.sort_values('window', kind='mergesort')
        paths['window_table'].write_text(_dat_table(by_window, 'window', 'CE accuracy per window size'),
                                         encoding='utf-8')
        paths['plot'].write_text(PLOT_SCRIPT, encoding='utf-8')
    except OSError as exc:
        raise DatasetIOError(f"Cannot write sweep outputs to {directory}: {exc}") from exc
    return paths


def aggregate_metrics(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample std of metrics.csv rows across replicates, per (window, noise)"""
    present = [metric for metric in METRICS if metric in frame.columns]
    frame = frame.assign(**{metric: pd.to_numeric(frame[metric], errors='coerce') for metric in present})
    grouped = frame.groupby(['window', 'noise'], sort=True)
    summary = grouped[present].agg(['mean', 'std'])
    summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
    summary.insert(0, 'runs', grouped.size())
    return summary.reset_index()

