"""
Synthetic event streams, complex-event labelings, label noise, balanced
training points, and the on-disk dataset format.

A dataset directory holds one sub-directory per split with features.csv,
labels.csv, points.csv and meta.json, plus a top-level dataset.json manifest.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .engine import ce_label
from .exceptions import BalanceError, DatasetIOError, SchemaError, UsageError

logger = logging.getLogger('cep')

CLASS_NAMES: Tuple[str, ...] = (
    'air_conditioner', 'car_horn', 'children_playing', 'dog_bark', 'drilling',
    'enginge_idling', 'gun_shot', 'jackhammer', 'siren', 'street_music',
)
CE_LABELS: Tuple[str, ...] = tuple(ce_label(index) for index in range(len(CLASS_NAMES)))
NULL_LABEL = 'null'
ALL_LABELS: Tuple[str, ...] = CE_LABELS + (NULL_LABEL,)
FEATURE_DIM = 128
FEATURE_MIN, FEATURE_MAX = 1, 255
SPLIT_NAMES = ('train', 'validation', 'test')

# Seed purposes, mixed with a split seed through numpy's SeedSequence.
STREAM, NOISE, BALANCE, EVALUATION, FEATURES = range(5)


def derive_seed(seed: int, purpose: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(purpose)]).generate_state(1)[0])


def display_name(label: str, class_names: Sequence[str] = CLASS_NAMES) -> str:
    """Human-readable label: ``ce_8`` becomes ``ceSiren``"""
    if label == NULL_LABEL:
        return label
    name = class_names[CE_LABELS.index(label)]
    return 'ce' + ''.join(part.capitalize() for part in name.split('_'))


@dataclass(frozen=True)
class SimpleEvent:
    timestamp: int
    feature: np.ndarray
    true_class: Optional[int] = None


@dataclass
class EventStream:
    """Feature rows for timestamps 0..n-1, with ground-truth classes when known"""
    features: np.ndarray
    true_classes: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[1] != FEATURE_DIM:
            raise SchemaError(f"Stream features must have {FEATURE_DIM} columns, got shape {self.features.shape}")
        if self.features.size and (self.features.min() < FEATURE_MIN or self.features.max() > FEATURE_MAX):
            raise SchemaError(f"Feature values must lie in [{FEATURE_MIN}, {FEATURE_MAX}]")
        if self.true_classes is not None:
            self.true_classes = np.asarray(self.true_classes, dtype=np.int64)
            if self.true_classes.shape != (len(self.features),):
                raise SchemaError("One true class per event is required")

    def __len__(self):
        return len(self.features)

    @property
    def timestamps(self) -> range:
        return range(len(self.features))

    @property
    def events(self) -> Iterator[SimpleEvent]:
        for t in self.timestamps:
            true_class = None if self.true_classes is None else int(self.true_classes[t])
            yield SimpleEvent(t, self.features[t], true_class)

    def without_ground_truth(self) -> 'EventStream':
        return EventStream(self.features, None)


@dataclass
class CELabeling:
    labels: List[str]
    redrawn: Tuple[int, ...] = ()

    def __post_init__(self):
        self.labels = list(self.labels)
        unknown = set(self.labels) - set(ALL_LABELS)
        if unknown:
            raise SchemaError(f"Unknown complex-event labels: {sorted(unknown)}")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, timestamp: int) -> str:
        return self.labels[timestamp]

    def counts(self) -> Dict[str, int]:
        counts = dict.fromkeys(ALL_LABELS, 0)
        for label in self.labels:
            counts[label] += 1
        return counts


@dataclass
class FeatureModel:
    """Per-class integer centroids and an isotropic spread (the difficulty knob)"""
    centroids: np.ndarray
    sigma: float

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.sigma < 0:
            raise UsageError(f"Feature sigma must be nonnegative, got {self.sigma}")
        if self.centroids.min() < FEATURE_MIN or self.centroids.max() > FEATURE_MAX:
            raise UsageError(f"Centroids must lie in [{FEATURE_MIN}, {FEATURE_MAX}]")

    @classmethod
    def random(cls, seed: int, sigma: float, n_classes: int = len(CLASS_NAMES),
               dim: int = FEATURE_DIM) -> 'FeatureModel':
        rng = np.random.default_rng(seed)
        return cls(rng.integers(FEATURE_MIN, FEATURE_MAX + 1, size=(n_classes, dim)), sigma)

    @property
    def n_classes(self) -> int:
        return self.centroids.shape[0]


@dataclass(frozen=True)
class NoiseConfig:
    fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise UsageError(f"Noise fraction must lie in [0, 1], got {self.fraction}")


def class_counts(total: int, n_classes: int = len(CLASS_NAMES)) -> List[int]:
    """Near-equal per-class event counts summing to ``total``"""
    base, extra = divmod(total, n_classes)
    return [base + (1 if index < extra else 0) for index in range(n_classes)]


def synth_stream(counts: Sequence[int], model: FeatureModel, seed: int) -> EventStream:
    """Shuffle ``counts[c]`` events of every class c and draw their features"""
    if any(count < 0 for count in counts):
        raise UsageError("Class counts must be nonnegative")
    if sum(counts) < 2:
        raise UsageError("A stream needs at least two events")
    if len(counts) != model.n_classes:
        raise UsageError(f"Got {len(counts)} class counts for a model with {model.n_classes} classes")
    rng = np.random.default_rng(seed)
    classes = rng.permutation(np.repeat(np.arange(len(counts)), counts))
    noise = rng.normal(0.0, model.sigma, size=(len(classes), model.centroids.shape[1]))
    features = np.clip(np.rint(model.centroids[classes] + noise), FEATURE_MIN, FEATURE_MAX)
    return EventStream(features.astype(np.int64), classes)


def label_ce(stream: EventStream, window: int) -> CELabeling:
    """
    ``ce_N`` at t when the class N seen at t also occurs at some P with
    t - window < P < t; ``null`` elsewhere.
    """
    if stream.true_classes is None:
        raise UsageError("Labeling needs a stream with ground-truth classes")
    if window < 1:
        raise UsageError(f"Window must be at least 1, got {window}")
    classes = stream.true_classes
    matched = np.zeros(len(classes), dtype=bool)
    for distance in range(1, window):
        matched[distance:] |= classes[distance:] == classes[:-distance]
    return CELabeling([ce_label(int(c)) if hit else NULL_LABEL for c, hit in zip(classes, matched)])


def inject_noise(labeling: CELabeling, cfg: NoiseConfig) -> CELabeling:
    """
    Redraw each complex-event label with probability ``cfg.fraction`` uniformly
    from the CE labels (the original may come back). Null labels are kept.
    """
    rng = np.random.default_rng(cfg.seed)
    size = len(labeling)
    flips = rng.random(size) < cfg.fraction
    draws = rng.integers(0, len(CE_LABELS), size=size)
    labels = list(labeling.labels)
    redrawn = []
    for t in range(size):
        if labels[t] != NULL_LABEL and flips[t]:
            labels[t] = CE_LABELS[draws[t]]
            redrawn.append(t)
    return CELabeling(labels, tuple(redrawn))


def _positions(labeling: CELabeling) -> Dict[str, np.ndarray]:
    labels = np.asarray(labeling.labels)
    return {label: np.flatnonzero(labels == label) for label in ALL_LABELS}


def balance(labeling: CELabeling, total_n: int, seed: int) -> List[Tuple[int, str]]:
    """
    ``total_n`` (timestamp, label) points spread over the 11 label classes with
    counts differing by at most one. Remainder points go to the most populated
    classes.
    """
    if total_n < 1:
        raise UsageError("The number of training points must be positive")
    positions = _positions(labeling)
    base, remainder = divmod(total_n, len(ALL_LABELS))
    by_population = sorted(ALL_LABELS, key=lambda label: (-len(positions[label]), ALL_LABELS.index(label)))
    quotas = {label: base + (1 if label in by_population[:remainder] else 0) for label in ALL_LABELS}
    for label in ALL_LABELS:
        if len(positions[label]) < quotas[label]:
            raise BalanceError(label, len(positions[label]), quotas[label])

    rng = np.random.default_rng(seed)
    points = []
    for label in ALL_LABELS:
        chosen = rng.choice(positions[label], size=quotas[label], replace=False)
        points.extend((int(t), label) for t in chosen)
    return sorted(points)


def balanced_evaluation_points(labeling: CELabeling, seed: int) -> List[Tuple[int, str]]:
    """Every label class subsampled to the size of the rarest one"""
    positions = _positions(labeling)
    rarest = min(ALL_LABELS, key=lambda label: len(positions[label]))
    smallest = len(positions[rarest])
    if smallest == 0:
        raise BalanceError(rarest, 0, 1)
    rng = np.random.default_rng(seed)
    points = []
    for label in ALL_LABELS:
        chosen = rng.choice(positions[label], size=smallest, replace=False)
        points.extend((int(t), label) for t in chosen)
    return sorted(points)


@dataclass
class Split:
    name: str
    stream: EventStream
    labeling: CELabeling
    points: List[Tuple[int, str]]
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def window(self) -> int:
        return int(self.meta['window'])


def make_splits(seeds: Sequence[int], window: int, model: FeatureModel, noise: float,
                sizes: Sequence[int] = (16000, 2000, 2000), train_points: int = 1000) -> Dict[str, Split]:
    """
    Train, validation and test splits from independent streams. Only the
    training labels are noisy and balanced; validation and test keep clean
    labels, ground-truth classes and a class-balanced evaluation subset.
    """
    if len(seeds) != 3 or len(set(seeds)) != 3:
        raise UsageError("make_splits needs three distinct seeds")
    splits = {}
    for name, seed, size in zip(SPLIT_NAMES, seeds, sizes):
        stream = synth_stream(class_counts(size, model.n_classes), model, derive_seed(seed, STREAM))
        labeling = label_ce(stream, window)
        meta = {
            'split': name,
            'window': window,
            'noise': noise if name == 'train' else 0.0,
            'seed': int(seed),
            'events': int(size),
            'sigma': float(model.sigma),
            'class_names': list(CLASS_NAMES),
        }
        if name == 'train':
            labeling = inject_noise(labeling, NoiseConfig(noise, derive_seed(seed, NOISE)))
            points = balance(labeling, train_points, derive_seed(seed, BALANCE))
            stream = stream.without_ground_truth()
            meta['redrawn_labels'] = len(labeling.redrawn)
        else:
            points = balanced_evaluation_points(labeling, derive_seed(seed, EVALUATION))
        meta['points'] = len(points)
        splits[name] = Split(name, stream, labeling, points, meta)
        logger.info(f"Generated {name} split: {size} events, {len(points)} points, window {window}, noise {meta['noise']}")
    return splits


# ---------------------------------------------------------------------------
# Files

def feature_columns() -> List[str]:
    return [f"f{index}" for index in range(FEATURE_DIM)]


def _write_csv(frame: pd.DataFrame, path: Path):
    try:
        frame.to_csv(path, index=False, lineterminator='\n')
    except OSError as exc:
        raise DatasetIOError(f"Cannot write {path}: {exc}") from exc


def _write_json(payload: Dict[str, Any], path: Path):
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    except OSError as exc:
        raise DatasetIOError(f"Cannot write {path}: {exc}") from exc


def write_split(directory, split: Split) -> Path:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"Cannot create {directory}: {exc}") from exc

    features = pd.DataFrame(split.stream.features, columns=feature_columns())
    features.insert(0, 'timestamp', np.arange(len(split.stream)))
    if split.stream.true_classes is None:
        features['trueClass'] = pd.array([pd.NA] * len(split.stream), dtype='Int64')
    else:
        features['trueClass'] = split.stream.true_classes
    _write_csv(features, directory / 'features.csv')
    _write_csv(pd.DataFrame({'timestamp': np.arange(len(split.labeling)), 'ceLabel': split.labeling.labels}),
               directory / 'labels.csv')
    _write_csv(pd.DataFrame(split.points, columns=['timestamp', 'ceLabel']), directory / 'points.csv')
    _write_json(split.meta, directory / 'meta.json')
    return directory


def write_dataset(directory, splits: Dict[str, Split], manifest: Dict[str, Any]) -> Path:
    directory = Path(directory)
    for name, split in splits.items():
        write_split(directory / name, split)
    _write_json(manifest, directory / 'dataset.json')
    return directory


def _read_csv(path: Path, **kwargs) -> pd.DataFrame:
    try:
        return pd.read_csv(path, **kwargs)
    except FileNotFoundError as exc:
        raise DatasetIOError(f"Missing file {path}") from exc
    except OSError as exc:
        raise DatasetIOError(f"Cannot read {path}: {exc}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SchemaError(f"Malformed CSV {path}: {exc}") from exc


def read_features(path) -> EventStream:
    """
    Load a features.csv (timestamp, f0..f127, trueClass) produced by this
    package or by an external extractor.
    """
    path = Path(path)
    frame = _read_csv(path, dtype={'trueClass': 'Int64'})
    expected = ['timestamp'] + feature_columns()
    missing = [column for column in expected if column not in frame.columns]
    if missing:
        raise SchemaError(f"{path} lacks columns {missing[:5]}{'...' if len(missing) > 5 else ''}")
    if not np.array_equal(frame['timestamp'].to_numpy(), np.arange(len(frame))):
        raise SchemaError(f"{path}: timestamps must be 0..{len(frame) - 1} in order")
    true_classes = None
    if 'trueClass' in frame.columns and not frame['trueClass'].isna().any():
        true_classes = frame['trueClass'].to_numpy(dtype=np.int64)
    return EventStream(frame[feature_columns()].to_numpy(dtype=np.int64), true_classes)


def read_split(directory) -> Split:
    directory = Path(directory)
    stream = read_features(directory / 'features.csv')
    labels = _read_csv(directory / 'labels.csv', dtype={'ceLabel': str}, keep_default_na=False)
    points = _read_csv(directory / 'points.csv', dtype={'ceLabel': str}, keep_default_na=False)
    if list(labels.columns) != ['timestamp', 'ceLabel'] or len(labels) != len(stream):
        raise SchemaError(f"{directory / 'labels.csv'} must have one timestamp,ceLabel row per event")
    try:
        meta = json.loads((directory / 'meta.json').read_text(encoding='utf-8'))
    except OSError as exc:
        raise DatasetIOError(f"Cannot read {directory / 'meta.json'}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{directory / 'meta.json'} is not valid JSON: {exc}") from exc
    return Split(
        name=meta.get('split', directory.name),
        stream=stream,
        labeling=CELabeling(labels['ceLabel'].tolist()),
        points=[(int(t), str(label)) for t, label in zip(points['timestamp'], points['ceLabel'])],
        meta=meta,
    )


def read_dataset(directory) -> Dict[str, Split]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetIOError(f"Dataset directory {directory} does not exist")
    return {name: read_split(directory / name) for name in SPLIT_NAMES if (directory / name).is_dir()}
