import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd
from django.db import DatabaseError

from . import neural
from .circuit import BeliefTable, compile_proofs, to_json
from .datagen import (
    ALL_LABELS, CE_LABELS, FEATURE_DIM, EventStream, FeatureModel, class_counts, derive_seed, display_name,
    make_splits, read_dataset, read_features, synth_stream, write_dataset,
)
from .engine import Engine, StreamContext, happens_at
from .exceptions import CEPError, DatasetIOError, SchemaError, UsageError
from .experiments import (
    ExperimentConfig, aggregate_metrics, runs_frame, write_config, write_sweep_outputs,
)
from .models import ExperimentRun, Sweep
from .rulelang import default_rules_path, load_program
from .terms import Int, Program
from .trainer import CEInference, evaluate, supervised_baseline, train

logger = logging.getLogger('cep')

BASELINE_STREAM_PURPOSE = 200
CHECKPOINT_NAME = 'model.json'
METRICS_COLUMNS = ['window', 'noise', 'seed', 'ce_accuracy', 'simple_accuracy', 'ce_accuracy_natural']


def rules_for(config: ExperimentConfig) -> Program:
    return load_program(config.rules_path or default_rules_path())


def program_window(program: Program, fallback: int = 2) -> int:
    """Window from the rule file's ``:- window(W).`` directive"""
    value = program.directive_value('window')
    return value.value if isinstance(value, Int) else fallback


def checkpoint_window(metadata: Dict[str, Any], program: Program, window: Optional[int] = None,
                      check_directive: bool = True) -> int:
    """
    Window a checkpoint is used at: the window it was trained at, unless the
    checkpoint does not record one.

    Raises SchemaError when ``window`` or the rules' ``:- window(W).``
    directive name a different window than the checkpoint was trained at.
    """
    trained = metadata.get('window')
    directive = program.directive_value('window') if check_directive else None
    if trained is None:
        return window or program_window(program)
    trained = int(trained)
    if window is not None and window != trained:
        raise SchemaError(f"Checkpoint was trained at window {trained}, not {window}")
    if isinstance(directive, Int) and directive.value != trained:
        raise SchemaError(f"Checkpoint was trained at window {trained} but the rules declare window "
                          f"{directive.value}")
    return trained


def neural_domain(program: Program) -> tuple:
    if not program.neural:
        raise SchemaError("The rule file declares no neural predicate")
    return tuple(program.neural[0].domain)


def check_compatible(params: neural.MLPParams, domain: Iterable[str]):
    domain = tuple(domain)
    if params.widths[0] != FEATURE_DIM:
        raise SchemaError(f"Checkpoint expects {params.widths[0]} features, datasets have {FEATURE_DIM}")
    if params.widths[-1] != len(domain):
        raise SchemaError(f"Checkpoint predicts {params.widths[-1]} classes, the rules declare {len(domain)}")


def infer_distribution(params: neural.MLPParams, program: Program, stream: EventStream, t: int,
                       window: int) -> Dict[str, Any]:
    """
    Outcome distribution of the ten complex events plus null at ``t``.
    Only the events the circuits mention are classified.
    """
    if not 0 <= t < len(stream):
        raise UsageError(f"Timestamp {t} is outside the stream (0..{len(stream) - 1})")
    domain = neural_domain(program)
    check_compatible(params, domain)
    inference = CEInference(program, StreamContext.for_length(len(stream), window), domain)
    timestamps = inference.leaf_timestamps(t)
    if timestamps:
        output = neural.forward_batch(params, stream.features[timestamps])
        beliefs = BeliefTable.from_matrix(domain, output, timestamps, validate=False)
    else:
        beliefs = BeliefTable(domain, {}, validate=False)
    dist = inference.distribution(t, beliefs)
    argmax = dist.argmax()
    return {
        't': t,
        'window': window,
        'distribution': dist.to_dict(),
        'argmax': argmax,
        'argmax_name': display_name(argmax),
        'total': float(np.sum(dist.probabilities)),
    }


def _open_run(**fields) -> Optional[ExperimentRun]:
    """Index a run in the database; files stay authoritative when the database is unavailable"""
    try:
        return ExperimentRun.objects.create(status='running', **fields)
    except DatabaseError as e:
        logger.warning(f"Could not record {fields.get('command')} run: {str(e)}")
        return None


def _close_run(run: Optional[ExperimentRun], error: Optional[str] = None, **metrics):
    if run is None:
        return
    try:
        if error is None:
            run.succeed(**metrics)
        else:
            run.fail(error)
    except DatabaseError as e:
        logger.warning(f"Could not update run {run.pk}: {str(e)}")


class ExperimentService:
    """
    Orchestrates dataset generation, training, evaluation, inference and
    sweeps for the management commands and the Celery task. Errors surface as
    CEPError subclasses carrying exit codes.
    """

    @staticmethod
    def feature_model(config: ExperimentConfig) -> FeatureModel:
        return FeatureModel.random(config.feature_seed, config.feature_sigma)

    @classmethod
    def generate_dataset(cls, config: ExperimentConfig, output_dir, seed: Optional[int] = None,
                         with_baseline: bool = False) -> Dict[str, Any]:
        """
        Write train, validation and test splits plus dataset.json.

        Args:
            config: Resolved experiment configuration
            output_dir: Dataset directory, created when missing
            seed: Run seed for the splits; the feature model always follows ``config.seed``
            with_baseline: Also train the network on simple-event labels and report its accuracy

        Returns:
            dict: The dataset manifest
        """
        seed = config.seed if seed is None else seed
        output_dir = Path(output_dir)
        model = cls.feature_model(config)
        split_seeds = config.split_seeds(seed)
        splits = make_splits(split_seeds, config.window, model, config.noise, config.sizes, config.train_points)

        manifest = {
            'seed': seed,
            'feature_seed': config.feature_seed,
            'split_seeds': list(split_seeds),
            'window': config.window,
            'noise': config.noise,
            'sigma': config.feature_sigma,
            'splits': {
                name: {
                    'events': len(split.stream),
                    'points': len(split.points),
                    'label_counts': split.labeling.counts(),
                }
                for name, split in splits.items()
            },
        }
        if with_baseline:
            baseline_stream = synth_stream(class_counts(config.train_events, model.n_classes), model,
                                           derive_seed(seed, BASELINE_STREAM_PURPOSE))
            accuracy, _ = supervised_baseline(baseline_stream, splits['test'].stream, seed=seed)
            manifest['supervised_accuracy'] = accuracy

        write_dataset(output_dir, splits, manifest)
        write_config(config, output_dir, {'seed': seed})
        logger.info(f"Dataset written to {output_dir} (window {config.window}, noise {config.noise}, seed {seed})")
        return manifest

    @classmethod
    def train_model(cls, config: ExperimentConfig, dataset_dir, output_dir, seed: Optional[int] = None,
                    sweep: Optional[Sweep] = None, replicate: int = 0) -> Dict[str, Any]:
        """
        Train from the dataset's train split with early stopping on its
        validation split. Writes model.json, history.csv and config.json.

        Returns:
            dict: checkpoint path, epochs run, best epoch and best validation CE accuracy
        """
        seed = config.seed if seed is None else seed
        output_dir = Path(output_dir)
        splits = read_dataset(dataset_dir)
        missing = [name for name in ('train', 'validation') if name not in splits]
        if missing:
            raise SchemaError(f"Dataset {dataset_dir} lacks the {', '.join(missing)} split")
        window = splits['train'].window
        if window != config.window:
            logger.warning(f"Using the dataset window {window} instead of the configured {config.window}")
        noise = float(splits['train'].meta.get('noise', config.noise))
        program = rules_for(config)
        initial = neural.init(seed)
        check_compatible(initial, neural_domain(program))

        run = _open_run(command='sweep' if sweep else 'train', sweep=sweep, window=window, noise=noise,
                        seed=seed, replicate=replicate, output_dir=str(output_dir))
        try:
            params, history = train(program, initial, splits, config.train_config(seed, window),
                                    output_dir=output_dir)
            output_dir.mkdir(parents=True, exist_ok=True)
            history.write_csv(output_dir / 'history.csv')
            best = history.records[history.best_epoch - 1] if history.best_epoch else None
            checkpoint = neural.save_checkpoint(
                output_dir / CHECKPOINT_NAME, params, seed,
                metadata={
                    'window': window,
                    'noise': noise,
                    'epochs': len(history),
                    'best_epoch': history.best_epoch,
                    'rules': program.fingerprint,
                    'domain': list(neural_domain(program)),
                },
            )
            write_config(config, output_dir, {'seed': seed, 'window': window, 'noise': noise,
                                              'dataset': str(dataset_dir)})
        except CEPError as e:
            _close_run(run, error=str(e))
            raise
        except OSError as e:
            _close_run(run, error=str(e))
            raise DatasetIOError(f"Cannot write training outputs to {output_dir}: {e}") from e

        result = {
            'checkpoint': str(checkpoint),
            'epochs': len(history),
            'best_epoch': history.best_epoch,
            'stopped_early': history.stopped_early,
            'val_ce_accuracy': best.val_ce_acc if best else None,
            'run': run,
        }
        if not sweep:
            _close_run(run, ce_accuracy=result['val_ce_accuracy'], epochs_run=len(history),
                       checkpoint_path=str(checkpoint))
        logger.info(f"Training finished after {len(history)} epochs, best epoch {history.best_epoch}")
        return result

    @classmethod
    def evaluate_model(cls, config: ExperimentConfig, checkpoint, dataset_dir, output_dir,
                       split_name: str = 'test', record: bool = True) -> Dict[str, Any]:
        """
        Evaluate a checkpoint on one split and write metrics.csv and confusion.csv.

        Returns:
            dict: the metrics row plus the Metrics object
        """
        output_dir = Path(output_dir)
        params, payload = neural.load_checkpoint(checkpoint)
        program = rules_for(config)
        check_compatible(params, neural_domain(program))
        splits = read_dataset(dataset_dir)
        if split_name not in splits:
            raise SchemaError(f"Dataset {dataset_dir} has no {split_name} split")
        split = splits[split_name]
        metadata = payload.get('metadata', {})
        window = split.window
        noise = float(metadata.get('noise', config.noise))
        seed = int(payload.get('seed', config.seed))

        run = _open_run(command='eval', window=window, noise=noise, seed=seed, output_dir=str(output_dir),
                        checkpoint_path=str(checkpoint)) if record else None
        try:
            metrics = evaluate(params, program, split, window, natural=True)
            row = {
                'window': window,
                'noise': noise,
                'seed': seed,
                'ce_accuracy': metrics.ce_accuracy,
                'simple_accuracy': metrics.simple_accuracy,
                'ce_accuracy_natural': metrics.ce_accuracy_natural,
            }
            output_dir.mkdir(parents=True, exist_ok=True)
            pd.DataFrame([row], columns=METRICS_COLUMNS).to_csv(output_dir / 'metrics.csv', index=False,
                                                                lineterminator='\n')
            confusion = pd.DataFrame(metrics.confusion, index=list(ALL_LABELS), columns=list(ALL_LABELS))
            confusion.index.name = 'label'
            confusion.to_csv(output_dir / 'confusion.csv', lineterminator='\n')
            write_config(config, output_dir, {'checkpoint': str(checkpoint), 'dataset': str(dataset_dir),
                                              'split': split_name})
        except CEPError as e:
            _close_run(run, error=str(e))
            raise
        except OSError as e:
            _close_run(run, error=str(e))
            raise DatasetIOError(f"Cannot write evaluation outputs to {output_dir}: {e}") from e

        _close_run(run, ce_accuracy=metrics.ce_accuracy, simple_accuracy=metrics.simple_accuracy,
                   ce_accuracy_natural=metrics.ce_accuracy_natural)
        logger.info(f"Evaluated {checkpoint} on {split_name}: CE accuracy {metrics.ce_accuracy:.4f}")
        return {'row': row, 'metrics': metrics}

    @staticmethod
    def aggregate_metrics(metrics_paths: List[str], output_dir) -> Dict[str, Any]:
        """Mean and sample standard deviation of several metrics.csv files per window and noise"""
        frames = []
        for path in metrics_paths:
            try:
                frames.append(pd.read_csv(path))
            except OSError as e:
                raise DatasetIOError(f"Cannot read {path}: {e}") from e
        frame = pd.concat(frames, ignore_index=True)
        missing = [column for column in ('window', 'noise', 'ce_accuracy') if column not in frame.columns]
        if missing:
            raise SchemaError(f"Metrics files lack columns {missing}")
        summary = aggregate_metrics(frame)
        output_dir = Path(output_dir)
        try:
            output_dir.mkdir(parents=True, exist_ok=True)
            summary.to_csv(output_dir / 'summary.csv', index=False, lineterminator='\n')
        except OSError as e:
            raise DatasetIOError(f"Cannot write {output_dir / 'summary.csv'}: {e}") from e
        return {'summary': summary, 'path': str(output_dir / 'summary.csv')}

    @staticmethod
    def infer(checkpoint, rules_path, features_path, t: int, window: Optional[int] = None) -> Dict[str, Any]:
        """
        Outcome distribution at ``t`` at the window the checkpoint was trained
        at. The window directive of the shipped rules is not checked.
        """
        params, payload = neural.load_checkpoint(checkpoint)
        program = load_program(rules_path or default_rules_path())
        window = checkpoint_window(payload.get('metadata', {}), program, window, check_directive=bool(rules_path))
        stream = read_features(features_path)
        return infer_distribution(params, program, stream, t, window)

    @staticmethod
    def inspect_circuit(rules_path, label: str, t: int, window: Optional[int] = None,
                        length: Optional[int] = None) -> Dict[str, Any]:
        """Proofs and compiled circuit of ``happensAt(label, t)`` on a stream of ``length`` events"""
        if label not in CE_LABELS:
            raise UsageError(f"Unknown complex event '{label}'; expected one of {', '.join(CE_LABELS)}")
        program = load_program(rules_path or default_rules_path())
        window = window or program_window(program)
        length = length or t + 1
        if not 0 <= t < length:
            raise UsageError(f"Timestamp {t} is outside a stream of {length} events")
        query = happens_at(label, t)
        proofs = Engine(program).solve(StreamContext.for_length(length, window), query)
        circuit = compile_proofs(proofs)
        return {
            'query': str(query),
            'window': window,
            'proofs': [str(proof) for proof in proofs],
            'circuit': to_json(circuit),
        }

    @classmethod
    def execute_run(cls, config: ExperimentConfig, window: int, noise: float, replicate: int,
                    output_dir, sweep: Optional[Sweep] = None) -> Dict[str, Any]:
        """
        gen, train and eval for one sweep cell. Failures become a row with
        status 'failed' so the sweep continues.
        """
        seed = config.replicate_seed(replicate)
        cell = config.merged({'window': window, 'noise': noise})
        run_dir = Path(output_dir) / f"w{window}-f{noise:g}-r{replicate}"
        row = {'window': window, 'noise': noise, 'seed': seed, 'replicate': replicate, 'status': 'failed',
               'ce_accuracy': None, 'ce_accuracy_natural': None, 'simple_accuracy': None, 'epochs': None,
               'error': ''}
        run = None
        try:
            cls.generate_dataset(cell, run_dir / 'dataset', seed=seed)
            trained = cls.train_model(cell, run_dir / 'dataset', run_dir / 'model', seed=seed, sweep=sweep,
                                      replicate=replicate)
            run = trained['run']
            evaluated = cls.evaluate_model(cell, trained['checkpoint'], run_dir / 'dataset', run_dir / 'eval',
                                           record=False)
            row.update({key: evaluated['row'][key]
                        for key in ('ce_accuracy', 'ce_accuracy_natural', 'simple_accuracy')})
            row.update({'status': 'succeeded', 'epochs': trained['epochs']})
            _close_run(run, ce_accuracy=row['ce_accuracy'], ce_accuracy_natural=row['ce_accuracy_natural'],
                       simple_accuracy=row['simple_accuracy'], epochs_run=trained['epochs'],
                       checkpoint_path=trained['checkpoint'])
        except Exception as e:
            logger.error(f"Sweep cell W={window} noise={noise} replicate={replicate} failed: {str(e)}")
            row['error'] = str(e)
            _close_run(run, error=str(e))
        return row

    @classmethod
    def run_sweep(cls, config: ExperimentConfig, kind: str, output_dir, name: Optional[str] = None) -> Dict[str, Any]:
        """
        Run every (window, noise, replicate) cell of a base or noise sweep
        through the Celery task and write runs.csv, summary.csv and plot data.
        """
        from .tasks import run_sweep_cell

        cells = config.cells(kind)
        output_dir = Path(output_dir)
        sweep = None
        try:
            sweep = Sweep.objects.create(name=name or kind, kind=kind, config=config.to_dict(),
                                         output_dir=str(output_dir), status='running')
        except DatabaseError as e:
            logger.warning(f"Could not record sweep: {str(e)}")

        logger.info(f"Starting {kind} sweep with {len(cells)} runs into {output_dir}")
        pending = [
            run_sweep_cell.delay(config.to_dict(), window, noise, replicate, str(output_dir),
                                 sweep.pk if sweep else None)
            for window, noise, replicate in cells
        ]
        rows = [result.get() for result in pending]
        runs = runs_frame(rows)
        paths = write_sweep_outputs(output_dir, runs)
        write_config(config, output_dir, {'sweep': kind})
        if sweep is not None:
            try:
                sweep.mark_finished()
            except DatabaseError as e:
                logger.warning(f"Could not update sweep {sweep.pk}: {str(e)}")

        failed = int((runs['status'] == 'failed').sum())
        logger.info(f"Sweep finished: {len(runs) - failed} succeeded, {failed} failed")
        return {'runs': runs, 'paths': {key: str(path) for key, path in paths.items()}, 'failed': failed,
                'sweep': sweep}


class InferenceService:
    """Inference for the REST API; results follow the {'success', 'data'/'error', 'status_code'} shape"""

    @staticmethod
    def _rules_path(run: ExperimentRun) -> Optional[str]:
        config_path = Path(run.output_dir) / 'config.json'
        try:
            return json.loads(config_path.read_text(encoding='utf-8')).get('rules_path') or None
        except (OSError, ValueError):
            return None

    @classmethod
    def infer_for_run(cls, run_id: int, features: List[List[int]], t: int,
                      window: Optional[int] = None) -> Dict[str, Any]:
        """
        Classify a posted stream with a trained run's checkpoint.

        Args:
            run_id: ID of a succeeded ExperimentRun with a checkpoint
            features: One row of 128 integer features per timestamp
            t: Timestamp to query
            window: Must match the run's training window when given

        Returns:
            dict: Result containing success status, distribution data, or error info
        """
        try:
            try:
                run = ExperimentRun.objects.get(id=run_id)
            except ExperimentRun.DoesNotExist:
                return {'success': False, 'error': 'Run not found', 'status_code': 404}
            if run.status != 'succeeded' or not run.checkpoint_path:
                return {'success': False, 'error': 'Run has no trained checkpoint', 'status_code': 400}

            params, payload = neural.load_checkpoint(run.checkpoint_path)
            rules_path = cls._rules_path(run)
            program = load_program(rules_path or default_rules_path())
            metadata = {'window': run.window, **payload.get('metadata', {})}
            window = checkpoint_window(metadata, program, window, check_directive=bool(rules_path))
            stream = EventStream(np.asarray(features, dtype=np.int64))
            data = infer_distribution(params, program, stream, t, window)
            data['run_id'] = run.id
            logger.info(f"Inference for run {run.id} at t={t}: {data['argmax']}")
            return {'success': True, 'data': data, 'status_code': 200}
        except CEPError as e:
            logger.warning(f"Inference for run {run_id} rejected: {e.message}")
            return {'success': False, 'error': e.message, 'status_code': e.status_code}
        except Exception as e:
            logger.error(f"Unexpected error during inference: {str(e)}")
            return {
                'success': False,
                'error': 'An unexpected error occurred during inference',
                'status_code': 500,
            }

    @staticmethod
    def sweep_summary(sweep: Sweep) -> Dict[str, Any]:
        """Mean and sample std of succeeded runs per (window, noise)"""
        rows = list(sweep.runs.filter(status='succeeded').values(
            'window', 'noise', 'ce_accuracy', 'ce_accuracy_natural', 'simple_accuracy'))
        if not rows:
            return {'sweep': sweep.id, 'name': sweep.name, 'kind': sweep.kind, 'rows': []}
        summary = aggregate_metrics(pd.DataFrame(rows))
        summary = summary.astype(object).where(pd.notna(summary), None)
        return {'sweep': sweep.id, 'name': sweep.name, 'kind': sweep.kind,
                'rows': summary.to_dict(orient='records')}
