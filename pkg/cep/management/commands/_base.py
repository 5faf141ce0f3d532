import json
import logging

from django.core.management.base import BaseCommand, CommandError

from cep.exceptions import CEPError
from cep.experiments import ExperimentConfig, preset_names, resolve_config

logger = logging.getLogger('cep')

# command option -> ExperimentConfig field
FLAG_FIELDS = {
    'rules': 'rules_path',
    'seed': 'seed',
    'window': 'window',
    'noise': 'noise',
    'replicates': 'replicates',
    'max_epochs': 'max_epochs',
    'patience': 'patience',
    'learning_rate': 'learning_rate',
    'batch_size': 'batch_size',
    'train_events': 'train_events',
    'validation_events': 'validation_events',
    'test_events': 'test_events',
    'train_points': 'train_points',
    'feature_sigma': 'feature_sigma',
}


class CEPCommand(BaseCommand):
    """
    Base for the experiment commands: shared configuration flags, layered
    config resolution and conversion of CEPError into exit codes.
    """

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON file with configuration overrides')
        parser.add_argument('--preset', help=f"Named preset ({', '.join(preset_names()[:2])}, ...)")
        parser.add_argument('--seed', type=int, help='Base seed')
        parser.add_argument('--window', type=int, help='Window size')
        parser.add_argument('--noise', type=float, help='Fraction of noisy training labels')
        parser.add_argument('--out', help='Output directory')
        parser.add_argument('--rules', help='Rule file (default: the bundled sequence rules)')
        parser.add_argument('--replicates', type=int, help='Replicates per sweep cell')
        parser.add_argument('--max-epochs', type=int, help='Maximum training epochs')
        parser.add_argument('--patience', type=int, help='Early-stopping patience in epochs')
        parser.add_argument('--learning-rate', type=float, help='Adam learning rate')
        parser.add_argument('--batch-size', type=int, help='Training points per Adam step')
        parser.add_argument('--train-events', type=int, help='Events in the training stream')
        parser.add_argument('--validation-events', type=int, help='Events in the validation stream')
        parser.add_argument('--test-events', type=int, help='Events in the test stream')
        parser.add_argument('--train-points', type=int, help='Balanced training points')
        parser.add_argument('--feature-sigma', type=float, help='Spread of the synthetic features')
        parser.add_argument('--no-cache', action='store_true', help='Compile every circuit from scratch')

    def resolve(self, options) -> ExperimentConfig:
        flags = {field: options.get(option) for option, field in FLAG_FIELDS.items()}
        if options.get('out'):
            flags['output_dir'] = options['out']
        if options.get('no_cache'):
            flags['circuit_cache'] = False
        return resolve_config(options.get('config'), options.get('preset'), flags)

    def handle(self, *args, **options):
        try:
            return self.run(self.resolve(options), **options)
        except CEPError as e:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed: {e.message}")
            raise CommandError(e.message, returncode=e.exit_code)

    def run(self, config: ExperimentConfig, /, **options):
        raise NotImplementedError

    def write_json(self, payload):
        self.stdout.write(json.dumps(payload, indent=2, sort_keys=True))
