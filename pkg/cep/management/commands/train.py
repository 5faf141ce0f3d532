from pathlib import Path

from cep.services import ExperimentService

from ._base import CEPCommand


class Command(CEPCommand):
    help = 'Train the perception network end to end from complex-event labels'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--dataset', required=True, help='Dataset directory written by gen')

    def run(self, config, /, **options):
        output_dir = Path(options.get('out') or Path(config.output_dir) / 'model')
        self.stdout.write(self.style.HTTP_INFO(f"=== Training on {options['dataset']} ===\n"))
        result = ExperimentService.train_model(config, options['dataset'], output_dir)

        self.stdout.write(f"  - epochs run: {result['epochs']}")
        self.stdout.write(f"  - best epoch: {result['best_epoch']}")
        if result['val_ce_accuracy'] is not None:
            self.stdout.write(f"  - best validation CE accuracy: {result['val_ce_accuracy']:.4f}")
        if result['stopped_early']:
            self.stdout.write(self.style.WARNING('  - stopped early'))
        self.stdout.write(self.style.SUCCESS(f"Checkpoint written to {result['checkpoint']}"))
