from pathlib import Path

import pandas as pd
from django.core.management.base import CommandError

from cep.services import ExperimentService

from ._base import CEPCommand


class Command(CEPCommand):
    help = 'Evaluate a checkpoint, or aggregate several metrics.csv files'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='model.json written by train')
        parser.add_argument('--dataset', help='Dataset directory written by gen')
        parser.add_argument('--split', default='test', choices=['train', 'validation', 'test'])
        parser.add_argument(
            '--aggregate',
            nargs='+',
            metavar='METRICS_CSV',
            help='Average metrics.csv files across replicates and report the sample standard deviation',
        )

    def run(self, config, /, **options):
        output_dir = Path(options.get('out') or Path(config.output_dir) / 'eval')
        if options['aggregate']:
            result = ExperimentService.aggregate_metrics(options['aggregate'], output_dir)
            for row in result['summary'].itertuples(index=False):
                std = 0.0 if pd.isna(row.ce_accuracy_std) else row.ce_accuracy_std
                self.stdout.write(
                    f"  - window {row.window} noise {row.noise:g}: CE accuracy "
                    f"{row.ce_accuracy_mean:.4f} +/- {std:.4f} over {row.runs} runs"
                )
            self.stdout.write(self.style.SUCCESS(f"Summary written to {result['path']}"))
            return

        if not options['checkpoint'] or not options['dataset']:
            raise CommandError('--checkpoint and --dataset are required unless --aggregate is given', returncode=1)
        result = ExperimentService.evaluate_model(config, options['checkpoint'], options['dataset'], output_dir,
                                                  split_name=options['split'])
        row = result['row']
        simple = 'n/a' if row['simple_accuracy'] is None else f"{row['simple_accuracy']:.4f}"
        natural = 'n/a' if row['ce_accuracy_natural'] is None else f"{row['ce_accuracy_natural']:.4f}"
        self.stdout.write(self.style.SUCCESS(
            f"window={row['window']} noise={row['noise']:g} seed={row['seed']} "
            f"ce_accuracy={row['ce_accuracy']:.4f} simple_accuracy={simple} ce_accuracy_natural={natural}"
        ))
