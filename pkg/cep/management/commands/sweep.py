from pathlib import Path

from cep.experiments import SWEEP_KINDS
from cep.services import ExperimentService

from ._base import CEPCommand


class Command(CEPCommand):
    help = 'Run gen, train and eval for every window size or noise fraction and replicate'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--kind', choices=SWEEP_KINDS,
                            help='base: every window at noise 0; noise: every noise fraction at --window')
        parser.add_argument('--name', help='Sweep label stored with the runs')

    def run(self, config, /, **options):
        preset = options.get('preset') or ''
        kind = options['kind'] or ('noise' if preset.startswith('noise') else 'base')
        output_dir = Path(options.get('out') or Path(config.output_dir) / f'sweep-{kind}')
        cells = config.cells(kind)
        self.stdout.write(self.style.HTTP_INFO(f'=== {kind} sweep: {len(cells)} runs into {output_dir} ===\n'))

        result = ExperimentService.run_sweep(config, kind, output_dir, name=options.get('name') or preset or kind)

        for row in result['runs'].itertuples(index=False):
            outcome = f'{row.ce_accuracy:.4f}' if row.status == 'succeeded' else f'failed: {row.error}'
            self.stdout.write(f'  - W={row.window} noise={row.noise:g} seed={row.seed}: {outcome}')
        if result['failed']:
            self.stdout.write(self.style.WARNING(f"{result['failed']} of {len(result['runs'])} runs failed"))
        self.stdout.write(self.style.SUCCESS(f"Sweep tables written to {output_dir}"))
