from cep.services import ExperimentService

from ._base import CEPCommand


class Command(CEPCommand):
    help = 'Print the proofs and compiled circuit of happensAt(LABEL, T) as JSON'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--label', required=True, help='Complex event, e.g. ce_8')
        parser.add_argument('--t', type=int, required=True, help='Query timestamp')
        parser.add_argument('--length', type=int, help='Stream length (default: t + 1)')

    def run(self, config, /, **options):
        result = ExperimentService.inspect_circuit(
            options.get('rules'), options['label'], options['t'],
            window=options.get('window'), length=options.get('length'),
        )
        self.write_json(result)
