from cep.services import ExperimentService

from ._base import CEPCommand


class Command(CEPCommand):
    help = 'Print the complex-event distribution at one timestamp of a feature stream as JSON'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True, help='model.json written by train')
        parser.add_argument('--features', required=True, help='features.csv (timestamp, f0..f127[, trueClass])')
        parser.add_argument('--t', type=int, required=True, help='Timestamp to query')

    def run(self, config, /, **options):
        result = ExperimentService.infer(
            options['checkpoint'], options.get('rules'), options['features'], options['t'],
            window=options.get('window'),
        )
        self.write_json(result)
