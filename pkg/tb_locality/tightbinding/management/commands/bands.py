from tightbinding.experiments import run_bands

from ._base import TightBindingCommand


class Command(TightBindingCommand):
    help = "Зонная структура периодической ячейки: CSV, SVG и сводка щели"
    name = 'bands'

    def run(self, run_config, writer):
        return run_bands(run_config, writer)
