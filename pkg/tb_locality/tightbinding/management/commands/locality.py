from tightbinding.experiments import run_locality

from ._base import TightBindingCommand


class Command(TightBindingCommand):
    help = "Наборы затухания производных энергий узлов и сил с экспоненциальными подгонками"
    name = 'locality'

    def run(self, run_config, writer):
        return run_locality(run_config, writer)
