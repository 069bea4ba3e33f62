from tightbinding.experiments import run_sites

from ._base import TightBindingCommand


class Command(TightBindingCommand):
    help = "Энергии узлов спектральным и контурным путями, их производные и силы"
    name = 'sites'

    def run(self, run_config, writer):
        return run_sites(run_config, writer)
