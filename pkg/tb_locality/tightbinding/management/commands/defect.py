from tightbinding.experiments import run_defect

from ._base import TightBindingCommand


class Command(TightBindingCommand):
    help = "Разложение дефектного гамильтониана, дефектные уровни и проверка формулы Вудбери"
    name = 'defect'

    def run(self, run_config, writer):
        return run_defect(run_config, writer)
