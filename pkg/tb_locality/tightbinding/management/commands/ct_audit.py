from tightbinding.experiments import run_ct_audit

from ._base import TightBindingCommand


class Command(TightBindingCommand):
    help = "Проверка контура, ветви g^β и затухания резольвенты вдали от спектра"
    name = 'ct_audit'

    def run(self, run_config, writer):
        return run_ct_audit(run_config, writer)
