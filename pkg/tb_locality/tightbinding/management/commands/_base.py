import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand

from tightbinding.decorators import tb_command, tb_overrides
from tightbinding.errors import TightBindingError
from tightbinding.forms import load_run_config
from tightbinding.reports import ArtifactWriter, RunRecorder, plain

logger = logging.getLogger(__name__)


class TightBindingCommand(BaseCommand):
    """Общие флаги, проверка конфигурации, журнал запуска и манифест"""
    name = ''

    def add_arguments(self, parser):
        parser.add_argument('--config', help="JSON-файл конфигурации запуска")
        parser.add_argument('--beta', help="Обратная температура, 1/эВ, или inf")
        parser.add_argument('--mu', type=float, help="Химический потенциал, эВ (включает mu_mode=explicit)")
        parser.add_argument('--out', help="Каталог результатов")
        parser.add_argument('--threads', type=int, help="Число потоков")
        parser.add_argument('--seed', type=int, help="Зерно генератора случайных чисел")
        parser.add_argument('--nodes', type=int, help="Базовое число узлов контура")
        parser.add_argument('--model', choices=['toy', 'nrl'], help="Модель сильной связи")
        parser.add_argument('--params', help="Файл параметров модели")

    def overrides(self, options):
        data = {
            'beta': options.get('beta'),
            'mu': options.get('mu'),
            'output_dir': options.get('out'),
            'threads': options.get('threads'),
            'seed': options.get('seed'),
            'nodes': options.get('nodes'),
            'model': options.get('model'),
            'params': options.get('params'),
        }
        if options.get('mu') is not None:
            data['mu_mode'] = 'explicit'
        return data

    def output_dir(self, run_config):
        if run_config.output_dir:
            return Path(run_config.output_dir)
        return Path(settings.TB_SETTINGS['OUTPUT_DIR']) / self.name

    def run(self, run_config, writer):
        raise NotImplementedError

    @tb_command
    def handle(self, *args, **options):
        run_config = load_run_config(options.get('config'), self.overrides(options))
        out_dir = self.output_dir(run_config)
        with tb_overrides(run_config.settings_overrides()):
            recorder = RunRecorder(
                self.name, run_config.to_dict(), run_config.seed, out_dir, settings.TB_SETTINGS['RECORD_RUNS'],
            )
            writer = ArtifactWriter(out_dir)
            try:
                summary = self.run(run_config, writer)
            except TightBindingError as exc:
                entries = writer.write_manifest(self.name, run_config.to_dict(), run_config.seed, {'error': str(exc)})
                recorder.finish({'error': str(exc)}, entries, exc)
                raise
            entries = writer.write_manifest(self.name, run_config.to_dict(), run_config.seed, summary)
            recorder.finish(summary, entries)
        logger.info(f"Команда {self.name}: {len(entries)} файлов в {out_dir}")
        self.stdout.write(json.dumps(plain(summary), indent=2, ensure_ascii=False, sort_keys=True))
