from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.test import SimpleTestCase

from tightbinding.decorators import tb_command, tb_overrides
from tightbinding.errors import ConfigurationError, InvariantFailure, SpectralError


class RaisingCommand(BaseCommand):
    name = 'raising'

    @tb_command
    def handle(self, *args, **options):
        if options.get('exc') is not None:
            raise options['exc']
        return 'done'


class TbCommandTests(SimpleTestCase):
    def _returncode(self, exc):
        with self.assertRaises(CommandError) as cm:
            RaisingCommand().handle(exc=exc)
        return cm.exception.returncode

    def test_success_passes_through(self):
        self.assertEqual(RaisingCommand().handle(), 'done')

    def test_invariant_failure(self):
        with self.assertLogs('tightbinding.decorators', 'ERROR') as logs:
            self.assertEqual(self._returncode(InvariantFailure('нарушено', ['split', 'woodbury'])), 1)
        self.assertEqual(len(logs.records), 2)

    def test_configuration_error(self):
        self.assertEqual(self._returncode(ConfigurationError('нет файла')), 2)

    def test_numerical_errors(self):
        with self.assertLogs('tightbinding.decorators', 'ERROR'):
            self.assertEqual(self._returncode(SpectralError('M не положительно определена')), 3)
        with self.assertLogs('tightbinding.decorators', 'ERROR'):
            self.assertEqual(self._returncode(ValueError('nan')), 3)


class TbOverridesTests(SimpleTestCase):
    def test_restores_settings(self):
        before = dict(settings.TB_SETTINGS)
        with tb_overrides({'CONTOUR_NODES': 128, 'THREADS': None}) as current:
            self.assertEqual(current['CONTOUR_NODES'], 128)
            self.assertEqual(current['THREADS'], before['THREADS'])
        self.assertEqual(settings.TB_SETTINGS, before)

    def test_restores_after_error(self):
        before = dict(settings.TB_SETTINGS)
        with self.assertRaises(RuntimeError), tb_overrides({'CONTOUR_TOL': 1.0}):
            raise RuntimeError
        self.assertEqual(settings.TB_SETTINGS, before)
