import math
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from tightbinding.errors import ConfigurationError
from tightbinding.forms import RunConfig, RunConfigForm, load_run_config


class RunConfigFormTests(SimpleTestCase):
    def test_defaults(self):
        config = load_run_config(None, {})
        self.assertEqual(config.model, 'toy')
        self.assertTrue(math.isinf(config.beta))
        self.assertEqual(config.mu_mode, 'midgap')
        self.assertEqual((config.seed, config.threads), (0, 1))
        self.assertEqual(config.to_dict()['beta'], 'inf')

    def test_beta_values(self):
        self.assertTrue(math.isinf(load_run_config(None, {'beta': 'inf'}).beta))
        self.assertEqual(load_run_config(None, {'beta': '32'}).beta, 32.0)
        self.assertEqual(load_run_config(None, {'beta': 16}).beta, 16.0)
        for bad in ('-1', '0', 'abc', 'nan'):
            with self.subTest(beta=bad):
                form = RunConfigForm(data={'beta': bad})
                self.assertFalse(form.is_valid())
                self.assertIn('beta', form.errors)

    def test_explicit_mu_needs_value(self):
        form = RunConfigForm(data={'mu_mode': 'explicit'})
        self.assertFalse(form.is_valid())
        self.assertIn('mu', form.errors)
        self.assertEqual(load_run_config(None, {'mu_mode': 'explicit', 'mu': 0.25}).mu, 0.25)

    def test_unknown_key(self):
        with self.assertRaisesMessage(ConfigurationError, 'Неизвестные ключи конфигурации: temperature'):
            load_run_config(None, {'temperature': 300})

    def test_unknown_tolerance(self):
        form = RunConfigForm(data={'tolerances': {'CONTOUR_TOL': 1e-10, 'MAGIC': 1}})
        self.assertFalse(form.is_valid())
        self.assertIn('MAGIC', form.error_text())

    def test_objects_must_be_mappings(self):
        form = RunConfigForm(data={'toy': [1, 2]})
        self.assertFalse(form.is_valid())
        self.assertIn('toy', form.errors)

    def test_nrl_default_params(self):
        config = load_run_config(None, {'model': 'nrl'})
        self.assertTrue(config.params.endswith('nrl_si.json'))

    def test_file_and_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.json'
            path.write_text('{"beta": 8, "seed": 3, "geometry": {"builder": "chain", "n": 4}}', encoding='utf-8')
            config = load_run_config(path, {'seed': 5, 'beta': None})
        self.assertEqual(config.beta, 8.0)
        self.assertEqual(config.seed, 5)
        self.assertEqual(config.geometry, {'builder': 'chain', 'n': 4})

    def test_malformed_json(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'broken.json'
            path.write_text('{"beta": ', encoding='utf-8')
            with self.assertRaisesMessage(ConfigurationError, 'broken.json:1:'):
                load_run_config(path)
            with self.assertRaises(ConfigurationError):
                load_run_config(Path(tmp) / 'missing.json')

    def test_top_level_must_be_object(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'list.json'
            path.write_text('[1, 2]', encoding='utf-8')
            with self.assertRaises(ConfigurationError):
                load_run_config(path)


class RunConfigTests(SimpleTestCase):
    def test_settings_overrides(self):
        config = RunConfig(threads=4, nodes=128, tolerances={'CONTOUR_TOL': 1e-10})
        self.assertEqual(
            config.settings_overrides(), {'CONTOUR_TOL': 1e-10, 'THREADS': 4, 'CONTOUR_NODES': 128},
        )

    def test_overrides_without_nodes(self):
        self.assertEqual(RunConfig().settings_overrides(), {'THREADS': 1})
