from datetime import timedelta

from django.contrib.auth.models import User
from django.test import TestCase

from tightbinding.models import ExperimentRun, RunArtifact


class ExperimentRunTests(TestCase):
    def setUp(self):
        self.run = ExperimentRun.objects.create(command='verify', config={'beta': 'inf'}, status='ok', exit_code=0)

    def test_str(self):
        self.assertEqual(str(self.run), f"verify #{self.run.pk} (Успешно)")

    def test_duration(self):
        self.assertIsNone(self.run.duration_seconds())
        self.run.finished_at = self.run.started_at + timedelta(seconds=5)
        self.assertEqual(self.run.duration_seconds(), 5.0)

    def test_artifacts_cascade(self):
        artifact = RunArtifact.objects.create(run=self.run, path='verify.csv', kind='csv', sha256='0' * 64, size=12)
        self.assertEqual(str(artifact), 'verify.csv')
        self.assertEqual(list(self.run.artifacts.all()), [artifact])
        self.run.delete()
        self.assertFalse(RunArtifact.objects.exists())


class AdminTests(TestCase):
    def setUp(self):
        self.client.force_login(User.objects.create_superuser('admin', 'admin@example.com', 'pass'))
        self.run = ExperimentRun.objects.create(command='bands', summary={'gap_eV': 0.4})
        RunArtifact.objects.create(run=self.run, path='bands.csv', kind='csv', sha256='1' * 64)

    def test_run_pages_are_read_only(self):
        response = self.client.get('/admin/tightbinding/experimentrun/')
        self.assertEqual(response.status_code, 200)
        self.assertContains(response, 'bands')
        response = self.client.get(f'/admin/tightbinding/experimentrun/{self.run.pk}/change/')
        self.assertEqual(response.status_code, 200)
        self.assertNotContains(response, 'name="_save"')
        self.assertEqual(self.client.get('/admin/tightbinding/experimentrun/add/').status_code, 403)
