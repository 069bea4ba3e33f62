"""Запись результатов: CSV, JSON, SVG-графики и manifest.json с контрольными суммами."""
import csv
import hashlib
import json
import logging
import math
from pathlib import Path

import matplotlib
import numpy as np
from django.db import DatabaseError
from django.utils import timezone
from matplotlib.figure import Figure

from .errors import EXIT_OK, ConfigurationError, InvariantFailure, TightBindingError
from .models import ExperimentRun, RunArtifact

logger = logging.getLogger(__name__)

SITE_ENERGY_HEADER = ('site', 'x', 'y', 'z', 'G_site_eV', 'route')
GRADIENT_HEADER = ('ell', 'm', 'axis', 'value', 'route', 'r_lm')
HESSIAN_HEADER = ('ell', 'm1', 'axis1', 'm2', 'axis2', 'value', 'route', 'r_lm')
DECAY_HEADER = ('r', 'magnitude', 'kind', 'near_defect')
BAND_HEADER = ('segment', 'k_fraction', 'band', 'energy_eV')
SPECTRUM_HEADER = ('index', 'eigenvalue_eV', 'occupation')
CONTOUR_HEADER = ('node', 're_z', 'im_z', 'weight_re', 'weight_im', 'abs_g', 'margin_spectrum', 'margin_singularity')
AXES = 'xyz'


def plain(value):
    """Приведение numpy-типов и бесконечностей к JSON"""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    if isinstance(value, Path):
        return str(value)
    return value


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactWriter:
    """Каталог результатов одного запуска и список записанных файлов"""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigurationError(f"Не удалось создать каталог {self.out_dir}: {exc}") from exc
        self.artifacts = []

    def _register(self, name, kind):
        path = self.out_dir / name
        if (name, kind) not in self.artifacts:
            self.artifacts.append((name, kind))
        return path

    def write_csv(self, name, header, rows):
        path = self._register(name, 'csv')
        with open(path, 'w', encoding='utf-8', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        logger.debug(f"Записан {path}")
        return path

    def write_json(self, name, data):
        path = self._register(name, 'json')
        path.write_text(json.dumps(plain(data), indent=2, ensure_ascii=False, sort_keys=True) + '\n', encoding='utf-8')
        return path

    def write_text(self, name, text):
        path = self._register(name, 'txt')
        path.write_text(text if text.endswith('\n') else text + '\n', encoding='utf-8')
        return path

    def save_figure(self, name, figure):
        path = self._register(name, 'svg')
        with matplotlib.rc_context({'svg.hashsalt': 'tb-locality', 'svg.fonttype': 'none'}):
            figure.savefig(path, format='svg', metadata={'Date': None})
        return path

    def entries(self):
        """(путь, тип, sha256, размер) для всех файлов, кроме манифеста"""
        rows = []
        for name, kind in sorted(self.artifacts):
            path = self.out_dir / name
            rows.append((name, kind, sha256_file(path), path.stat().st_size))
        return rows

    def write_manifest(self, command, config, seed, summary):
        entries = self.entries()
        self.write_json('manifest.json', {
            'command': command,
            'config': config,
            'seed': seed,
            'summary': summary,
            'artifacts': [
                {'path': name, 'kind': kind, 'sha256': digest, 'size': size}
                for name, kind, digest, size in entries
            ],
        })
        return entries


def gradient_rows(ell, gradient, distances, route):
    for m in range(gradient.shape[0]):
        for axis in range(3):
            yield ell, m, AXES[axis], float(gradient[m, axis]), route, float(distances[ell, m])


def hessian_rows(ell, hessian, distances, route, sites=None):
    """Верхний треугольник по (m₁, i₁) ≤ (m₂, i₂); r = r_ℓm₁ + r_ℓm₂"""
    n = hessian.shape[0]
    sites = range(n) if sites is None else sites
    flat = hessian.reshape(3 * n, 3 * n)
    for m1 in sites:
        for a1 in range(3):
            p = 3 * m1 + a1
            for q in range(p, 3 * n):
                m2, a2 = divmod(q, 3)
                r = float(distances[ell, m1] + distances[ell, m2])
                yield ell, m1, AXES[a1], m2, AXES[a2], float(flat[p, q]), route, r


def spectrum_rows(spec, occupations):
    for index, (value, occ) in enumerate(zip(spec.eigenvalues, occupations)):
        yield index, float(value), float(occ)


def contour_rows(contour, abs_g, spectrum_margins, singularity_margins):
    for q, z in enumerate(contour.nodes):
        w = contour.weights[q]
        yield (q, float(z.real), float(z.imag), float(w.real), float(w.imag), float(abs_g[q]),
               float(spectrum_margins[q]), float(singularity_margins[q]))


def decomposition_text(decomposition, extra=None):
    """Отчёт о разложении H = H_ref + P₁ + P₂"""
    lines = [f"{key} = {_cell(value)}" for key, value in decomposition.summary().items()]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {_cell(value)}")
    return '\n'.join(lines)


def plot_decay(datasets, title=''):
    """Точки |величины| в логарифмическом масштабе и прямые подгонок"""
    figure = Figure(figsize=(6.4, 4.8))
    ax = figure.add_subplot()
    for dataset in datasets:
        positive = dataset.magnitudes > 0
        points = ax.semilogy(
            dataset.distances[positive], dataset.magnitudes[positive], '.', markersize=3,
            label=dataset.label or dataset.kind,
        )
        if dataset.fit is not None:
            fit = dataset.fit
            r = np.linspace(fit.window[0], fit.window[1], 50)
            ax.semilogy(
                r, np.exp(fit.log_prefactor - fit.exponent * r), '-', color=points[0].get_color(),
                label=f"η̂ = {fit.exponent:.3f} /Å, R² = {fit.r_squared:.3f}",
            )
    ax.set_xlabel('r, Å')
    ax.set_ylabel('|·|')
    if title:
        ax.set_title(title)
    ax.grid(True, which='both', alpha=0.3)
    ax.legend(fontsize='small')
    figure.tight_layout()
    return figure


def plot_bands(structure, title=''):
    """Зоны вдоль пути с отметкой щели"""
    figure = Figure(figsize=(6.4, 4.8))
    ax = figure.add_subplot()
    for band in structure.bands.T:
        ax.plot(structure.axis, band, '-', color='tab:blue', linewidth=1.0)
    if structure.label_positions is not None:
        for x in structure.label_positions:
            ax.axvline(x, color='grey', linewidth=0.5)
        labels = structure.path.display_labels if structure.path is not None else ()
        ax.set_xticks(structure.label_positions, labels)
    if not structure.metallic:
        ax.axhspan(structure.vbm, structure.cbm, color='tab:orange', alpha=0.2)
        ax.annotate(f"щель {structure.gap:.3f} эВ", xy=(structure.axis[-1], structure.cbm),
                    xytext=(-5, 5), textcoords='offset points', ha='right', fontsize='small')
    ax.axhline(structure.fermi_mu, color='tab:red', linestyle='--', linewidth=0.8)
    ax.set_xlim(structure.axis[0], structure.axis[-1])
    ax.set_ylabel('E, эВ')
    if title:
        ax.set_title(title)
    figure.tight_layout()
    return figure


def status_for(exc):
    if exc is None:
        return 'ok', EXIT_OK
    if isinstance(exc, InvariantFailure):
        return 'invariant', exc.exit_code
    if isinstance(exc, ConfigurationError):
        return 'config', exc.exit_code
    if isinstance(exc, TightBindingError):
        return 'numerical', exc.exit_code
    return 'numerical', 3


class RunRecorder:
    """Запись запуска в ExperimentRun/RunArtifact; сбои базы только журналируются"""

    def __init__(self, command, config, seed=0, output_dir='', enabled=True):
        self.run = None
        if not enabled:
            return
        try:
            self.run = ExperimentRun.objects.create(
                command=command, config=plain(config), seed=seed, output_dir=str(output_dir),
            )
        except DatabaseError as exc:
            logger.warning(f"Запуск {command} не записан в базу: {exc}")

    def finish(self, summary=None, artifacts=(), exc=None):
        if self.run is None:
            return
        status, code = status_for(exc)
        try:
            self.run.status = status
            self.run.exit_code = code
            self.run.summary = plain(summary or {})
            self.run.message = '' if exc is None else str(exc)
            self.run.finished_at = timezone.now()
            self.run.save()
            RunArtifact.objects.bulk_create([
                RunArtifact(run=self.run, path=name, kind=kind, sha256=digest, size=size)
                for name, kind, digest, size in artifacts
            ])
        except DatabaseError as exc_db:
            logger.warning(f"Итог запуска {self.run.pk} не записан: {exc_db}")
