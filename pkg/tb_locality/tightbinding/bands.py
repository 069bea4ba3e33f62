"""Зонная структура периодических решёток по теореме Блоха."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from ase.cell import Cell
from ase.dft.kpoints import monkhorst_pack, parse_path_string
from django.conf import settings
from scipy import linalg, optimize

from .errors import ConfigurationError, GeometryError, SpectralError
from .geometry import Configuration, build_neighbor_table
from .model import assemble

logger = logging.getLogger(__name__)

DISPLAY_LABELS = {'G': 'Γ'}


@dataclass(frozen=True)
class KPath:
    """Помеченные точки (дробные координаты) и число отсчётов на каждом отрезке"""
    labels: tuple
    points: np.ndarray
    counts: tuple

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(points) < 2 or len(self.labels) != len(points):
            raise ConfigurationError("Путь должен содержать не меньше двух помеченных точек")
        if len(self.counts) != len(points) - 1:
            raise ConfigurationError("Число отрезков не совпадает с числом точек пути")
        if any(int(c) < 2 for c in self.counts):
            raise ConfigurationError("На каждом отрезке нужно не меньше двух отсчётов")
        if np.any(np.linalg.norm(np.diff(points, axis=0), axis=1) < 1e-12):
            raise ConfigurationError("Соседние точки пути совпадают")
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'labels', tuple(self.labels))
        object.__setattr__(self, 'counts', tuple(int(c) for c in self.counts))

    @classmethod
    def explicit(cls, labels, points, n_points=None):
        n_points = n_points or settings.TB_SETTINGS['KPATH_POINTS']
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        per_segment = max(2, n_points // max(1, len(points) - 1))
        return cls(tuple(labels), points, (per_segment,) * (len(points) - 1))

    @classmethod
    def from_ase(cls, cell, path=None, n_points=None):
        """Особые точки ase для ячейки; отсчёты пропорциональны длине отрезка в обратном пространстве"""
        path = path or settings.TB_SETTINGS['DEFAULT_KPATH']
        n_points = n_points or settings.TB_SETTINGS['KPATH_POINTS']
        cell = Cell(np.asarray(cell, dtype=float))
        segments = parse_path_string(path)
        special = cell.bandpath(path).special_points
        if len(segments) != 1:
            raise ConfigurationError(f"Разрывные пути не поддерживаются: {path}")
        labels = segments[0]
        missing = [label for label in labels if label not in special]
        if missing:
            raise ConfigurationError(f"Нет особых точек {', '.join(missing)} для ячейки {cell.get_bravais_lattice().name}")
        points = np.array([special[label] for label in labels])
        reciprocal = np.asarray(cell.reciprocal())
        lengths = np.linalg.norm(np.diff(points, axis=0) @ reciprocal, axis=1)
        counts = np.maximum(2, np.rint(n_points * lengths / lengths.sum()).astype(int))
        return cls(tuple(labels), points, tuple(counts))

    def sample(self, cell=None):
        """Точки k, номер отрезка, доля вдоль отрезка и линейная координата"""
        reciprocal = np.eye(3) if cell is None else np.asarray(Cell(np.asarray(cell)).reciprocal())
        kpts, segments, fractions, axis = [], [], [], []
        start = 0.0
        for s, (a, b, count) in enumerate(zip(self.points, self.points[1:], self.counts)):
            t = np.linspace(0.0, 1.0, count)
            kpts.append(a[None, :] + t[:, None] * (b - a)[None, :])
            segments.append(np.full(count, s))
            fractions.append(t)
            length = float(np.linalg.norm((b - a) @ reciprocal))
            axis.append(start + t * length)
            start += length
        return np.vstack(kpts), np.concatenate(segments), np.concatenate(fractions), np.concatenate(axis)

    def label_positions(self, cell=None):
        reciprocal = np.eye(3) if cell is None else np.asarray(Cell(np.asarray(cell)).reciprocal())
        lengths = np.linalg.norm(np.diff(self.points, axis=0) @ reciprocal, axis=1)
        return np.concatenate([[0.0], np.cumsum(lengths)])

    @property
    def display_labels(self):
        return tuple(DISPLAY_LABELS.get(label, label) for label in self.labels)


def wrap_kpoint(config, k):
    """Приведение k к первой зоне по периодическим осям; по остальным k = 0"""
    k = np.asarray(k, dtype=float).copy()
    for a in range(3):
        k[a] = k[a] - np.round(k[a]) if config.pbc[a] else 0.0
    return k


def bloch_hamiltonian(model, config, k, table=None):
    """Эрмитова пара H(k), M(k) = Σ_T h(τ_j + T − τ_i) e^{2πi k·n_T}"""
    if not config.periodic:
        raise GeometryError("Для блоховской пары нужна периодическая ячейка")
    return assemble(model, config, table=table, kpoint=wrap_kpoint(config, k))


def hermiticity_error(pair):
    errors = [float(np.max(np.abs(pair.H - pair.H.conj().T)))]
    if not pair.orthogonal:
        errors.append(float(np.max(np.abs(pair.M - pair.M.conj().T))))
    return max(errors)


def bloch_eigenvalues(model, config, k, table=None):
    pair = bloch_hamiltonian(model, config, k, table)
    if hermiticity_error(pair) > 1e-12:
        raise SpectralError(f"H(k) не эрмитова при k={k}")
    if pair.orthogonal:
        return linalg.eigvalsh(pair.H)
    try:
        return linalg.eigvalsh(pair.H, pair.M)
    except linalg.LinAlgError as exc:
        raise SpectralError(f"M(k) не положительно определена при k={k}") from exc


def filled_bands(model, config):
    """Число заполненных (дважды) зон по валентности узлов ячейки"""
    electrons = sum(model.valence(s) for s in config.species)
    n_filled = electrons / 2.0
    if abs(n_filled - round(n_filled)) > 1e-9:
        raise SpectralError(f"Нечётное число электронов в ячейке: {electrons}")
    return int(round(n_filled))


@dataclass(frozen=True)
class BandStructure:
    kpts: np.ndarray
    segments: np.ndarray
    fractions: np.ndarray
    axis: np.ndarray
    bands: np.ndarray
    vbm: float
    cbm: float
    gap: float
    fermi_mu: float
    path: KPath | None = None
    label_positions: np.ndarray | None = None

    @property
    def metallic(self):
        return self.gap <= 0.0

    def rows(self):
        for i in range(len(self.kpts)):
            for band, energy in enumerate(self.bands[i]):
                yield int(self.segments[i]), float(self.fractions[i]), band, float(energy)

    def summary(self):
        return {
            'vbm_eV': self.vbm,
            'cbm_eV': self.cbm,
            'gap_eV': self.gap,
            'fermi_mu_eV': self.fermi_mu,
            'metallic': self.metallic,
            'n_kpoints': int(len(self.kpts)),
        }


def _band_edges(bands, n_filled):
    if not 0 < n_filled < bands.shape[1]:
        raise SpectralError(f"Заполнено {n_filled} зон из {bands.shape[1]}: нет валентной или зоны проводимости")
    vbm = float(bands[:, n_filled - 1].max())
    cbm = float(bands[:, n_filled].min())
    return vbm, cbm


def eigenvalues_on(model, config, kpts, threads=None):
    threads = threads or settings.TB_SETTINGS['THREADS']
    table = build_neighbor_table(config, model.cutoff, multi_image=True)

    def one(k):
        return bloch_eigenvalues(model, config, k, table)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.array(list(pool.map(one, kpts)))
    return np.array([one(k) for k in kpts])


def band_structure(model, config, path=None, threads=None):
    """Зоны вдоль пути, края зон, щель и μ в середине щели"""
    if path is None:
        path = KPath.from_ase(config.cell)
    kpts, segments, fractions, axis = path.sample(config.cell)
    bands = eigenvalues_on(model, config, kpts, threads)
    vbm, cbm = _band_edges(bands, filled_bands(model, config))
    gap = cbm - vbm
    mu = 0.5 * (vbm + cbm)
    if gap <= 0.0:
        logger.warning(f"Зонная структура металлическая (щель {gap:.4f} эВ); μ = {mu:.4f} эВ по краям зон")
    else:
        logger.info(f"Щель {gap:.4f} эВ, μ = {mu:.4f} эВ")
    return BandStructure(
        kpts=kpts, segments=segments, fractions=fractions, axis=axis, bands=bands,
        vbm=vbm, cbm=cbm, gap=gap, fermi_mu=mu, path=path, label_positions=path.label_positions(config.cell),
    )


def scaled(config, factor):
    """Изотропное растяжение ячейки и положений"""
    return Configuration(
        config.species, config.positions * factor, None if config.cell is None else config.cell * factor,
        config.pbc, config.m_min,
    )


def band_energy(model, config, mesh=(4, 4, 4), threads=None):
    """Энергия заполненных зон на сетке Монхорста–Пака (β = ∞)"""
    kpts = monkhorst_pack(mesh)
    bands = eigenvalues_on(model, config, kpts, threads)
    n_filled = filled_bands(model, config)
    return float(2.0 * np.mean(np.sum(bands[:, :n_filled], axis=1)))


@dataclass(frozen=True)
class RelaxResult:
    config: object
    scale: float
    energy: float
    evaluations: int


def relax_lattice(model, config, bounds=(0.9, 1.1), mesh=(4, 4, 4), tol=1e-4, threads=None):
    """Одномерный поиск минимума энергии по множителю постоянной решётки"""
    if not config.periodic:
        raise GeometryError("Релаксация постоянной решётки требует периодической ячейки")

    def energy(factor):
        return band_energy(model, scaled(config, factor), mesh, threads)

    result = optimize.minimize_scalar(energy, bounds=bounds, method='bounded', options={'xatol': tol})
    if not result.success:
        raise SpectralError(f"Поиск постоянной решётки не сошёлся: {result.message}")
    factor = float(result.x)
    if min(factor - bounds[0], bounds[1] - factor) < 10 * tol:
        logger.warning(f"Минимум на границе интервала поиска: множитель {factor:.5f}")
    logger.info(f"Постоянная решётки: множитель {factor:.5f}, энергия {result.fun:.6f} эВ")
    return RelaxResult(scaled(config, factor), factor, float(result.fun), int(result.nfev))
