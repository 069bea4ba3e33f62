"""Конфигурации атомов, поля смещений и таблицы соседей."""
import itertools
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from ase import Atoms
from django.conf import settings

from .errors import ConfigurationError, GeometryError

logger = logging.getLogger(__name__)


def _readonly(array, dtype=float):
    array = np.array(array, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Configuration:
    """Конечный набор узлов с сортами, положениями (Å) и необязательной ячейкой"""
    species: tuple
    positions: np.ndarray
    cell: np.ndarray | None = None
    pbc: tuple = (False, False, False)
    m_min: float | None = None

    def __post_init__(self):
        positions = _readonly(self.positions).reshape(-1, 3)
        species = tuple(str(s) for s in self.species)
        if len(species) != len(positions):
            raise GeometryError(
                f"Число сортов ({len(species)}) не совпадает с числом положений ({len(positions)})"
            )
        pbc = tuple(bool(p) for p in self.pbc)
        if len(pbc) != 3:
            raise GeometryError("pbc должен содержать три флага")
        cell = None
        if self.cell is not None:
            cell = _readonly(self.cell).reshape(3, 3)
        if any(pbc) and cell is None:
            raise GeometryError("Для периодических осей нужна ячейка")
        m_min = settings.TB_SETTINGS['M_MIN'] if self.m_min is None else float(self.m_min)
        if m_min <= 0:
            raise GeometryError("m_min должен быть положительным")
        object.__setattr__(self, 'positions', positions)
        object.__setattr__(self, 'species', species)
        object.__setattr__(self, 'pbc', pbc)
        object.__setattr__(self, 'cell', cell)
        object.__setattr__(self, 'm_min', m_min)

    def __len__(self):
        return len(self.species)

    @property
    def n_sites(self):
        return len(self.species)

    @property
    def periodic(self):
        return any(self.pbc)

    @property
    def periodic_axes(self):
        return tuple(a for a in range(3) if self.pbc[a])

    def image_offsets(self, shells=1):
        """Целочисленные сдвиги образов по периодическим осям"""
        if isinstance(shells, int):
            shells = (shells,) * 3
        ranges = [range(-shells[a], shells[a] + 1) if self.pbc[a] else range(1) for a in range(3)]
        return np.array(list(itertools.product(*ranges)), dtype=int)

    def minimum_image(self, vectors):
        """Кратчайший образ векторов разности (brute force по 3³ соседним сдвигам)"""
        vectors = np.asarray(vectors, dtype=float)
        if not self.periodic:
            return vectors
        frac = vectors @ np.linalg.inv(self.cell)
        for a in self.periodic_axes:
            frac[..., a] -= np.round(frac[..., a])
        reduced = frac @ self.cell
        best = reduced.copy()
        best_norm = np.linalg.norm(reduced, axis=-1)
        for offset in self.image_offsets(1):
            candidate = reduced + offset @ self.cell
            norm = np.linalg.norm(candidate, axis=-1)
            closer = norm < best_norm
            best[closer] = candidate[closer]
            best_norm = np.where(closer, norm, best_norm)
        return best

    def distance_matrix(self):
        """Попарные расстояния по кратчайшему образу; диагональ нулевая"""
        diff = self.positions[None, :, :] - self.positions[:, None, :]
        if not self.periodic:
            return np.linalg.norm(diff, axis=-1)
        return np.linalg.norm(self.minimum_image(diff), axis=-1)

    def distances_from(self, site):
        diff = self.positions - self.positions[site]
        return np.linalg.norm(self.minimum_image(diff), axis=-1)

    def distances_from_point(self, point):
        diff = self.positions - np.asarray(point, dtype=float)
        return np.linalg.norm(self.minimum_image(diff), axis=-1)

    def nearest_neighbor_distance(self):
        report = check_admissible(self)
        return report.min_distance

    def extent(self):
        """Характерный размер: кратчайший период или диаметр кластера"""
        if self.periodic:
            return float(min(np.linalg.norm(self.cell[a]) for a in self.periodic_axes))
        if self.n_sites < 2:
            return 0.0
        return float(self.distance_matrix().max())

    def with_positions(self, positions):
        return Configuration(self.species, positions, self.cell, self.pbc, self.m_min)

    def translated(self, vector):
        return self.with_positions(self.positions + np.asarray(vector, dtype=float))

    def permuted(self, order):
        order = np.asarray(order, dtype=int)
        return Configuration(
            tuple(self.species[i] for i in order), self.positions[order], self.cell, self.pbc, self.m_min
        )

    def displaced(self, site, axis, step):
        positions = np.array(self.positions)
        positions[site, axis] += step
        return self.with_positions(positions)

    def without_site(self, site):
        keep = [i for i in range(self.n_sites) if i != site]
        return Configuration(
            tuple(self.species[i] for i in keep), self.positions[keep], self.cell, self.pbc, self.m_min
        )

    def with_site(self, species, position):
        return Configuration(
            self.species + (str(species),),
            np.vstack([self.positions, np.asarray(position, dtype=float)[None, :]]),
            self.cell, self.pbc, self.m_min,
        )

    def repeat(self, reps):
        """Сверхъячейка в порядке ase: блоки атомов по сдвигам (m0, m1, m2)"""
        if self.cell is None:
            raise GeometryError("Повторение требует ячейки")
        reps = np.array((reps,) * 3 if isinstance(reps, int) else reps, dtype=int)
        shifts = np.array(list(itertools.product(*(range(r) for r in reps))), dtype=int)
        positions = np.vstack([self.positions + shift @ self.cell for shift in shifts])
        return Configuration(
            self.species * len(shifts), positions, self.cell * reps[:, None], self.pbc, self.m_min
        )

    def to_ase(self):
        cell = np.zeros((3, 3)) if self.cell is None else np.array(self.cell)
        try:
            atoms = Atoms(symbols=list(self.species), positions=np.array(self.positions), cell=cell, pbc=self.pbc)
        except (KeyError, ValueError):
            atoms = Atoms(numbers=np.zeros(self.n_sites, dtype=int), positions=np.array(self.positions),
                          cell=cell, pbc=self.pbc)
        atoms.info.update({'species': list(self.species), 'm_min': self.m_min})
        return atoms

    @classmethod
    def from_ase(cls, atoms, m_min=None):
        species = atoms.info.get('species')
        if species is None or len(species) != len(atoms):
            species = atoms.get_chemical_symbols()
        cell = np.array(atoms.cell) if atoms.cell.rank == 3 else None
        pbc = tuple(bool(p) for p in atoms.pbc) if cell is not None else (False, False, False)
        if m_min is None:
            m_min = atoms.info.get('m_min')
        return cls(tuple(species), atoms.get_positions(), cell, pbc, m_min)

    def to_dict(self):
        return {
            'species': list(self.species),
            'positions': self.positions.tolist(),
            'cell': None if self.cell is None else self.cell.tolist(),
            'pbc': list(self.pbc),
            'm_min': self.m_min,
        }

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {'species', 'positions', 'cell', 'pbc', 'm_min'}
        if unknown:
            raise ConfigurationError(f"Неизвестные поля геометрии: {', '.join(sorted(unknown))}")
        try:
            return cls(
                tuple(data['species']),
                data['positions'],
                data.get('cell'),
                tuple(data.get('pbc', (False, False, False))),
                data.get('m_min'),
            )
        except KeyError as exc:
            raise ConfigurationError(f"В геометрии нет поля {exc}") from exc


def read_json(path):
    """Чтение JSON с диагностикой строки и столбца"""
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigurationError(f"Не удалось прочитать {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def load_configuration(path):
    return Configuration.from_dict(read_json(path))


@dataclass(frozen=True)
class AdmissibilityReport:
    passed: bool
    min_distance: float
    m_min: float
    pair: tuple | None = None  # (i, j, сдвиг образа) нарушающей пары


def check_admissible(config):
    """Истинное минимальное расстояние с учётом образов и сравнение с m_min"""
    if config.n_sites < 1:
        raise GeometryError("Конфигурация без узлов")
    positions = config.positions
    n = config.n_sites
    best = math.inf
    best_pair = None
    offsets = config.image_offsets(1) if config.periodic else np.zeros((1, 3), dtype=int)
    for offset in offsets:
        shift = offset @ config.cell if config.periodic else np.zeros(3)
        dist = np.linalg.norm(positions[None, :, :] + shift - positions[:, None, :], axis=-1)
        if not offset.any():
            dist[np.tril_indices(n)] = np.inf
        if not np.isfinite(dist).any():
            continue
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        if dist[i, j] < best:
            best = float(dist[i, j])
            best_pair = (int(i), int(j), tuple(int(o) for o in offset))
    passed = best >= config.m_min
    if not passed:
        logger.debug(f"Нарушено условие непроникновения: {best:.4f} Å < {config.m_min} Å, пара {best_pair}")
    return AdmissibilityReport(passed, best, config.m_min, None if passed else best_pair)


@dataclass(frozen=True)
class DisplacementField:
    """Смещение u опорной конфигурации x; y = x + u"""
    base: Configuration
    u: np.ndarray
    upsilon: float | None = None

    def __post_init__(self):
        u = _readonly(self.u).reshape(-1, 3)
        if u.shape[0] != self.base.n_sites:
            raise GeometryError("Размер поля смещений не совпадает с числом узлов")
        upsilon = settings.TB_SETTINGS['UPSILON'] if self.upsilon is None else float(self.upsilon)
        if upsilon <= 0:
            raise GeometryError("Показатель Υ должен быть положительным")
        object.__setattr__(self, 'u', u)
        object.__setattr__(self, 'upsilon', upsilon)
        report = check_admissible(self.deformed())
        if not report.passed:
            raise GeometryError(
                f"Деформированная конфигурация нарушает m_min: {report.min_distance:.4f} Å, пара {report.pair}"
            )

    def deformed(self):
        return self.base.with_positions(self.base.positions + self.u)


def seminorm_l2_upsilon(disp):
    """(Σ_ℓ Σ_ρ e^{−2Υ|ρ|} |D_ρu(ℓ)|²)^{1/2} по всем упорядоченным парам ℓ≠k"""
    base = disp.base
    rho = base.minimum_image(base.positions[None, :, :] - base.positions[:, None, :])
    r = np.linalg.norm(rho, axis=-1)
    du = disp.u[None, :, :] - disp.u[:, None, :]
    weights = np.exp(-2.0 * disp.upsilon * r)
    np.fill_diagonal(weights, 0.0)
    return float(np.sqrt(np.sum(weights * np.sum(du ** 2, axis=-1))))


@dataclass(frozen=True)
class NeighborTable:
    """Направленные пары (i, j, образ) с расстоянием ≤ R_c, отсортированные"""
    cutoff: float
    i: np.ndarray
    j: np.ndarray
    offsets: np.ndarray
    vectors: np.ndarray
    distances: np.ndarray
    multi_image: bool = False

    def __len__(self):
        return len(self.i)

    def neighbors(self, site):
        sel = np.flatnonzero(self.i == site)
        return [(int(self.j[p]), tuple(int(o) for o in self.offsets[p]), float(self.distances[p])) for p in sel]

    def upper(self):
        """Маска представителей неориентированных связей: i<j или i==j с положительным сдвигом"""
        same = self.i == self.j
        lex_positive = np.zeros(len(self), dtype=bool)
        undecided = np.ones(len(self), dtype=bool)
        for a in range(3):
            lex_positive |= undecided & (self.offsets[:, a] > 0)
            undecided &= self.offsets[:, a] == 0
        return (self.i < self.j) | (same & lex_positive)


def _multi_image_shells(config, cutoff):
    frac = config.positions @ np.linalg.inv(config.cell)
    spread = frac.max(axis=0) - frac.min(axis=0)
    reciprocal = np.linalg.norm(np.linalg.inv(config.cell).T, axis=1)
    return tuple(
        int(math.ceil(cutoff * reciprocal[a] + spread[a])) + 1 if config.pbc[a] else 0 for a in range(3)
    )


def build_neighbor_table(config, cutoff, multi_image=False):
    if cutoff <= 0:
        raise GeometryError("Радиус обрезания должен быть положительным")
    positions = config.positions
    n = config.n_sites
    rows, cols, offs, vecs = [], [], [], []
    if config.periodic and not multi_image:
        shortest = min(np.linalg.norm(config.cell[a]) for a in config.periodic_axes)
        if cutoff > 0.5 * shortest:
            raise GeometryError(
                f"Радиус {cutoff} Å больше половины кратчайшего вектора ячейки ({shortest:.4f} Å); "
                "нужен режим нескольких образов"
            )
        diff = positions[None, :, :] - positions[:, None, :]
        reduced = config.minimum_image(diff)
        dist = np.linalg.norm(reduced, axis=-1)
        np.fill_diagonal(dist, np.inf)
        ii, jj = np.nonzero(dist <= cutoff)
        frac = (reduced[ii, jj] - diff[ii, jj]) @ np.linalg.inv(config.cell)
        rows, cols = [ii], [jj]
        offs = [np.rint(frac).astype(int)]
        vecs = [reduced[ii, jj]]
    else:
        offsets = config.image_offsets(_multi_image_shells(config, cutoff)) if config.periodic \
            else np.zeros((1, 3), dtype=int)
        for offset in offsets:
            shift = offset @ config.cell if config.periodic else np.zeros(3)
            diff = positions[None, :, :] + shift - positions[:, None, :]
            dist = np.linalg.norm(diff, axis=-1)
            if not offset.any():
                np.fill_diagonal(dist, np.inf)
            ii, jj = np.nonzero(dist <= cutoff)
            if len(ii) == 0:
                continue
            rows.append(ii)
            cols.append(jj)
            offs.append(np.tile(offset, (len(ii), 1)))
            vecs.append(diff[ii, jj])
    if rows:
        i = np.concatenate(rows)
        j = np.concatenate(cols)
        offsets_all = np.concatenate(offs).reshape(-1, 3)
        vectors = np.concatenate(vecs).reshape(-1, 3)
    else:
        i = j = np.zeros(0, dtype=int)
        offsets_all = np.zeros((0, 3), dtype=int)
        vectors = np.zeros((0, 3))
    order = np.lexsort((offsets_all[:, 2], offsets_all[:, 1], offsets_all[:, 0], j, i))
    vectors = vectors[order]
    table = NeighborTable(
        cutoff=float(cutoff),
        i=_readonly(i[order], int),
        j=_readonly(j[order], int),
        offsets=_readonly(offsets_all[order], int),
        vectors=_readonly(vectors),
        distances=_readonly(np.linalg.norm(vectors, axis=-1)),
        multi_image=bool(multi_image),
    )
    logger.debug(f"Таблица соседей: {n} узлов, {len(table)} пар, R_c={cutoff} Å")
    return table
