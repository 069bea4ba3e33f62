"""Построители тестовых геометрий: цепочки, кольца, кубические кластеры, алмаз."""
import itertools
import logging
import math

import numpy as np
from ase.build import bulk

from .errors import ConfigurationError
from .geometry import Configuration

logger = logging.getLogger(__name__)

VACUUM = 10.0


def _species_cycle(species, n):
    species = tuple(species) if isinstance(species, (list, tuple)) else (species,)
    return tuple(species[i % len(species)] for i in range(n))


def chain(n, spacing=1.0, species='A', periodic=False, alternation=0.0, m_min=None):
    """Цепочка вдоль x; alternation чередует длины связей spacing ± alternation"""
    if n < 1:
        raise ConfigurationError("Цепочка должна содержать хотя бы один узел")
    bonds = np.array([spacing + alternation if i % 2 else spacing - alternation for i in range(n)])
    if np.any(bonds <= 0):
        raise ConfigurationError("Чередование длиннее связи")
    x = np.concatenate([[0.0], np.cumsum(bonds[:-1])])
    positions = np.column_stack([x, np.zeros(n), np.zeros(n)])
    period = float(bonds.sum())
    if periodic and n % 2 and alternation:
        raise ConfigurationError("Периодическая цепочка с чередованием требует чётного числа узлов")
    cell = np.diag([period if periodic else x[-1] + VACUUM, VACUUM, VACUUM])
    return Configuration(_species_cycle(species, n), positions, cell, (bool(periodic), False, False), m_min)


def ring(n, spacing=1.0, species='A', m_min=None):
    """Кольцо из n узлов с расстоянием spacing между соседями"""
    if n < 3:
        raise ConfigurationError("Кольцо должно содержать не меньше трёх узлов")
    radius = spacing / (2.0 * math.sin(math.pi / n))
    theta = 2.0 * math.pi * np.arange(n) / n
    positions = np.column_stack([radius * np.cos(theta), radius * np.sin(theta), np.zeros(n)])
    return Configuration(_species_cycle(species, n), positions, None, (False, False, False), m_min)


def cubic_cluster(size, spacing=1.0, species=('A', 'B'), periodic=False, m_min=None):
    """Простая кубическая решётка size³; сорта в шахматном порядке"""
    size = (size,) * 3 if isinstance(size, int) else tuple(size)
    species = tuple(species) if isinstance(species, (list, tuple)) else (species,)
    points = list(itertools.product(*(range(s) for s in size)))
    labels = tuple(species[sum(p) % len(species)] for p in points)
    positions = spacing * np.array(points, dtype=float)
    cell = np.diag([spacing * s for s in size]) if periodic else None
    pbc = (True, True, True) if periodic else (False, False, False)
    return Configuration(labels, positions, cell, pbc, m_min)


def diamond(symbol='Si', a=5.43, cubic=False, repeat=1, m_min=None):
    """Алмазная решётка через ase.build.bulk; m_min по умолчанию 0.7 длины связи"""
    atoms = bulk(symbol, 'diamond', a=a, cubic=cubic)
    if m_min is None:
        m_min = 0.7 * a * math.sqrt(3.0) / 4.0
    config = Configuration.from_ase(atoms, m_min=m_min)
    if repeat != 1:
        config = config.repeat(repeat)
    return config


def tetrahedral_hole(config, site=0):
    """Тетраэдрическое междоузлие рядом с узлом алмазной ячейки"""
    a = float(np.linalg.norm(config.cell[0])) if config.cell is not None else 0.0
    cubic = np.allclose(config.cell, np.diag(np.diag(config.cell))) if config.cell is not None else False
    if not cubic:
        raise ConfigurationError("Тетраэдрическое междоузлие строится для кубической ячейки")
    n_cells = round(a / _cubic_constant(config))
    lattice = a / n_cells
    return config.positions[site] + 0.5 * lattice * np.array([1.0, 1.0, 1.0])


def _cubic_constant(config):
    nn = config.nearest_neighbor_distance()
    return 4.0 * nn / math.sqrt(3.0)


BUILDERS = {
    'chain': chain,
    'ring': ring,
    'cubic': cubic_cluster,
    'diamond': diamond,
}


def from_spec(data):
    """Геометрия из описания {"builder": имя, ...параметры}"""
    data = dict(data)
    name = data.pop('builder', None)
    if name not in BUILDERS:
        raise ConfigurationError(f"Неизвестный построитель геометрии: {name}")
    try:
        config = BUILDERS[name](**data)
    except TypeError as exc:
        raise ConfigurationError(f"Неверные параметры построителя {name}: {exc}") from exc
    logger.debug(f"Геометрия {name}: {config.n_sites} узлов")
    return config
