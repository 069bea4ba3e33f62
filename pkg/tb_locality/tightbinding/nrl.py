"""Модель NRL: плотностно-зависимые диагональные энергии и spd связи с перекрытием."""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from ase.units import Bohr, Rydberg
from scipy.special import expit

from .errors import ConfigurationError, ModelError
from .geometry import build_neighbor_table, read_json
from .model import TbModel, site_densities
from .slater_koster import DIAGONAL_CHANNELS, ORBITAL_SETS, SET_CHANNELS, bond_blocks

logger = logging.getLogger(__name__)

ORBITAL_TYPES = ('s', 'p', 'p', 'p', 'd', 'd', 'd', 'd', 'd')


def cutoff_function(r, rc, lc=0.5, Lc=5.0, order=0):
    """f_c(r) = θ(R_c − r)/(1 + exp((r − R_c)/l_c + L_c)) и производные"""
    r = np.asarray(r, dtype=float)
    gate = (r < rc).astype(float)
    s = expit(-((r - rc) / lc + Lc))
    values = [gate * s]
    if order >= 1:
        values.append(-gate * s * (1.0 - s) / lc)
    if order >= 2:
        values.append(gate * s * (1.0 - s) * (1.0 - 2.0 * s) / lc ** 2)
    return values


def radial_function(coefficients, rate, r, cutoff, order=0):
    """V(r) = (c₀ + c₁r + c₂r² + c₃r³) e^{−κr} f_c(r) и производные по r"""
    c0, c1, c2, c3 = coefficients
    r = np.asarray(r, dtype=float)
    P = c0 + r * (c1 + r * (c2 + r * c3))
    E = np.exp(-rate * r)
    F = cutoff[0]
    values = [P * E * F]
    if order >= 1:
        P1 = c1 + r * (2.0 * c2 + 3.0 * c3 * r)
        F1 = cutoff[1]
        values.append(E * (P1 * F - rate * P * F + P * F1))
    if order >= 2:
        P2 = 2.0 * c2 + 6.0 * c3 * r
        F2 = cutoff[2]
        values.append(E * (
            P2 * F - 2.0 * rate * P1 * F + 2.0 * P1 * F1
            + rate ** 2 * P * F - 2.0 * rate * P * F1 + P * F2
        ))
    return values


@dataclass(frozen=True)
class NrlParams:
    """Параметры одного сорта в эВ и Å"""
    species: str
    orbital_set: str
    valence: float
    lam: float
    onsite: dict
    hopping: dict
    overlap: dict
    rc: float
    lc: float = 0.5 * Bohr
    Lc: float = 5.0
    source: str = ''
    native: dict = field(default_factory=dict, compare=False)

    @property
    def n_orbitals(self):
        return ORBITAL_SETS[self.orbital_set]

    @property
    def channels(self):
        return SET_CHANNELS[self.orbital_set]

    def cutoff(self, r, order=0):
        return cutoff_function(r, self.rc, self.lc, self.Lc, order)


def _convert_species(symbol, data, exponent_squared, source):
    required = {'orbitals', 'valence', 'lambda', 'rc', 'onsite', 'hopping', 'overlap'}
    missing = required - set(data)
    if missing:
        raise ConfigurationError(f"{symbol}: нет полей {', '.join(sorted(missing))}")
    orbital_set = data['orbitals']
    if orbital_set not in ORBITAL_SETS:
        raise ConfigurationError(f"{symbol}: неизвестный набор орбиталей {orbital_set}")
    channels = SET_CHANNELS[orbital_set]
    for block in ('hopping', 'overlap'):
        absent = [c for c in channels if c not in data[block]]
        if absent:
            raise ModelError(f"{symbol}: missing parameter channel {block}:{absent[0]}")
    types = sorted(set(ORBITAL_TYPES[:ORBITAL_SETS[orbital_set]]))
    absent = [t for t in types if t not in data['onsite']]
    if absent:
        raise ModelError(f"{symbol}: missing parameter channel onsite:{absent[0]}")

    def rate(value):
        return (value ** 2 if exponent_squared else value) / Bohr

    def polynomial(values, scale):
        return tuple(scale * v / Bohr ** k for k, v in enumerate(values))

    hopping = {}
    for c in channels:
        e, f, g, h = data['hopping'][c]
        hopping[c] = (polynomial((e, f, g, 0.0), Rydberg), rate(h))
    overlap = {}
    for c in channels:
        p, q, r, s = data['overlap'][c]
        delta = 1.0 if c in DIAGONAL_CHANNELS else 0.0
        overlap[c] = (polynomial((delta, p, q, r), 1.0), rate(s))
    onsite = {t: tuple(Rydberg * v for v in data['onsite'][t]) for t in types}
    lam = float(data['lambda'])
    return NrlParams(
        species=symbol,
        orbital_set=orbital_set,
        valence=float(data['valence']),
        lam=float(np.sqrt(rate(lam))),
        onsite=onsite,
        hopping=hopping,
        overlap=overlap,
        rc=float(data['rc']) * Bohr,
        lc=float(data.get('lc', 0.5)) * Bohr,
        Lc=float(data.get('Lc', 5.0)),
        source=source,
        native=data,
    )


class NrlModel(TbModel):
    """NRL: ε = a + bρ^{2/3} + cρ^{4/3} + dρ², связи (полином)·e^{−κr}·f_c(r)"""
    name = 'nrl'
    nu = 2
    orthogonal = False
    environment_dependent = True
    r_min = 1.0

    def __init__(self, params):
        if not params:
            raise ConfigurationError("Пустой набор параметров NRL")
        self.params = dict(params)
        self.cutoff = max(p.rc for p in self.params.values())

    def __repr__(self):
        return f"NrlModel({', '.join(sorted(self.params))})"

    def species_list(self):
        return sorted(self.params)

    def _species(self, species):
        try:
            return self.params[species]
        except KeyError:
            raise ModelError(f"Неизвестный сорт: {species}") from None

    def n_orbitals(self, species):
        return self._species(species).n_orbitals

    def valence(self, species):
        return self._species(species).valence

    def onsite(self, species, rho, order=0):
        p = self._species(species)
        rho = np.asarray(rho, dtype=float)
        types = ORBITAL_TYPES[:p.n_orbitals]
        coeffs = np.array([p.onsite[t] for t in types])  # (nb, 4)
        a, b, c, d = (coeffs[:, k][None, :] for k in range(4))
        x = rho[:, None]
        positive = x > 0.0
        safe = np.where(positive, x, 1.0)
        values = [a + b * x ** (2 / 3) + c * x ** (4 / 3) + d * x ** 2]
        if order >= 1:
            values.append(np.where(
                positive, (2 / 3) * b * safe ** (-1 / 3) + (4 / 3) * c * safe ** (1 / 3) + 2 * d * x, 0.0
            ))
        if order >= 2:
            values.append(np.where(
                positive, -(2 / 9) * b * safe ** (-4 / 3) + (4 / 9) * c * safe ** (-2 / 3) + 2 * d, 0.0
            ))
        return values

    def density_terms(self, species, distances, order=0):
        p = self._species(species)
        r = np.asarray(distances, dtype=float)
        lam2 = p.lam ** 2
        E = np.exp(-lam2 * r)
        F = p.cutoff(r, order)
        values = [E * F[0]]
        if order >= 1:
            values.append(E * (F[1] - lam2 * F[0]))
        if order >= 2:
            values.append(E * (F[2] - 2.0 * lam2 * F[1] + lam2 ** 2 * F[0]))
        return values

    def _pair(self, species_i, species_j):
        if species_i != species_j:
            raise ModelError(f"missing parameter channel: пара {species_i}-{species_j} не задана")
        return self._species(species_i)

    def _blocks(self, table, p, vectors, order):
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        r = np.linalg.norm(vectors, axis=1)
        cutoff = p.cutoff(r, order)
        radial = [np.empty((len(r), len(p.channels))) for _ in range(order + 1)]
        for col, channel in enumerate(p.channels):
            coefficients, rate = table[channel]
            for k, values in enumerate(radial_function(coefficients, rate, r, cutoff, order)):
                radial[k][:, col] = values
        return bond_blocks(radial, vectors, p.orbital_set, order)

    def hopping(self, species_i, species_j, vectors, order=0):
        p = self._pair(species_i, species_j)
        return self._blocks(p.hopping, p, vectors, order)

    def overlap(self, species_i, species_j, vectors, order=0):
        p = self._pair(species_i, species_j)
        return self._blocks(p.overlap, p, vectors, order)

    @cached_property
    def decay(self):
        """Эмпирические константы затухания на фиксированной выборке связей"""
        rng = np.random.default_rng(0)
        bounds = []
        for j in range(self.nu + 1):
            h_j, gamma_j = 0.0, np.inf
            for species in self.species_list():
                p = self.params[species]
                gamma = 0.5 * min(rate for _, rate in p.hopping.values())
                directions = rng.normal(size=(400, 3))
                directions /= np.linalg.norm(directions, axis=1)[:, None]
                r = np.linspace(self.r_min, p.rc, 400)
                blocks = self.hopping(species, species, directions * r[:, None], j)[j]
                magnitude = np.abs(blocks).reshape(len(r), -1).max(axis=1)
                h_j = max(h_j, 2.0 * float(np.max(magnitude * np.exp(gamma * r))))
                gamma_j = min(gamma_j, gamma)
            bounds.append((h_j, gamma_j))
        return tuple(bounds)


def pseudo_density(model, config, site, table=None):
    """ρ_ℓ = Σ_k e^{−λ²r_ℓk} f_c(r_ℓk) по соседям в пределах R_c"""
    if table is None:
        table = build_neighbor_table(config, model.cutoff, multi_image=True)
    return float(site_densities(model, config, table)[site])


def load_nrl_params(path):
    """Чтение файла параметров NRL (Ry/bohr) с переводом в эВ/Å"""
    data = read_json(path)
    return nrl_model_from_dict(data, source=str(path))


def nrl_model_from_dict(data, source=''):
    known = {'model', 'name', 'source', 'units', 'exponent_squared', 'species'}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"Неизвестные ключи файла NRL: {', '.join(sorted(unknown))}")
    units = data.get('units', {'energy': 'Ry', 'length': 'bohr'})
    if units != {'energy': 'Ry', 'length': 'bohr'}:
        raise ConfigurationError(f"Поддерживаются только единицы Ry/bohr, получено {units}")
    exponent_squared = bool(data.get('exponent_squared', True))
    params = {
        symbol: _convert_species(symbol, block, exponent_squared, data.get('source', source))
        for symbol, block in data.get('species', {}).items()
    }
    logger.debug(f"Загружены параметры NRL для {', '.join(sorted(params))}")
    return NrlModel(params)
