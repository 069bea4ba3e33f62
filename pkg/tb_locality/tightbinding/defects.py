"""Точечные дефекты, разложение H = H_ref + P₁ + P₂ и поправки Вудбери к резольвенте."""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from django.conf import settings
from scipy import linalg, optimize, sparse

from .errors import ConfigurationError, DefectError
from .geometry import check_admissible
from .locality import KIND_CORRECTION, KIND_RESOLVENT, DecayDataset, fit_exponential
from .model import assemble, orbital_offsets
from .spectral import solve

logger = logging.getLogger(__name__)

KINDS = ('interstitial', 'vacancy', 'displacement')


@dataclass(frozen=True)
class DefectSpec:
    """Вид дефекта, его узел или положение и радиус R_def (Å)"""
    kind: str
    site: int | None = None
    position: tuple | None = None
    displacement: tuple | None = None
    species: str | None = None
    r_def: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"Неизвестный вид дефекта: {self.kind}")
        if self.kind == 'interstitial' and self.position is None:
            raise ConfigurationError("Для междоузлия нужно положение")
        if self.kind in ('vacancy', 'displacement') and self.site is None:
            raise ConfigurationError(f"Для дефекта {self.kind} нужен номер узла")
        if self.kind == 'displacement' and self.displacement is None:
            raise ConfigurationError("Для смещения нужен вектор")
        if self.r_def < 0:
            raise ConfigurationError("R_def не может быть отрицательным")

    def center(self, config_ref):
        if self.kind == 'interstitial':
            return np.asarray(self.position, dtype=float)
        return np.array(config_ref.positions[self.site])

    def to_dict(self):
        return {
            'kind': self.kind,
            'site': self.site,
            'position': None if self.position is None else list(self.position),
            'displacement': None if self.displacement is None else list(self.displacement),
            'species': self.species,
            'r_def': self.r_def,
        }

    @classmethod
    def from_dict(cls, data):
        known = {'kind', 'site', 'position', 'displacement', 'species', 'r_def'}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Неизвестные поля дефекта: {', '.join(sorted(unknown))}")
        if 'kind' not in data:
            raise ConfigurationError("В описании дефекта нет поля kind")
        return cls(
            kind=data['kind'],
            site=None if data.get('site') is None else int(data['site']),
            position=None if data.get('position') is None else tuple(float(x) for x in data['position']),
            displacement=None if data.get('displacement') is None else tuple(float(x) for x in data['displacement']),
            species=data.get('species'),
            r_def=float(data.get('r_def', 0.0)),
        )


def build_defect(config_ref, spec):
    """Дефектная конфигурация; вне B_{R_def} узлы совпадают с опорными"""
    if spec.kind == 'vacancy':
        if not 0 <= spec.site < config_ref.n_sites:
            raise DefectError(f"Узел вакансии {spec.site} вне конфигурации")
        config = config_ref.without_site(spec.site)
    elif spec.kind == 'interstitial':
        species = spec.species or config_ref.species[0]
        config = config_ref.with_site(species, spec.position)
    else:
        if not 0 <= spec.site < config_ref.n_sites:
            raise DefectError(f"Смещаемый узел {spec.site} вне конфигурации")
        positions = np.array(config_ref.positions)
        positions[spec.site] += np.asarray(spec.displacement, dtype=float)
        config = config_ref.with_positions(positions)
    report = check_admissible(config)
    if not report.passed:
        raise DefectError(
            f"Недопустимое размещение дефекта: расстояние {report.min_distance:.4f} Å < m_min={report.m_min} Å"
        )
    if spec.kind == 'displacement':
        moved = np.linalg.norm(np.asarray(spec.displacement, dtype=float))
        if spec.r_def and moved > spec.r_def:
            raise DefectError(f"Смещение {moved:.3f} Å выходит за R_def={spec.r_def} Å")
    logger.debug(f"Дефект {spec.kind}: {config_ref.n_sites} → {config.n_sites} узлов")
    return config


@dataclass(frozen=True)
class DefectAlignment:
    """Общий набор узлов Λ ∪ Λ^ref: номера опорных и дефектных узлов в нём"""
    union: object
    ref_index: np.ndarray
    def_index: np.ndarray
    center: np.ndarray

    @property
    def n_union(self):
        return self.union.n_sites

    def center_distances(self):
        return self.union.distances_from_point(self.center)


def align_defect(config_ref, config_def, spec):
    n = config_ref.n_sites
    if spec.kind == 'vacancy':
        ref_index = np.arange(n)
        def_index = np.array([i for i in range(n) if i != spec.site])
        union = config_ref
    elif spec.kind == 'interstitial':
        ref_index = np.arange(n)
        def_index = np.arange(n + 1)
        union = config_def
    else:
        ref_index = np.arange(n)
        def_index = np.arange(n)
        union = config_ref
    return DefectAlignment(union, ref_index, def_index, spec.center(config_ref))


def extended_hamiltonian(pair, union_offsets, index, shift=0.0):
    """H + z₀I, дополненная нулями до Λ ∪ Λ^ref"""
    n_union = int(union_offsets[-1])
    rows = np.concatenate([
        np.arange(union_offsets[u], union_offsets[u + 1]) for u in index
    ]).astype(int)
    if len(rows) != pair.n_orbitals:
        raise DefectError("Число орбиталей не согласуется с картой узлов")
    H = np.zeros((n_union, n_union), dtype=pair.H.dtype)
    H[np.ix_(rows, rows)] = pair.H + shift * np.eye(pair.n_orbitals)
    return H


@dataclass(frozen=True)
class DefectSystem:
    """Опорная и дефектная пары над общим набором индексов"""
    model: object
    config_ref: object
    config_def: object
    spec: DefectSpec
    alignment: DefectAlignment
    H_ref: np.ndarray
    H_def: np.ndarray
    union_offsets: np.ndarray
    shift: float = 0.0

    @property
    def orbital_site(self):
        return np.repeat(np.arange(self.alignment.n_union), np.diff(self.union_offsets))


def defect_system(model, config_ref, spec, shift=0.0, config_def=None):
    if config_def is None:
        config_def = build_defect(config_ref, spec)
    alignment = align_defect(config_ref, config_def, spec)
    union_offsets = orbital_offsets(model, alignment.union)
    H_ref = extended_hamiltonian(assemble(model, config_ref), union_offsets, alignment.ref_index, shift)
    H_def = extended_hamiltonian(assemble(model, config_def), union_offsets, alignment.def_index, shift)
    return DefectSystem(model, config_ref, config_def, spec, alignment, H_ref, H_def, union_offsets, shift)


@dataclass(frozen=True)
class RankDecomposition:
    P1: sparse.csr_matrix
    U: np.ndarray
    V: np.ndarray
    delta: float
    R_delta: float
    p1_norm: float
    residual: float
    support: np.ndarray

    @property
    def rank(self):
        return self.U.shape[1]

    @property
    def P2(self):
        return self.U @ self.V

    def summary(self):
        return {
            'delta': self.delta,
            'p1_frobenius': self.p1_norm,
            'rank': self.rank,
            'R_delta': self.R_delta,
            'reconstruction_residual': self.residual,
        }


def _low_rank(block, tol):
    """U, V из SVD блока разности с отбрасыванием сингулярных чисел ≤ tol"""
    if block.size == 0:
        return np.zeros((block.shape[0], 0)), np.zeros((0, block.shape[1]))
    u, s, vt = linalg.svd(block)
    keep = s > tol
    return u[:, keep] * s[keep][None, :], vt[keep]


def decompose_hamiltonian(H_def, H_ref_extended, delta, site_distances=None, orbital_site=None, max_radius=None):
    """Жадный рост радиуса R до ‖P₁‖_F ≤ δ; P₂ = разность внутри B_R с разложением U V"""
    D = np.asarray(H_def) - np.asarray(H_ref_extended)
    n = D.shape[0]
    if orbital_site is None:
        orbital_site = np.arange(n)
    n_sites = int(orbital_site.max()) + 1 if n else 0
    if site_distances is None:
        site_distances = np.arange(n_sites, dtype=float)
    site_distances = np.asarray(site_distances, dtype=float)
    tol = settings.TB_SETTINGS['RANK_TOL']
    radii = np.unique(np.concatenate([[-1.0], site_distances]))
    if max_radius is not None:
        radii = radii[radii <= max_radius]
    best = None
    for radius in radii:
        inside = site_distances[orbital_site] <= radius
        idx = np.flatnonzero(inside)
        U_block, V_block = _low_rank(D[np.ix_(idx, idx)], tol)
        U = np.zeros((n, U_block.shape[1]))
        V = np.zeros((V_block.shape[0], n))
        U[idx] = U_block
        V[:, idx] = V_block
        P1 = D - U @ V
        norm = float(np.linalg.norm(P1))
        best = (radius, U, V, P1, norm, inside)
        if norm <= delta:
            break
    radius, U, V, P1, norm, inside = best
    if norm > delta:
        raise DefectError(f"Бюджет δ={delta:.3e} недостижим; наименьшее достижимое ‖P₁‖_F = {norm:.3e}")
    P1_sparse = sparse.csr_matrix(np.where(np.abs(P1) > 0.0, P1, 0.0))
    residual = float(np.max(np.abs(D - P1_sparse.toarray() - U @ V), initial=0.0))
    decomposition = RankDecomposition(
        P1=P1_sparse, U=U, V=V, delta=float(delta), R_delta=max(float(radius), 0.0),
        p1_norm=norm, residual=residual, support=np.flatnonzero(inside),
    )
    logger.info(
        f"Разложение: δ={delta:.1e}, ‖P₁‖_F={norm:.2e}, ранг {decomposition.rank}, R_δ={decomposition.R_delta:.3f} Å"
    )
    return decomposition


def decompose_system(system, delta, max_radius=None):
    return decompose_hamiltonian(
        system.H_def, system.H_ref, delta,
        site_distances=system.alignment.center_distances(),
        orbital_site=system.orbital_site,
        max_radius=max_radius,
    )


@dataclass(frozen=True)
class WoodburyResult:
    columns: np.ndarray
    correction: np.ndarray
    condition: float


def dense_resolvent_action(H):
    """(H − z)⁻¹B плотным LU"""
    H = np.asarray(H)
    eye = np.eye(H.shape[0])

    def apply(z, B):
        return linalg.lu_solve(linalg.lu_factor(H - z * eye, check_finite=False), B, check_finite=False)

    return apply


def woodbury_resolvent(ref_action, U, V, z, rhs):
    """(H_ref + UV − z)⁻¹B = R B − R U (I_k + V R U)⁻¹ V R B"""
    rhs = np.asarray(rhs, dtype=complex)
    base = ref_action(z, rhs)
    k = U.shape[1]
    if k == 0:
        return WoodburyResult(base, np.zeros_like(base), 1.0)
    RU = ref_action(z, U.astype(complex))
    capacitance = np.eye(k) + V @ RU
    condition = float(np.linalg.cond(capacitance))
    if not np.isfinite(condition) or condition > 1.0 / np.finfo(float).eps:
        raise DefectError(f"Матрица I + V R U вырождена при z={z:.6g} (число обусловленности {condition:.2e})")
    correction = RU @ linalg.solve(capacitance, V @ base)
    return WoodburyResult(base - correction, correction, condition)


def _block_magnitudes(matrix, offsets, source):
    rows = slice(offsets[source], offsets[source + 1])
    n_sites = len(offsets) - 1
    return np.array([np.abs(matrix[offsets[k]:offsets[k + 1], rows]).max() for k in range(n_sites)])


@dataclass(frozen=True)
class ResolventDecayAudit:
    dataset: DecayDataset
    spectrum_distance: float
    bound_intercept: float
    passed: bool


def offdiagonal_decay_audit(resolvent, config, z, spectrum_distance, offsets=None, sources=None, window=None,
                            slack=1.0):
    """|R_ℓk| против r_ℓk и проверка log C ≤ log(2/𝔡) + запас"""
    resolvent = np.asarray(resolvent)
    n = config.n_sites
    if offsets is None:
        offsets = np.arange(n + 1)
    sources = range(n) if sources is None else sources
    distances = config.distance_matrix()
    r_all, values, ells, ms = [], [], [], []
    for ell in sources:
        others = np.array([k for k in range(n) if k != ell], dtype=int)
        r_all.append(distances[ell][others])
        values.append(_block_magnitudes(resolvent, offsets, ell)[others])
        ells.append(np.full(len(others), ell))
        ms.append(others)
    dataset = DecayDataset(
        distances=np.concatenate(r_all),
        magnitudes=np.concatenate(values),
        kind=KIND_RESOLVENT,
        ells=np.concatenate(ells),
        ms=np.concatenate(ms),
        shell=0.5 * config.nearest_neighbor_distance(),
        label=f"R(z={z:.4g})",
    )
    if np.unique(np.round(dataset.distances, 9)).size < 4:
        raise DefectError("Слишком мало различных расстояний для подгонки")
    fit = fit_exponential(dataset, window)
    bound = math.log(2.0 / spectrum_distance)
    return ResolventDecayAudit(
        dataset=replace(dataset, fit=fit),
        spectrum_distance=float(spectrum_distance),
        bound_intercept=bound,
        passed=fit.exponent > 0 and fit.log_prefactor <= bound + slack,
    )


def correction_decay(system, decomposition, z):
    """|C_ℓk| поправки Вудбери против |y(ℓ) − c| + |y(k) − c|"""
    ref_action = dense_resolvent_action(system.H_ref + decomposition.P1.toarray())
    n = system.H_ref.shape[0]
    result = woodbury_resolvent(ref_action, decomposition.U, decomposition.V, z, np.eye(n))
    offsets = system.union_offsets
    dist = system.alignment.center_distances()
    n_sites = system.alignment.n_union
    r_all, values, ells, ms = [], [], [], []
    for ell in range(n_sites):
        magnitudes = _block_magnitudes(result.correction, offsets, ell)
        r_all.append(dist[ell] + dist)
        values.append(magnitudes)
        ells.append(np.full(n_sites, ell))
        ms.append(np.arange(n_sites))
    return DecayDataset(
        distances=np.concatenate(r_all),
        magnitudes=np.concatenate(values),
        kind=KIND_CORRECTION,
        ells=np.concatenate(ells),
        ms=np.concatenate(ms),
        shell=0.5 * system.config_ref.nearest_neighbor_distance(),
        label=f"C(z={z:.4g})",
    )


def gap_level(spec, reference, mu):
    """Уровень внутри щели опорной системы, ближайший к μ"""
    lam = spec.eigenvalues
    ref = np.sort(reference.eigenvalues)
    below, above = ref[ref < mu], ref[ref > mu]
    if not below.size or not above.size:
        raise DefectError("У опорной системы нет щели вокруг μ")
    inside = lam[(lam > below[-1] + 1e-9) & (lam < above[0] - 1e-9)]
    if not inside.size:
        return None
    return float(inside[np.argmin(np.abs(inside - mu))])


@dataclass(frozen=True)
class TweakResult:
    config: object
    spec: DefectSpec
    offset: float
    level: float
    distance: float
    iterations: int


def tweak_interstitial(model, config_ref, spec, mu, direction, bounds, target=1e-2, tol=1e-6, max_iter=60):
    """Бисекция по сдвигу междоузлия вдоль direction до уровня в щели на расстоянии target от μ"""
    if spec.kind != 'interstitial':
        raise DefectError("Подстройка применима только к междоузлию")
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    reference = solve(assemble(model, config_ref))
    base = np.asarray(spec.position, dtype=float)
    calls = {'n': 0}

    def moved(t):
        return DefectSpec('interstitial', position=tuple(float(x) for x in base + t * direction),
                          species=spec.species, r_def=spec.r_def)

    def state(t):
        config = build_defect(config_ref, moved(t))
        level = gap_level(solve(assemble(model, config)), reference, mu)
        return config, level

    def objective(t):
        calls['n'] += 1
        _, level = state(t)
        if level is None:
            raise DefectError(f"При сдвиге {t:.4f} Å нет уровня в щели")
        return level - (mu + target)

    lo, hi = bounds
    f_lo, f_hi = objective(lo), objective(hi)
    if f_lo * f_hi > 0:
        raise DefectError(f"Уровень в щели не пересекает μ + {target} на отрезке [{lo}, {hi}] Å")
    t = optimize.bisect(objective, lo, hi, xtol=tol, maxiter=max_iter)
    config, level = state(t)
    logger.info(f"Междоузлие сдвинуто на {t:.5f} Å: уровень {level:.6f} эВ, μ={mu:.6f} эВ")
    return TweakResult(config, moved(t), float(t), float(level), abs(level - mu), calls['n'])
