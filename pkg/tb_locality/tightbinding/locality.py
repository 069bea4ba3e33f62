"""Наборы данных затухания производных энергий узлов и их экспоненциальные подгонки."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from django.conf import settings
from scipy import stats

from .errors import LocalityError
from .model import DerivativeEngine, assemble
from .sites import (
    ROUTE_ANALYTIC,
    ROUTE_FD,
    fd_force_derivatives,
    fd_site_energies,
    fd_site_energy_hessian,
    site_energy_gradients_spectral,
    site_energy_hessians,
)
from .spectral import solve
from .thermo import GrandPotentialFn, build_contour, g_real

logger = logging.getLogger(__name__)

KIND_GRADIENT = 'dE'
KIND_HESSIAN = 'd2E'
KIND_FORCE = 'dF'
KIND_MATRIX = 'gH'
KIND_RESOLVENT = 'R'
KIND_CORRECTION = 'C'

MIN_BINS_FALLBACK = 8.0


@dataclass(frozen=True)
class DecayFit:
    log_prefactor: float
    exponent: float
    r_squared: float
    window: tuple
    n_bins: int

    @property
    def prefactor(self):
        return math.exp(self.log_prefactor)


@dataclass(frozen=True)
class DecayDataset:
    """Точки (расстояние, |величина|) с метками ℓ, m[, m₂] и признаком близости к дефекту"""
    distances: np.ndarray
    magnitudes: np.ndarray
    kind: str
    ells: np.ndarray = None
    ms: np.ndarray = None
    m2s: np.ndarray = None
    near_defect: np.ndarray = None
    shell: float | None = None
    default_window: tuple | None = None
    label: str = ''
    fit: DecayFit | None = None

    def __post_init__(self):
        distances = np.asarray(self.distances, dtype=float)
        magnitudes = np.asarray(self.magnitudes, dtype=float)
        if distances.shape != magnitudes.shape:
            raise LocalityError("Размеры расстояний и величин не совпадают")
        if np.any(distances < 0) or np.any(magnitudes < 0):
            raise LocalityError("Расстояния и величины должны быть неотрицательными")
        n = len(distances)
        object.__setattr__(self, 'distances', distances)
        object.__setattr__(self, 'magnitudes', magnitudes)
        for name in ('ells', 'ms', 'm2s'):
            value = getattr(self, name)
            object.__setattr__(self, name, np.full(n, -1, dtype=int) if value is None else np.asarray(value, dtype=int))
        near = np.zeros(n, dtype=bool) if self.near_defect is None else np.asarray(self.near_defect, dtype=bool)
        object.__setattr__(self, 'near_defect', near)

    def __len__(self):
        return len(self.distances)

    def subset(self, mask, label=None):
        mask = np.asarray(mask, dtype=bool)
        return replace(
            self,
            distances=self.distances[mask],
            magnitudes=self.magnitudes[mask],
            ells=self.ells[mask],
            ms=self.ms[mask],
            m2s=self.m2s[mask],
            near_defect=self.near_defect[mask],
            label=self.label if label is None else label,
            fit=None,
        )

    def with_fit(self, window=None, bin_width=None):
        return replace(self, fit=fit_exponential(self, window, bin_width))

    def rows(self):
        for r, value, near in zip(self.distances, self.magnitudes, self.near_defect):
            yield float(r), float(value), self.kind, bool(near)


def concatenate(datasets, label=''):
    datasets = [d for d in datasets if len(d)]
    if not datasets:
        raise LocalityError("Пустой набор данных")
    first = datasets[0]
    return DecayDataset(
        distances=np.concatenate([d.distances for d in datasets]),
        magnitudes=np.concatenate([d.magnitudes for d in datasets]),
        kind=first.kind,
        ells=np.concatenate([d.ells for d in datasets]),
        ms=np.concatenate([d.ms for d in datasets]),
        m2s=np.concatenate([d.m2s for d in datasets]),
        near_defect=np.concatenate([d.near_defect for d in datasets]),
        shell=first.shell,
        default_window=first.default_window,
        label=label or first.label,
    )


def binned_envelope(dataset, window, bin_width):
    """Максимум |величины| в каждом интервале ширины bin_width и его расстояние"""
    r_lo, r_hi = window
    floor = settings.TB_SETTINGS['FIT_FLOOR'] * float(np.max(dataset.magnitudes, initial=0.0))
    sel = (dataset.distances >= r_lo) & (dataset.distances <= r_hi) & (dataset.magnitudes > floor)
    r, values = dataset.distances[sel], dataset.magnitudes[sel]
    if r.size == 0:
        return np.array([]), np.array([])
    bins = np.floor((r - r_lo) / bin_width + 1e-9).astype(int)
    xs, ys = [], []
    for b in np.unique(bins):
        members = np.flatnonzero(bins == b)
        top = members[np.argmax(values[members])]
        xs.append(r[top])
        ys.append(values[top])
    return np.array(xs), np.array(ys)


def fit_exponential(dataset, window=None, bin_width=None):
    """Регрессия log|величины| по верхней огибающей: |·| ≈ C e^{−η̂ r}"""
    if len(dataset) == 0:
        raise LocalityError("Пустой набор данных")
    if window is None:
        window = dataset.default_window or (float(dataset.distances.min()), float(dataset.distances.max()))
    r_lo, r_hi = float(window[0]), float(window[1])
    if not r_hi > r_lo:
        raise LocalityError(f"Вырожденное окно подгонки [{r_lo:.3f}, {r_hi:.3f}]")
    auto_bins = bin_width is None
    if auto_bins:
        bin_width = dataset.shell or (r_hi - r_lo) / 20.0
    xs, ys = binned_envelope(dataset, (r_lo, r_hi), bin_width)
    if auto_bins and len(xs) < 4 and (r_hi - r_lo) / MIN_BINS_FALLBACK < bin_width:
        bin_width = (r_hi - r_lo) / MIN_BINS_FALLBACK
        logger.info(f"Мало интервалов в окне [{r_lo:.3f}, {r_hi:.3f}], ширина уменьшена до {bin_width:.3f} Å")
        xs, ys = binned_envelope(dataset, (r_lo, r_hi), bin_width)
    if len(xs) < 4:
        raise LocalityError(f"В окне [{r_lo:.3f}, {r_hi:.3f}] Å только {len(xs)} интервалов, нужно ≥ 4")
    result = stats.linregress(xs, np.log(ys))
    return DecayFit(
        log_prefactor=float(result.intercept),
        exponent=float(-result.slope),
        r_squared=float(result.rvalue ** 2),
        window=(r_lo, r_hi),
        n_bins=len(xs),
    )


def default_window(config, order=1, distances=None):
    """[2·расстояние до соседа, 0.45·размер ячейки·порядок].

    Для периодической ячейки верхняя граница берётся из наибольшего расстояния
    по кратчайшему образу среди данных; для кластера она не выходит за данные.
    """
    near, far = settings.TB_SETTINGS['FIT_WINDOW']
    lo = near * config.nearest_neighbor_distance()
    hi = far * config.extent() * order
    if distances is not None and len(distances):
        r_max = float(np.max(distances))
        if config.periodic or hi > r_max or hi <= lo:
            hi = r_max
    return lo, hi


class LocalitySystem:
    """Кэш пары, спектра и движка производных для одной конфигурации"""

    def __init__(self, model, config, fn, route=None, center=None, near_radius=None, threads=None, fd_steps=None):
        self.model = model
        self.config = config
        self.fn = fn
        self.route = route or ROUTE_ANALYTIC
        self.center = None if center is None else np.asarray(center, dtype=float)
        self.near_radius = near_radius
        self.threads = threads or settings.TB_SETTINGS['THREADS']
        self.fd_steps = tuple(fd_steps or settings.TB_SETTINGS['FD_STEPS'])
        self.pair = assemble(model, config)
        self.spec = solve(self.pair, fn.mu)
        self._hessians = {}

    def with_beta(self, beta):
        return LocalitySystem(
            self.model, self.config, GrandPotentialFn(beta, self.fn.mu), self.route, self.center,
            self.near_radius, self.threads, self.fd_steps,
        )

    @cached_property
    def engine(self):
        order = min(2, self.model.nu) if self.model.orthogonal else 1
        return DerivativeEngine(self.model, self.config, order=order)

    @cached_property
    def contour(self):
        mode = 'zero-T' if self.fn.zero_temperature else 'finite-T'
        return build_contour(self.spec, self.fn, mode=mode)

    @cached_property
    def distances(self):
        return self.config.distance_matrix()

    @cached_property
    def _fd_jacobian(self):
        return fd_site_energies(self.model, self.config, self.fn, self.fd_steps).best

    @cached_property
    def force_derivatives(self):
        """∂f_ℓ/∂y(j) разностями сил; форма (N, 3, N, 3)"""
        return fd_force_derivatives(self.model, self.config, self.fn, self.fd_steps).best

    def gradient(self, ell):
        if self.route == ROUTE_FD:
            return self._fd_jacobian[ell]
        return site_energy_gradients_spectral(self.spec, self.fn, self.engine, ell)

    def hessian(self, ell):
        if ell not in self._hessians:
            if self.route == ROUTE_ANALYTIC and self.model.orthogonal:
                value = site_energy_hessians(self.pair, self.model, self.contour, self.fn, ell, self.engine)
            else:
                value = fd_site_energy_hessian(self.model, self.config, self.fn, ell, self.fd_steps).best
            self._hessians[ell] = value
        return self._hessians[ell]

    @cached_property
    def density_matrix(self):
        """[g(H)]: Ψ g(Λ) Ψᵀ, для модели с перекрытием Ψ g(Λ) (MΨ)ᵀ"""
        psi = self.spec.eigenvectors
        g = g_real(self.fn, self.spec.eigenvalues)
        return (psi * g[None, :]) @ self.spec.m_vectors.T

    def site_block_norms(self, ell):
        offsets = self.pair.offsets
        rows = self.density_matrix[offsets[ell]:offsets[ell + 1]]
        return np.array([
            np.abs(rows[:, offsets[m]:offsets[m + 1]]).max() for m in range(self.config.n_sites)
        ])

    def defect_distances(self):
        if self.center is None:
            raise LocalityError("Центр дефекта не задан")
        return self.config.distances_from_point(self.center)

    def near_flags(self):
        n = self.config.n_sites
        if self.center is None:
            return np.zeros(n, dtype=bool)
        radius = self.near_radius
        if radius is None:
            radius = 2.0 * self.config.nearest_neighbor_distance()
        return self.defect_distances() <= radius


def select_sites(system, selection):
    """all | номер узла | farthest-from-defect | defect-site"""
    n = system.config.n_sites
    if selection == 'all':
        sites = list(range(n))
    elif selection == 'farthest-from-defect':
        sites = [int(np.argmax(system.defect_distances()))]
    elif selection == 'defect-site':
        sites = [int(np.argmin(system.defect_distances()))]
    elif isinstance(selection, (list, tuple)):
        sites = [int(s) for s in selection]
    else:
        try:
            sites = [int(selection)]
        except (TypeError, ValueError):
            raise LocalityError(f"Неизвестный выбор узлов: {selection}") from None
    sites = [s for s in sites if 0 <= s < n]
    if not sites:
        raise LocalityError(f"Выбор узлов {selection!r} пуст")
    return sites


def _site_points(system, ell, order, force_mode):
    r = system.distances[ell]
    n = system.config.n_sites
    others = np.array([m for m in range(n) if m != ell], dtype=int)
    if force_mode:
        block = system.force_derivatives[ell][:, others, :]
        magnitudes = np.linalg.norm(block.transpose(1, 0, 2).reshape(len(others), 9), axis=1)
        return r[others], magnitudes, others, np.full(len(others), -1)
    if order == 1:
        magnitudes = np.linalg.norm(system.gradient(ell)[others], axis=1)
        return r[others], magnitudes, others, np.full(len(others), -1)
    hess = system.hessian(ell)
    m1, m2 = np.triu_indices(n)
    blocks = hess[m1, :, m2, :].reshape(len(m1), 9)
    return r[m1] + r[m2], np.linalg.norm(blocks, axis=1), m1, m2


def collect_decay(system, selection='all', order=1, force_mode=False, max_distance=None):
    """Набор (r_ℓm, |∂G_ℓ/∂y(m)|), (r_ℓm₁ + r_ℓm₂, |∂²G_ℓ|) или (r_ℓj, |∂f_ℓ/∂y(j)|)"""
    if order not in (1, 2):
        raise LocalityError(f"Порядок производной должен быть 1 или 2, получено {order}")
    sites = select_sites(system, selection)
    near = system.near_flags()

    def points(ell):
        return ell, _site_points(system, ell, order, force_mode)

    if system.threads > 1 and len(sites) > 1:
        with ThreadPoolExecutor(max_workers=system.threads) as pool:
            results = list(pool.map(points, sites))
    else:
        results = [points(ell) for ell in sites]
    distances, magnitudes, ells, ms, m2s, flags = [], [], [], [], [], []
    for ell, (r, values, m, m2) in results:
        distances.append(r)
        magnitudes.append(values)
        ells.append(np.full(len(r), ell))
        ms.append(m)
        m2s.append(m2)
        flags.append(np.full(len(r), near[ell]))
    distances = np.concatenate(distances)
    keep = np.ones(len(distances), dtype=bool) if max_distance is None else distances <= max_distance
    window = default_window(system.config, 1 if force_mode else order, distances[keep])
    kind = KIND_FORCE if force_mode else (KIND_GRADIENT if order == 1 else KIND_HESSIAN)
    dataset = DecayDataset(
        distances=distances[keep],
        magnitudes=np.concatenate(magnitudes)[keep],
        kind=kind,
        ells=np.concatenate(ells)[keep],
        ms=np.concatenate(ms)[keep],
        m2s=np.concatenate(m2s)[keep],
        near_defect=np.concatenate(flags)[keep],
        shell=_shell_width(system.config),
        default_window=window,
        label=f"{kind}:{selection}",
    )
    logger.debug(f"Набор {dataset.label}: {len(dataset)} точек для {len(sites)} узлов")
    return dataset


def _shell_width(config):
    return 0.5 * config.nearest_neighbor_distance()


def matrix_decay(system, selection='all'):
    """|[g(H)]_ℓm| по блокам узлов против r_ℓm"""
    sites = select_sites(system, selection)
    near = system.near_flags()
    distances, magnitudes, ells, ms, flags = [], [], [], [], []
    n = system.config.n_sites
    for ell in sites:
        others = np.array([m for m in range(n) if m != ell], dtype=int)
        distances.append(system.distances[ell][others])
        magnitudes.append(system.site_block_norms(ell)[others])
        ells.append(np.full(len(others), ell))
        ms.append(others)
        flags.append(np.full(len(others), near[ell]))
    distances = np.concatenate(distances)
    return DecayDataset(
        distances=distances,
        magnitudes=np.concatenate(magnitudes),
        kind=KIND_MATRIX,
        ells=np.concatenate(ells),
        ms=np.concatenate(ms),
        near_defect=np.concatenate(flags),
        shell=_shell_width(system.config),
        default_window=default_window(system.config, 1, distances),
        label=f"{KIND_MATRIX}:{selection}",
    )


@dataclass(frozen=True)
class PrefactorComparison:
    exponent_bulk: float
    exponent_far: float
    exponent_near: float
    exponent_deviation: float
    prefactor_ratio_far: float
    prefactor_ratio_near: float
    near_exceeds: bool
    window: tuple = field(default=())


def _overlap(*windows):
    lo = max(w[0] for w in windows)
    hi = min(w[1] for w in windows)
    if not hi > lo:
        raise LocalityError("Окна подгонки не пересекаются")
    return lo, hi


def compare_defect_prefactor(bulk, defect_far, defect_near):
    """Сравнение показателей и префакторов: объём, далеко от дефекта, у дефекта"""
    fits = [d.fit or fit_exponential(d) for d in (bulk, defect_far, defect_near)]
    window = _overlap(*(f.window for f in fits))
    fb, ff, fnr = fits
    comparison = PrefactorComparison(
        exponent_bulk=fb.exponent,
        exponent_far=ff.exponent,
        exponent_near=fnr.exponent,
        exponent_deviation=abs(ff.exponent - fb.exponent) / abs(fb.exponent),
        prefactor_ratio_far=math.exp(ff.log_prefactor - fb.log_prefactor),
        prefactor_ratio_near=math.exp(fnr.log_prefactor - fb.log_prefactor),
        near_exceeds=fnr.log_prefactor > max(fb.log_prefactor, ff.log_prefactor),
        window=window,
    )
    logger.info(
        f"Дефект: η̂ объём {fb.exponent:.4f}, далеко {ff.exponent:.4f}, рядом {fnr.exponent:.4f}; "
        f"префактор рядом/объём {comparison.prefactor_ratio_near:.3g}"
    )
    return comparison


@dataclass(frozen=True)
class SweepRow:
    beta: float
    exponent: float
    log_prefactor: float
    r_squared: float


def beta_sweep(system, betas, quantity='site-energy', selection=0, window=None):
    """η̂(β), log C(β) для ряда β: |[g(H)]_ℓm| (site-energy) или |∂G_ℓ/∂y(m)| (gradient)"""
    if quantity not in ('site-energy', 'gradient'):
        raise LocalityError(f"Неизвестная величина для развёртки по β: {quantity}")
    rows = []
    for beta in betas:
        current = system.with_beta(beta)
        if quantity == 'site-energy':
            dataset = matrix_decay(current, selection)
        else:
            dataset = collect_decay(current, selection, order=1)
        fit = fit_exponential(dataset, window)
        rows.append(SweepRow(float(beta), fit.exponent, fit.log_prefactor, fit.r_squared))
        logger.debug(f"β={beta}: η̂={fit.exponent:.4f}, R²={fit.r_squared:.3f}")
    return rows


@dataclass(frozen=True)
class ExponentRatio:
    order: int
    site_exponent: float
    force_exponent: float

    @property
    def ratio(self):
        return self.force_exponent / self.site_exponent


def force_site_ratios(site_fits, force_fit):
    """Отношения показателей затухания сил и производных энергий узлов"""
    return [ExponentRatio(order, fit.exponent, force_fit.exponent) for order, fit in sorted(site_fits.items())]
