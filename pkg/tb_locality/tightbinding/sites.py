"""Энергии узлов, силы и производные энергий узлов по координатам."""
import logging
import math
from dataclasses import dataclass

import numpy as np
from django.conf import settings
from scipy import linalg

from .errors import ContourError, ModelError
from .model import DerivativeEngine, assemble
from .spectral import solve
from .thermo import (
    GrandPotentialFn,
    contour_quadrature,
    g_divided_differences,
    g_real,
    margin_issues,
    taylor_g,
)

logger = logging.getLogger(__name__)

ROUTE_SPECTRAL = 'spectral'
ROUTE_CONTOUR = 'contour'
ROUTE_ANALYTIC = 'analytic'
ROUTE_FD = 'finite-difference'


@dataclass(frozen=True)
class SiteEnergyReport:
    """Энергии узлов G_ℓ (эВ) и их сумма"""
    values: np.ndarray
    total: float
    route: str
    beta: float
    mu: float
    residual_split: float
    sites: tuple = ()
    n_nodes: int = 0

    @property
    def relative_split(self):
        return self.residual_split / max(abs(self.total), 1e-300)

    def rows(self, config):
        sites = self.sites or tuple(range(len(self.values)))
        for site, value in zip(sites, self.values):
            x, y, z = config.positions[site]
            yield site, x, y, z, float(value), self.route


@dataclass(frozen=True)
class SiteDerivative:
    ell: int
    wrt: tuple
    value: float
    route: str


@dataclass(frozen=True)
class ForceReport:
    forces: np.ndarray
    energy: float
    route: str

    @property
    def net_force(self):
        return self.forces.sum(axis=0)


@dataclass(frozen=True)
class MuCorrection:
    """Вклад 𝒞₀ вокруг уровней в μ с многочленом Тейлора порядка order"""
    values: np.ndarray
    order: int
    prefactor: float
    enclosed: tuple = ()


@dataclass(frozen=True)
class FiniteDifference:
    """Центральные разности на лестнице шагов"""
    steps: tuple
    estimates: np.ndarray
    best: np.ndarray
    spread: np.ndarray


def _check_margins(contour):
    issues = margin_issues(contour)
    if issues:
        raise ContourError(f"Контур нарушает ограничения: {'; '.join(issues)}")


def _local_offsets(pair, sites):
    counts = np.diff(pair.offsets)[list(sites)]
    return np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int)


def site_energies_spectral(spec, fn):
    """G_ℓ = Σ_s g(λ_s) Σ_a ψ_s,ℓa (Mψ_s)_ℓa"""
    g = g_real(fn, spec.eigenvalues)
    values = spec.weights @ g
    total = float(np.sum(g))
    return SiteEnergyReport(
        values=values,
        total=total,
        route=ROUTE_SPECTRAL,
        beta=fn.beta,
        mu=fn.mu,
        residual_split=abs(float(np.sum(values)) - total),
        sites=tuple(range(len(values))),
    )


def site_energies_contour(pair, contour, fn=None, sites=None, threads=None):
    """G_ℓ = −(1/2πi) ∮ g(z) Σ_a [(H − zM)⁻¹M]_ℓa,ℓa dz без полной диагонализации"""
    _check_margins(contour)
    fn = fn or contour.fn
    sites = tuple(range(pair.n_sites)) if sites is None else tuple(int(s) for s in sites)
    columns = pair.site_orbitals(sites)
    rhs = pair.M[:, columns].astype(complex)
    local = np.arange(len(columns))

    def sampler(z):
        lu = linalg.lu_factor(pair.H - z * pair.M, check_finite=False)
        X = linalg.lu_solve(lu, rhs, check_finite=False)
        return X[columns, local]

    result = contour_quadrature(contour, sampler, fn=fn, threads=threads)
    values = np.add.reduceat(np.real(result.value), _local_offsets(pair, sites))
    if len(sites) == pair.n_sites and contour.eigenvalues is not None:
        total = float(np.sum(g_real(fn, contour.eigenvalues)))
        residual = abs(float(np.sum(values)) - total)
    else:
        total = float(np.sum(values))
        residual = 0.0
    logger.debug(f"Энергии {len(sites)} узлов по контуру: {result.n_nodes} узлов квадратуры")
    return SiteEnergyReport(
        values=values,
        total=total,
        route=ROUTE_CONTOUR,
        beta=fn.beta,
        mu=fn.mu,
        residual_split=residual,
        sites=sites,
        n_nodes=result.n_nodes,
    )


def mu_on_spectrum_correction(spec, fn, contour_c0, order=None):
    """Вклад 𝒞₀: −(1/2πi)∮ p_k(z) Σ_s w_ℓs/(λ_s − z) dz, где p_k: многочлен Тейлора g в μ"""
    n_sites = spec.weights.shape[0]
    if contour_c0 is None:
        return MuCorrection(np.zeros(n_sites), order or 0, 0.0)
    if any(p.taylor_order is None for p in contour_c0.pieces):
        contour_c0 = contour_c0.subcontour(taylor=True)
    if order is None:
        order = contour_c0.pieces[0].taylor_order
    if order not in (0, 1, 2):
        raise ContourError(f"Порядок Тейлора для 𝒞₀ должен быть 0, 1 или 2, получено {order}")
    lam = spec.eigenvalues
    inside = np.zeros(len(lam), dtype=bool)
    for piece in contour_c0.pieces:
        inside |= piece.encloses(lam.astype(complex))
    tol = settings.TB_SETTINGS['MU_ON_SPECTRUM_TOL']
    strays = lam[inside & (np.abs(lam - fn.mu) > tol)]
    if strays.size:
        raise ContourError(f"𝒞₀ охватывает уровни вне μ: {', '.join(f'{x:.6f}' for x in strays)}")
    prefactor = [(2.0 / fn.beta) * math.log(2.0), 1.0, 0.25 * fn.beta][order]
    enclosed = tuple(int(i) for i in np.flatnonzero(inside))
    if not enclosed:
        return MuCorrection(np.zeros(n_sites), order, prefactor)
    weights = spec.weights[:, list(enclosed)]
    poles = lam[list(enclosed)]

    def sampler(z):
        return weights @ (1.0 / (poles - z))

    result = contour_quadrature(contour_c0, sampler, func=lambda z: taylor_g(fn, z, order))
    if order == 2:
        logger.info(f"Порядок 2 на 𝒞₀: коэффициент β/4 = {prefactor:.3g}")
    return MuCorrection(np.real(result.value), order, prefactor, enclosed)


def _engine(model, pair, engine, order):
    if engine is not None and engine.order >= order:
        return engine
    return DerivativeEngine(model, pair.config, order=order)


def _resolvent_columns(pair, ell):
    rows = pair.site_orbitals([ell])
    E = np.zeros((pair.n_orbitals, len(rows)), dtype=complex)
    E[rows, np.arange(len(rows))] = 1.0
    return E


def site_energy_gradients(pair, model, contour, fn=None, ell=0, engine=None, threads=None):
    """∂G_ℓ/∂y(m) для всех m по контуру: ⟨−(1/2πi)∮ g(z)(−R E Eᵀ R) dz, ∂H⟩; форма (N, 3)"""
    fn = fn or contour.fn
    if not model.orthogonal:
        logger.info("Производные по контуру для модели с перекрытием: переход к конечным разностям")
        return fd_site_energies(model, pair.config, fn).best[ell]
    _check_margins(contour)
    engine = _engine(model, pair, engine, 1)
    E = _resolvent_columns(pair, ell)
    n = pair.n_orbitals

    def sampler(z):
        X = linalg.lu_solve(linalg.lu_factor(pair.H - z * np.eye(n), check_finite=False), E, check_finite=False)
        return -(X @ X.T)

    K = contour_quadrature(contour, sampler, fn=fn, threads=threads).value
    return engine.contract_first(np.real(K))


def site_energy_gradient(pair, model, contour, fn, ell, m, axis, engine=None):
    route = ROUTE_ANALYTIC if model.orthogonal else ROUTE_FD
    value = site_energy_gradients(pair, model, contour, fn, ell, engine)[m, axis]
    return SiteDerivative(int(ell), ((int(m), int(axis)),), float(value), route)


def site_energy_hessians(pair, model, contour, fn=None, ell=0, engine=None, threads=None):
    """∂²G_ℓ/∂y(m₁)∂y(m₂) по контуру; форма (N, 3, N, 3).

    Подынтегральное выражение 2 tr((∂₁H X)ᵀ R (∂₂H X)) − ⟨X Xᵀ, ∂₁₂H⟩, X = R E_ℓ.
    """
    fn = fn or contour.fn
    if not model.orthogonal:
        logger.info("Гессиан по контуру для модели с перекрытием: конечные разности аналитического градиента")
        return fd_site_energy_hessian(model, pair.config, fn, ell).best
    if model.nu < 2:
        raise ModelError(f"Модель {model.name} не имеет вторых производных")
    _check_margins(contour)
    engine = _engine(model, pair, engine, 2)
    E = _resolvent_columns(pair, ell)
    n, nb = pair.n_orbitals, E.shape[1]
    first = [d.dH for d in engine.first_all()]
    n_coords = len(first)
    eye = np.eye(n)

    def sampler(z):
        lu = linalg.lu_factor(pair.H - z * eye, check_finite=False)
        X = linalg.lu_solve(lu, E, check_finite=False)
        V = np.stack([np.asarray(A @ X) for A in first])
        RV = linalg.lu_solve(lu, V.transpose(1, 0, 2).reshape(n, n_coords * nb), check_finite=False)
        RV = RV.reshape(n, n_coords, nb).transpose(1, 0, 2)
        T = 2.0 * np.einsum('pib,qib->pq', V, RV)
        return np.concatenate([(-(X @ X.T)).ravel(), T.ravel()])

    packed = np.real(contour_quadrature(contour, sampler, fn=fn, threads=threads).value)
    K = packed[:n * n].reshape(n, n)
    T = packed[n * n:].reshape(engine.n_sites, 3, engine.n_sites, 3)
    hess = T + engine.contract_second(K)
    return 0.5 * (hess + hess.transpose(2, 3, 0, 1))


def site_energy_hessian(pair, model, contour, fn, ell, first, second, engine=None):
    route = ROUTE_ANALYTIC if model.orthogonal else ROUTE_FD
    hess = site_energy_hessians(pair, model, contour, fn, ell, engine)
    (m1, a1), (m2, a2) = first, second
    return SiteDerivative(int(ell), ((int(m1), int(a1)), (int(m2), int(a2))), float(hess[m1, a1, m2, a2]), route)


def site_energy_gradients_spectral(spec, fn, engine, ell):
    """∂G_ℓ через разделённые разности g по собственным значениям, включая вклад ∂M"""
    psi = spec.eigenvectors
    m_psi = spec.m_vectors
    rows = np.arange(spec.offsets[ell], spec.offsets[ell + 1])
    Fg, Fzg = g_divided_differences(fn, spec.eigenvalues)
    Wt = psi[rows].T @ m_psi[rows]
    grad = engine.contract_first(psi @ (Fg * Wt) @ psi.T)
    if spec.overlap_vectors is not None:
        K_M = -(psi @ (Fzg * Wt) @ psi.T)
        g = g_real(fn, spec.eigenvalues)
        A = (psi * g[None, :]) @ psi.T
        K_M[rows, :] += A[rows, :]
        grad = grad + engine.contract_first(K_M, overlap=True)
    return grad


def forces(pair, model, fn, spec=None, route=ROUTE_SPECTRAL, contour=None, engine=None, threads=None):
    """f_m = −∂G/∂y(m): Хеллман–Фейнман по спектру или контурный интеграл"""
    engine = _engine(model, pair, engine, 1)
    if route == ROUTE_SPECTRAL:
        spec = spec if spec is not None else solve(pair)
        g, g1 = g_real(fn, spec.eigenvalues, order=1)
        psi = spec.eigenvectors
        dG = engine.contract_first((psi * g1[None, :]) @ psi.T)
        if not model.orthogonal:
            dG = dG - engine.contract_first((psi * (g1 * spec.eigenvalues)[None, :]) @ psi.T, overlap=True)
        return ForceReport(-dG, float(np.sum(g)), ROUTE_SPECTRAL)
    if route != ROUTE_CONTOUR:
        raise ModelError(f"Неизвестный маршрут вычисления сил: {route}")
    if contour is None:
        raise ContourError("Для контурного маршрута нужен контур")
    _check_margins(contour)
    n = pair.n_orbitals
    M = pair.M.astype(complex)

    def sampler(z):
        lu = linalg.lu_factor(pair.H - z * pair.M, check_finite=False)
        R = linalg.lu_solve(lu, np.eye(n, dtype=complex), check_finite=False)
        RMR = R @ M @ R
        if model.orthogonal:
            return np.concatenate([(-RMR).ravel(), [np.trace(R @ M)]])
        return np.concatenate([(-RMR).ravel(), (z * RMR + R).ravel(), [np.trace(R @ M)]])

    packed = np.real(contour_quadrature(contour, sampler, fn=fn, threads=threads).value)
    dG = engine.contract_first(packed[:n * n].reshape(n, n))
    if not model.orthogonal:
        dG = dG + engine.contract_first(packed[n * n:2 * n * n].reshape(n, n), overlap=True)
    return ForceReport(-dG, float(packed[-1]), ROUTE_CONTOUR)


def richardson(func, steps=None):
    """Центральные разности (f(h) − f(−h))/2h; лучшей считается ступень с наименьшим расхождением с соседней"""
    steps = tuple(settings.TB_SETTINGS['FD_STEPS'] if steps is None else steps)
    estimates = np.array([(np.asarray(func(h)) - np.asarray(func(-h))) / (2.0 * h) for h in steps])
    if len(steps) == 1:
        return FiniteDifference(steps, estimates, estimates[0], np.full(estimates[0].shape, np.nan))
    gaps = np.abs(np.diff(estimates, axis=0))
    pick = np.argmin(gaps, axis=0)[None]
    best = np.take_along_axis(estimates[1:], pick, axis=0)[0]
    spread = np.take_along_axis(gaps, pick, axis=0)[0]
    return FiniteDifference(steps, estimates, best, spread)


def _coordinate_ladder(config, evaluate, steps, transpose):
    """Разности по всем координатам (m, i); estimates → (k, N, 3, ...) и затем transpose"""
    ladders = [
        richardson(lambda h, m=m, a=a: evaluate(config.displaced(m, a, h)), steps)
        for m in range(config.n_sites) for a in range(3)
    ]
    k = len(ladders[0].steps)
    tail = ladders[0].best.shape
    estimates = np.stack([d.estimates for d in ladders], axis=1).reshape((k, config.n_sites, 3) + tail)
    best = np.stack([d.best for d in ladders]).reshape((config.n_sites, 3) + tail)
    spread = np.stack([d.spread for d in ladders]).reshape((config.n_sites, 3) + tail)
    axes = tuple(a - 1 for a in transpose[1:])
    return FiniteDifference(
        ladders[0].steps, estimates.transpose(transpose), best.transpose(axes), spread.transpose(axes)
    )


def fd_site_energies(model, config, fn, steps=None):
    """D[ℓ, m, i] ≈ ∂G_ℓ/∂[y(m)]_i по пересчитанным энергиям узлов"""
    def evaluate(displaced):
        return site_energies_spectral(solve(assemble(model, displaced)), fn).values

    return _coordinate_ladder(config, evaluate, steps, (0, 3, 1, 2))


def fd_site_energy_hessian(model, config, fn, ell, steps=None):
    """Гессиан G_ℓ как разности аналитического градиента; индексы [m₁, i₁, m₂, i₂]"""
    def evaluate(displaced):
        spec = solve(assemble(model, displaced))
        return site_energy_gradients_spectral(spec, fn, DerivativeEngine(model, displaced), ell)

    return _coordinate_ladder(config, evaluate, steps, (0, 3, 4, 1, 2))


def fd_force_derivatives(model, config, fn, steps=None):
    """f_{ℓ,j} = ∂f_ℓ/∂y(j); индексы [ℓ, i, j, b]"""
    def evaluate(displaced):
        return forces(assemble(model, displaced), model, fn).forces

    return _coordinate_ladder(config, evaluate, steps, (0, 3, 4, 1, 2))


def fd_total_energy_gradient(model, config, fn, steps=None):
    """∂G/∂y(m) разностями полной энергии"""
    def evaluate(displaced):
        return site_energies_spectral(solve(assemble(model, displaced)), fn).total

    return _coordinate_ladder(config, evaluate, steps, (0, 1, 2))


def zero_temperature_limit(spec, mu, betas):
    """max_ℓ |G^β_ℓ − G^∞_ℓ| для возрастающих β"""
    reference = site_energies_spectral(spec, GrandPotentialFn(math.inf, mu)).values
    rows = []
    for beta in sorted(betas):
        values = site_energies_spectral(spec, GrandPotentialFn(float(beta), mu)).values
        rows.append((float(beta), float(np.max(np.abs(values - reference)))))
    return rows
