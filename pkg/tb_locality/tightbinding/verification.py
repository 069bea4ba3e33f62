"""Набор проверок инвариантов на небольших модельных системах."""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .bands import KPath, band_structure, bloch_hamiltonian, hermiticity_error
from .builders import chain, cubic_cluster
from .defects import dense_resolvent_action, woodbury_resolvent
from .model import DerivativeEngine, HamiltonianPair, ToyModel, assemble, check_kernel_decay, check_kernel_symmetry
from .sites import (
    fd_site_energies,
    fd_site_energy_hessian,
    forces,
    site_energies_contour,
    site_energies_spectral,
    site_energy_gradients,
    site_energy_hessians,
)
from .spectral import solve
from .thermo import GrandPotentialFn, build_contour, contour_quadrature, track_branch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InvariantCheck:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ''

    def row(self):
        return self.name, self.measured, self.tolerance, self.passed, self.detail


def _check(name, measured, tolerance, detail=''):
    measured = float(measured)
    return InvariantCheck(name, measured, tolerance, bool(measured <= tolerance), detail)


class _AsymmetricToyModel(ToyModel):
    """Модель с нарушенной симметрией h^{AB}(ξ) ≠ h^{BA}(−ξ)ᵀ"""
    name = 'toy-asymmetric'

    def hopping(self, species_i, species_j, vectors, order=0):
        blocks = super().hopping(species_i, species_j, vectors, order)
        if species_i < species_j:
            return [1.1 * b for b in blocks]
        return blocks


def ab_model(model):
    return replace(model, onsite_energies={**model.onsite_energies, 'A': -1.0, 'B': 1.0})


def ab_chain(n=10):
    return chain(n, 1.0, ('A', 'B'))


def perturbed_cluster(seed, amplitude=0.02):
    """Кластер 2×5 с детерминированным случайным смещением узлов"""
    base = cubic_cluster((2, 5, 1), 1.0)
    rng = np.random.default_rng(seed)
    return base.with_positions(base.positions + amplitude * rng.uniform(-1.0, 1.0, base.positions.shape))


def check_split(model, beta):
    """|Σ_ℓ G_ℓ − G|/|G| для обоих путей"""
    pair = assemble(ab_model(model), ab_chain())
    fn = GrandPotentialFn(beta, 0.0)
    spec = solve(pair, fn.mu)
    spectral = site_energies_spectral(spec, fn)
    mode = 'zero-T' if fn.zero_temperature else 'finite-T'
    via_contour = site_energies_contour(pair, build_contour(spec, fn, mode=mode), fn)
    label = 'inf' if math.isinf(beta) else f"{beta:g}"
    return [
        _check(f'split_spectral_beta_{label}', spectral.relative_split, 1e-9),
        _check(f'split_contour_beta_{label}', via_contour.relative_split, 1e-9),
        _check(f'route_equivalence_beta_{label}', np.max(np.abs(via_contour.values - spectral.values)), 1e-8),
    ]


def check_symmetries(model):
    """Энергии узлов при перестановке и сдвиге конфигурации"""
    model = ab_model(model)
    config = perturbed_cluster(3)
    fn = GrandPotentialFn(32.0, 0.05)
    values = site_energies_spectral(solve(assemble(model, config)), fn).values
    order = np.random.default_rng(4).permutation(config.n_sites)
    permuted = site_energies_spectral(solve(assemble(model, config.permuted(order))), fn).values
    shifted = site_energies_spectral(solve(assemble(model, config.translated((0.3, -1.7, 2.2)))), fn).values
    return [
        _check('permutation_equivariance', np.max(np.abs(permuted - values[order])), 1e-10),
        _check('translation_invariance', np.max(np.abs(shifted - values)), 1e-10),
    ]


def _relative(a, b):
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), 1e-300))


def check_derivatives(model, seed):
    """Аналитические градиент и гессиан против конечных разностей; сумма сил"""
    model = ab_model(model)
    config = perturbed_cluster(seed)
    fn = GrandPotentialFn(32.0, 0.05)
    pair = assemble(model, config)
    spec = solve(pair, fn.mu)
    contour = build_contour(spec, fn)
    engine = DerivativeEngine(model, config, order=2)
    ell = 0
    gradient = site_energy_gradients(pair, model, contour, fn, ell, engine)
    fd_gradient = fd_site_energies(model, config, fn).best[ell]
    hessian = site_energy_hessians(pair, model, contour, fn, ell, engine)
    fd_hessian = fd_site_energy_hessian(model, config, fn, ell).best
    net = forces(pair, model, fn, spec=spec, engine=engine).net_force
    return [
        _check('gradient_vs_fd', _relative(gradient, fd_gradient), 1e-6),
        _check('hessian_vs_fd', _relative(hessian, fd_hessian), 1e-4),
        _check('force_sum', np.linalg.norm(net), 1e-8),
    ]


def check_contour(model):
    """Разбиение единицы и непрерывность ветви g^β вдоль контура"""
    pair = assemble(ab_model(model), ab_chain())
    fn = GrandPotentialFn(32.0, 0.0)
    spec = solve(pair, fn.mu)
    contour = build_contour(spec, fn)
    n = pair.n_orbitals

    def resolvent(z):
        return linalg.solve(pair.H - z * np.eye(n), np.eye(n))

    identity = contour_quadrature(contour, resolvent).value
    deviation = max(track_branch(fn, piece.boundary()).max_deviation for piece in contour.pieces)
    return [
        _check('resolution_of_identity', np.max(np.abs(identity - np.eye(n))), 1e-8),
        _check('branch_continuity', deviation, 1e-9),
    ]


def check_mu_on_spectrum():
    """Разбиение 𝒞⁻ ∪ 𝒞₀ ∪ 𝒞⁺ для уровня ровно в μ"""
    H = np.diag([-5.0, 0.0, 5.0])
    pair = HamiltonianPair(H, np.eye(3), np.arange(4))
    fn = GrandPotentialFn(1.0, 0.0)
    spec = solve(pair, fn.mu)
    contour = build_contour(spec, fn)
    via_contour = site_energies_contour(pair, contour, fn)
    spectral = site_energies_spectral(spec, fn)
    return [
        _check('mu_split_total', abs(float(np.sum(via_contour.values)) - spectral.total), 1e-9, contour.mode),
    ]


def check_woodbury(seed, n=100, rank=5, samples=20):
    """Резольвента через формулу Вудбери против прямого решения"""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) / math.sqrt(n)
    H_ref = 0.5 * (A + A.T)
    U = rng.normal(size=(n, rank)) / math.sqrt(n)
    V = U.T.copy()
    ref_action = dense_resolvent_action(H_ref)
    exact_action = dense_resolvent_action(H_ref + U @ V)
    lam = linalg.eigvalsh(H_ref + U @ V)
    z_all = rng.uniform(lam[0], lam[-1], samples) + 1j * rng.uniform(0.05, 1.0, samples)
    rhs = np.eye(n)
    worst = 0.0
    for z in z_all:
        result = woodbury_resolvent(ref_action, U, V, z, rhs)
        worst = max(worst, float(np.max(np.abs(result.columns - exact_action(z, rhs)))))
    return [_check('woodbury', worst, 1e-10, f"N={n}, k={rank}")]


def check_kernels(model):
    return [
        _check('kernel_symmetry', check_kernel_symmetry(model, ('A', 'B')).measured, 1e-12),
        _check('kernel_decay', check_kernel_decay(model, ('A', 'B'), order=min(2, model.nu)).measured, 1.0 + 1e-12),
    ]


def check_bands(model):
    """Эрмитовость H(k) и щель димеризованной цепочки 2|t₁ − t₂|"""
    model = replace(model, onsite_energies={**model.onsite_energies, 'A': 0.0})
    config = chain(2, 1.1, 'A', periodic=True, alternation=0.1)
    hermitian = max(
        hermiticity_error(bloch_hamiltonian(model, config, (k, 0.0, 0.0)))
        for k in np.random.default_rng(5).uniform(-0.5, 0.5, 8)
    )
    structure = band_structure(model, config, KPath.explicit(('G', 'X'), [[0, 0, 0], [0.5, 0, 0]], 40))
    t1, t2 = (model.t0 * math.exp(-model.kappa * r) for r in (1.0, 1.2))
    return [
        _check('bloch_hermiticity', hermitian, 1e-12),
        _check('dimerized_gap', abs(structure.gap - 2.0 * abs(t1 - t2)), 1e-8),
    ]


def run_suite(model=None, seed=0):
    """Все проверки; модель должна знать сорта A и B"""
    model = model or ToyModel(onsite_energies={'A': 0.0, 'B': 0.0})
    checks = []
    checks += check_kernels(model)
    for beta in (32.0, math.inf):
        checks += check_split(model, beta)
    checks += check_symmetries(model)
    checks += check_derivatives(model, seed)
    checks += check_contour(model)
    checks += check_mu_on_spectrum()
    checks += check_woodbury(seed)
    checks += check_bands(model)
    for check in checks:
        log = logger.info if check.passed else logger.error
        log(f"{check.name}: {check.measured:.3e} (допуск {check.tolerance:.1e})")
    return checks
