"""Двухцентровые модели сильной связи и сборка пары (H, M)."""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, ModelError
from .geometry import build_neighbor_table, check_admissible

logger = logging.getLogger(__name__)


class TbModel(ABC):
    """Интерфейс двухцентровой модели.

    Блоки возвращаются списками [значение, градиент, гессиан] по ξ = y(k) − y(ℓ):
    формы (P, nl, nk), (P, 3, nl, nk), (P, 3, 3, nl, nk).
    """
    name = 'abstract'
    nu = 2
    orthogonal = True
    environment_dependent = False
    cutoff = 0.0

    @abstractmethod
    def n_orbitals(self, species):
        """Число орбиталей N_b сорта"""

    def valence(self, species):
        return 1.0

    def check_species(self, species):
        for s in sorted(set(species)):
            self.n_orbitals(s)

    def species_list(self):
        return []

    @abstractmethod
    def onsite(self, species, rho, order=0):
        """Диагональные энергии (P, nb) и их производные по ρ"""

    @abstractmethod
    def hopping(self, species_i, species_j, vectors, order=0):
        """Блоки перескока для векторов связи"""

    def overlap(self, species_i, species_j, vectors, order=0):
        return None

    def density_terms(self, species, distances, order=0):
        """Вклады φ(r), φ′, φ″ соседа в плотность ρ узла данного сорта"""
        return [np.zeros_like(distances) for _ in range(order + 1)]

    @property
    @abstractmethod
    def decay(self):
        """Константы (𝔥_j, 𝔶_j) для j = 0..ν"""

    def kernel(self, species_i, species_j, xi):
        return self.hopping(species_i, species_j, np.asarray(xi, dtype=float)[None, :])[0][0]


def _radial_scalar(t, t1, t2, vectors, order):
    """Блоки скалярного ядра t(|ξ|) для одной s-орбитали"""
    r = np.linalg.norm(vectors, axis=1)
    n = vectors / r[:, None]
    blocks = [t[:, None, None]]
    if order >= 1:
        blocks.append((t1[:, None] * n)[:, :, None, None])
    if order >= 2:
        nn = n[:, :, None] * n[:, None, :]
        hess = t2[:, None, None] * nn + (t1 / r)[:, None, None] * (np.eye(3)[None, :, :] - nn)
        blocks.append(hess[:, :, :, None, None])
    return blocks


@dataclass(frozen=True)
class ToyModel(TbModel):
    """Одна s-орбиталь на узел, перескок t₀e^{−κr} с жёстким обрезанием"""
    onsite_energies: dict = field(default_factory=lambda: {'A': 0.0})
    t0: float = -2.718281828459045
    kappa: float = 1.0
    cutoff: float = 1.5
    valence_electrons: float = 1.0
    r_min: float = 0.5
    name = 'toy'

    def n_orbitals(self, species):
        if species not in self.onsite_energies:
            raise ModelError(f"Неизвестный сорт: {species}")
        return 1

    def species_list(self):
        return sorted(self.onsite_energies)

    def valence(self, species):
        return self.valence_electrons

    def onsite(self, species, rho, order=0):
        rho = np.asarray(rho, dtype=float)
        values = [np.full((rho.shape[0], 1), float(self.onsite_energies[species]))]
        values += [np.zeros((rho.shape[0], 1)) for _ in range(order)]
        return values

    def hopping(self, species_i, species_j, vectors, order=0):
        self.n_orbitals(species_i)
        self.n_orbitals(species_j)
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        r = np.linalg.norm(vectors, axis=1)
        t = np.where(r <= self.cutoff, self.t0 * np.exp(-self.kappa * r), 0.0)
        return _radial_scalar(t, -self.kappa * t, self.kappa ** 2 * t, vectors, order)

    @property
    def decay(self):
        h0 = abs(self.t0)
        return (
            (h0, self.kappa),
            (self.kappa * h0, self.kappa),
            (h0 * (self.kappa ** 2 + self.kappa / self.r_min), self.kappa),
        )

    @classmethod
    def from_dict(cls, data):
        known = {'model', 'onsite', 't0', 'kappa', 'cutoff', 'valence', 'r_min', 'name'}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Неизвестные параметры модели: {', '.join(sorted(unknown))}")
        try:
            return cls(
                onsite_energies={str(k): float(v) for k, v in data['onsite'].items()},
                t0=float(data.get('t0', cls.t0)),
                kappa=float(data.get('kappa', cls.kappa)),
                cutoff=float(data.get('cutoff', cls.cutoff)),
                valence_electrons=float(data.get('valence', cls.valence_electrons)),
                r_min=float(data.get('r_min', cls.r_min)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"Неверные параметры модели: {exc}") from exc


@dataclass(frozen=True)
class HamiltonianPair:
    """Матрицы H и M с картой узел → строки орбиталей"""
    H: np.ndarray
    M: np.ndarray
    offsets: np.ndarray
    orthogonal: bool = True
    config: object = None

    @property
    def n_orbitals(self):
        return self.H.shape[0]

    @property
    def n_sites(self):
        return len(self.offsets) - 1

    def site_slice(self, site):
        return slice(int(self.offsets[site]), int(self.offsets[site + 1]))

    @property
    def orbital_site(self):
        return np.repeat(np.arange(self.n_sites), np.diff(self.offsets))

    def site_orbitals(self, sites):
        return np.concatenate([np.arange(self.offsets[s], self.offsets[s + 1]) for s in sites]).astype(int)


def orbital_offsets(model, config):
    counts = [model.n_orbitals(s) for s in config.species]
    return np.concatenate([[0], np.cumsum(counts)]).astype(int)


def _species_groups(species, indices):
    """Группы индексов по сорту (отсортированы для детерминизма)"""
    labels = np.array([species[i] for i in indices]) if len(indices) else np.array([], dtype=str)
    for s in sorted(set(labels.tolist())):
        yield s, np.flatnonzero(labels == s)


def _pair_groups(config, table, mask):
    sel_all = np.flatnonzero(mask)
    keys = [(config.species[a], config.species[b]) for a, b in zip(table.i[sel_all], table.j[sel_all])]
    for key in sorted(set(keys)):
        sel = sel_all[[k == key for k in keys]]
        yield key[0], key[1], sel


def _block_indices(offsets, i, j, nl, nk):
    rows = offsets[i][:, None, None] + np.arange(nl)[None, :, None]
    cols = offsets[j][:, None, None] + np.arange(nk)[None, None, :]
    return np.broadcast_arrays(rows, cols)


def site_densities(model, config, table, order=0):
    """Псевдоплотности ρ_ℓ = Σ_k φ(r_ℓk) по направленной таблице"""
    rho = np.zeros(config.n_sites)
    if not model.environment_dependent or len(table) == 0:
        return rho
    for species, sel in _species_groups(config.species, table.i):
        phi = model.density_terms(species, table.distances[sel])[0]
        np.add.at(rho, table.i[sel], phi)
    return rho


def _onsite_diagonal(model, config, offsets, rho, order=0):
    n_orb = offsets[-1]
    diag = [np.zeros(n_orb) for _ in range(order + 1)]
    for species, idx in _species_groups(config.species, np.arange(config.n_sites)):
        values = model.onsite(species, rho[idx], order)
        nb = values[0].shape[1]
        orbitals = (offsets[idx][:, None] + np.arange(nb)[None, :]).ravel()
        for k in range(order + 1):
            diag[k][orbitals] = values[k].ravel()
    return diag


def assemble(model, config, table=None, kpoint=None):
    """Сборка (H, M); при kpoint блоховская пара H(k), M(k) с фазой e^{2πi k·n_T}"""
    report = check_admissible(config)
    if not report.passed:
        raise ConfigurationError(
            f"Конфигурация недопустима: минимальное расстояние {report.min_distance:.4f} Å "
            f"< m_min={report.m_min} Å, пара {report.pair}"
        )
    model.check_species(config.species)
    if table is None:
        table = build_neighbor_table(config, model.cutoff, multi_image=True)
    offsets = orbital_offsets(model, config)
    n_orb = int(offsets[-1])
    dtype = complex if kpoint is not None else float
    H = np.zeros((n_orb, n_orb), dtype=dtype)
    M = np.zeros((n_orb, n_orb), dtype=dtype)
    phases = None
    if kpoint is not None:
        phases = np.exp(2j * np.pi * (table.offsets @ np.asarray(kpoint, dtype=float)))
    for sa, sb, sel in _pair_groups(config, table, table.upper()):
        vectors = table.vectors[sel]
        B = model.hopping(sa, sb, vectors)[0]
        rows, cols = _block_indices(offsets, table.i[sel], table.j[sel], B.shape[1], B.shape[2])
        phase = 1.0 if phases is None else phases[sel][:, None, None]
        np.add.at(H, (rows, cols), B * phase)
        np.add.at(H, (cols, rows), B * np.conj(phase))
        if not model.orthogonal:
            S = model.overlap(sa, sb, vectors)[0]
            np.add.at(M, (rows, cols), S * phase)
            np.add.at(M, (cols, rows), S * np.conj(phase))
    rho = site_densities(model, config, table)
    H[np.diag_indices(n_orb)] += _onsite_diagonal(model, config, offsets, rho)[0]
    M[np.diag_indices(n_orb)] += 1.0
    H = 0.5 * (H + H.conj().T)
    M = 0.5 * (M + M.conj().T)
    return HamiltonianPair(H, M, offsets, orthogonal=model.orthogonal, config=config)


@dataclass(frozen=True)
class KernelAudit:
    name: str
    passed: bool
    measured: float
    tolerance: float


def _sample_bonds(model, count, seed, r_min=None):
    rng = np.random.default_rng(seed)
    r_lo = getattr(model, 'r_min', 0.5) if r_min is None else r_min
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    radii = rng.uniform(r_lo, model.cutoff, size=count)
    return directions * radii[:, None]


def check_kernel_symmetry(model, species=None, samples=50, seed=0, tol=1e-12):
    """h^{ab}(ξ) = h^{ba}(−ξ)ᵀ на случайных векторах"""
    species = sorted(species) if species is not None else model.species_list()
    vectors = _sample_bonds(model, samples, seed)
    worst = 0.0
    for sa in species:
        for sb in species:
            try:
                forward = model.hopping(sa, sb, vectors)[0]
                backward = model.hopping(sb, sa, -vectors)[0]
            except ModelError:
                continue
            scale = max(1.0, float(np.abs(forward).max()))
            worst = max(worst, float(np.abs(forward - backward.transpose(0, 2, 1)).max()) / scale)
    return KernelAudit('kernel_symmetry', worst <= tol, worst, tol)


def check_kernel_decay(model, species=None, samples=200, seed=1, order=0):
    """max|∂^j h(ξ)| ≤ 𝔥_j e^{−𝔶_j|ξ|} для заявленных констант"""
    species = sorted(species) if species is not None else model.species_list()
    vectors = _sample_bonds(model, samples, seed)
    r = np.linalg.norm(vectors, axis=1)
    worst = 0.0
    for sa in species:
        try:
            blocks = model.hopping(sa, sa, vectors, order)
        except ModelError:
            continue
        for j in range(order + 1):
            h_j, gamma_j = model.decay[j]
            magnitude = np.abs(blocks[j]).reshape(len(r), -1).max(axis=1)
            worst = max(worst, float(np.max(magnitude / (h_j * np.exp(-gamma_j * r)))))
    return KernelAudit('kernel_decay', worst <= 1.0 + 1e-12, worst, 1.0)


@dataclass
class _PairGroup:
    i: np.ndarray
    j: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    dH: np.ndarray
    d2H: np.ndarray | None = None
    dM: np.ndarray | None = None
    d2M: np.ndarray | None = None


@dataclass(frozen=True)
class DerivativeMatrices:
    dH: sparse.csr_matrix
    dM: sparse.csr_matrix | None = None


class DerivativeEngine:
    """Производные H и M по координатам узлов.

    Свёртки ⟨K, ∂H⟩ и ⟨K, ∂²H⟩ считаются сразу для всех координат по блокам связей.
    """

    def __init__(self, model, config, table=None, order=1):
        if order > model.nu:
            raise ModelError(f"Порядок производной {order} больше гладкости модели ν={model.nu}")
        model.check_species(config.species)
        self.model = model
        self.config = config
        self.order = order
        self.table = table if table is not None else build_neighbor_table(config, model.cutoff, multi_image=True)
        self.offsets = orbital_offsets(model, config)
        self.n_orb = int(self.offsets[-1])
        self.n_sites = config.n_sites
        self.orbital_site = np.repeat(np.arange(self.n_sites), np.diff(self.offsets))
        self.groups = []
        table = self.table
        for sa, sb, sel in _pair_groups(config, table, table.upper()):
            vectors = table.vectors[sel]
            hop = model.hopping(sa, sb, vectors, order)
            rows, cols = _block_indices(self.offsets, table.i[sel], table.j[sel], hop[0].shape[1], hop[0].shape[2])
            group = _PairGroup(table.i[sel], table.j[sel], rows, cols, hop[1], hop[2] if order >= 2 else None)
            if not model.orthogonal:
                ovl = model.overlap(sa, sb, vectors, order)
                group.dM = ovl[1]
                group.d2M = ovl[2] if order >= 2 else None
            self.groups.append(group)
        self.environment = model.environment_dependent and len(table) > 0
        if self.environment:
            self._prepare_environment(order)

    def _prepare_environment(self, order):
        table = self.table
        self.rho = site_densities(self.model, self.config, table)
        diag = _onsite_diagonal(self.model, self.config, self.offsets, self.rho, order=2)
        self.eps1, self.eps2 = diag[1], diag[2]
        self.dphi = np.zeros(len(table))
        self.d2phi = np.zeros(len(table))
        for species, sel in _species_groups(self.config.species, table.i):
            terms = self.model.density_terms(species, table.distances[sel], order=2)
            self.dphi[sel] = terms[1]
            self.d2phi[sel] = terms[2]
        self.unit = table.vectors / table.distances[:, None]

    def _coefficients(self, i, j, site):
        return (j == site).astype(float) - (i == site).astype(float)

    def _density_gradient(self, site, axis):
        t = self.table
        w = self.dphi * self.unit[:, axis]
        drho = np.zeros(self.n_sites)
        np.add.at(drho, t.i, self._coefficients(t.i, t.j, site) * w)
        return drho

    def _density_hessian_terms(self):
        n = self.unit
        nn = n[:, :, None] * n[:, None, :]
        r = self.table.distances
        return self.d2phi[:, None, None] * nn + (self.dphi / r)[:, None, None] * (np.eye(3)[None] - nn)

    def _assemble_sparse(self, parts):
        rows = [p[0] for p in parts]
        cols = [p[1] for p in parts]
        vals = [p[2] for p in parts]
        if not rows:
            return sparse.csr_matrix((self.n_orb, self.n_orb))
        matrix = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.n_orb, self.n_orb)
        )
        return matrix.tocsr()

    def _pair_parts(self, coef_fn, block_fn):
        parts_h, parts_m = [], []
        for g in self.groups:
            coef = coef_fn(g)
            sel = coef != 0.0
            if not sel.any():
                continue
            for target, blocks in ((parts_h, block_fn(g, 'H')), (parts_m, block_fn(g, 'M'))):
                if blocks is None:
                    continue
                values = coef[sel, None, None] * blocks[sel]
                target.append((g.rows[sel].ravel(), g.cols[sel].ravel(), values.ravel()))
                target.append((g.cols[sel].ravel(), g.rows[sel].ravel(), values.ravel()))
        return parts_h, parts_m

    def first(self, site, axis):
        """Разреженные ∂H/∂[y(m)]_i и ∂M/∂[y(m)]_i"""
        def coef(g):
            return self._coefficients(g.i, g.j, site)

        def blocks(g, which):
            source = g.dH if which == 'H' else g.dM
            return None if source is None else source[:, axis]

        parts_h, parts_m = self._pair_parts(coef, blocks)
        if self.environment:
            drho = self._density_gradient(site, axis)
            diag = self.eps1 * drho[self.orbital_site]
            nz = np.flatnonzero(diag)
            parts_h.append((nz, nz, diag[nz]))
        dM = None if self.model.orthogonal else self._assemble_sparse(parts_m)
        return DerivativeMatrices(self._assemble_sparse(parts_h), dM)

    def second(self, first_coord, second_coord):
        """Разреженные ∂²H/∂y_p∂y_q и ∂²M/∂y_p∂y_q"""
        if self.order < 2:
            raise ModelError("Движок построен без вторых производных")
        (m1, a1), (m2, a2) = first_coord, second_coord

        def coef(g):
            return self._coefficients(g.i, g.j, m1) * self._coefficients(g.i, g.j, m2)

        def blocks(g, which):
            source = g.d2H if which == 'H' else g.d2M
            return None if source is None else source[:, a1, a2]

        parts_h, parts_m = self._pair_parts(coef, blocks)
        if self.environment:
            t = self.table
            c = self._coefficients(t.i, t.j, m1) * self._coefficients(t.i, t.j, m2)
            d2rho = np.zeros(self.n_sites)
            np.add.at(d2rho, t.i, c * self._density_hessian_terms()[:, a1, a2])
            drho1 = self._density_gradient(m1, a1)
            drho2 = self._density_gradient(m2, a2)
            diag = (self.eps2 * (drho1 * drho2)[self.orbital_site] + self.eps1 * d2rho[self.orbital_site])
            nz = np.flatnonzero(diag)
            parts_h.append((nz, nz, diag[nz]))
        dM = None if self.model.orthogonal else self._assemble_sparse(parts_m)
        return DerivativeMatrices(self._assemble_sparse(parts_h), dM)

    def first_all(self):
        return [self.first(m, a) for m in range(self.n_sites) for a in range(3)]

    def _site_diagonal_weights(self, K, eps):
        e = np.zeros(self.n_sites)
        np.add.at(e, self.orbital_site, np.real(np.diag(K)) * eps)
        return e

    def contract_first(self, K, overlap=False):
        """⟨K, ∂H/∂[y(m)]_i⟩ (или ∂M) для всех m, i; форма (N, 3)"""
        K = np.real(np.asarray(K))
        out = np.zeros((self.n_sites, 3))
        for g in self.groups:
            blocks = g.dM if overlap else g.dH
            if blocks is None:
                continue
            S = K[g.rows, g.cols] + K[g.cols, g.rows]
            t = np.einsum('pab,pxab->px', S, blocks)
            np.add.at(out, g.j, t)
            np.add.at(out, g.i, -t)
        if self.environment and not overlap:
            e = self._site_diagonal_weights(K, self.eps1)
            w = (e[self.table.i] * self.dphi)[:, None] * self.unit
            np.add.at(out, self.table.j, w)
            np.add.at(out, self.table.i, -w)
        return out

    def contract_second(self, K, overlap=False):
        """⟨K, ∂²H/∂[y(m)]_i∂[y(n)]_j⟩ для всех пар координат; форма (N, 3, N, 3)"""
        if self.order < 2:
            raise ModelError("Движок построен без вторых производных")
        K = np.real(np.asarray(K))
        out = np.zeros((self.n_sites, 3, self.n_sites, 3))

        def scatter(i, j, s):
            np.add.at(out, (j, slice(None), j, slice(None)), s)
            np.add.at(out, (i, slice(None), i, slice(None)), s)
            np.add.at(out, (i, slice(None), j, slice(None)), -s)
            np.add.at(out, (j, slice(None), i, slice(None)), -s)

        for g in self.groups:
            blocks = g.d2M if overlap else g.d2H
            if blocks is None:
                continue
            S = K[g.rows, g.cols] + K[g.cols, g.rows]
            scatter(g.i, g.j, np.einsum('pab,pxyab->pxy', S, blocks))
        if self.environment and not overlap:
            t = self.table
            e1 = self._site_diagonal_weights(K, self.eps1)
            e2 = self._site_diagonal_weights(K, self.eps2)
            grad = np.zeros((self.n_sites, self.n_sites, 3))
            w = self.dphi[:, None] * self.unit
            np.add.at(grad, (t.i, t.j), w)
            np.add.at(grad, (t.i, t.i), -w)
            out += np.einsum('l,lma,lnb->manb', e2, grad, grad)
            scatter(t.i, t.j, e1[t.i][:, None, None] * self._density_hessian_terms())
        return out


def model_derivative(model, config, order, wrt, engine=None):
    """Словарь координата(ы) → DerivativeMatrices(∂H, ∂M)"""
    if order not in (1, 2):
        raise ModelError(f"Поддерживаются производные порядка 1 и 2, запрошен {order}")
    if order > model.nu:
        raise ModelError(f"Порядок {order} больше гладкости модели ν={model.nu}")
    if engine is None or engine.order < order:
        engine = DerivativeEngine(model, config, order=order)
    result = {}
    for key in wrt:
        if order == 1:
            site, axis = key
            result[(int(site), int(axis))] = engine.first(int(site), int(axis))
        else:
            (m1, a1), (m2, a2) = key
            result[((int(m1), int(a1)), (int(m2), int(a2)))] = engine.second((m1, a1), (m2, a2))
    return result
