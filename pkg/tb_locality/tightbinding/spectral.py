"""Полная диагонализация, оценки Гершгорина, щели и дефектные уровни."""
import logging
from dataclasses import dataclass, replace

import numpy as np
from django.conf import settings
from scipy import linalg

from .errors import SpectralError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GershgorinBounds:
    lower: float
    upper: float
    method: str

    def __iter__(self):
        return iter((self.lower, self.upper))

    def contains(self, values, tol=1e-9):
        values = np.asarray(values)
        scale = max(1.0, abs(self.lower), abs(self.upper))
        return bool(np.all(values >= self.lower - tol * scale) and np.all(values <= self.upper + tol * scale))


@dataclass(frozen=True)
class SpectrumReport:
    """Собственные пары, веса узлов Σ_a ψ_ℓa(Mψ)_ℓa и щелевые константы"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    weights: np.ndarray
    gershgorin: GershgorinBounds
    offsets: np.ndarray
    overlap_vectors: np.ndarray | None = None
    residual: float = 0.0
    mu: float | None = None
    d_mu: float | None = None
    gap_g: float | None = None
    defect_states: tuple = ()

    @property
    def n_states(self):
        return len(self.eigenvalues)

    @property
    def m_vectors(self):
        return self.eigenvectors if self.overlap_vectors is None else self.overlap_vectors

    def with_mu(self, mu):
        d_mu, gap_g = gap_constants(self, mu)
        return replace(self, mu=float(mu), d_mu=d_mu, gap_g=gap_g)


def gershgorin_bounds(pair):
    """Интервал, содержащий все (обобщённые) собственные значения"""
    H = np.asarray(pair.H)
    method = 'gershgorin'
    if not pair.orthogonal:
        try:
            L = linalg.cholesky(pair.M, lower=True)
        except linalg.LinAlgError as exc:
            raise SpectralError(_not_positive_definite(pair.M)) from exc
        H = linalg.solve_triangular(L, linalg.solve_triangular(L, H, lower=True).T, lower=True)
        H = 0.5 * (H + H.T)
        method = 'cholesky-similarity'
    centers = np.real(np.diag(H))
    radii = np.sum(np.abs(H), axis=1) - np.abs(np.diag(H))
    return GershgorinBounds(float(np.min(centers - radii)), float(np.max(centers + radii)), method)


def _not_positive_definite(M):
    smallest = float(linalg.eigvalsh(M)[0])
    return f"Матрица перекрытия не положительно определена: λ_min(M) = {smallest:.3e}"


def site_weights(vectors, m_vectors, offsets):
    """W[ℓ, s] = Σ_{a∈ℓ} ψ_s,ℓa (Mψ_s)_ℓa"""
    return np.add.reduceat(np.real(vectors * m_vectors), offsets[:-1], axis=0)


def solve(pair, mu=None):
    """Полный спектр пары (H, M) с M-ортонормированными векторами"""
    H, M = pair.H, pair.M
    if pair.orthogonal:
        eigenvalues, vectors = linalg.eigh(H)
        m_vectors = None
        applied = vectors
    else:
        try:
            linalg.cholesky(M, lower=True)
        except linalg.LinAlgError as exc:
            raise SpectralError(_not_positive_definite(M)) from exc
        eigenvalues, vectors = linalg.eigh(H, M)
        m_vectors = M @ vectors
        applied = m_vectors
    scale = max(1.0, float(np.linalg.norm(H, 2)))
    residual = float(np.max(np.linalg.norm(H @ vectors - applied * eigenvalues[None, :], axis=0), initial=0.0)) / scale
    if residual > 1e-9:
        raise SpectralError(f"Невязка собственных пар {residual:.2e} превышает 1e-9·‖H‖")
    report = SpectrumReport(
        eigenvalues=eigenvalues,
        eigenvectors=vectors,
        weights=site_weights(vectors, applied, pair.offsets),
        gershgorin=gershgorin_bounds(pair),
        offsets=pair.offsets,
        overlap_vectors=m_vectors,
        residual=residual,
    )
    logger.debug(
        f"Спектр: {len(eigenvalues)} уровней в [{eigenvalues[0]:.4f}, {eigenvalues[-1]:.4f}] эВ, невязка {residual:.1e}"
    )
    return report.with_mu(mu) if mu is not None else report


def gap_constants(spec, mu):
    """(𝖽, 𝗀): расстояние от μ до спектра и ширина щели через μ"""
    lam = np.asarray(getattr(spec, 'eigenvalues', spec), dtype=float)
    if lam.size == 0:
        raise SpectralError("Пустой спектр")
    tol = settings.TB_SETTINGS['MU_ON_SPECTRUM_TOL']
    d_mu = float(np.min(np.abs(lam - mu)))
    below, above = lam[lam < mu], lam[lam > mu]
    if d_mu < tol or below.size == 0 or above.size == 0:
        return d_mu, 0.0
    return d_mu, float(above.min() - below.max())


def midgap(eigenvalues, n_electrons):
    """μ = (HOMO + LUMO)/2 при двукратном заполнении уровней"""
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    n_filled = int(round(n_electrons / 2.0))
    if not 0 < n_filled < len(lam):
        raise SpectralError(f"Число электронов {n_electrons} несовместимо с {len(lam)} уровнями")
    homo, lumo = lam[n_filled - 1], lam[n_filled]
    return 0.5 * (homo + lumo), homo, lumo


def classify_defect_states(defective, reference, delta):
    """Собственные значения σ(H(y)) ∖ B_δ(σ(H_ref))"""
    lam = np.asarray(getattr(defective, 'eigenvalues', defective), dtype=float)
    ref = np.sort(np.asarray(getattr(reference, 'eigenvalues', reference), dtype=float))
    idx = np.searchsorted(ref, lam)
    lower = np.abs(lam - ref[np.clip(idx - 1, 0, len(ref) - 1)])
    upper = np.abs(lam - ref[np.clip(idx, 0, len(ref) - 1)])
    distance = np.minimum(lower, upper)
    return [float(x) for x in lam[distance >= delta]]


def defect_state_counts(defective, reference, deltas):
    return [(float(delta), len(classify_defect_states(defective, reference, delta))) for delta in deltas]


def occupations(spec, fn):
    return 2.0 * fn.occupation(spec.eigenvalues)


def with_defect_states(defective, reference, delta):
    return replace(defective, defect_states=tuple(classify_defect_states(defective, reference, delta)))
