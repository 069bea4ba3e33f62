"""Большой потенциал g^β, его аналитическое продолжение и контуры интегрирования."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from django.conf import settings
from matplotlib.path import Path
from scipy.special import expit, log_expit

from .errors import ContourError

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)


def _tb(key):
    return settings.TB_SETTINGS[key]


@dataclass(frozen=True)
class GrandPotentialFn:
    """g^β(z; μ) = (2/β) log(1 − f_β(z − μ)); β = inf даёт 2(z − μ)χ(z < μ)"""
    beta: float
    mu: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ContourError(f"β должна быть положительной, получено {self.beta}")

    @property
    def zero_temperature(self):
        return math.isinf(self.beta)

    def occupation(self, x):
        return fermi_dirac(x, self.beta, self.mu)

    def real(self, x, order=0):
        return g_real(self, x, order)

    def __call__(self, z):
        return eval_g(self, z)


def fermi_dirac(x, beta, mu):
    x = np.asarray(x, dtype=float)
    if math.isinf(beta):
        return np.where(x < mu, 1.0, np.where(x > mu, 0.0, 0.5))
    return expit(-beta * (x - mu))


def g_real(fn, x, order=0):
    """g, g′ = 2f, g″ = −2βf(1 − f) на вещественной оси"""
    x = np.asarray(x, dtype=float)
    if fn.zero_temperature:
        below = x < fn.mu
        values = [np.where(below, 2.0 * (x - fn.mu), 0.0)]
        if order >= 1:
            values.append(np.where(below, 2.0, 0.0))
        if order >= 2:
            values.append(np.zeros_like(x))
        return values if order else values[0]
    u = fn.beta * (x - fn.mu)
    values = [(2.0 / fn.beta) * log_expit(u)]
    f = expit(-u)
    if order >= 1:
        values.append(2.0 * f)
    if order >= 2:
        values.append(-2.0 * fn.beta * f * (1.0 - f))
    return values if order else values[0]


def _near_cut(fn, z, tol=1e-12):
    if fn.zero_temperature:
        return np.zeros(np.shape(z), dtype=bool)
    z = np.asarray(z, dtype=complex)
    return (np.abs(z.real - fn.mu) < tol) & (np.abs(z.imag) >= math.pi / fn.beta - tol)


def eval_g(fn, z):
    """Продолжение g^β на ℂ ∖ {μ + ir : |r| ≥ π/β}"""
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if fn.zero_temperature:
        out = 2.0 * (z - fn.mu)
        return out[0] if scalar else out
    if np.any(_near_cut(fn, z)):
        raise ContourError("Точка лежит на разрезе {μ + ir : |r| ≥ π/β}")
    u = fn.beta * (z - fn.mu)
    left = u.real < 0.0
    out = np.empty_like(u)
    out[left] = 2.0 * (z[left] - fn.mu) - (2.0 / fn.beta) * np.log1p(np.exp(u[left]))
    out[~left] = -(2.0 / fn.beta) * np.log1p(np.exp(-u[~left]))
    return out[0] if scalar else out


def taylor_g(fn, z, order):
    """Многочлен Тейлора g^β в μ: −(2/β)log2 + (z − μ) − (β/4)(z − μ)²"""
    dz = np.asarray(z, dtype=complex) - fn.mu
    value = np.full_like(dz, -(2.0 / fn.beta) * LOG2)
    if order >= 1:
        value = value + dz
    if order >= 2:
        value = value - 0.25 * fn.beta * dz ** 2
    return value


def _raw_phase(fn, u):
    """Arg(1 + e^{−u}) без переполнения, до свёртки в (−π, π]"""
    left = u.real < 0.0
    phase = np.empty(u.shape)
    phase[~left] = np.angle(1.0 + np.exp(-u[~left]))
    phase[left] = -u[left].imag + np.angle(1.0 + np.exp(u[left]))
    return phase


def _log_modulus(u):
    left = u.real < 0.0
    out = np.empty(u.shape)
    out[~left] = np.log(np.abs(1.0 + np.exp(-u[~left])))
    out[left] = -u[left].real + np.log(np.abs(1.0 + np.exp(u[left])))
    return out


def sheet_index(fn, z):
    """Номер листа n: eval_g = главная ветвь − (4πi/β)n"""
    if fn.zero_temperature:
        return np.zeros(np.shape(z), dtype=int)
    u = fn.beta * (np.atleast_1d(np.asarray(z, dtype=complex)) - fn.mu)
    left = u.real < 0.0
    x = np.zeros(u.shape)
    x[left] = -u[left].imag + np.angle(1.0 + np.exp(u[left]))
    wrapped = np.angle(np.exp(1j * x))
    n = np.rint((x - wrapped) / (2.0 * math.pi)).astype(int)
    return n if np.ndim(z) else int(n[0])


@dataclass(frozen=True)
class BranchTrack:
    values: np.ndarray
    sheets: np.ndarray
    max_jump: float
    max_deviation: float


def track_branch(fn, path):
    """Продолжение вдоль плотно заданного пути по приращениям Arg"""
    path = np.asarray(path, dtype=complex)
    if fn.zero_temperature:
        values = 2.0 * (path - fn.mu)
        return BranchTrack(values, np.zeros(len(path), dtype=int), float(np.max(np.abs(np.diff(values)), initial=0.0)), 0.0)
    u = fn.beta * (path - fn.mu)
    phase = np.unwrap(np.angle(np.exp(1j * _raw_phase(fn, u))))
    tracked = -(2.0 / fn.beta) * (_log_modulus(u) + 1j * phase)
    reference = eval_g(fn, path[:1])[0]
    tracked = tracked + (reference - tracked[0])
    direct = eval_g(fn, path)
    return BranchTrack(
        values=tracked,
        sheets=sheet_index(fn, path),
        max_jump=float(np.max(np.abs(np.diff(tracked)), initial=0.0)),
        max_deviation=float(np.max(np.abs(tracked - direct))),
    )


@dataclass(frozen=True)
class CirclePiece:
    center: complex
    radius: float
    base_nodes: int = 64
    taylor_order: int | None = None

    def nodes(self, level=0):
        n = self.base_nodes * 2 ** level
        theta = 2.0 * math.pi * np.arange(n) / n
        e = np.exp(1j * theta)
        return self.center + self.radius * e, 1j * self.radius * e * (2.0 * math.pi / n)

    def encloses(self, points):
        return np.abs(np.asarray(points, dtype=complex) - self.center) < self.radius

    def boundary(self, samples=4096):
        theta = 2.0 * math.pi * np.arange(samples + 1) / samples
        return self.center + self.radius * np.exp(1j * theta)


@dataclass(frozen=True)
class PolygonPiece:
    """Многоугольник против часовой стрелки; составная квадратура Гаусса–Лежандра
    на панелях не длиннее расстояния до особенностей"""
    vertices: tuple
    band: tuple
    singular: tuple = ()
    order: int = 8
    taylor_order: int | None = None

    def _distance(self, z):
        lo, hi = self.band
        dx = max(lo - z.real, 0.0, z.real - hi)
        d = math.hypot(dx, z.imag)
        for s in self.singular:
            d = min(d, abs(z - s))
        return d

    def _panels(self, a, b, factor):
        stack, panels = [(a, b, 0)], []
        while stack:
            p, q, depth = stack.pop()
            mid = 0.5 * (p + q)
            if abs(q - p) > factor * self._distance(mid) and depth < 40:
                stack.append((mid, q, depth + 1))
                stack.append((p, mid, depth + 1))
            else:
                panels.append((p, q))
        return panels

    def nodes(self, level=0):
        x, w = np.polynomial.legendre.leggauss(self.order)
        factor = 2.0 ** (-level)
        z_all, w_all = [], []
        vertices = list(self.vertices)
        for a, b in zip(vertices, vertices[1:] + vertices[:1]):
            for p, q in self._panels(complex(a), complex(b), factor):
                z_all.append(p + (q - p) * (x + 1.0) / 2.0)
                w_all.append(w * (q - p) / 2.0)
        return np.concatenate(z_all), np.concatenate(w_all)

    def encloses(self, points):
        points = np.asarray(points, dtype=complex)
        closed = list(self.vertices) + [self.vertices[0]]
        path = Path(np.column_stack([np.real(closed), np.imag(closed)]), closed=True)
        return path.contains_points(np.column_stack([points.real, points.imag]))

    def boundary(self, samples=4096):
        vertices = list(self.vertices) + [self.vertices[0]]
        edges = np.abs(np.diff(vertices))
        per_edge = np.maximum(2, np.rint(samples * edges / edges.sum()).astype(int))
        parts = [np.linspace(a, b, k, endpoint=False) for a, b, k in zip(vertices, vertices[1:], per_edge)]
        return np.concatenate(parts + [np.array([vertices[0]])])


@dataclass(frozen=True)
class Contour:
    """Узлы и веса квадратуры с зафиксированными запасами до спектра и разрезов"""
    pieces: tuple
    mode: str
    beta: float
    mu: float
    level: int = 0
    clearance: float = math.pi / 2
    nodes: np.ndarray = field(default=None, repr=False)
    weights: np.ndarray = field(default=None, repr=False)
    orders: np.ndarray = field(default=None, repr=False)
    margin_spectrum: float = math.inf
    margin_singularity: float = math.inf
    encloses: tuple = ()
    max_abs_g: float = 0.0
    eigenvalues: np.ndarray = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def fn(self):
        return GrandPotentialFn(self.beta, self.mu)

    def refined(self):
        return _finalize(replace(self, level=self.level + 1))

    def subcontour(self, taylor):
        pieces = tuple(p for p in self.pieces if (p.taylor_order is not None) == taylor)
        if not pieces:
            return None
        return _finalize(replace(self, pieces=pieces))


def _singularity_distance(z, beta, mu):
    """Расстояние до {μ + ir : |r| ≥ π/β} в единицах 1/β"""
    if math.isinf(beta):
        return np.full(z.shape, math.inf)
    h = math.pi / beta
    y = np.abs(z.imag)
    dx = np.abs(z.real - mu)
    d = np.where(y >= h, dx, np.hypot(dx, y - h))
    return d * beta


def _spectrum_distance(z, eigenvalues):
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    idx = np.searchsorted(lam, z.real)
    lower = np.clip(idx - 1, 0, len(lam) - 1)
    upper = np.clip(idx, 0, len(lam) - 1)
    return np.minimum(np.abs(z - lam[lower]), np.abs(z - lam[upper]))


def node_values(contour, fn=None):
    """f(z_q): полное продолжение g или многочлен Тейлора на кусках 𝒞₀"""
    fn = fn or contour.fn
    values = np.empty(contour.n_nodes, dtype=complex)
    full = contour.orders < 0
    values[full] = eval_g(fn, contour.nodes[full])
    for k in np.unique(contour.orders[~full]):
        sel = contour.orders == k
        values[sel] = taylor_g(fn, contour.nodes[sel], int(k))
    return values


def node_margins(contour):
    """Расстояния узлов до спектра (эВ) и до разрезов (в единицах 1/β)"""
    if contour.eigenvalues is None or not len(contour.eigenvalues):
        spectrum = np.full(contour.n_nodes, math.inf)
    else:
        spectrum = _spectrum_distance(contour.nodes, contour.eigenvalues)
    return spectrum, _singularity_distance(contour.nodes, contour.beta, contour.mu)


def _finalize(contour):
    z_parts, w_parts, o_parts = [], [], []
    for piece in contour.pieces:
        z, w = piece.nodes(contour.level)
        z_parts.append(z)
        w_parts.append(w)
        o_parts.append(np.full(len(z), -1 if piece.taylor_order is None else piece.taylor_order))
    nodes, weights, orders = np.concatenate(z_parts), np.concatenate(w_parts), np.concatenate(o_parts)
    contour = replace(contour, nodes=nodes, weights=weights, orders=orders)
    full = orders < 0
    margin_singularity = float(np.min(_singularity_distance(nodes, contour.beta, contour.mu), initial=math.inf))
    margin_spectrum = contour.margin_spectrum
    encloses = contour.encloses
    if contour.eigenvalues is not None and len(contour.eigenvalues):
        lam = contour.eigenvalues
        margin_spectrum = float(np.min(_spectrum_distance(nodes[full], lam), initial=math.inf))
        inside = np.zeros(len(lam), dtype=bool)
        for piece in contour.pieces:
            inside |= piece.encloses(lam.astype(complex))
        encloses = tuple(int(i) for i in np.flatnonzero(inside))
    max_abs_g = float(np.max(np.abs(node_values(contour)[full]), initial=0.0)) if full.any() else 0.0
    return replace(
        contour,
        margin_spectrum=margin_spectrum,
        margin_singularity=margin_singularity,
        encloses=encloses,
        max_abs_g=max_abs_g,
    )


def _circle_between(left, right, base_nodes, taylor_order=None):
    return CirclePiece(0.5 * (left + right), 0.5 * (right - left), base_nodes, taylor_order)


def _waist_polygon(lam, fn, clearance, base_nodes):
    """Контур для металла: «талия» под и над точками μ ± iπ/β"""
    beta, mu = fn.beta, fn.mu
    if clearance > math.pi / 2 + 1e-12:
        raise ContourError("Для металла запас до разреза 𝖻 не может превышать π/2")
    h = 0.5 * (math.pi / (2 * beta) + (math.pi - clearance) / beta)
    lo, hi = float(lam[0]), float(lam[-1])
    pad = max(math.pi / beta, 0.05 * (hi - lo))
    x_l = min(lo, mu - math.pi / beta) - pad
    x_r = max(hi, mu + math.pi / beta) + pad
    a, b = mu - math.pi / beta, mu + math.pi / beta
    rise = max(0.0, min(0.25 * (x_r - x_l) - h, 0.5 * (x_r - b), 0.5 * (a - x_l)))
    top = h + rise
    upper = [complex(x_r, top), complex(b + rise, top), complex(b, h), complex(a, h),
             complex(a - rise, top), complex(x_l, top)]
    if rise <= 0.0:
        upper = [complex(x_r, h), complex(b, h), complex(a, h), complex(x_l, h)]
    vertices = [complex(x_r, 0.0)] + upper + [complex(x_l, 0.0)] + [v.conjugate() for v in reversed(upper)]
    singular = (complex(mu, math.pi / beta), complex(mu, -math.pi / beta))
    order = max(4, min(16, base_nodes // 8))
    return PolygonPiece(tuple(vertices), (lo, hi), singular, order=order)


def build_contour(spec, fn, n_nodes=None, mode='finite-T', clearance=None, taylor_order=2):
    """Контур 𝒞_β (finite-T) или 𝒞_∞ (zero-T) для спектра отчёта"""
    lam = np.sort(np.asarray(getattr(spec, 'eigenvalues', spec), dtype=float))
    if lam.size == 0:
        raise ContourError("Пустой спектр")
    n_nodes = n_nodes or _tb('CONTOUR_NODES')
    clearance = _tb('SINGULARITY_CLEARANCE') if clearance is None else clearance
    if not 0.0 < clearance < math.pi:
        raise ContourError(f"Запас 𝖻 должен лежать в (0, π), получено {clearance}")
    mu, beta = fn.mu, fn.beta
    tol = _tb('MU_ON_SPECTRUM_TOL')
    below, above = lam[lam < mu - tol], lam[lam > mu + tol]
    at_mu = lam[np.abs(lam - mu) <= tol]
    pieces = []
    if mode == 'zero-T':
        if at_mu.size or below.size == 0 or above.size == 0:
            raise ContourError("Контур 𝒞_∞ требует щели: 𝗀 = 0 или μ вне спектра")
        gap = above[0] - below[-1]
        half = 0.5 * gap
        # пересечение с осью в середине щели
        crossing = 0.5 * (above[0] + below[-1])
        pieces.append(_circle_between(below[0] - half, crossing, n_nodes))
        contour = _finalize(Contour(tuple(pieces), 'zero-T', math.inf, mu, clearance=clearance, eigenvalues=lam))
        if contour.margin_spectrum < half * (1 - 1e-9):
            raise ContourError("Запас 𝒞_∞ до спектра меньше 𝗀/2")
        return contour
    if mode != 'finite-T':
        raise ContourError(f"Неизвестный режим контура: {mode}")
    if fn.zero_temperature:
        raise ContourError("Режим finite-T требует конечной β")
    h_spec = math.pi / (2 * beta)
    b_over_beta = clearance / beta

    def crossing_offset(distance):
        lo_s, hi_s = b_over_beta, distance - h_spec
        if lo_s > hi_s:
            return None
        return min(max(0.5 * distance, lo_s), hi_s)

    if at_mu.size:
        # μ ∈ σ: 𝒞⁻, 𝒞⁺ и 𝒞₀ вокруг кластера в μ
        neighbours = np.concatenate([below[-1:], above[:1]])
        gap_next = float(np.min(np.abs(neighbours - mu))) if neighbours.size else math.inf
        radius0 = min(0.5 * gap_next, 0.25 * math.pi / beta)
        pieces.append(CirclePiece(complex(mu), radius0, n_nodes, taylor_order=taylor_order))
        for side, values in (('-', below), ('+', above)):
            if not values.size:
                continue
            edge = values[-1] if side == '-' else values[0]
            s = crossing_offset(abs(mu - edge))
            if s is None:
                raise ContourError("Кластер в μ слишком близок к соседним уровням для разбиения контура")
            pad = max(s, math.pi / beta)
            if side == '-':
                pieces.append(_circle_between(values[0] - pad, mu - s, n_nodes))
            else:
                pieces.append(_circle_between(mu + s, values[-1] + pad, n_nodes))
        mode_name = 'mu-split'
    else:
        offsets = {}
        for side, values in (('-', below), ('+', above)):
            if values.size:
                edge = values[-1] if side == '-' else values[0]
                offsets[side] = crossing_offset(abs(mu - edge))
        if all(s is not None for s in offsets.values()):
            for side, s in offsets.items():
                pad = max(s, math.pi / beta)
                if side == '-':
                    pieces.append(_circle_between(below[0] - pad, mu - s, n_nodes))
                else:
                    pieces.append(_circle_between(mu + s, above[-1] + pad, n_nodes))
            mode_name = 'finite-T'
        else:
            pieces.append(_waist_polygon(lam, fn, clearance, n_nodes))
            mode_name = 'finite-T'
    contour = _finalize(Contour(tuple(pieces), mode_name, beta, mu, clearance=clearance, eigenvalues=lam))
    logger.debug(
        f"Контур {mode_name}: {contour.n_nodes} узлов, запас до спектра {contour.margin_spectrum:.3e}, "
        f"до разреза {contour.margin_singularity:.3f}/β"
    )
    return contour


@dataclass(frozen=True)
class ContourAudit:
    passed: bool
    margin_spectrum: float
    margin_singularity: float
    winding_enclosed: np.ndarray
    winding_excluded: np.ndarray
    winding_branch: np.ndarray
    max_abs_g: float
    issues: tuple = ()


def winding_numbers(contour, points, tol=1e-9):
    """(1/2πi)∮dz/(z − p) квадратурой с удвоением узлов до сходимости"""
    points = np.atleast_1d(np.asarray(points, dtype=complex))
    if points.size == 0:
        return np.array([])

    def once(c):
        diff = c.nodes[None, :] - points[:, None]
        return np.real(np.sum(c.weights[None, :] / diff, axis=1) / (2j * math.pi))

    current, value = contour, once(contour)
    while current.n_nodes * 2 <= _tb('CONTOUR_MAX_NODES'):
        current = current.refined()
        finer = once(current)
        if np.max(np.abs(finer - value)) < tol:
            return finer
        value = finer
    return value


def margin_issues(contour):
    """Нарушения запасов до спектра и до разрезов"""
    lam = contour.eigenvalues if contour.eigenvalues is not None else np.array([])
    issues = []
    if math.isinf(contour.beta):
        required = 0.0
        below, above = lam[lam < contour.mu], lam[lam > contour.mu]
        if below.size and above.size:
            required = 0.5 * (above.min() - below.max())
        if any(lam[i] > contour.mu for i in contour.encloses):
            issues.append("𝒞_∞ охватывает незанятые уровни")
    else:
        required = math.pi / (2 * contour.beta)
        if contour.margin_singularity < contour.clearance * (1 - 1e-9):
            issues.append(f"запас до разреза {contour.margin_singularity:.4f}/β < 𝖻={contour.clearance:.4f}/β")
    if contour.margin_spectrum < required * (1 - 1e-9):
        issues.append(f"запас до спектра {contour.margin_spectrum:.4e} < {required:.4e}")
    return issues


def audit_contour(contour, eigenvalues=None):
    """Проверка запасов и чисел вращения для собственных значений и точек ветвления"""
    lam = np.sort(np.asarray(contour.eigenvalues if eigenvalues is None else eigenvalues, dtype=float))
    issues = margin_issues(contour)
    enclosed = np.array(contour.encloses, dtype=int)
    excluded = np.setdiff1d(np.arange(len(lam)), enclosed)
    w_in = winding_numbers(contour, lam[enclosed])
    w_out = winding_numbers(contour, lam[excluded])
    w_branch = np.array([])
    if not math.isinf(contour.beta):
        h = math.pi / contour.beta
        w_branch = winding_numbers(contour, [contour.mu + 1j * h, contour.mu - 1j * h])
    if np.any(np.abs(w_in - 1.0) > 1e-6):
        issues.append("число вращения вокруг охваченного уровня ≠ 1")
    if np.any(np.abs(w_out) > 1e-6) or np.any(np.abs(w_branch) > 1e-6):
        issues.append("ненулевое число вращения вокруг исключённой точки")
    return ContourAudit(
        passed=not issues,
        margin_spectrum=contour.margin_spectrum,
        margin_singularity=contour.margin_singularity,
        winding_enclosed=w_in,
        winding_excluded=w_out,
        winding_branch=w_branch,
        max_abs_g=contour.max_abs_g,
        issues=tuple(issues),
    )


@dataclass(frozen=True)
class QuadratureResult:
    value: np.ndarray
    n_nodes: int
    change: float
    converged: bool
    contour: Contour = field(repr=False, default=None)


def _quadrature_once(contour, sampler, values, threads):
    prefactor = -contour.weights * values / (2j * math.pi)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(sampler, contour.nodes))
    else:
        samples = [sampler(z) for z in contour.nodes]
    total = None
    for c, sample in zip(prefactor, samples):
        term = c * np.asarray(sample)
        total = term if total is None else total + term
    return total


def contour_quadrature(contour, sampler, fn=None, func=None, tol=None, max_nodes=None, threads=None, refine=True):
    """−(1/2πi) Σ_q w_q f(z_q) S(z_q) с удвоением числа узлов до сходимости.

    func переопределяет f; без fn и func берётся f ≡ 1.
    """
    tol = _tb('CONTOUR_TOL') if tol is None else tol
    max_nodes = max_nodes or _tb('CONTOUR_MAX_NODES')
    threads = threads or _tb('THREADS')

    def weights_for(c):
        if func is not None:
            return np.asarray(func(c.nodes), dtype=complex)
        if fn is None:
            return np.ones(c.n_nodes, dtype=complex)
        return node_values(c, fn)

    current = contour
    value = _quadrature_once(current, sampler, weights_for(current), threads)
    if not refine:
        return QuadratureResult(value, current.n_nodes, math.nan, False, current)
    while True:
        finer = current.refined()
        if finer.n_nodes > max_nodes:
            raise ContourError(
                f"Квадратура не сошлась за {max_nodes} узлов (последнее изменение превышает {tol:.1e})"
            )
        finer_value = _quadrature_once(finer, sampler, weights_for(finer), threads)
        change = float(np.max(np.abs(finer_value - value)))
        if change < tol:
            logger.debug(f"Квадратура сошлась: {finer.n_nodes} узлов, изменение {change:.2e}")
            return QuadratureResult(finer_value, finer.n_nodes, change, True, finer)
        current, value = finer, finer_value


def divided_differences(lam, values, derivatives, tol=1e-10):
    """F_st = (φ(λ_s) − φ(λ_t))/(λ_s − λ_t), на совпадающих значениях среднее φ′"""
    lam = np.asarray(lam, dtype=float)
    diff = lam[:, None] - lam[None, :]
    scale = max(1.0, float(np.max(np.abs(lam))))
    close = np.abs(diff) <= tol * scale
    safe = np.where(close, 1.0, diff)
    F = (values[:, None] - values[None, :]) / safe
    mean_derivative = 0.5 * (derivatives[:, None] + derivatives[None, :])
    return np.where(close, mean_derivative, F)


def g_divided_differences(fn, lam):
    """Разделённые разности g и z·g по собственным значениям"""
    g, g1 = g_real(fn, lam, order=1)
    lam = np.asarray(lam, dtype=float)
    return divided_differences(lam, g, g1), divided_differences(lam, lam * g, g + lam * g1)
