"""Двухцентровые таблицы Слейтера–Костера (s, p, d) и их производные по направлению.

Блок строится символьно в sympy: коэффициент при каждом канале ssσ…ddδ
дифференцируется по направляющим косинусам и компилируется в numpy-функцию.
Радиальная часть подставляется по цепному правилу в :func:`bond_blocks`.
"""
import logging
from functools import lru_cache

import numpy as np
import sympy as sp

from .errors import ModelError

logger = logging.getLogger(__name__)

ORBITALS = ('s', 'px', 'py', 'pz', 'dxy', 'dyz', 'dzx', 'dx2-y2', 'd3z2-r2')
ANGULAR_MOMENTUM = (0, 1, 1, 1, 2, 2, 2, 2, 2)
CHANNELS = (
    'ss_sigma', 'sp_sigma', 'pp_sigma', 'pp_pi', 'sd_sigma',
    'pd_sigma', 'pd_pi', 'dd_sigma', 'dd_pi', 'dd_delta',
)
ORBITAL_SETS = {'s': 1, 'sp': 4, 'spd': 9}
SET_CHANNELS = {'s': CHANNELS[:1], 'sp': CHANNELS[:4], 'spd': CHANNELS}
# Каналы с одинаковыми орбитальными типами (υ = υ′)
DIAGONAL_CHANNELS = frozenset({'ss_sigma', 'pp_sigma', 'pp_pi', 'dd_sigma', 'dd_pi', 'dd_delta'})

_L, _M, _N = sp.symbols('l m n', real=True)
_V = {c: sp.Symbol(c, real=True) for c in CHANNELS}


def _upper_entries():
    l, m, n = _L, _M, _N
    V = _V
    r3 = sp.sqrt(3)
    half = sp.Rational(1, 2)
    lm2 = l ** 2 - m ** 2
    zr = n ** 2 - half * (l ** 2 + m ** 2)
    ss, sps = V['ss_sigma'], V['sp_sigma']
    pps, ppp = V['pp_sigma'], V['pp_pi']
    sds, pds, pdp = V['sd_sigma'], V['pd_sigma'], V['pd_pi']
    dds, ddp, ddd = V['dd_sigma'], V['dd_pi'], V['dd_delta']
    s, x, y, z, xy, yz, zx, x2, z2 = range(9)
    return {
        (s, s): ss,
        (s, x): l * sps, (s, y): m * sps, (s, z): n * sps,
        (x, x): l ** 2 * pps + (1 - l ** 2) * ppp,
        (x, y): l * m * (pps - ppp),
        (x, z): l * n * (pps - ppp),
        (y, y): m ** 2 * pps + (1 - m ** 2) * ppp,
        (y, z): m * n * (pps - ppp),
        (z, z): n ** 2 * pps + (1 - n ** 2) * ppp,
        (s, xy): r3 * l * m * sds,
        (s, yz): r3 * m * n * sds,
        (s, zx): r3 * n * l * sds,
        (s, x2): r3 / 2 * lm2 * sds,
        (s, z2): zr * sds,
        (x, xy): r3 * l ** 2 * m * pds + m * (1 - 2 * l ** 2) * pdp,
        (x, yz): r3 * l * m * n * pds - 2 * l * m * n * pdp,
        (x, zx): r3 * l ** 2 * n * pds + n * (1 - 2 * l ** 2) * pdp,
        (y, xy): r3 * m ** 2 * l * pds + l * (1 - 2 * m ** 2) * pdp,
        (y, yz): r3 * m ** 2 * n * pds + n * (1 - 2 * m ** 2) * pdp,
        (y, zx): r3 * l * m * n * pds - 2 * l * m * n * pdp,
        (z, xy): r3 * l * m * n * pds - 2 * l * m * n * pdp,
        (z, yz): r3 * n ** 2 * m * pds + m * (1 - 2 * n ** 2) * pdp,
        (z, zx): r3 * n ** 2 * l * pds + l * (1 - 2 * n ** 2) * pdp,
        (x, x2): r3 / 2 * l * lm2 * pds + l * (1 - lm2) * pdp,
        (y, x2): r3 / 2 * m * lm2 * pds - m * (1 + lm2) * pdp,
        (z, x2): r3 / 2 * n * lm2 * pds - n * lm2 * pdp,
        (x, z2): l * zr * pds - r3 * l * n ** 2 * pdp,
        (y, z2): m * zr * pds - r3 * m * n ** 2 * pdp,
        (z, z2): n * zr * pds + r3 * n * (l ** 2 + m ** 2) * pdp,
        (xy, xy): 3 * l ** 2 * m ** 2 * dds + (l ** 2 + m ** 2 - 4 * l ** 2 * m ** 2) * ddp
        + (n ** 2 + l ** 2 * m ** 2) * ddd,
        (xy, yz): 3 * l * m ** 2 * n * dds + l * n * (1 - 4 * m ** 2) * ddp + l * n * (m ** 2 - 1) * ddd,
        (xy, zx): 3 * l ** 2 * m * n * dds + m * n * (1 - 4 * l ** 2) * ddp + m * n * (l ** 2 - 1) * ddd,
        (yz, yz): 3 * m ** 2 * n ** 2 * dds + (m ** 2 + n ** 2 - 4 * m ** 2 * n ** 2) * ddp
        + (l ** 2 + m ** 2 * n ** 2) * ddd,
        (yz, zx): 3 * m * n ** 2 * l * dds + m * l * (1 - 4 * n ** 2) * ddp + m * l * (n ** 2 - 1) * ddd,
        (zx, zx): 3 * n ** 2 * l ** 2 * dds + (n ** 2 + l ** 2 - 4 * n ** 2 * l ** 2) * ddp
        + (m ** 2 + n ** 2 * l ** 2) * ddd,
        (xy, x2): sp.Rational(3, 2) * l * m * lm2 * dds - 2 * l * m * lm2 * ddp + half * l * m * lm2 * ddd,
        (yz, x2): sp.Rational(3, 2) * m * n * lm2 * dds - m * n * (1 + 2 * lm2) * ddp
        + m * n * (1 + half * lm2) * ddd,
        (zx, x2): sp.Rational(3, 2) * n * l * lm2 * dds + n * l * (1 - 2 * lm2) * ddp
        - n * l * (1 - half * lm2) * ddd,
        (xy, z2): r3 * l * m * zr * dds - 2 * r3 * l * m * n ** 2 * ddp + r3 / 2 * l * m * (1 + n ** 2) * ddd,
        (yz, z2): r3 * m * n * zr * dds + r3 * m * n * (l ** 2 + m ** 2 - n ** 2) * ddp
        - r3 / 2 * m * n * (l ** 2 + m ** 2) * ddd,
        (zx, z2): r3 * l * n * zr * dds + r3 * l * n * (l ** 2 + m ** 2 - n ** 2) * ddp
        - r3 / 2 * l * n * (l ** 2 + m ** 2) * ddd,
        (x2, x2): sp.Rational(3, 4) * lm2 ** 2 * dds + (l ** 2 + m ** 2 - lm2 ** 2) * ddp
        + (n ** 2 + lm2 ** 2 / 4) * ddd,
        (x2, z2): r3 / 2 * lm2 * zr * dds + r3 * n ** 2 * (m ** 2 - l ** 2) * ddp
        + r3 / 4 * (1 + n ** 2) * lm2 * ddd,
        (z2, z2): zr ** 2 * dds + 3 * n ** 2 * (l ** 2 + m ** 2) * ddp
        + sp.Rational(3, 4) * (l ** 2 + m ** 2) ** 2 * ddd,
    }


@lru_cache(maxsize=None)
def symbolic_block():
    """Полный 9×9 блок; нижний треугольник по чётности (−1)^{l_a+l_b}"""
    block = sp.zeros(9, 9)
    for (a, b), expr in _upper_entries().items():
        block[a, b] = expr
        if a != b:
            block[b, a] = (-1) ** (ANGULAR_MOMENTUM[a] + ANGULAR_MOMENTUM[b]) * expr
    return block


@lru_cache(maxsize=None)
def _angular_function(orbital_set, derivative):
    nb = ORBITAL_SETS[orbital_set]
    block = symbolic_block()[:nb, :nb]
    cosines = (_L, _M, _N)
    exprs = []
    for channel in SET_CHANNELS[orbital_set]:
        table = block.diff(_V[channel])
        for axis in derivative:
            table = table.diff(cosines[axis])
        exprs.extend(list(table))
    logger.debug(f"Скомпилирована угловая таблица {orbital_set}, производная {derivative}")
    return sp.lambdify(cosines, exprs, modules='numpy', cse=True)


def _evaluate(orbital_set, derivative, directions):
    nb = ORBITAL_SETS[orbital_set]
    nc = len(SET_CHANNELS[orbital_set])
    p = directions.shape[0]
    values = _angular_function(orbital_set, derivative)(directions[:, 0], directions[:, 1], directions[:, 2])
    stacked = np.stack([np.broadcast_to(np.asarray(v, dtype=float), (p,)) for v in values], axis=-1)
    return stacked.reshape(p, nc, nb, nb)


def angular_tables(directions, orbital_set='spd', order=0):
    """Угловые множители T_c(n) и их производные по компонентам n (как независимым)"""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    tables = {'T': _evaluate(orbital_set, (), directions)}
    if order >= 1:
        tables['dT'] = np.stack([_evaluate(orbital_set, (a,), directions) for a in range(3)], axis=2)
    if order >= 2:
        p, nc, nb, _ = tables['T'].shape
        d2 = np.empty((p, nc, 3, 3, nb, nb))
        for a in range(3):
            for b in range(a, 3):
                d2[:, :, a, b] = _evaluate(orbital_set, (a, b), directions)
                d2[:, :, b, a] = d2[:, :, a, b]
        tables['d2T'] = d2
    return tables


def slater_koster_block(integrals, direction, orbital_set='spd'):
    """Двухцентровый блок Σ_c V_c T_c(n) для единичного направления связи"""
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise ModelError("Нулевое направление связи")
    channels = SET_CHANNELS[orbital_set]
    if isinstance(integrals, dict):
        values = np.array([float(integrals.get(c, 0.0)) for c in channels])
    else:
        values = np.asarray(integrals, dtype=float)[:len(channels)]
    T = angular_tables((direction / norm)[None, :], orbital_set)['T'][0]
    return np.einsum('c,cab->ab', values, T)


def bond_blocks(radial, vectors, orbital_set, order=0):
    """Блоки B(ξ), ∂B/∂ξ_i, ∂²B/∂ξ_i∂ξ_j по цепному правилу.

    radial: (V, V′, V″) массивы формы (P, C) значений каналов и их производных по r.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    r = np.linalg.norm(vectors, axis=1)
    if np.any(r == 0.0):
        raise ModelError("Нулевая длина связи")
    n = vectors / r[:, None]
    tables = angular_tables(n, orbital_set, order)
    V = radial[0]
    T = tables['T']
    blocks = [np.einsum('pc,pcab->pab', V, T)]
    if order == 0:
        return blocks
    V1 = radial[1]
    dT = tables['dT']
    eye = np.eye(3)
    J = (eye[None, :, :] - n[:, :, None] * n[:, None, :]) / r[:, None, None]
    # dTJ[p, c, i] = Σ_a ∂_a T_c J_ai
    dTJ = np.einsum('pcaxy,pai->pcixy', dT, J)
    blocks.append(
        np.einsum('pc,pi,pcxy->pixy', V1, n, T) + np.einsum('pc,pcixy->pixy', V, dTJ)
    )
    if order == 1:
        return blocks
    V2 = radial[2]
    d2T = tables['d2T']
    K = -(
        eye[None, :, :, None] * n[:, None, None, :]
        + eye[None, :, None, :] * n[:, None, :, None]
        + eye[None, None, :, :] * n[:, :, None, None]
        - 3.0 * n[:, :, None, None] * n[:, None, :, None] * n[:, None, None, :]
    ) / (r ** 2)[:, None, None, None]
    hess = np.einsum('pc,pi,pj,pcxy->pijxy', V2, n, n, T)
    hess += np.einsum('pc,pij,pcxy->pijxy', V1, J, T)
    cross = np.einsum('pc,pi,pcjxy->pijxy', V1, n, dTJ)
    hess += cross + cross.transpose(0, 2, 1, 3, 4)
    hess += np.einsum('pc,pcabxy,pai,pbj->pijxy', V, d2T, J, J)
    hess += np.einsum('pc,pcaxy,paij->pijxy', V, dT, K)
    blocks.append(hess)
    return blocks
