import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from tightbinding.errors import ModelError
from tightbinding.nrl import load_nrl_params
from tightbinding.slater_koster import CHANNELS, bond_blocks, slater_koster_block


class SlaterKosterBlockTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(11)
        self.integrals = dict(zip(CHANNELS, rng.normal(size=len(CHANNELS))))
        self.direction = rng.normal(size=3)

    def test_p_block_along_z(self):
        integrals = {'ss_sigma': 1.0, 'sp_sigma': 2.0, 'pp_sigma': 3.0, 'pp_pi': 4.0}
        block = slater_koster_block(integrals, (0.0, 0.0, 2.0), 'sp')
        self.assertAlmostEqual(block[0, 0], 1.0)
        self.assertAlmostEqual(block[0, 3], 2.0)
        self.assertAlmostEqual(block[3, 0], -2.0)
        self.assertAlmostEqual(block[3, 3], 3.0)
        self.assertAlmostEqual(block[1, 1], 4.0)
        self.assertAlmostEqual(block[0, 1], 0.0)

    def test_reversed_bond_gives_transpose(self):
        forward = slater_koster_block(self.integrals, self.direction)
        backward = slater_koster_block(self.integrals, -self.direction)
        self.assertTrue(np.allclose(backward, forward.T, atol=1e-12))

    def test_equal_integrals_give_identity_blocks(self):
        integrals = {'pp_sigma': 1.0, 'pp_pi': 1.0, 'dd_sigma': 1.0, 'dd_pi': 1.0, 'dd_delta': 1.0}
        block = slater_koster_block(integrals, self.direction)
        self.assertTrue(np.allclose(block[1:4, 1:4], np.eye(3), atol=1e-12))
        self.assertTrue(np.allclose(block[4:, 4:], np.eye(5), atol=1e-12))

    def test_zero_direction(self):
        with self.assertRaises(ModelError):
            slater_koster_block(self.integrals, (0.0, 0.0, 0.0))


class BondBlockDerivativeTests(SimpleTestCase):
    """Цепное правило в bond_blocks против центральных разностей"""

    def setUp(self):
        self.model = load_nrl_params(settings.TB_SETTINGS['PARAMS_DIR'] / 'nrl_si.json')
        self.vector = np.array([1.3, 0.7, -1.1])

    def _blocks(self, vector, order):
        return self.model.hopping('Si', 'Si', vector[None, :], order)

    def test_gradient(self):
        h = 1e-5
        grad = self._blocks(self.vector, 1)[1][0]
        scale = np.abs(grad).max()
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            fd = (self._blocks(self.vector + step, 0)[0][0] - self._blocks(self.vector - step, 0)[0][0]) / (2 * h)
            self.assertLess(np.abs(fd - grad[axis]).max() / scale, 1e-6)

    def test_hessian(self):
        h = 1e-5
        hess = self._blocks(self.vector, 2)[2][0]
        scale = np.abs(hess).max()
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            fd = (self._blocks(self.vector + step, 1)[1][0] - self._blocks(self.vector - step, 1)[1][0]) / (2 * h)
            self.assertLess(np.abs(fd - hess[:, axis]).max() / scale, 1e-5)

    def test_zero_length_bond(self):
        with self.assertRaises(ModelError):
            bond_blocks([np.ones((1, 1))], np.zeros((1, 3)), 's')
