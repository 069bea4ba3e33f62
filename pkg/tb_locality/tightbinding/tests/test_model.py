import math

import numpy as np
from django.test import SimpleTestCase

from tightbinding.builders import chain
from tightbinding.errors import ConfigurationError, ModelError
from tightbinding.geometry import Configuration
from tightbinding.model import (
    DerivativeEngine,
    ToyModel,
    assemble,
    check_kernel_decay,
    check_kernel_symmetry,
    model_derivative,
)
from tightbinding.verification import _AsymmetricToyModel, perturbed_cluster


def ab_toy():
    return ToyModel(onsite_energies={'A': -1.0, 'B': 1.0})


class ToyModelTests(SimpleTestCase):
    def test_from_dict(self):
        model = ToyModel.from_dict({'onsite': {'A': 0.5}, 'kappa': 2.0})
        self.assertEqual(model.onsite_energies, {'A': 0.5})
        self.assertEqual(model.kappa, 2.0)
        self.assertAlmostEqual(model.t0, -math.e)

    def test_from_dict_rejects_unknown_and_missing(self):
        with self.assertRaises(ConfigurationError):
            ToyModel.from_dict({'onsite': {'A': 0.0}, 'spin': 1})
        with self.assertRaises(ConfigurationError):
            ToyModel.from_dict({'t0': -1.0})

    def test_unknown_species(self):
        with self.assertRaises(ModelError):
            ToyModel().n_orbitals('Z')

    def test_hopping_cutoff(self):
        blocks = ToyModel().hopping('A', 'A', [[1.0, 0, 0], [1.6, 0, 0]])
        self.assertAlmostEqual(blocks[0][0, 0, 0], -1.0)
        self.assertEqual(blocks[0][1, 0, 0], 0.0)


class AssembleTests(SimpleTestCase):
    def test_open_chain(self):
        pair = assemble(ab_toy(), chain(3, 1.0, ('A', 'B')))
        self.assertTrue(np.allclose(np.diag(pair.H), [-1.0, 1.0, -1.0]))
        self.assertAlmostEqual(pair.H[0, 1], -1.0)
        self.assertEqual(pair.H[0, 2], 0.0)
        self.assertTrue(np.array_equal(pair.M, np.eye(3)))
        self.assertTrue(np.array_equal(pair.H, pair.H.T))
        self.assertEqual(list(pair.offsets), [0, 1, 2, 3])

    def test_rejects_inadmissible_configuration(self):
        config = Configuration(('A', 'A'), [[0, 0, 0], [0.3, 0, 0]])
        with self.assertRaises(ConfigurationError):
            assemble(ToyModel(), config)

    def test_rejects_unknown_species(self):
        with self.assertRaises(ModelError):
            assemble(ToyModel(), chain(2, 1.0, ('A', 'Q')))

    def test_bloch_pair_sums_images(self):
        config = chain(2, 1.1, periodic=True, alternation=0.1)
        model = ToyModel()
        t1, t2 = (model.t0 * math.exp(-r) for r in (1.0, 1.2))
        gamma = assemble(model, config, kpoint=(0.0, 0.0, 0.0))
        self.assertAlmostEqual(gamma.H[0, 1].real, t1 + t2)
        edge = assemble(model, config, kpoint=(0.5, 0.0, 0.0))
        self.assertAlmostEqual(abs(edge.H[0, 1]), abs(t1 - t2))
        self.assertTrue(np.allclose(edge.H, edge.H.conj().T))


class KernelAuditTests(SimpleTestCase):
    def test_symmetric_kernel_passes(self):
        audit = check_kernel_symmetry(ab_toy())
        self.assertTrue(audit.passed)
        self.assertLess(audit.measured, 1e-12)

    def test_asymmetric_kernel_fails(self):
        self.assertFalse(check_kernel_symmetry(_AsymmetricToyModel(onsite_energies={'A': 0.0, 'B': 0.0})).passed)

    def test_decay_constants_bound_kernel(self):
        for order in (0, 1, 2):
            self.assertTrue(check_kernel_decay(ab_toy(), order=order).passed)


class DerivativeEngineTests(SimpleTestCase):
    def setUp(self):
        self.model = ab_toy()
        self.config = perturbed_cluster(1)
        self.engine = DerivativeEngine(self.model, self.config, order=2)

    def _fd(self, site, axis, h=1e-6):
        plus = assemble(self.model, self.config.displaced(site, axis, h)).H
        minus = assemble(self.model, self.config.displaced(site, axis, -h)).H
        return (plus - minus) / (2 * h)

    def test_first_matches_finite_differences(self):
        for site, axis in ((0, 0), (3, 1), (7, 2)):
            dH = self.engine.first(site, axis).dH.toarray()
            self.assertLess(np.abs(dH - self._fd(site, axis)).max(), 1e-7)

    def test_contractions_match_sparse_matrices(self):
        K = np.random.default_rng(2).normal(size=(self.config.n_sites,) * 2)
        first = self.engine.contract_first(K)
        second = self.engine.contract_second(K)
        for m, a in ((0, 0), (4, 1)):
            self.assertAlmostEqual(first[m, a], np.sum(K * self.engine.first(m, a).dH.toarray()))
            for n, b in ((0, 0), (1, 2), (4, 1)):
                expected = np.sum(K * self.engine.second((m, a), (n, b)).dH.toarray())
                self.assertAlmostEqual(second[m, a, n, b], expected)

    def test_translation_sum_rule(self):
        total = sum(self.engine.first(m, 0).dH.toarray() for m in range(self.config.n_sites))
        self.assertLess(np.abs(total).max(), 1e-12)

    def test_model_derivative_keys_and_orders(self):
        result = model_derivative(self.model, self.config, 1, [(0, 1)], engine=self.engine)
        self.assertEqual(list(result), [(0, 1)])
        with self.assertRaises(ModelError):
            model_derivative(self.model, self.config, 3, [(0, 0)])
