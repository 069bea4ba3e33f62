import numpy as np
from django.test import SimpleTestCase
from scipy import linalg

from tightbinding.builders import chain
from tightbinding.defects import (
    DefectSpec,
    build_defect,
    correction_decay,
    decompose_hamiltonian,
    decompose_system,
    defect_system,
    dense_resolvent_action,
    gap_level,
    offdiagonal_decay_audit,
    tweak_interstitial,
    woodbury_resolvent,
)
from tightbinding.errors import ConfigurationError, DefectError
from tightbinding.experiments import sample_z
from tightbinding.locality import KIND_CORRECTION, KIND_RESOLVENT
from tightbinding.model import HamiltonianPair, ToyModel, assemble
from tightbinding.spectral import solve


def diagonal_spectrum(values):
    return solve(HamiltonianPair(np.diag(values), np.eye(len(values)), np.arange(len(values) + 1)))


class DefectSpecTests(SimpleTestCase):
    def test_validation(self):
        cases = [
            {'kind': 'antisite', 'site': 0},
            {'kind': 'interstitial'},
            {'kind': 'vacancy'},
            {'kind': 'displacement', 'site': 1},
            {'kind': 'vacancy', 'site': 1, 'r_def': -1.0},
        ]
        for case in cases:
            with self.subTest(case=case), self.assertRaises(ConfigurationError):
                DefectSpec(**case)

    def test_from_dict(self):
        spec = DefectSpec.from_dict({'kind': 'interstitial', 'position': [1, 2, 3], 'species': 'B'})
        self.assertEqual(spec.position, (1.0, 2.0, 3.0))
        self.assertEqual(DefectSpec.from_dict(spec.to_dict()), spec)
        with self.assertRaises(ConfigurationError):
            DefectSpec.from_dict({'kind': 'vacancy', 'site': 0, 'charge': 1})
        with self.assertRaises(ConfigurationError):
            DefectSpec.from_dict({'site': 0})


class BuildDefectTests(SimpleTestCase):
    def setUp(self):
        self.reference = chain(10, 1.0)

    def test_vacancy(self):
        config = build_defect(self.reference, DefectSpec('vacancy', site=4))
        self.assertEqual(config.n_sites, 9)
        with self.assertRaises(DefectError):
            build_defect(self.reference, DefectSpec('vacancy', site=42))

    def test_interstitial(self):
        config = build_defect(self.reference, DefectSpec('interstitial', position=(4.5, 0.8, 0.0)))
        self.assertEqual(config.n_sites, 11)
        self.assertEqual(config.species[-1], 'A')
        with self.assertRaisesMessage(DefectError, 'Недопустимое размещение'):
            build_defect(self.reference, DefectSpec('interstitial', position=(0.1, 0.0, 0.0)))

    def test_displacement_within_radius(self):
        spec = DefectSpec('displacement', site=3, displacement=(0.1, 0.0, 0.0), r_def=0.2)
        self.assertAlmostEqual(build_defect(self.reference, spec).positions[3, 0], 3.1)
        with self.assertRaises(DefectError):
            build_defect(self.reference, DefectSpec('displacement', site=3, displacement=(0.3, 0, 0), r_def=0.2))


class DecompositionTests(SimpleTestCase):
    def setUp(self):
        self.system = defect_system(ToyModel(), chain(10, 1.0), DefectSpec('vacancy', site=4))

    def test_vacancy_has_rank_two_core(self):
        decomposition = decompose_system(self.system, 1e-8)
        self.assertEqual(decomposition.rank, 2)
        self.assertEqual(decomposition.R_delta, 1.0)
        self.assertLess(decomposition.residual, 1e-12)
        self.assertTrue(np.allclose(decomposition.P2, self.system.H_def - self.system.H_ref))
        self.assertEqual(decomposition.summary()['rank'], 2)

    def test_greedy_radius_on_decaying_difference(self):
        r = np.arange(5, dtype=float)
        decomposition = decompose_hamiltonian(np.diag(np.exp(-r)), np.zeros((5, 5)), 0.1, site_distances=r)
        self.assertEqual(decomposition.R_delta, 2.0)
        self.assertEqual(decomposition.rank, 3)
        self.assertLessEqual(decomposition.p1_norm, 0.1)
        self.assertTrue(np.array_equal(decomposition.support, [0, 1, 2]))
        self.assertLess(decomposition.residual, 1e-12)

    def test_unreachable_budget(self):
        with self.assertRaisesMessage(DefectError, 'недостижим'):
            decompose_system(self.system, 1e-8, max_radius=0.5)

    def test_vacancy_row_is_empty(self):
        self.assertTrue(np.array_equal(self.system.H_def[4], np.zeros(10)))

    def test_correction_decay(self):
        decomposition = decompose_system(self.system, 1e-8)
        dataset = correction_decay(self.system, decomposition, 0.3j)
        self.assertEqual(dataset.kind, KIND_CORRECTION)
        self.assertEqual(len(dataset), 100)


class WoodburyTests(SimpleTestCase):
    def test_matches_direct_solve(self):
        rng = np.random.default_rng(7)
        A = rng.normal(size=(6, 6))
        H = 0.5 * (A + A.T)
        U = rng.normal(size=(6, 2))
        V = U.T.copy()
        z = 0.2 + 0.5j
        result = woodbury_resolvent(dense_resolvent_action(H), U, V, z, np.eye(6))
        direct = linalg.inv(H + U @ V - z * np.eye(6))
        self.assertLess(np.abs(result.columns - direct).max(), 1e-10)

    def test_rank_zero(self):
        H = np.diag([1.0, 2.0, 3.0])
        result = woodbury_resolvent(dense_resolvent_action(H), np.zeros((3, 0)), np.zeros((0, 3)), 0.5j, np.eye(3))
        self.assertTrue(np.allclose(result.columns, np.diag(1.0 / (np.diag(H) - 0.5j))))
        self.assertFalse(result.correction.any())

    def test_singular_capacitance(self):
        U = np.array([[1.0], [0.0]])
        V = np.array([[1.0, 0.0]])
        with self.assertRaisesMessage(DefectError, 'вырождена'):
            woodbury_resolvent(dense_resolvent_action(np.zeros((2, 2))), U, V, 1.0, np.eye(2))


class ResolventAuditTests(SimpleTestCase):
    def setUp(self):
        self.config = chain(16, 1.0, ('A', 'B'))
        pair = assemble(ToyModel(onsite_energies={'A': -1.0, 'B': 1.0}), self.config)
        self.resolvent = linalg.inv(pair.H)
        self.distance = float(np.min(np.abs(linalg.eigvalsh(pair.H))))

    def test_decay_audit(self):
        audit = offdiagonal_decay_audit(self.resolvent, self.config, 0.0, self.distance, window=(2.0, 12.0))
        self.assertEqual(audit.dataset.kind, KIND_RESOLVENT)
        self.assertGreater(audit.dataset.fit.exponent, 0.0)
        self.assertAlmostEqual(audit.bound_intercept, np.log(2.0 / self.distance))
        self.assertTrue(audit.passed)

    def test_needs_several_distances(self):
        with self.assertRaises(DefectError):
            offdiagonal_decay_audit(np.eye(3), chain(3, 1.0), 0.0, 1.0)


class GapLevelTests(SimpleTestCase):
    def test_level_inside_reference_gap(self):
        reference = diagonal_spectrum([-2.0, -1.0, 1.0, 2.0])
        self.assertAlmostEqual(gap_level(diagonal_spectrum([-2.0, -1.0, 0.2, 1.0, 2.0]), reference, 0.0), 0.2)
        self.assertIsNone(gap_level(diagonal_spectrum([-2.0, -1.0, 1.0, 2.0]), reference, 0.0))
        with self.assertRaises(DefectError):
            gap_level(reference, reference, 5.0)

    def test_tweak_needs_interstitial(self):
        with self.assertRaises(DefectError):
            tweak_interstitial(ToyModel(), chain(4, 1.0), DefectSpec('vacancy', site=0), 0.0, (0, 1, 0), (0.0, 1.0))


class InterstitialTweakTests(SimpleTestCase):
    """Междоузлие X над узлом A цепочки: уровень в щели подводится к μ подъёмом по y"""

    def setUp(self):
        self.model = ToyModel(onsite_energies={'A': -1.0, 'B': 1.0, 'X': -0.25})
        self.reference = chain(40, 1.0, ('A', 'B'))
        self.spec = DefectSpec('interstitial', position=(20.0, 1.3, 0.0), species='X')

    def test_level_is_moved_next_to_mu(self):
        result = tweak_interstitial(self.model, self.reference, self.spec, 0.0, (0, 1, 0), (-0.14, 0.19), target=5e-3)
        self.assertLess(abs(result.level - 5e-3), 1e-4)
        self.assertTrue(1e-3 <= result.distance <= 1e-2)
        self.assertAlmostEqual(result.spec.position[1], 1.3 + result.offset)
        self.assertTrue(np.allclose(result.config.positions[-1], result.spec.position))
        defective = solve(assemble(self.model, result.config))
        reference = solve(assemble(self.model, self.reference))
        self.assertAlmostEqual(gap_level(defective, reference, 0.0), result.level)

    def test_level_moves_with_height(self):
        reference = solve(assemble(self.model, self.reference))
        levels = []
        for height in (1.16, 1.49):
            config = build_defect(self.reference, DefectSpec('interstitial', position=(20.0, height, 0.0), species='X'))
            levels.append(gap_level(solve(assemble(self.model, config)), reference, 0.0))
        self.assertGreater(levels[0], 5e-3)
        self.assertLess(levels[1], 5e-3)

    def test_no_crossing_in_bounds(self):
        with self.assertRaisesMessage(DefectError, 'не пересекает'):
            tweak_interstitial(self.model, self.reference, self.spec, 0.0, (0, 1, 0), (0.1, 0.19), target=0.5)


class WoodburyAccuracyTests(SimpleTestCase):
    def test_localized_update_at_random_points(self):
        n, center = 150, 75
        config = chain(n, 1.0, ('A', 'B'))
        H_ref = assemble(ToyModel(onsite_energies={'A': -1.0, 'B': 1.0}), config).H
        rng = np.random.default_rng(11)
        block = rng.normal(scale=0.5, size=(6, 6))
        H_def = H_ref.copy()
        H_def[center - 3:center + 3, center - 3:center + 3] += 0.5 * (block + block.T)
        distances = np.abs(config.positions[:, 0] - config.positions[center, 0])
        decomposition = decompose_hamiltonian(H_def, H_ref, 1e-8, site_distances=distances)
        self.assertLessEqual(decomposition.rank, 10)
        ref_action = dense_resolvent_action(H_ref + decomposition.P1.toarray())
        eigenvalues = linalg.eigvalsh(H_def)
        points = sample_z(eigenvalues, 20, seed=3)
        self.assertEqual(len(points), 20)
        for z in points:
            with self.subTest(z=z):
                self.assertGreaterEqual(np.min(np.abs(eigenvalues - z)), 1e-3)
                result = woodbury_resolvent(ref_action, decomposition.U, decomposition.V, z, np.eye(n))
                direct = linalg.inv(H_def - z * np.eye(n))
                self.assertLess(np.abs(result.columns - direct).max(), 1e-10)
