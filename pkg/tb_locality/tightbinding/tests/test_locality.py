import math

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from tightbinding.builders import chain, cubic_cluster
from tightbinding.errors import LocalityError
from tightbinding.locality import (
    KIND_FORCE,
    KIND_GRADIENT,
    KIND_HESSIAN,
    KIND_MATRIX,
    DecayDataset,
    DecayFit,
    LocalitySystem,
    beta_sweep,
    collect_decay,
    compare_defect_prefactor,
    concatenate,
    default_window,
    fit_exponential,
    force_site_ratios,
    matrix_decay,
    select_sites,
)
from tightbinding.model import ToyModel
from tightbinding.sites import ROUTE_ANALYTIC, ROUTE_FD
from tightbinding.thermo import GrandPotentialFn
from tightbinding.verification import ab_model


def synthetic(prefactor=3.0, exponent=0.7, label=''):
    r = np.linspace(2.0, 12.0, 51)
    return DecayDataset(r, prefactor * np.exp(-exponent * r), KIND_GRADIENT, label=label)


def chain_system(n=16, beta=32.0, **kwargs):
    model = ab_model(ToyModel())
    return LocalitySystem(model, chain(n, 1.0, ('A', 'B')), GrandPotentialFn(beta, 0.0), **kwargs)


class DecayDatasetTests(SimpleTestCase):
    def test_exact_exponential_fit(self):
        fit = fit_exponential(synthetic(), window=(2.0, 12.0), bin_width=0.5)
        self.assertAlmostEqual(fit.exponent, 0.7)
        self.assertAlmostEqual(fit.prefactor, 3.0)
        self.assertAlmostEqual(fit.r_squared, 1.0)
        self.assertEqual(fit.n_bins, 21)

    def test_default_window_spans_data(self):
        fit = synthetic().with_fit().fit
        self.assertEqual(fit.window, (2.0, 12.0))
        self.assertAlmostEqual(fit.exponent, 0.7)

    def test_narrow_window_uses_finer_bins(self):
        r = np.array([2.0, math.sqrt(6.0), math.sqrt(8.0), math.sqrt(12.0)])
        dataset = DecayDataset(r, np.exp(-r), KIND_MATRIX, shell=0.5, default_window=(2.0, math.sqrt(12.0)))
        with self.assertLogs('tightbinding.locality', 'INFO'):
            fit = dataset.with_fit().fit
        self.assertEqual(fit.n_bins, 4)
        self.assertAlmostEqual(fit.exponent, 1.0)
        with self.assertRaisesMessage(LocalityError, 'нужно ≥ 4'):
            fit_exponential(dataset, bin_width=0.5)

    def test_too_few_bins(self):
        dataset = DecayDataset([1.0, 2.0, 3.0], [1.0, 0.5, 0.25], KIND_GRADIENT)
        with self.assertRaisesMessage(LocalityError, 'нужно ≥ 4'):
            fit_exponential(dataset, bin_width=0.1)

    def test_degenerate_window(self):
        with self.assertRaises(LocalityError):
            fit_exponential(synthetic(), window=(5.0, 5.0))

    def test_rejects_negative_and_mismatched_values(self):
        with self.assertRaises(LocalityError):
            DecayDataset([1.0, 2.0], [0.1, -0.1], KIND_GRADIENT)
        with self.assertRaises(LocalityError):
            DecayDataset([1.0, 2.0], [0.1], KIND_GRADIENT)

    def test_subset_and_concatenate(self):
        dataset = synthetic(label='a').with_fit()
        near = dataset.subset(dataset.distances < 5.0, label='near')
        self.assertIsNone(near.fit)
        self.assertEqual(near.label, 'near')
        self.assertTrue(np.all(near.distances < 5.0))
        joined = concatenate([near, dataset.subset(dataset.distances >= 5.0)], label='all')
        self.assertEqual(len(joined), len(dataset))
        self.assertEqual(joined.label, 'all')
        self.assertTrue(np.array_equal(np.sort(joined.distances), dataset.distances))
        with self.assertRaises(LocalityError):
            concatenate([dataset.subset(np.zeros(len(dataset), dtype=bool))])

    def test_rows(self):
        row = next(synthetic().rows())
        self.assertEqual(row[0], 2.0)
        self.assertEqual(row[2:], (KIND_GRADIENT, False))


class CollectDecayTests(SimpleTestCase):
    def test_gradient_decay_on_insulating_chain(self):
        dataset = collect_decay(chain_system(), 0)
        self.assertEqual(dataset.kind, KIND_GRADIENT)
        self.assertEqual(len(dataset), 15)
        self.assertTrue(np.array_equal(dataset.ms, np.arange(1, 16)))
        fit = fit_exponential(dataset, window=(2.0, 12.0), bin_width=2.0)
        self.assertGreater(fit.exponent, 0.0)

    def test_hessian_dataset_covers_upper_triangle(self):
        n = 8
        dataset = collect_decay(chain_system(n), 0, order=2)
        self.assertEqual(dataset.kind, KIND_HESSIAN)
        self.assertEqual(len(dataset), n * (n + 1) // 2)
        self.assertTrue(np.all(dataset.ms <= dataset.m2s))
        self.assertTrue(np.allclose(dataset.distances, dataset.ms + dataset.m2s))

    def test_force_mode(self):
        dataset = collect_decay(chain_system(8), [0, 7], force_mode=True)
        self.assertEqual(dataset.kind, KIND_FORCE)
        self.assertEqual(len(dataset), 14)
        self.assertEqual(set(dataset.ells.tolist()), {0, 7})

    def test_unknown_order(self):
        with self.assertRaises(LocalityError):
            collect_decay(chain_system(4), 0, order=3)

    def test_max_distance(self):
        dataset = collect_decay(chain_system(8), 0, max_distance=3.0)
        self.assertEqual(len(dataset), 3)

    def test_matrix_decay(self):
        dataset = matrix_decay(chain_system(), 0)
        self.assertEqual(dataset.kind, KIND_MATRIX)
        fit = fit_exponential(dataset, window=(2.0, 12.0))
        self.assertGreater(fit.exponent, 0.0)


class SelectSitesTests(SimpleTestCase):
    def test_selections(self):
        system = chain_system(6, center=(0.0, 0.0, 0.0), near_radius=1.5)
        self.assertEqual(select_sites(system, 'all'), list(range(6)))
        self.assertEqual(select_sites(system, '3'), [3])
        self.assertEqual(select_sites(system, 'defect-site'), [0])
        self.assertEqual(select_sites(system, 'farthest-from-defect'), [5])
        self.assertEqual(system.near_flags().tolist(), [True, True, False, False, False, False])

    def test_bad_selections(self):
        system = chain_system(6)
        with self.assertRaises(LocalityError):
            select_sites(system, 'middle')
        with self.assertRaises(LocalityError):
            select_sites(system, [99])
        with self.assertRaises(LocalityError):
            select_sites(system, 'farthest-from-defect')


class ComparisonTests(SimpleTestCase):
    def test_defect_prefactor(self):
        comparison = compare_defect_prefactor(synthetic(1.0), synthetic(1.1), synthetic(5.0))
        self.assertAlmostEqual(comparison.exponent_deviation, 0.0)
        self.assertAlmostEqual(comparison.prefactor_ratio_far, 1.1)
        self.assertAlmostEqual(comparison.prefactor_ratio_near, 5.0)
        self.assertTrue(comparison.near_exceeds)
        self.assertEqual(comparison.window, (2.0, 12.0))

    def test_disjoint_windows(self):
        far = synthetic().subset(synthetic().distances > 8.0).with_fit()
        near = synthetic().subset(synthetic().distances < 6.0).with_fit()
        with self.assertRaises(LocalityError):
            compare_defect_prefactor(near, far, near)

    def test_beta_sweep(self):
        rows = beta_sweep(chain_system(beta=8.0), [4.0, 16.0], window=(2.0, 12.0))
        self.assertEqual([row.beta for row in rows], [4.0, 16.0])
        self.assertTrue(all(row.exponent > 0.0 for row in rows))
        with self.assertRaises(LocalityError):
            beta_sweep(chain_system(4), [4.0], quantity='entropy')

    def test_force_site_ratios(self):
        fits = {
            2: DecayFit(0.0, 0.5, 1.0, (2.0, 12.0), 10),
            1: DecayFit(0.0, 0.8, 1.0, (2.0, 12.0), 10),
        }
        force = DecayFit(math.log(2.0), 1.0, 1.0, (2.0, 12.0), 10)
        ratios = force_site_ratios(fits, force)
        self.assertEqual([r.order for r in ratios], [1, 2])
        self.assertAlmostEqual(ratios[0].ratio, 1.25)
        self.assertAlmostEqual(ratios[1].ratio, 2.0)


class DefaultWindowTests(SimpleTestCase):
    def test_periodic_cell_takes_upper_end_from_data(self):
        config = cubic_cluster(4, 1.0, ('A', 'B'), periodic=True)
        self.assertTrue(np.allclose(default_window(config, 1, config.distance_matrix()[0]), (2.0, math.sqrt(12.0))))

    def test_cluster_window_stays_inside_data(self):
        config = chain(16, 1.0)
        self.assertTrue(np.allclose(default_window(config, 1, np.arange(1.0, 16.0)), (2.0, 6.75)))
        self.assertTrue(np.allclose(default_window(config, 2, np.arange(1.0, 11.0)), (2.0, 10.0)))

    def test_matrix_decay_fits_on_periodic_cell(self):
        model = ab_model(ToyModel())
        system = LocalitySystem(model, cubic_cluster(4, 1.0, ('A', 'B'), periodic=True), GrandPotentialFn(math.inf, 0.0))
        dataset = matrix_decay(system, 0)
        self.assertTrue(np.allclose(dataset.default_window, (2.0, math.sqrt(12.0))))
        fit = fit_exponential(dataset)
        self.assertEqual(fit.window, dataset.default_window)
        self.assertGreaterEqual(fit.n_bins, 4)


class LocalitySystemDefaultsTests(SimpleTestCase):
    def test_analytic_route_and_step_ladder(self):
        system = chain_system(4)
        self.assertEqual(system.route, ROUTE_ANALYTIC)
        self.assertEqual(system.fd_steps, tuple(settings.TB_SETTINGS['FD_STEPS']))
        self.assertEqual(system.with_beta(8.0).fd_steps, system.fd_steps)

    def test_fd_route_matches_analytic_gradient(self):
        analytic = chain_system(8, beta=16.0)
        fd = chain_system(8, beta=16.0, route=ROUTE_FD)
        expected = analytic.gradient(0)
        self.assertLess(np.abs(fd.gradient(0) - expected).max() / np.abs(expected).max(), 1e-5)


def uniform_chain_system(beta, n=60, onsite=0.0):
    model = ToyModel(onsite_energies={'A': -onsite, 'B': onsite})
    species = ('A', 'B') if onsite else 'A'
    return LocalitySystem(model, chain(n, 1.0, species), GrandPotentialFn(beta, 0.0))


class DecayTrendTests(SimpleTestCase):
    """Показатель затухания против щели и температуры на цепочке из 60 узлов"""

    def test_exponent_rises_with_gap(self):
        exponents = []
        for gap in (0.5, 1.0, 2.0):
            dataset = matrix_decay(uniform_chain_system(math.inf, onsite=gap / 2), 30)
            exponents.append(fit_exponential(dataset, window=(2.0, 16.0), bin_width=2.0).exponent)
        self.assertGreater(exponents[0], 0.0)
        self.assertTrue(all(a < b for a, b in zip(exponents, exponents[1:])), exponents)

    def test_metal_exponent_falls_with_beta(self):
        betas = [4.0, 8.0, 16.0, 32.0]
        rows = beta_sweep(uniform_chain_system(4.0), betas, 'site-energy', 30, window=(2.0, 25.0))
        self.assertEqual([row.beta for row in rows], betas)
        exponents = [row.exponent for row in rows]
        self.assertTrue(all(a > b for a, b in zip(exponents, exponents[1:])), exponents)

    def test_insulator_exponent_saturates_with_beta(self):
        rows = beta_sweep(uniform_chain_system(8.0, onsite=1.0), [8.0, 16.0, 32.0], 'site-energy', 30,
                          window=(2.0, 20.0))
        exponents = [row.exponent for row in rows]
        self.assertGreater(min(exponents), 0.0)
        self.assertLess(max(exponents) / min(exponents) - 1.0, 0.15)
