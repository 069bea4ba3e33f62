import math

import numpy as np
from django.test import SimpleTestCase

from tightbinding.builders import chain, ring
from tightbinding.errors import ContourError
from tightbinding.model import ToyModel, assemble
from tightbinding.sites import site_energies_contour, site_energies_spectral
from tightbinding.spectral import solve
from tightbinding.thermo import (
    CirclePiece,
    GrandPotentialFn,
    PolygonPiece,
    audit_contour,
    build_contour,
    contour_quadrature,
    divided_differences,
    eval_g,
    g_real,
    node_margins,
    sheet_index,
    taylor_g,
    track_branch,
    winding_numbers,
)


def gapped_spectrum(n=10):
    pair = assemble(ToyModel(onsite_energies={'A': -1.0, 'B': 1.0}), chain(n, 1.0, ('A', 'B')))
    return pair, solve(pair)


class GrandPotentialTests(SimpleTestCase):
    def test_beta_must_be_positive(self):
        for beta in (0.0, -1.0):
            with self.assertRaises(ContourError):
                GrandPotentialFn(beta, 0.0)

    def test_zero_temperature_limit(self):
        fn = GrandPotentialFn(math.inf, 0.0)
        self.assertTrue(np.array_equal(g_real(fn, [-1.0, 1.0]), [-2.0, 0.0]))
        hot = GrandPotentialFn(200.0, 0.0)
        self.assertAlmostEqual(float(hot.real(-1.0)), -2.0, places=9)
        self.assertAlmostEqual(float(hot.real(1.0)), 0.0, places=9)

    def test_real_derivatives(self):
        fn = GrandPotentialFn(4.0, 0.1)
        x, h = 0.3, 1e-5
        g, g1, g2 = g_real(fn, np.array([x]), order=2)
        self.assertAlmostEqual(float(g1[0]), float(2.0 * fn.occupation(x)))
        fd1 = (fn.real(x + h) - fn.real(x - h)) / (2 * h)
        fd2 = (g_real(fn, x + h, 1)[1] - g_real(fn, x - h, 1)[1]) / (2 * h)
        self.assertAlmostEqual(float(fd1), float(g1[0]), places=8)
        self.assertAlmostEqual(float(fd2), float(g2[0]), places=7)

    def test_continuation_matches_real_axis(self):
        fn = GrandPotentialFn(4.0, 0.0)
        for x in (-0.7, 0.3):
            self.assertAlmostEqual(complex(fn(x + 0j)).real, float(fn.real(x)))
            self.assertAlmostEqual(complex(fn(x + 0j)).imag, 0.0)

    def test_conjugate_symmetry(self):
        fn = GrandPotentialFn(4.0, 0.0)
        z = 0.2 + 0.3j
        self.assertAlmostEqual(fn(np.conj(z)), np.conj(fn(z)))

    def test_branch_cut_is_rejected(self):
        fn = GrandPotentialFn(4.0, 0.5)
        with self.assertRaises(ContourError):
            eval_g(fn, 0.5 + 1j * (math.pi / 4.0 + 0.1))

    def test_taylor_polynomial_near_mu(self):
        fn = GrandPotentialFn(4.0, 0.2)
        z = 0.2 + 1e-3 * (1 + 1j)
        self.assertLess(abs(taylor_g(fn, z, 2) - fn(z)), 1e-9)
        self.assertAlmostEqual(complex(taylor_g(fn, fn.mu, 0)).real, -(2.0 / 4.0) * math.log(2.0))

    def test_principal_sheet_on_right_half_plane(self):
        fn = GrandPotentialFn(4.0, 0.0)
        self.assertEqual(sheet_index(fn, 1.0 + 5j), 0)

    def test_branch_tracking_on_circle(self):
        fn = GrandPotentialFn(4.0, 0.0)
        track = track_branch(fn, CirclePiece(-2.0 + 0j, 1.5).boundary())
        self.assertLess(track.max_deviation, 1e-9)


class ContourTests(SimpleTestCase):
    def test_gapped_finite_temperature(self):
        pair, spec = gapped_spectrum()
        fn = GrandPotentialFn(32.0, 0.0)
        contour = build_contour(spec, fn)
        self.assertEqual(contour.mode, 'finite-T')
        self.assertEqual(len(contour.pieces), 2)
        self.assertGreaterEqual(contour.margin_spectrum, math.pi / 64.0)
        self.assertEqual(len(contour.encloses), pair.n_orbitals)
        audit = audit_contour(contour)
        self.assertTrue(audit.passed, audit.issues)
        self.assertTrue(np.allclose(audit.winding_enclosed, 1.0, atol=1e-6))

    def test_zero_temperature_encloses_occupied_levels(self):
        _, spec = gapped_spectrum()
        contour = build_contour(spec, GrandPotentialFn(math.inf, 0.0), mode='zero-T')
        self.assertEqual(contour.mode, 'zero-T')
        self.assertEqual(contour.encloses, tuple(range(5)))
        self.assertTrue(audit_contour(contour).passed)

    def test_zero_temperature_needs_gap(self):
        with self.assertRaises(ContourError):
            build_contour(np.array([-1.0, 0.0, 1.0]), GrandPotentialFn(math.inf, 0.0), mode='zero-T')

    def test_unknown_mode_and_clearance(self):
        fn = GrandPotentialFn(4.0, 0.0)
        with self.assertRaises(ContourError):
            build_contour(np.array([-1.0, 1.0]), fn, mode='elliptic')
        with self.assertRaises(ContourError):
            build_contour(np.array([-1.0, 1.0]), fn, clearance=4.0)

    def test_metal_uses_waist_polygon(self):
        pair = assemble(ToyModel(), ring(10, 1.0))
        fn = GrandPotentialFn(2.0, 0.0)
        spec = solve(pair, fn.mu)
        contour = build_contour(spec, fn)
        self.assertIsInstance(contour.pieces[0], PolygonPiece)
        self.assertTrue(audit_contour(contour).passed)
        via_contour = site_energies_contour(pair, contour, fn)
        spectral = site_energies_spectral(spec, fn)
        self.assertLess(np.abs(via_contour.values - spectral.values).max(), 1e-7)

    def test_mu_on_spectrum_splits_contour(self):
        fn = GrandPotentialFn(1.0, 0.0)
        contour = build_contour(np.array([-5.0, 0.0, 5.0]), fn)
        self.assertEqual(contour.mode, 'mu-split')
        self.assertEqual(sum(p.taylor_order is not None for p in contour.pieces), 1)
        self.assertEqual(len(contour.subcontour(taylor=False).pieces), 2)

    def test_node_margins(self):
        _, spec = gapped_spectrum()
        contour = build_contour(spec, GrandPotentialFn(32.0, 0.0))
        spectrum, singular = node_margins(contour)
        self.assertAlmostEqual(spectrum.min(), contour.margin_spectrum)
        self.assertAlmostEqual(singular.min(), contour.margin_singularity)

    def test_winding_numbers(self):
        _, spec = gapped_spectrum()
        contour = build_contour(spec, GrandPotentialFn(32.0, 0.0))
        self.assertTrue(np.allclose(winding_numbers(contour, [50.0 + 0j, 0.0 + 0j]), [0.0, 0.0], atol=1e-6))


class QuadratureTests(SimpleTestCase):
    def test_resolution_of_identity(self):
        pair, spec = gapped_spectrum()
        contour = build_contour(spec, GrandPotentialFn(32.0, 0.0))
        n = pair.n_orbitals
        result = contour_quadrature(contour, lambda z: np.linalg.inv(pair.H - z * np.eye(n)))
        self.assertTrue(result.converged)
        self.assertLess(np.abs(result.value - np.eye(n)).max(), 1e-8)

    def test_budget_exhaustion(self):
        pair, spec = gapped_spectrum()
        contour = build_contour(spec, GrandPotentialFn(32.0, 0.0))
        with self.assertRaises(ContourError):
            contour_quadrature(contour, lambda z: np.linalg.inv(pair.H - z * np.eye(pair.n_orbitals)),
                               tol=1e-30, max_nodes=contour.n_nodes * 2)

    def test_divided_differences_on_degenerate_levels(self):
        lam = np.array([0.0, 1.0, 1.0])
        values, derivatives = lam ** 2, 2 * lam
        F = divided_differences(lam, values, derivatives)
        self.assertAlmostEqual(F[0, 1], 1.0)
        self.assertAlmostEqual(F[1, 2], 2.0)
        self.assertAlmostEqual(F[0, 0], 0.0)
