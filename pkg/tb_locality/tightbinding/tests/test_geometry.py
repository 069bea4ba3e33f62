import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from tightbinding.builders import chain
from tightbinding.errors import ConfigurationError, GeometryError
from tightbinding.geometry import (
    Configuration,
    DisplacementField,
    build_neighbor_table,
    check_admissible,
    load_configuration,
    read_json,
    seminorm_l2_upsilon,
)


class ConfigurationTests(SimpleTestCase):
    def test_species_and_positions_must_match(self):
        with self.assertRaises(GeometryError):
            Configuration(('A', 'B'), [[0, 0, 0]])

    def test_periodic_axes_need_cell(self):
        with self.assertRaises(GeometryError):
            Configuration(('A',), [[0, 0, 0]], pbc=(True, False, False))

    def test_positions_are_read_only(self):
        config = Configuration(('A',), [[0, 0, 0]])
        with self.assertRaises(ValueError):
            config.positions[0, 0] = 1.0

    def test_default_m_min_comes_from_settings(self):
        self.assertEqual(Configuration(('A',), [[0, 0, 0]]).m_min, 0.5)

    def test_minimum_image_distances(self):
        config = chain(4, 1.0, periodic=True)
        distances = config.distance_matrix()
        self.assertAlmostEqual(distances[0, 3], 1.0)
        self.assertAlmostEqual(distances[0, 2], 2.0)
        self.assertTrue(np.allclose(distances, distances.T))

    def test_displaced_moves_one_coordinate(self):
        config = chain(3, 1.0)
        moved = config.displaced(1, 2, 0.1)
        self.assertAlmostEqual(moved.positions[1, 2], 0.1)
        self.assertTrue(np.array_equal(moved.positions[[0, 2]], config.positions[[0, 2]]))

    def test_without_and_with_site(self):
        config = chain(3, 1.0, species=('A', 'B'))
        self.assertEqual(config.without_site(1).species, ('A', 'A'))
        grown = config.with_site('B', (5.0, 0.0, 0.0))
        self.assertEqual(grown.n_sites, 4)
        self.assertEqual(grown.species[-1], 'B')

    def test_repeat_follows_ase_block_order(self):
        config = chain(2, 1.1, periodic=True, alternation=0.1)
        doubled = config.repeat((2, 1, 1))
        self.assertEqual(doubled.n_sites, 4)
        self.assertAlmostEqual(doubled.cell[0, 0], 4.4)
        self.assertTrue(np.allclose(doubled.positions[2], config.positions[0] + config.cell[0]))

    def test_dict_round_trip(self):
        config = chain(3, 1.0, species=('A', 'B'), m_min=0.4)
        again = Configuration.from_dict(json.loads(json.dumps(config.to_dict())))
        self.assertEqual(again.species, config.species)
        self.assertTrue(np.array_equal(again.positions, config.positions))
        self.assertEqual(again.m_min, 0.4)

    def test_from_dict_rejects_unknown_keys(self):
        with self.assertRaises(ConfigurationError):
            Configuration.from_dict({'species': ['A'], 'positions': [[0, 0, 0]], 'charge': 1})

    def test_ase_round_trip_keeps_labels(self):
        config = chain(2, 1.0, species=('A', 'B'))
        again = Configuration.from_ase(config.to_ase())
        self.assertEqual(again.species, ('A', 'B'))
        self.assertTrue(np.allclose(again.positions, config.positions))


class AdmissibilityTests(SimpleTestCase):
    def test_close_pair_is_reported(self):
        config = Configuration(('A', 'A'), [[0, 0, 0], [0.3, 0, 0]], m_min=0.5)
        report = check_admissible(config)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report.min_distance, 0.3)
        self.assertEqual(report.pair[:2], (0, 1))

    def test_periodic_images_count(self):
        config = Configuration(('A',), [[0, 0, 0]], cell=np.diag([0.4, 10, 10]), pbc=(True, False, False))
        self.assertAlmostEqual(check_admissible(config).min_distance, 0.4)
        self.assertFalse(check_admissible(config).passed)

    def test_displacement_field_checks_deformed_configuration(self):
        base = chain(2, 1.0)
        with self.assertRaises(GeometryError):
            DisplacementField(base, [[0, 0, 0], [-0.8, 0, 0]])

    def test_seminorm_vanishes_for_translation(self):
        base = chain(4, 1.0)
        disp = DisplacementField(base, np.tile([0.1, 0.2, 0.3], (4, 1)))
        self.assertAlmostEqual(seminorm_l2_upsilon(disp), 0.0)

    def test_seminorm_weights_pairs(self):
        base = chain(2, 1.0)
        disp = DisplacementField(base, [[0, 0, 0], [0.1, 0, 0]], upsilon=1.0)
        expected = np.sqrt(2 * np.exp(-2.0) * 0.01)
        self.assertAlmostEqual(seminorm_l2_upsilon(disp), expected)


class NeighborTableTests(SimpleTestCase):
    def test_open_chain_pairs(self):
        table = build_neighbor_table(chain(3, 1.0), 1.5)
        self.assertEqual(len(table), 4)
        self.assertEqual(int(table.upper().sum()), 2)
        self.assertTrue(np.allclose(table.distances, 1.0))

    def test_multi_image_table_for_short_cell(self):
        config = chain(2, 1.1, periodic=True, alternation=0.1)
        table = build_neighbor_table(config, 1.5, multi_image=True)
        self.assertEqual(len(table), 4)
        self.assertEqual(sorted(np.round(table.distances, 6)), [1.0, 1.0, 1.2, 1.2])

    def test_minimum_image_mode_rejects_large_cutoff(self):
        with self.assertRaises(GeometryError):
            build_neighbor_table(chain(2, 1.0, periodic=True), 1.5)

    def test_rejects_non_positive_cutoff(self):
        with self.assertRaises(GeometryError):
            build_neighbor_table(chain(2, 1.0), 0.0)


class JsonInputTests(SimpleTestCase):
    def test_malformed_json_reports_line_and_column(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'broken.json'
            path.write_text('{\n  "species": ["A"],,\n}', encoding='utf-8')
            with self.assertRaisesMessage(ConfigurationError, f"{path}:2:"):
                read_json(path)

    def test_missing_file(self):
        with self.assertRaises(ConfigurationError):
            read_json('/nonexistent/geometry.json')

    def test_bundled_geometry_file(self):
        path = Path(__file__).resolve().parent.parent / 'configs' / 'square4.json'
        config = load_configuration(path)
        self.assertEqual(config.n_sites, 4)
        self.assertAlmostEqual(config.nearest_neighbor_distance(), 1.0)
