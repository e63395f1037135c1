#!/usr/bin/env python3
"""
Topology module unit tests.
"""

import math
import os
import tempfile
import unittest
from dataclasses import replace

import numpy as np

from hric_iab_lab.topology.topology import (MobilityParams, NetworkConfig, TopologyError, access_distances,
                                            advance_users, backhaul_distances, build_topology, dump_topology,
                                            gauss_markov_step, interference_sources, load_topology)


def _assert_topologies_equal(test, a, b):
    for name in ("mbs_positions", "sbs_positions", "user_positions", "user_velocities",
                 "user_mean_velocities", "subcarrier_index"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name), err_msg=name)


class TestNetworkConfig(unittest.TestCase):

    def test_defaults(self):
        config = NetworkConfig()
        self.assertEqual(config.shape, (3, 6, 2))
        self.assertEqual(config.total_bandwidth_W, 100e6)
        self.assertEqual(config.backhaul_fraction_alpha, 0.5)
        self.assertEqual(config.mbs_max_power_dbm, 44.0)

    def test_rejects_invalid_values(self):
        with self.assertRaises(TopologyError):
            NetworkConfig(backhaul_fraction_alpha=1.5)
        with self.assertRaises(TopologyError):
            NetworkConfig(num_mbs_M=0)
        with self.assertRaises(TopologyError):
            NetworkConfig(guidance_period_slots=0)
        with self.assertRaises(TopologyError):
            MobilityParams(memory_alpha_gm=1.2)


class TestBuildTopology(unittest.TestCase):

    def test_deterministic_for_seed(self):
        config = NetworkConfig(num_mbs_M=1, num_sbs_per_mbs_N=1, users_per_sbs_K=1)
        _assert_topologies_equal(self, build_topology(config, 7), build_topology(config, 7))

    def test_cardinality(self):
        config = NetworkConfig(num_mbs_M=3, num_sbs_per_mbs_N=6, users_per_sbs_K=4)
        topology = build_topology(config, 1)
        self.assertEqual(topology.sbs_positions.shape, (3, 6, 2))
        self.assertEqual(topology.user_positions.shape, (3, 6, 4, 2))

    def test_mbs_positions_distinct_and_inside(self):
        config = NetworkConfig(num_mbs_M=2)
        topology = build_topology(config, 3)
        self.assertFalse(np.array_equal(topology.mbs_positions[0], topology.mbs_positions[1]))
        self.assertTrue(np.all((topology.mbs_positions >= 0) & (topology.mbs_positions <= config.area_side)))

    def test_sbs_ring_and_user_disc(self):
        config = NetworkConfig()
        topology = build_topology(config, 5)
        d = np.linalg.norm(topology.sbs_positions - topology.mbs_positions[:, None, :], axis=-1)
        self.assertTrue(np.all((d >= config.sbs_ring_min - 1e-9) & (d <= config.sbs_ring_max + 1e-9)))
        du = np.linalg.norm(topology.user_positions - topology.sbs_positions[:, :, None, :], axis=-1)
        self.assertTrue(np.all(du <= config.user_disc_radius + 1e-9))

    def test_identity_subcarrier(self):
        topology = build_topology(NetworkConfig(), 0)
        for m in range(3):
            np.testing.assert_array_equal(topology.subcarrier_index[m], np.arange(6))


class TestGaussMarkov(unittest.TestCase):

    def test_full_memory_keeps_velocity(self):
        params = MobilityParams(memory_alpha_gm=1.0, speed_stddev=0.5)
        v = np.array([0.3, -1.2])
        np.testing.assert_allclose(gauss_markov_step(v, params, np.random.default_rng(0), np.array([5.0, 5.0])), v)

    def test_memoryless_returns_mean(self):
        params = MobilityParams(memory_alpha_gm=0.0, speed_stddev=0.0)
        mu = np.array([1.0, -2.0])
        np.testing.assert_allclose(gauss_markov_step(np.array([9.0, 9.0]), params, np.random.default_rng(0), mu), mu)

    def test_half_memory(self):
        params = MobilityParams(memory_alpha_gm=0.5, speed_stddev=0.0)
        result = gauss_markov_step(np.array([2.0, 2.0]), params, np.random.default_rng(0), np.array([1.0, 1.0]))
        np.testing.assert_allclose(result, [1.5, 1.5])

    def test_stationary_mean(self):
        a, sigma, steps = 0.5, 0.3, 100_000
        params = MobilityParams(memory_alpha_gm=a, speed_stddev=sigma)
        mu = np.array([1.0, -0.5])
        rng = np.random.default_rng(42)
        v = mu.copy()
        total = np.zeros(2)
        for _ in range(steps):
            v = gauss_markov_step(v, params, rng, mu)
            total += v
        mean = total / steps
        # AR(1) with stationary variance sigma^2: var(mean) = sigma^2 (1 + a) / ((1 - a) n)
        se = sigma * math.sqrt((1 + a) / ((1 - a) * steps))
        self.assertTrue(np.all(np.abs(mean - mu) < 3 * se))


class TestAdvanceUsers(unittest.TestCase):

    def _single_user(self):
        return NetworkConfig(num_mbs_M=1, num_sbs_per_mbs_N=1, users_per_sbs_K=1,
                             mobility=MobilityParams(memory_alpha_gm=1.0, speed_stddev=0.0))

    def test_zero_velocity_is_static(self):
        config = self._single_user()
        topology = build_topology(config, 2)
        topology.user_velocities[:] = 0.0
        moved = advance_users(topology, config, np.random.default_rng(0))
        np.testing.assert_array_equal(moved.user_positions, topology.user_positions)

    def test_unit_velocity_advances_one_slot(self):
        config = self._single_user()
        topology = build_topology(config, 2)
        topology.user_positions[:] = 500.0
        topology.user_velocities[:] = (1.0, 0.0)
        moved = advance_users(topology, config, np.random.default_rng(0))
        self.assertAlmostEqual(moved.user_positions[0, 0, 0, 0], 500.2, places=12)
        self.assertAlmostEqual(moved.user_positions[0, 0, 0, 1], 500.0, places=12)
        np.testing.assert_array_equal(moved.sbs_positions, topology.sbs_positions)
        np.testing.assert_array_equal(moved.mbs_positions, topology.mbs_positions)

    def test_trajectory_is_reproducible(self):
        config = NetworkConfig()
        runs = []
        for _ in range(2):
            topology = build_topology(config, 9)
            rng = np.random.default_rng(9)
            for _ in range(10):
                topology = advance_users(topology, config, rng)
            runs.append(topology)
        _assert_topologies_equal(self, runs[0], runs[1])

    def test_users_stay_inside_area(self):
        config = replace(NetworkConfig(area_side=100.0, sbs_ring_min=10.0, sbs_ring_max=30.0, user_disc_radius=10.0),
                         mobility=MobilityParams(memory_alpha_gm=0.9, mean_speed=30.0, speed_stddev=5.0))
        topology = build_topology(config, 4)
        rng = np.random.default_rng(4)
        for _ in range(500):
            topology = advance_users(topology, config, rng)
            self.assertTrue(np.all((topology.user_positions >= 0) & (topology.user_positions <= config.area_side)))

    def test_reflection_reverses_velocity(self):
        config = replace(self._single_user(), area_side=100.0, sbs_ring_min=0.0, sbs_ring_max=0.0)
        topology = build_topology(config, 1)
        topology.user_positions[:] = (99.9, 50.0)
        topology.user_velocities[:] = (1.0, 0.0)
        topology.user_mean_velocities[:] = (1.0, 0.0)
        moved = advance_users(topology, config, np.random.default_rng(0))
        self.assertAlmostEqual(moved.user_positions[0, 0, 0, 0], 99.9, places=9)
        self.assertLess(moved.user_velocities[0, 0, 0, 0], 0.0)
        self.assertLess(moved.user_mean_velocities[0, 0, 0, 0], 0.0)


class TestInterference(unittest.TestCase):

    def test_single_mbs_has_no_sources(self):
        topology = build_topology(NetworkConfig(num_mbs_M=1), 0)
        self.assertEqual(interference_sources(0, 3, topology), [])

    def test_same_subcarrier_sources(self):
        topology = build_topology(NetworkConfig(num_mbs_M=3), 0)
        self.assertEqual(interference_sources(0, 2, topology), [(1, 2), (2, 2)])
        for m in range(3):
            for n in range(6):
                self.assertEqual(len(interference_sources(m, n, topology)), 2)

    def test_out_of_range(self):
        topology = build_topology(NetworkConfig(num_mbs_M=2), 0)
        with self.assertRaises(TopologyError):
            interference_sources(2, 0, topology)
        with self.assertRaises(TopologyError):
            interference_sources(0, 6, topology)


class TestDistances(unittest.TestCase):

    def test_shapes_and_values(self):
        topology = build_topology(NetworkConfig(), 8)
        bh = backhaul_distances(topology)
        ac = access_distances(topology)
        self.assertEqual(bh.shape, (3, 3, 6))
        self.assertEqual(ac.shape, (3, 3, 6, 2))
        self.assertAlmostEqual(bh[1, 0, 4], float(np.linalg.norm(topology.sbs_positions[0, 4] - topology.mbs_positions[1])))
        self.assertAlmostEqual(ac[2, 0, 3, 1],
                               float(np.linalg.norm(topology.user_positions[0, 3, 1] - topology.sbs_positions[2, 3])))


class TestDumpLoad(unittest.TestCase):

    def test_dump_then_load_restores_state(self):
        config = NetworkConfig()
        topology = advance_users(build_topology(config, 11), config, np.random.default_rng(11))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "topology.tsv")
            dump_topology(topology, path)
            with open(path) as f:
                self.assertEqual(f.readline().strip().split("\t")[:6], ["role", "m", "n", "k", "x", "y"])
            _assert_topologies_equal(self, topology, load_topology(path))

    def test_load_rejects_bad_header(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "bad.tsv")
            with open(path, "w") as f:
                f.write("a\tb\n")
            with self.assertRaises(TopologyError):
                load_topology(path)


if __name__ == '__main__':
    unittest.main()
