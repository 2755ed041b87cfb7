"""Synthetic data generation and the benchmark suite."""

from __future__ import annotations

import numpy as np
import pytest

from sparsemodal.structural import assemble_stiffness, build_shear_building, solve_modes
from sparsemodal.synth import (
    BENCHMARK_N_MODES,
    DamageScenario,
    NoiseSpec,
    benchmark_scenarios,
    benchmark_spec,
    full_sensor_dofs,
    generate_dataset,
    make_benchmark_suite,
    model_discrepancy,
    partial_sensor_dofs,
)


@pytest.fixture(scope="module")
def bench4():
    return build_shear_building(benchmark_spec())


class TestDamageScenario:
    def test_theta_applies_reductions(self, bench4):
        scenario = DamageScenario("x", reductions={"1,+y": 0.113, "3,-y": 0.0565})
        theta = scenario.theta(bench4)
        np.testing.assert_allclose(theta[bench4.label_index("1,+y")], 0.887)
        np.testing.assert_allclose(theta[bench4.label_index("3,-y")], 0.9435)
        assert np.sum(theta != 1.0) == 2

    def test_unknown_label_rejected(self, bench4):
        with pytest.raises(ValueError, match="unknown substructure"):
            DamageScenario("x", reductions={"9,+y": 0.1}).theta(bench4)

    def test_fraction_range(self):
        with pytest.raises(ValueError):
            DamageScenario("x", reductions={"1,+y": 0.0})
        with pytest.raises(ValueError):
            DamageScenario("x", reductions={"1,+y": 1.5})


class TestGenerateDataset:
    def test_zero_noise_reproduces_model(self, bench4):
        scenario = DamageScenario("undamaged")
        dofs = full_sensor_dofs()
        data, truth = generate_dataset(
            bench4, scenario, dofs, 4, 3, NoiseSpec(0.0, 0.0, seed=1)
        )
        omega_sq, shapes = solve_modes(bench4, np.ones(16), 4)
        for r in range(3):
            np.testing.assert_allclose(data.freq_sq[r], omega_sq, rtol=1e-12)
            np.testing.assert_allclose(data.mode_shapes[r], shapes, atol=1e-12)
        np.testing.assert_array_equal(truth["theta"], np.ones(16))

    def test_deterministic_given_seed(self, bench4):
        scenario = DamageScenario("d", reductions={"1,+y": 0.113})
        a, _ = generate_dataset(bench4, scenario, (0, 1, 2), 3, 4, NoiseSpec(seed=7))
        b, _ = generate_dataset(bench4, scenario, (0, 1, 2), 3, 4, NoiseSpec(seed=7))
        np.testing.assert_array_equal(a.freq_sq, b.freq_sq)
        np.testing.assert_array_equal(a.mode_shapes, b.mode_shapes)

    def test_seed_changes_data(self, bench4):
        scenario = DamageScenario("undamaged")
        a, _ = generate_dataset(bench4, scenario, (0, 1), 2, 3, NoiseSpec(seed=1))
        b, _ = generate_dataset(bench4, scenario, (0, 1), 2, 3, NoiseSpec(seed=2))
        assert not np.array_equal(a.freq_sq, b.freq_sq)

    def test_frequency_noise_statistics(self, bench4):
        cov = 0.02
        data, truth = generate_dataset(
            bench4,
            DamageScenario("undamaged"),
            (0, 1, 2),
            2,
            1000,
            NoiseSpec(freq_cov=cov, shape_sigma=0.0, seed=3),
        )
        sample_cov = data.freq_sq.std(axis=0) / data.freq_sq.mean(axis=0)
        np.testing.assert_allclose(sample_cov, cov, rtol=0.1)

    def test_requires_three_segments(self, bench4):
        with pytest.raises(ValueError):
            generate_dataset(
                bench4, DamageScenario("undamaged"), (0, 1), 2, 2, NoiseSpec()
            )


class TestModelDiscrepancy:
    def test_zero_magnitude_is_identity(self, bench4):
        assert model_discrepancy(bench4, 0.0, seed=1) is bench4

    def test_perturbs_known_part_only(self, bench4):
        variant = model_discrepancy(bench4, 0.01, seed=1)
        assert not np.array_equal(variant.k0, bench4.k0)
        np.testing.assert_array_equal(variant.mass, bench4.mass)
        for a, b in zip(variant.k_sub, bench4.k_sub):
            np.testing.assert_array_equal(a, b)

    def test_relative_spectral_norm(self, bench4):
        magnitude = 0.01
        variant = model_discrepancy(bench4, magnitude, seed=5)
        e = variant.k0 - bench4.k0
        ref = np.mean(np.diag(assemble_stiffness(bench4, np.ones(16))))
        np.testing.assert_allclose(np.linalg.norm(e, 2), magnitude * ref, rtol=1e-12)

    def test_deterministic(self, bench4):
        a = model_discrepancy(bench4, 0.01, seed=9)
        b = model_discrepancy(bench4, 0.01, seed=9)
        np.testing.assert_array_equal(a.k0, b.k0)


class TestBenchmarkSuite:
    def test_scenarios_ground_truth(self, bench4):
        byname = {s.name: s for s in benchmark_scenarios()}
        theta = byname["story1-pair"].theta(bench4)
        np.testing.assert_allclose(theta[bench4.label_index("1,+y")], 0.887)
        np.testing.assert_allclose(theta[bench4.label_index("1,-y")], 0.887)
        assert np.sum(theta != 1.0) == 2
        theta = byname["story13-uneven"].theta(bench4)
        np.testing.assert_allclose(theta[bench4.label_index("1,-y")], 0.887)
        np.testing.assert_allclose(theta[bench4.label_index("3,-y")], 0.9435)
        assert np.sum(theta != 1.0) == 2

    def test_sensor_sets(self):
        assert full_sensor_dofs() == tuple(range(12))
        assert partial_sensor_dofs() == (6, 7, 8, 9, 10, 11)

    def test_suite_layout_and_determinism(self):
        a = make_benchmark_suite(seed=7)
        b = make_benchmark_suite(seed=7)
        assert set(a["sensor_sets"]) == {"full", "partial"}
        assert set(a["calibration"]) == {"full", "partial"}
        assert len(a["monitoring"]) == 2 * len(benchmark_scenarios())
        for key in a["monitoring"]:
            da, _ = a["monitoring"][key]
            db, _ = b["monitoring"][key]
            np.testing.assert_array_equal(da.freq_sq, db.freq_sq)
            np.testing.assert_array_equal(da.mode_shapes, db.mode_shapes)
        np.testing.assert_array_equal(a["as_built"].k0, b["as_built"].k0)

    def test_suite_shapes(self):
        suite = make_benchmark_suite(seed=0)
        cal, truth = suite["calibration"]["full"]
        assert cal.n_segments == 100
        assert cal.n_modes == BENCHMARK_N_MODES
        assert truth["scenario"] == "undamaged"
        mon, _ = suite["monitoring"][("partial", "story1-pair")]
        assert mon.n_segments == 10
        assert mon.observed_dofs == partial_sensor_dofs()
